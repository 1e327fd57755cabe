#!/usr/bin/env python3
"""
distval command line
Subcommands for value estimation, exact verification, point removal and the
pricing study, all driven by one YAML run config with dotted overrides.

Usage:
    python -m distval estimate run.yaml [--estimator.seed 3] [--quiet]
    python -m distval verify run.yaml [--max-n 10]
    python -m distval remove run.yaml --values results/values_<hash>_seed0.csv
    python -m distval price run.yaml
"""

import argparse
import os
import subprocess
import sys
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import __version__
from .config import RunConfig, config_hash, default_workers, load_config
from .core import (LABEL_CATEGORICAL, ConfigError, DataError, Dataset, InsufficientSamplesError, RandomSource,
                   ValueTable, apply_standardization, read_dataset_csv, standardize)
from .estimator import EstimatorConfig, WeightSchedule, fast_d_shapley
from .evalharness import (apply_shift, noise_enrichment, point_removal_experiment, pricing_case_study,
                          write_curve_csv, write_pricing_report, write_json)
from .exact import (ExactConfig, axiom_suite, build_axiom_instance, exact_data_shapley_all,
                    oracle_distributional_value, random_axiom_instances)
from .interpolate import ValueInterpolator
from .ledger import RunLedger
from .potentials import MeanEstimationPotential, analytic_mean_value, build_potential, potential_label_kind
from .synth import from_recipe, split
from .tmc import TmcConfig, tmc_shapley

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3

COMMANDS = ('estimate', 'verify', 'remove', 'price')

# statistical oracle checks in `verify` run as one family of ~30 comparisons
AGREEMENT_SIGMAS = 4.0


# ============================================================================
# SHARED HELPERS
# ============================================================================

def version_string() -> str:
    """`git describe` of the source tree, or the package version outside a checkout"""
    try:
        out = subprocess.run(['git', 'describe', '--always', '--dirty'], capture_output=True, text=True,
                             cwd=os.path.dirname(os.path.abspath(__file__)), timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def banner(title: str, verbose: bool):
    if verbose:
        print(title)
        print("=" * 60)


class Inputs:
    """Train / test / valuation sets resolved from the data section"""

    def __init__(self, train: Dataset, test: Optional[Dataset], valuate: Dataset, flipped: np.ndarray = None):
        self.train = train
        self.test = test
        self.valuate = valuate
        self.flipped = flipped


def load_inputs(config: RunConfig) -> Inputs:
    data = config.data
    label_kind = potential_label_kind(config.potential.name, config.potential.spec())
    flipped = None
    if data.synthetic is not None:
        n_train = int(data.synthetic['n'])
        needs_test = label_kind is not None
        n_test = data.test_size if needs_test else 0
        full, flags = from_recipe(data.synthetic, data.synthetic_seed, n=n_train + n_test, clean_tail=n_test)
        train = full.take(np.arange(n_train))
        test = full.take(np.arange(n_train, n_train + n_test)) if n_test else None
        flipped = flags[:n_train]
    else:
        if data.train_csv is None:
            raise ConfigError("data.train_csv: required unless data.synthetic is given")
        train = read_dataset_csv(config.resolve(data.train_csv), label_kind=label_kind)
        test = read_dataset_csv(config.resolve(data.test_csv), label_kind=label_kind) if data.test_csv else None

    valuate = train
    if data.valuate_csv is not None:
        valuate = read_dataset_csv(config.resolve(data.valuate_csv), label_kind=label_kind)

    if data.standardize:
        train, mean, std = standardize(train)
        test = apply_standardization(test, mean, std) if test is not None else None
        valuate = apply_standardization(valuate, mean, std)

    if data.valuate_size is not None:
        valuate = valuate.take(np.arange(min(int(data.valuate_size), len(valuate))))
        if flipped is not None and data.valuate_csv is None:
            flipped = flipped[:len(valuate)]
    return Inputs(train, test, valuate, flipped)


def estimator_config(config: RunConfig, workers: int, m: int = None, seed: int = None,
                     verbose: bool = False) -> EstimatorConfig:
    est = config.estimator
    m = est.m if m is None else m
    schedule = WeightSchedule.from_spec(m, est.schedule.get('kind', 'uniform'), est.schedule.get('b'))
    return EstimatorConfig(m=m, T_max=est.T_max, schedule=schedule, window=est.window, threshold=est.threshold,
                           seed=est.seed if seed is None else seed, record_cardinalities=est.record_cardinalities,
                           workers=workers, verbose=verbose)


def output_paths(config: RunConfig, stem: str, digest: str, seed: int = None) -> Tuple[str, str]:
    directory = config.output_dir
    os.makedirs(directory, exist_ok=True)
    name = f"{stem}_{digest}" + (f"_seed{seed}" if seed is not None else "")
    return os.path.join(directory, name + '.csv'), os.path.join(directory, name + '.json')


def provenance(config: RunConfig, command: str, digest: str, seed: int = None) -> Dict:
    out = {'command': command, 'config_hash': digest, 'version': version_string(), 'config': config.to_dict()}
    if seed is not None:
        out['seed'] = seed
    return out


def record_ledger(config: RunConfig, command: str, digest: str, outputs: List[str], table: ValueTable = None):
    if not config.output.ledger:
        return
    run_id = f"{command}-{digest}"
    with RunLedger(config.resolve(config.output.ledger)) as ledger:
        ledger.record_run(run_id, command, digest, config.to_dict(), version_string(), outputs)
        if table is not None:
            ledger.record_values(run_id, table)


# ============================================================================
# COMMANDS
# ============================================================================

def cmd_estimate(config: RunConfig, workers: int, verbose: bool) -> int:
    digest = config_hash(config)
    banner(f"🚀 Estimating distributional values (config {digest})", verbose)
    inputs = load_inputs(config)
    U = build_potential(config.potential.spec(), db=inputs.train, test_set=inputs.test)
    est = estimator_config(config, workers, verbose=verbose)
    interpolator = None
    if config.estimator.subsample_p < 1.0:
        interpolator = ValueInterpolator.from_config(config.estimator.interpolate)
    table = fast_d_shapley(inputs.valuate, inputs.train, U, est, subsample_p=config.estimator.subsample_p,
                           interpolator=interpolator)

    extra = provenance(config, 'estimate', digest, est.seed)
    if inputs.flipped is not None and inputs.flipped.any() and len(inputs.flipped) == len(inputs.valuate):
        extra['noise_enrichment'] = noise_enrichment(table, inputs.valuate, inputs.flipped)
    if table.records:
        sizes = np.bincount([record.k for record in table.records], minlength=est.m + 1)
        extra['cardinality_counts'] = {str(k): int(c) for k, c in enumerate(sizes) if c}
    csv_path, json_path = output_paths(config, 'values', digest, est.seed)
    table.write(csv_path, json_path, extra=extra)
    record_ledger(config, 'estimate', digest, [csv_path, json_path], table)

    if verbose:
        print(f"📊 Iterations used: {table.count} ({'converged' if table.converged else 'hit T_max'})")
        print(f"📊 Mean |value|: {np.mean(np.abs(table.means)):.6g}")
        if 'noise_enrichment' in extra:
            print(f"📊 Noisy points in bottom quartile: {extra['noise_enrichment']:.2f}x base rate")
        print(f"✅ Wrote {csv_path}")
    return EXIT_OK


def _duplicate_pair(B: Dataset) -> Optional[Tuple[int, int]]:
    for i in range(len(B)):
        for j in range(i + 1, len(B)):
            same_label = B.y is None or B.y[i] == B.y[j]
            if same_label and np.array_equal(B.X[i], B.X[j]):
                return i, j
    return None


def fixture_instances(B: Dataset, test_set: Optional[Dataset]):
    """Axiom instances over a fixture for each potential it supports"""
    pair = _duplicate_pair(B)
    kinds = ['mean', 'additive', 'indicator']
    if B.label_kind == LABEL_CATEGORICAL:
        kinds += ['knn', 'logistic']
    weights = [1.0 + (i % 3) for i in range(len(B))]
    if pair is not None:
        weights[pair[1]] = weights[pair[0]]
    return [build_axiom_instance(f"fixture-{kind}", B, kind, test_set if test_set is not None else B,
                                 duplicate_pair=pair, weights=weights)
            for kind in kinds]


def cmd_verify(config: RunConfig, workers: int, verbose: bool) -> int:
    digest = config_hash(config)
    exact_cfg = ExactConfig(config.exact.max_n, config.exact.mc_oracle_draws, config.exact.tolerance)
    banner(f"🔍 Verifying exact oracles and axioms (config {digest})", verbose)

    fixture_list = []
    fixture = None
    if config.exact.fixture_csv is not None:
        fixture = read_dataset_csv(config.resolve(config.exact.fixture_csv))
        if len(fixture) > exact_cfg.max_n:
            raise ConfigError(f"exact.fixture_csv: instance too large for enumeration "
                              f"({len(fixture)} > exact.max_n {exact_cfg.max_n})")
        test_set = None
        if config.data.test_csv is not None and fixture.label_kind == LABEL_CATEGORICAL:
            test_set = read_dataset_csv(config.resolve(config.data.test_csv), label_kind=LABEL_CATEGORICAL)
        fixture_list = fixture_instances(fixture, test_set)
    instances = fixture_list + random_axiom_instances(config.exact.instances, config.exact.seed,
                                                      max_size=min(8, exact_cfg.max_n))
    report = axiom_suite(instances, exact_cfg, verbose=verbose)

    if fixture is not None and len(fixture) <= 6:
        tmc_cfg = TmcConfig(max_permutations=config.tmc.max_permutations, truncation_tolerance=0.0,
                            window=config.tmc.window, threshold=0.0, seed=config.exact.seed, workers=workers)
        for instance in fixture_list:
            exact_values = exact_data_shapley_all(instance.B, instance.potential, exact_cfg)
            table = tmc_shapley(instance.B, instance.potential, tmc_cfg)
            gap = np.abs(table.means - exact_values)
            bound = AGREEMENT_SIGMAS * table.stderrs + exact_cfg.tolerance
            report.add('tmc_agreement', instance, float(gap.max()), passed=bool(np.all(gap <= bound)))

    if fixture is not None:
        U = MeanEstimationPotential.from_database(fixture)
        z = fixture.point(0)
        m = min(len(fixture), exact_cfg.max_n)
        mean, stderr = oracle_distributional_value(z, fixture, U, m, exact_cfg.mc_oracle_draws,
                                                   RandomSource(config.exact.seed))
        gap = abs(mean - analytic_mean_value(z, m, U.mu, U.R2))
        report.add('analytic_mean_agreement', fixture_list[0], gap,
                   passed=gap <= AGREEMENT_SIGMAS * stderr + exact_cfg.tolerance)

    _, json_path = output_paths(config, 'verify', digest)
    payload = report.to_dict()
    payload.update(provenance(config, 'verify', digest))
    write_json(payload, json_path)
    record_ledger(config, 'verify', digest, [json_path])

    if verbose:
        print(f"📊 {len(report.checks)} checks, {len(report.failures)} failed")
        for failure in report.failures[:10]:
            print(f"  ❌ {failure.check} on {failure.instance} ({failure.potential}): error {failure.error:.3g}")
        print(("✅ All checks passed" if report.passed else "❌ Verification failed") + f" ({json_path})")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_remove(config: RunConfig, workers: int, verbose: bool) -> int:
    digest = config_hash(config)
    removal = config.removal
    if removal.values_csv is None:
        raise ConfigError("removal.values_csv: required (or pass --values)")
    banner(f"🚀 Point removal experiment (config {digest})", verbose)
    inputs = load_inputs(config)
    values_path = config.resolve(removal.values_csv)
    sidecar = os.path.splitext(values_path)[0] + '.json'
    values = ValueTable.read(values_path, sidecar if os.path.isfile(sidecar) else None)
    U = build_potential(config.potential.spec(), db=inputs.train, test_set=inputs.test)

    curves = [point_removal_experiment(inputs.train, values, U, removal.steps, ordering, removal.seed,
                                       verbose=verbose)
              for ordering in removal.orderings]
    csv_path, json_path = output_paths(config, 'removal', digest, removal.seed)
    write_curve_csv(curves, csv_path)
    summary = {'areas': {c.ordering: c.area for c in curves}}
    summary.update(provenance(config, 'remove', digest, removal.seed))
    write_json(summary, json_path)
    record_ledger(config, 'remove', digest, [csv_path, json_path])

    if verbose:
        for curve in curves:
            print(f"📊 Area under {curve.ordering} curve: {curve.area:.4f}")
        print(f"✅ Wrote {csv_path}")
    return EXIT_OK


def pricing_inputs(config: RunConfig) -> Tuple[Dataset, List[Dataset], List[Dataset], Optional[Dataset]]:
    """
    Seller database, buyer and sold data (one pair per pricing seed) and the
    held-out set for accuracy potentials. Synthetic studies draw a fresh market
    for every seed; CSV studies share one market across seeds.
    """
    pricing = config.pricing
    m = pricing.m
    label_kind = potential_label_kind(config.potential.name, config.potential.spec())
    shift = dict(pricing.shift)
    rebalance = shift.get('class_weights') is not None
    buyer_pool = 4 * m if rebalance else m
    needs_test = label_kind is not None

    if pricing.synthetic is not None:
        n_test = config.data.test_size if needs_test else 0
        base_seed = config.data.synthetic_seed
        full, _ = from_recipe(pricing.synthetic, base_seed, n=pricing.seller_size + n_test)
        seller, test = split(full, [pricing.seller_size, n_test], seed=base_seed)
        test = test if n_test else None
        buyers, solds = [], []
        for seed in pricing.seeds:
            market_seed = RandomSource(base_seed).child('pricing-market', seed).seed
            drawn, _ = from_recipe(pricing.synthetic, market_seed, n=buyer_pool + m)
            buyer, sold = split(drawn, [buyer_pool, m], seed=market_seed)
            buyers.append(buyer)
            solds.append(sold)
    else:
        for name in ('seller_csv', 'buyer_csv', 'sold_csv'):
            if getattr(pricing, name) is None:
                raise ConfigError(f"pricing.{name}: required unless pricing.synthetic is given")
        seller = read_dataset_csv(config.resolve(pricing.seller_csv), label_kind=label_kind)
        buyer = read_dataset_csv(config.resolve(pricing.buyer_csv), label_kind=label_kind)
        sold = read_dataset_csv(config.resolve(pricing.sold_csv), label_kind=label_kind)
        buyers = [buyer] * len(pricing.seeds)
        solds = [sold] * len(pricing.seeds)
        test = None
        if config.data.test_csv is not None:
            test = read_dataset_csv(config.resolve(config.data.test_csv), label_kind=label_kind)

    if shift:
        shifted = []
        for buyer in buyers:
            buyer = apply_shift(buyer, float(shift.get('feature_noise', 0.0)), shift.get('class_weights'),
                                seed=int(shift.get('seed', 0)))
            if rebalance:
                if len(buyer) < m:
                    raise ConfigError(f"pricing.shift.class_weights: only {len(buyer)} buyer points survive, "
                                      f"need {m}")
                buyer = buyer.take(np.arange(m))
            shifted.append(buyer)
        buyers = shifted

    if config.data.standardize:
        seller, mean, std = standardize(seller)
        buyers = [apply_standardization(b, mean, std) for b in buyers]
        solds = [apply_standardization(s, mean, std) for s in solds]
        test = apply_standardization(test, mean, std) if test is not None else None
    return seller, buyers, solds, test


def cmd_price(config: RunConfig, workers: int, verbose: bool) -> int:
    digest = config_hash(config)
    pricing = config.pricing
    banner(f"🚀 Pricing study (config {digest}, m={pricing.m}, {len(pricing.seeds)} seeds)", verbose)
    seller, buyers, solds, test = pricing_inputs(config)
    spec = config.potential.spec()

    def U_builder(db: Dataset):
        return build_potential(spec, db=db, test_set=test)

    est = estimator_config(config, workers, m=2 * pricing.m)
    tmc = TmcConfig(max_permutations=config.tmc.max_permutations,
                    truncation_tolerance=config.tmc.truncation_tolerance,
                    window=config.tmc.window, threshold=config.tmc.threshold, workers=workers)
    report = pricing_case_study(seller, buyers, solds, U_builder, pricing.m, pricing.seeds, estimator=est, tmc=tmc,
                                subsample_p=pricing.subsample_p, steps=pricing.steps, verbose=verbose)
    csv_path, json_path = output_paths(config, 'pricing', digest)
    write_pricing_report(report, csv_path, json_path, extra=provenance(config, 'price', digest))
    record_ledger(config, 'price', digest, [csv_path, json_path])

    if verbose:
        print(f"📊 Mean rank correlation: {report.rank_correlation:.4f}")
        if report.ape_error:
            print(f"⚠️  {report.ape_error}")
        else:
            print(f"📊 Mean APE: {report.ape:.4f}")
        print(f"✅ Wrote {csv_path}")
    return EXIT_OK


HANDLERS = {
    'estimate': cmd_estimate,
    'verify': cmd_verify,
    'remove': cmd_remove,
    'price': cmd_price,
}


# ============================================================================
# MAIN FUNCTION AND COMMAND LINE INTERFACE
# ============================================================================

def print_usage():
    """Print usage information"""
    print("📊 distval: distributional data valuation")
    print("=" * 60)
    print("\nUsage:")
    print("  python -m distval estimate <config.yaml>   # Value points, write values CSV + JSON")
    print("  python -m distval verify <config.yaml>     # Exact oracles and Shapley axioms")
    print("  python -m distval remove <config.yaml> --values <values.csv>")
    print("  python -m distval price <config.yaml>      # Seller vs buyer pricing study")
    print("\nOptions:")
    print("  --<section>.<key> <value>   Override a config key (e.g. --estimator.seed 3)")
    print("  --workers N                 Worker processes (default $DISTVAL_WORKERS or CPU count)")
    print("  --quiet                     Only print errors")
    print("\nExit codes: 0 ok, 1 check failed, 2 config error, 3 data error")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='distval', add_help=True)
    parser.add_argument('command', choices=COMMANDS)
    parser.add_argument('config', nargs='?', default=None, help='YAML run config')
    parser.add_argument('--workers', type=int, default=None)
    parser.add_argument('--quiet', action='store_true')
    parser.add_argument('--max-n', type=int, default=None, dest='max_n', help='verify: enumeration cap')
    parser.add_argument('--values', default=None, help='remove: value table CSV')
    parser.add_argument('--steps', type=int, default=None, help='remove: number of removal steps')
    parser.add_argument('--ordering', action='append', default=None,
                        choices=('by_value_desc', 'by_value_asc', 'random'), help='remove: ordering (repeatable)')
    return parser


def split_overrides(argv: List[str]) -> Tuple[List[str], Dict[str, str]]:
    """Pull `--section.key value` / `--section.key=value` pairs out of argv"""
    rest = []
    overrides = {}
    i = 0
    while i < len(argv):
        token = argv[i]
        key = token[2:].split('=', 1)[0] if token.startswith('--') else ''
        if '.' not in key:
            rest.append(token)
            i += 1
            continue
        if '=' in token:
            overrides[key] = token.split('=', 1)[1]
            i += 1
        elif i + 1 < len(argv):
            overrides[key] = argv[i + 1]
            i += 2
        else:
            raise ConfigError(f"{key}: missing value")
    return rest, overrides


def main(argv: List[str] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        print_usage()
        return EXIT_CONFIG

    try:
        rest, overrides = split_overrides(argv)
        args = build_parser().parse_args(rest)
        verbose = not args.quiet
        if args.max_n is not None:
            overrides['exact.max_n'] = args.max_n
        if args.values is not None:
            overrides['removal.values_csv'] = os.path.abspath(args.values)
        if args.steps is not None:
            overrides['removal.steps'] = args.steps
        if args.ordering:
            overrides['removal.orderings'] = args.ordering
        config = load_config(args.config, overrides)
        workers = args.workers or config.estimator.workers or default_workers()
        if workers < 1:
            raise ConfigError(f"--workers must be >= 1, got {workers}")
        return HANDLERS[args.command](config, workers, verbose)
    except ConfigError as e:
        print(f"❌ Config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, InsufficientSamplesError) as e:
        print(f"❌ Data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == '__main__':
    sys.exit(main())
