"""
distval: distributional data valuation
Monte Carlo estimators of the distributional Shapley value, exact oracles for
small instances, and the experiments that exercise them.
"""

__version__ = '0.3.0'
