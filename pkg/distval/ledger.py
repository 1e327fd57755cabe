#!/usr/bin/env python3
"""
Run ledger
Optional sqlite3 store with one row per CLI run and the value rows of
estimation runs. Re-running a command with the same config replaces its rows,
and no wall-clock time is stored.
"""

import json
import sqlite3
from typing import Dict, List, Sequence

from .core import ValueTable, json_default

SCHEMA = """
CREATE TABLE IF NOT EXISTS run (
    run_id TEXT PRIMARY KEY,
    command TEXT NOT NULL,
    config_hash TEXT NOT NULL,
    config_json TEXT NOT NULL,
    version TEXT NOT NULL,
    outputs_json TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS value (
    run_id TEXT NOT NULL,
    point_id INTEGER NOT NULL,
    value REAL NOT NULL,
    count INTEGER NOT NULL,
    interpolated INTEGER NOT NULL,
    PRIMARY KEY (run_id, point_id)
);
"""


class RunLedger:
    def __init__(self, db_path: str):
        """Open (and create if needed) the ledger database"""
        self.db_path = db_path
        self.conn = sqlite3.connect(db_path)
        self.cursor = self.conn.cursor()
        self.cursor.executescript(SCHEMA)
        self.conn.commit()

    def record_run(self, run_id: str, command: str, config_hash: str, config: Dict, version: str,
                   outputs: Sequence[str]):
        """Insert or replace the run row"""
        self.cursor.execute(
            "INSERT OR REPLACE INTO run (run_id, command, config_hash, config_json, version, outputs_json) "
            "VALUES (?, ?, ?, ?, ?, ?)",
            (run_id, command, config_hash, json.dumps(config, sort_keys=True, default=json_default),
             version, json.dumps(list(outputs))),
        )
        self.conn.commit()

    def record_values(self, run_id: str, table: ValueTable):
        """Replace the value rows of a run with the table's entries"""
        self.cursor.execute("DELETE FROM value WHERE run_id = ?", (run_id,))
        rows = [(run_id, int(pid), float(v), int(table.count), int(flag))
                for pid, v, flag in zip(table.ids, table.means, table.interpolated)]
        self.cursor.executemany(
            "INSERT INTO value (run_id, point_id, value, count, interpolated) VALUES (?, ?, ?, ?, ?)", rows)
        self.conn.commit()

    def runs(self) -> List[Dict]:
        self.cursor.execute(
            "SELECT run_id, command, config_hash, config_json, version, outputs_json FROM run ORDER BY run_id")
        return [
            {'run_id': run_id, 'command': command, 'config_hash': digest, 'config': json.loads(config_json),
             'version': version, 'outputs': json.loads(outputs_json)}
            for run_id, command, digest, config_json, version, outputs_json in self.cursor.fetchall()
        ]

    def values(self, run_id: str) -> Dict[int, float]:
        self.cursor.execute("SELECT point_id, value FROM value WHERE run_id = ? ORDER BY point_id", (run_id,))
        return {pid: value for pid, value in self.cursor.fetchall()}

    def close(self):
        """Close database connection"""
        self.conn.close()

    def __enter__(self) -> 'RunLedger':
        return self

    def __exit__(self, *exc):
        self.close()
