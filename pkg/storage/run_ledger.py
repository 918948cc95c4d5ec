"""
Run Ledger
Writes the artifacts of one scenario run: summary.json (deterministic),
ledger.json (wall time, warnings), CSV tables, optional field dumps, and the
append-only run history.
"""

import csv
import datetime
import json
import math
import os
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
import pandas as pd

from engine import __version__
from .field_io import write_field, write_field_slice

HISTORY_FIELDS = ['timestamp', 'scenario', 'experiment', 'verdict', 'exit_code',
                  'config_hash', 'seed', 'wall_time_s']


def to_jsonable(value: Any) -> Any:
    """Plain JSON types; NaN and infinities become None"""
    if isinstance(value, dict):
        return {str(key): to_jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}
    return value


def _dump(path: Path, payload: Dict):
    with open(path, 'w', encoding='utf-8') as file:
        json.dump(to_jsonable(payload), file, sort_keys=True, indent=2)
        file.write("\n")


class RunLedger:
    """Artifact writer rooted at <output_dir>/<scenario name>"""

    def __init__(self, output_dir: str, scenario_name: str):
        self.output_dir = Path(output_dir)
        self.run_dir = self.output_dir / scenario_name
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.files: List[str] = []

    def _track(self, path: Path) -> str:
        self.files.append(path.name)
        return str(path)

    def write_summary(self, scenario: Dict, experiment: str, verdict: str, exit_code: int,
                      summary: Dict) -> str:
        path = self.run_dir / "summary.json"
        _dump(path, {"scenario": scenario, "experiment": experiment, "verdict": verdict,
                     "exit_code": exit_code, "tool_version": __version__, "results": summary})
        return self._track(path)

    def write_tables(self, tables: Dict[str, pd.DataFrame]) -> List[str]:
        written = []
        for name in sorted(tables):
            path = self.run_dir / f"{name}.csv"
            tables[name].to_csv(path, index=False, float_format="%.17g")
            written.append(self._track(path))
        return written

    def write_fields(self, fields: Dict) -> List[str]:
        written = []
        for name in sorted(fields):
            path = self.run_dir / f"{name}.field"
            write_field(str(path), fields[name])
            written.append(self._track(path))
            slice_path = self.run_dir / f"{name}_slice.csv"
            write_field_slice(str(slice_path), fields[name])
            written.append(self._track(slice_path))
        return written

    def write_ledger(self, scenario_name: str, config_hash: str, seed: int, wall_time: float,
                     warnings_seen: List[str], exit_code: int, error: str = "") -> str:
        path = self.run_dir / "ledger.json"
        _dump(path, {"scenario": scenario_name, "config_hash": config_hash, "seed": seed,
                     "tool_version": __version__, "wall_time_s": wall_time,
                     "finished": datetime.datetime.now().isoformat(),
                     "warnings": warnings_seen, "exit_code": exit_code, "error": error,
                     "artifacts": sorted(self.files)})
        return str(path)


def log_run_history(output_dir: str, entry: Dict) -> None:
    """
    Append one run to <output_dir>/logs/run_history.csv
    Saves: timestamp, scenario, experiment, verdict, exit code, hash, seed, wall time
    """
    try:
        logs_dir = Path(output_dir) / "logs"
        logs_dir.mkdir(parents=True, exist_ok=True)

        log_file = logs_dir / "run_history.csv"
        file_exists = log_file.exists()

        with open(log_file, 'a', newline='', encoding='utf-8') as f:
            writer = csv.DictWriter(f, fieldnames=HISTORY_FIELDS)

            if not file_exists:
                writer.writeheader()

            row = {key: entry.get(key, '') for key in HISTORY_FIELDS}
            row['timestamp'] = datetime.datetime.now().isoformat()
            writer.writerow(row)
            print(f"[LOG] Run logged: {entry.get('scenario')}")

    except OSError as e:
        print(f"[WARNING] Could not write run history: {e}")
