"""
Reports and Result Persistence - report.json, series.csv and simulation outputs
"""

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np

from .. import __version__
from ..engine.constants import REPORT_FILE, SERIES_FILE
from ..engine.errors import ScenarioError
from ..systems.pde import Trajectory

logger = logging.getLogger(__name__)

SERIES_COLUMNS = ("scenario", "seed", "key", "t", "value")


@dataclass
class Check:
    """One pass/fail comparison of a measured value against its threshold"""
    name: str
    passed: bool
    measured: float
    threshold: float
    asserted: bool = True
    note: str = ""


@dataclass
class SeriesRow:
    scenario: str
    seed: int
    key: str
    t: float
    value: float


@dataclass
class Report:
    """Outcome of one scenario run for one seed"""
    scenario_id: str
    kind: str
    seed: int
    checks: List[Check] = field(default_factory=list)
    measured: Dict[str, float] = field(default_factory=dict)
    details: Dict[str, Any] = field(default_factory=dict)
    series: List[SeriesRow] = field(default_factory=list)
    provenance: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks if check.asserted)

    def failures(self) -> List[str]:
        return [check.name for check in self.checks if check.asserted and not check.passed]

    def check(self, name: str, measured: float, threshold: float, passed: Optional[bool] = None,
              asserted: bool = True, note: str = "") -> Check:
        """Record a check; passes when measured <= threshold unless passed is given"""
        measured = float(measured)
        if passed is None:
            passed = measured <= threshold
        entry = Check(name, bool(passed), measured, float(threshold), asserted, note)
        self.checks.append(entry)
        if asserted and not entry.passed:
            logger.warning("%s[seed %d]: check %s failed (%.4g vs %.4g) %s",
                           self.scenario_id, self.seed, name, measured, threshold, note)
        return entry

    def measure(self, key: str, value: float):
        self.measured[key] = float(value)

    def add_series(self, key: str, times: Iterable[float], values: Iterable[float]):
        for t, value in zip(times, values):
            self.series.append(SeriesRow(self.scenario_id, self.seed, key, float(t), float(value)))

    def to_dict(self) -> dict:
        return {
            'scenario_id': self.scenario_id,
            'kind': self.kind,
            'seed': self.seed,
            'passed': self.passed,
            'checks': [asdict(check) for check in self.checks],
            'measured': dict(self.measured),
            'details': self.details,
            'provenance': dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Report":
        return cls(
            scenario_id=data['scenario_id'],
            kind=data['kind'],
            seed=int(data['seed']),
            checks=[Check(**check) for check in data.get('checks', [])],
            measured=dict(data.get('measured', {})),
            details=dict(data.get('details', {})),
            provenance=dict(data.get('provenance', {})),
        )


def provenance(config_hash: str, seed: int) -> Dict[str, Any]:
    return {'config_hash': config_hash, 'seed': seed, 'version': __version__}


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_json(data: Any, filepath: Union[str, Path]):
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, 'w') as f:
        json.dump(_jsonable(data), f, indent=2, sort_keys=True)


def write_reports(reports: List[Report], out_dir: Union[str, Path]) -> Path:
    """Write report.json and series.csv, ordered by (scenario id, seed)"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ordered = sorted(reports, key=lambda r: (r.scenario_id, r.seed))
    write_json([report.to_dict() for report in ordered], out_dir / REPORT_FILE)
    with open(out_dir / SERIES_FILE, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(SERIES_COLUMNS)
        for report in ordered:
            for row in report.series:
                writer.writerow([row.scenario, row.seed, row.key, repr(row.t), repr(row.value)])
    logger.info("Wrote %d report(s) to %s", len(ordered), out_dir)
    return out_dir / REPORT_FILE


def load_reports(filepath: Union[str, Path]) -> List[Report]:
    """Read report.json back, attaching series rows when series.csv sits next to it"""
    filepath = Path(filepath)
    if filepath.is_dir():
        filepath = filepath / REPORT_FILE
    try:
        with open(filepath, 'r') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ScenarioError(f"Could not read reports from {filepath}: {e}") from e

    reports = [Report.from_dict(entry) for entry in data]
    series_file = filepath.parent / SERIES_FILE
    if series_file.exists():
        by_key = {(r.scenario_id, r.seed): r for r in reports}
        with open(series_file, 'r', newline='') as f:
            for row in csv.DictReader(f):
                report = by_key.get((row['scenario'], int(row['seed'])))
                if report is not None:
                    report.series.append(SeriesRow(row['scenario'], int(row['seed']), row['key'],
                                                   float(row['t']), float(row['value'])))
    return reports


def write_snapshots_csv(traj: Trajectory, filepath: Union[str, Path]):
    """Snapshots as rows t, x, u"""
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    centers = traj.dom.centers()
    with open(filepath, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(["t", "x", "u"])
        for t, values in zip(traj.times, traj.snapshots):
            for x, u in zip(centers, values):
                writer.writerow([repr(float(t)), repr(float(x)), repr(float(u))])
    logger.info("Wrote %d snapshot(s) to %s", traj.times.size, filepath)
