"""
Path persistence - CSV files with header "t, z1, ..., zn"
"""

import csv
import logging
from pathlib import Path
from typing import List, Union

import numpy as np

from ..engine.errors import PathError
from .roughpath import SmoothPath

logger = logging.getLogger(__name__)

HEADER_SEPARATOR = ", "


def path_header(n: int) -> List[str]:
    return ["t"] + [f"z{j + 1}" for j in range(n)]


def write_path_csv(p: SmoothPath, filepath: Union[str, Path]):
    """Write a path; floats use the shortest round-trip representation"""
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, 'w', newline='') as f:
        f.write(HEADER_SEPARATOR.join(path_header(p.n)) + "\n")
        writer = csv.writer(f, lineterminator="\n")
        for t, z in zip(p.times, p.values):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in z])
    logger.debug("Wrote %d path nodes to %s", p.times.size, filepath)


def read_path_csv(filepath: Union[str, Path]) -> SmoothPath:
    """Read a path written by write_path_csv; whitespace around names is ignored"""
    filepath = Path(filepath)
    try:
        with open(filepath, 'r', newline='') as f:
            reader = csv.reader(f)
            header = [column.strip() for column in next(reader)]
            rows = [[float(value) for value in row] for row in reader if row]
    except (OSError, StopIteration, ValueError) as e:
        raise PathError(f"Could not read path file {filepath}: {e}") from e

    if len(header) < 2 or header != path_header(len(header) - 1):
        raise PathError(f"Bad path header in {filepath}: {header}, expected "
                        f"{HEADER_SEPARATOR.join(path_header(max(1, len(header) - 1)))}")
    data = np.asarray(rows, dtype=float)
    if data.ndim != 2 or data.shape[1] != len(header):
        raise PathError(f"Path file {filepath} has ragged rows")
    return SmoothPath(data[:, 0], data[:, 1:])
