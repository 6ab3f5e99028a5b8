"""
Rough Path System - Piecewise-linear driving paths, their level-2 lift and the Holder metric

Time reversal convention: the reversed path over [0, t0] is s -> z_{t0-s}.
Only this reading makes the backward characteristics coincide with the
forward system driven by the reversed path.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from ..engine.constants import ALPHA_MIN
from ..engine.errors import PathError

logger = logging.getLogger(__name__)

_TIME_TOL = 1e-12


@dataclass(frozen=True)
class SmoothPath:
    """Piecewise-linear n-dimensional path on [0, T]"""
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1 or times.size < 2:
            raise PathError("A path needs at least two time nodes")
        if times[0] != 0.0:
            raise PathError(f"Path must start at t=0, starts at {times[0]}")
        if np.any(np.diff(times) <= 0.0):
            raise PathError("Path times must be strictly increasing")
        if values.shape[0] != times.size:
            raise PathError(f"{times.size} times but {values.shape[0]} values")
        if not np.all(np.isfinite(values)):
            raise PathError("Path values must be finite")
        object.__setattr__(self, 'times', times)
        object.__setattr__(self, 'values', values)

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def native_mesh(self) -> float:
        """Longest segment of the path"""
        return float(np.max(np.diff(self.times)))

    def segment_velocities(self) -> np.ndarray:
        """Constant derivative on each segment, shape (segments, n)"""
        return np.diff(self.values, axis=0) / np.diff(self.times)[:, None]

    def segment_index(self, t: float) -> int:
        """Segment containing t; a node belongs to the segment it starts"""
        k = int(np.searchsorted(self.times, t, side='right')) - 1
        return min(max(k, 0), self.times.size - 2)

    def evaluate(self, t) -> np.ndarray:
        """Path value at time(s) t by linear interpolation"""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.column_stack([np.interp(t_arr, self.times, self.values[:, j]) for j in range(self.n)])
        return out[0] if np.ndim(t) == 0 else out

    def velocity(self, t: float) -> np.ndarray:
        """Derivative on the segment containing t"""
        k = self.segment_index(t)
        return (self.values[k + 1] - self.values[k]) / (self.times[k + 1] - self.times[k])

    def aligned_grid(self, t0: float, t1: float, dt: float,
                     extra_nodes: Sequence[float] = ()) -> np.ndarray:
        """Time grid from t0 to t1 with steps at most dt that never straddle a kink

        Path nodes and any extra nodes inside (t0, t1) are grid points; every
        piece between consecutive break points is split into equal sub-steps.
        """
        if dt <= 0.0:
            raise PathError(f"Step size must be positive, got {dt}")
        if t1 < t0:
            raise PathError(f"Grid end {t1} precedes start {t0}")
        if t1 == t0:
            return np.array([t0])
        breaks = [t0, t1]
        breaks.extend(t for t in self.times if t0 < t < t1)
        breaks.extend(t for t in extra_nodes if t0 < t < t1)
        breaks = np.unique(np.asarray(breaks, dtype=float))
        # Merge break points closer than round-off
        keep = np.concatenate(([True], np.diff(breaks) > _TIME_TOL * max(1.0, abs(t1))))
        breaks = breaks[keep]
        breaks[-1] = t1
        pieces: List[np.ndarray] = []
        for a, b in zip(breaks[:-1], breaks[1:]):
            steps = max(1, int(np.ceil((b - a) / dt - 1e-9)))
            pieces.append(np.linspace(a, b, steps + 1)[:-1])
        pieces.append(np.array([t1]))
        return np.concatenate(pieces)


@dataclass(frozen=True)
class Level2Path:
    """A smooth path with its iterated integrals computed on demand"""
    base: SmoothPath

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def horizon(self) -> float:
        return self.base.horizon

    def increment(self, s: float, t: float) -> np.ndarray:
        """z_t - z_s"""
        return self.base.evaluate(t) - self.base.evaluate(s)

    def area(self, s: float, t: float) -> np.ndarray:
        """Iterated integral of (z_r - z_s) (x) dz_r over [s, t]

        Exact for piecewise-linear paths: each linear piece with increment D
        starting at offset o from z_s contributes o (x) D + D (x) D / 2.
        """
        if t <= s:
            return np.zeros((self.n, self.n))
        times = self.base.times
        nodes = np.concatenate(([s], times[(times > s) & (times < t)], [t]))
        values = self.base.evaluate(nodes)
        increments = np.diff(values, axis=0)
        offsets = values[:-1] - values[0]
        return offsets.T @ increments + 0.5 * increments.T @ increments


@dataclass(frozen=True)
class HolderMetricParams:
    """Holder exponent and the time pairs approximating the supremum"""
    alpha: float
    pair_grid: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        if not ALPHA_MIN < self.alpha <= 1.0:
            raise PathError(f"Holder exponent must lie in (1/3, 1], got {self.alpha}")
        if not self.pair_grid:
            raise PathError("Pair grid is empty")


def dyadic_pair_grid(horizon: float, finest_mesh: float) -> Tuple[Tuple[float, float], ...]:
    """Adjacent dyadic intervals of [0, T] from scale T down to finest_mesh"""
    if finest_mesh <= 0.0 or finest_mesh > horizon:
        raise PathError(f"Finest mesh {finest_mesh} must lie in (0, {horizon}]")
    levels = int(np.ceil(np.log2(horizon / finest_mesh) - 1e-9))
    pairs = []
    for level in range(levels + 1):
        nodes = np.linspace(0.0, horizon, 2 ** level + 1)
        pairs.extend(zip(nodes[:-1].tolist(), nodes[1:].tolist()))
    return tuple(pairs)


def zero_path(n: int, horizon: float) -> SmoothPath:
    """The constant path at the origin, whose lift is the trivial signature"""
    return SmoothPath(np.array([0.0, horizon]), np.zeros((2, n)))


def sample_brownian(seed: int, n: int, steps: int, horizon: float) -> SmoothPath:
    """Piecewise-linear interpolation of an n-dimensional Brownian sample"""
    if steps < 1:
        raise PathError(f"Need at least one step, got {steps}")
    if horizon <= 0.0:
        raise PathError(f"Horizon must be positive, got {horizon}")
    rng = np.random.default_rng(seed)
    increments = rng.normal(0.0, np.sqrt(horizon / steps), size=(steps, n))
    values = np.concatenate((np.zeros((1, n)), np.cumsum(increments, axis=0)))
    return SmoothPath(np.linspace(0.0, horizon, steps + 1), values)


def schauder_path(n: int, steps: int, horizon: float) -> SmoothPath:
    """Deterministic path from the dyadic Schauder hats, all with positive weight

        z(t) = sqrt(T) t/T + sum_{l < log2(steps)} (sqrt(T)/2) 2^(-l/2) tri(2^l t/T)

    with tri the unit triangle wave. The weights follow Brownian scaling, so
    the path is alpha-Holder for every alpha < 1/2. Its interpolant on the
    dyadic mesh T 2^-j is the partial sum over l < j, and d_alpha from it
    to the path decreases strictly in j. Component i is scaled by 2^-i.
    """
    if steps < 1 or steps & (steps - 1):
        raise PathError(f"A Schauder path needs a power-of-two step count, got {steps}")
    if horizon <= 0.0:
        raise PathError(f"Horizon must be positive, got {horizon}")
    times = np.linspace(0.0, horizon, steps + 1)
    u = times / horizon
    values = np.sqrt(horizon) * u
    for level in range(int(round(np.log2(steps)))):
        phase = np.mod(u * 2 ** level, 1.0)
        values = values + 0.5 * np.sqrt(horizon) * 2.0 ** (-0.5 * level) * (1.0 - np.abs(2.0 * phase - 1.0))
    scales = 2.0 ** -np.arange(n)
    return SmoothPath(times, values[:, None] * scales[None, :])


def stratonovich_lift(p: SmoothPath) -> Level2Path:
    """Level-2 lift with exact segment-wise iterated integrals"""
    return Level2Path(p)


def coarsen(p: SmoothPath, mesh: float) -> SmoothPath:
    """Interpolate p on the coarser uniform mesh, the z^eps family"""
    native = p.native_mesh
    if mesh < native * (1.0 - 1e-9):
        raise PathError(f"Mesh {mesh} is finer than the native mesh {native}")
    if mesh <= native * (1.0 + 1e-9):
        return p
    horizon = p.horizon
    steps = max(1, int(round(horizon / mesh)))
    times = np.linspace(0.0, horizon, steps + 1)
    return SmoothPath(times, p.evaluate(times))


def holder_distance_parts(a: Level2Path, b: Level2Path, params: HolderMetricParams) -> Tuple[float, float]:
    """Level-1 and level-2 parts of the Holder distance on the pair grid"""
    if a.n != b.n:
        raise PathError(f"Dimension mismatch: {a.n} vs {b.n}")
    if abs(a.horizon - b.horizon) > _TIME_TOL * max(1.0, a.horizon):
        raise PathError(f"Horizon mismatch: {a.horizon} vs {b.horizon}")
    level1 = 0.0
    level2 = 0.0
    for s, t in params.pair_grid:
        scale = abs(t - s) ** params.alpha
        if scale == 0.0:
            continue
        level1 = max(level1, float(np.linalg.norm(a.increment(s, t) - b.increment(s, t))) / scale)
        level2 = max(level2, float(np.sqrt(np.linalg.norm(a.area(s, t) - b.area(s, t)))) / scale)
    return level1, level2


def holder_distance(a: Level2Path, b: Level2Path, params: HolderMetricParams) -> float:
    """Approximate alpha-Holder rough path distance d_alpha"""
    return max(holder_distance_parts(a, b, params))


def reverse(p: SmoothPath, t0: float) -> SmoothPath:
    """The reversed path s -> z_{t0-s} on [0, t0]"""
    if not 0.0 <= t0 <= p.horizon:
        raise PathError(f"Reversal time {t0} outside [0, {p.horizon}]")
    if t0 == 0.0:
        # Degenerate horizon: keep a valid two-node constant path
        z0 = p.values[0]
        return SmoothPath(np.array([0.0, 1.0]), np.vstack((z0, z0)))
    inner = p.times[(p.times > 0.0) & (p.times < t0)]
    nodes = np.concatenate(([0.0], inner, [t0]))
    values = p.evaluate(nodes)
    return SmoothPath(t0 - nodes[::-1], values[::-1])


def shift(p: SmoothPath, s: float) -> SmoothPath:
    """The shifted path r -> z_{r+s} on [0, T-s]"""
    if not 0.0 <= s < p.horizon:
        raise PathError(f"Shift {s} outside [0, {p.horizon})")
    if s == 0.0:
        return p
    inner = p.times[p.times > s]
    nodes = np.concatenate(([s], inner))
    return SmoothPath(nodes - s, p.evaluate(nodes))
