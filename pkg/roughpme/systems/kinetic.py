"""
Kinetic System - Kinetic function, defect measures binned in velocity and
diagnostics of the kinetic formulation

chi(x, xi) = 1 on 0 < xi < u(x), -1 on u(x) < xi < 0 and 0 elsewhere. The
defect measures are concentrated on xi = u(x, t); deposition puts each cell's
per-step gradient energy into the velocity bin containing u.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..domain.geometry import Domain
from ..engine.constants import DEFAULT_XI_BINS, DEFAULT_XI_MARGIN
from ..engine.errors import EmptyTallyError, KineticError, SupportViolationError, XiRangeError
from ..signals.roughpath import SmoothPath
from .characteristics import FlowParams, transported_support_check, transported_test_function
from .coefficients import Coefficient
from .pde import SolverParams, Trajectory, face_gradients, signed_power

logger = logging.getLogger(__name__)

TestFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]

_TIME_TOL = 1e-12


def kinetic_function(v, xi):
    """chi-bar(v, xi) in {-1, 0, 1}"""
    v = np.asarray(v, dtype=float)
    xi = np.asarray(xi, dtype=float)
    out = np.where((0.0 < xi) & (xi < v), 1, np.where((v < xi) & (xi < 0.0), -1, 0)).astype(np.int8)
    return int(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class XiGrid:
    """Uniform velocity bins on [-xi_max, xi_max]; an even bin count keeps 0 on an edge"""
    xi_max: float
    bins: int = DEFAULT_XI_BINS

    def __post_init__(self):
        if self.xi_max <= 0.0:
            raise KineticError(f"Velocity range must be positive, got {self.xi_max}")
        if self.bins < 2 or self.bins % 2:
            raise KineticError(f"Velocity bin count must be even and >= 2, got {self.bins}")

    @property
    def dxi(self) -> float:
        return 2.0 * self.xi_max / self.bins

    def centers(self) -> np.ndarray:
        return -self.xi_max + (np.arange(self.bins) + 0.5) * self.dxi

    def bin_of(self, u: np.ndarray) -> np.ndarray:
        """Bin containing each value; values outside the range are an error"""
        u = np.asarray(u, dtype=float)
        if np.any(np.abs(u) > self.xi_max):
            raise XiRangeError(f"Value {np.max(np.abs(u)):.4g} outside the velocity range "
                               f"[-{self.xi_max:.4g}, {self.xi_max:.4g}]")
        index = np.floor((u + self.xi_max) / self.dxi).astype(int)
        return np.clip(index, 0, self.bins - 1)

    def refine(self, factor: int = 2) -> "XiGrid":
        return XiGrid(self.xi_max, self.bins * factor)


def xi_grid_for(u0, margin: float = DEFAULT_XI_MARGIN, bins: int = DEFAULT_XI_BINS) -> XiGrid:
    """Velocity grid with xi_max = 2 max|u0| + margin"""
    values = getattr(u0, 'values', u0)
    return XiGrid(2.0 * float(np.max(np.abs(values))) + margin, bins)


@dataclass
class KineticField:
    """chi of one snapshot at (cell centre, bin centre) nodes"""
    dom: Domain
    xi_grid: XiGrid
    values: np.ndarray

    def integrate(self) -> np.ndarray:
        """int chi dxi per cell, u to O(dxi)"""
        return np.sum(self.values, axis=1) * self.xi_grid.dxi


def kinetic_field(u, xi_grid: XiGrid, dom: Optional[Domain] = None) -> KineticField:
    values = getattr(u, 'values', u)
    dom = getattr(u, 'dom', dom)
    if dom is None:
        raise KineticError("Need a domain for raw value arrays")
    xi_grid.bin_of(values)
    return KineticField(dom, xi_grid, kinetic_function(np.asarray(values)[:, None], xi_grid.centers()[None, :]))


def kinetic_l1_identity(u1, u2, xi_grid: XiGrid, dom: Optional[Domain] = None) -> Tuple[bool, float]:
    """Check |chi1 - chi2|^2 = |chi1| + |chi2| - 2 chi1 chi2 on the grid and
    return the largest gap between int |chi1 - chi2|^2 dxi and |u1 - u2|
    """
    f1 = kinetic_field(u1, xi_grid, dom).values.astype(int)
    f2 = kinetic_field(u2, xi_grid, dom).values.astype(int)
    exact = bool(np.array_equal((f1 - f2) ** 2, np.abs(f1) + np.abs(f2) - 2 * f1 * f2))
    integral = np.sum((f1 - f2) ** 2, axis=1) * xi_grid.dxi
    gap = np.abs(integral - np.abs(np.asarray(getattr(u1, 'values', u1)) - np.asarray(getattr(u2, 'values', u2))))
    return exact, float(np.max(gap))


@dataclass
class DefectTally:
    """Entropy and parabolic defect masses, one bin per (step, cell)

    Arrays are indexed (step, cell); bin_index names the velocity bin that
    received the mass of that cell in that step.
    """
    dom: Domain
    xi_grid: XiGrid
    step_times: np.ndarray
    bin_index: np.ndarray
    p_mass: np.ndarray
    q_mass: np.ndarray

    @property
    def steps(self) -> int:
        return self.bin_index.shape[0]

    @property
    def p_total(self) -> float:
        return float(np.sum(self.p_mass))

    @property
    def q_total(self) -> float:
        return float(np.sum(self.q_mass))

    @property
    def total(self) -> float:
        return self.p_total + self.q_total

    def binned(self) -> Tuple[np.ndarray, np.ndarray]:
        """p and q summed over steps and cells per velocity bin"""
        p = np.bincount(self.bin_index.ravel(), weights=self.p_mass.ravel(), minlength=self.xi_grid.bins)
        q = np.bincount(self.bin_index.ravel(), weights=self.q_mass.ravel(), minlength=self.xi_grid.bins)
        return p, q


def _require_cell_tallies(traj: Trajectory):
    if traj.values is None or traj.gradient_cells is None:
        raise KineticError("Trajectory was solved without per-cell tallies")


def defect_tally(traj: Trajectory, params: SolverParams, xi_grid: Optional[XiGrid] = None) -> DefectTally:
    """Deposit each cell's per-step gradient energy at the bin of its post-step value

    q = 4m/(m+1)^2 |grad u^[(m+1)/2]|^2 dt and p = eta |grad u|^2 dt.
    """
    _require_cell_tallies(traj)
    xi_grid = xi_grid or xi_grid_for(traj.values[0])
    post = traj.values[1:]
    return DefectTally(
        dom=traj.dom,
        xi_grid=xi_grid,
        step_times=traj.step_times.copy(),
        bin_index=xi_grid.bin_of(post) if post.size else np.zeros((0, traj.dom.cells), dtype=int),
        p_mass=traj.viscous_cells.copy(),
        q_mass=params.q_prefactor * traj.gradient_cells,
    )


def _bump(r: np.ndarray) -> np.ndarray:
    return np.where(np.abs(r) < 1.0, (1.0 - np.minimum(r ** 2, 1.0)) ** 4, 0.0)


@dataclass(frozen=True)
class SeparableTestFunction:
    """rho0(x, xi) = b((x - x_center)/x_width) b((xi - xi_center)/xi_width) with b = (1 - r^2)^4"""
    x_center: float
    x_width: float
    xi_center: float
    xi_width: float
    rho_id: str = "rho"

    def __call__(self, x, xi):
        return _bump((np.asarray(x) - self.x_center) / self.x_width) * \
            _bump((np.asarray(xi) - self.xi_center) / self.xi_width)


def _laplacian_x(rho: np.ndarray, h: float) -> np.ndarray:
    padded = np.pad(rho, ((1, 1), (0, 0)))
    return (padded[2:] - 2.0 * padded[1:-1] + padded[:-2]) / h ** 2


def _derivative_xi(rho: np.ndarray, dxi: float) -> np.ndarray:
    padded = np.pad(rho, ((0, 0), (1, 1)))
    return (padded[:, 2:] - padded[:, :-2]) / (2.0 * dxi)


def bin_fractions(values: np.ndarray, xi_grid: XiGrid) -> np.ndarray:
    """Average of chi(u, .) over each velocity bin, shape (cell, bin)"""
    edges = -xi_grid.xi_max + np.arange(xi_grid.bins + 1) * xi_grid.dxi
    lo, hi = edges[None, :-1], edges[None, 1:]
    u = np.asarray(values, dtype=float)[:, None]
    above = np.maximum(0.0, np.minimum(np.maximum(u, 0.0), hi) - np.maximum(0.0, lo))
    below = np.maximum(0.0, np.minimum(0.0, hi) - np.maximum(np.minimum(u, 0.0), lo))
    return (above - below) / xi_grid.dxi


def _at_values(field: np.ndarray, values: np.ndarray, xi_grid: XiGrid) -> np.ndarray:
    """Linear interpolation of a (cell, bin) field to xi = u, cell by cell"""
    position = np.clip((values + xi_grid.xi_max) / xi_grid.dxi - 0.5, 0.0, xi_grid.bins - 1.0)
    left = np.minimum(np.floor(position).astype(int), xi_grid.bins - 2)
    weight = position - left
    rows = np.arange(field.shape[0])
    return (1.0 - weight) * field[rows, left] + weight * field[rows, left + 1]


def weak_form_residual(traj: Trajectory, rho0: TestFunction, t0: float, t1: float, path: SmoothPath,
                       c: Coefficient, flow_params: FlowParams, xi_grid: Optional[XiGrid] = None,
                       tally: Optional[DefectTally] = None,
                       flow_times: Optional[Sequence[float]] = None) -> float:
    """Defect of the kinetic identity tested with rho_{t0,r} = rho0(Y_{r,r-t0}, Pi_{r,r-t0})

        int chi(t1) rho_{t0,t1} - int chi(t0) rho0
          = int int (m|xi|^(m-1) + eta) chi Lap_x rho_{t0,r} - int int (p + q) d_xi rho_{t0,r}

    Time integrals use the right endpoint of each solver step. The transported
    test function is evaluated by backward flow at flow_times (default: every
    solver step in (t0, t1]) and held on the steps up to each one. chi enters
    through its bin averages and the defect measures are tested at xi = u.
    """
    _require_cell_tallies(traj)
    if not t0 < t1:
        raise KineticError(f"Need t0 < t1, got [{t0}, {t1}]")
    params = traj.params
    tally = tally or defect_tally(traj, params, xi_grid)
    xi_grid = tally.xi_grid
    dom = traj.dom
    h, dxi = dom.h, xi_grid.dxi
    xs, xis = np.meshgrid(dom.centers(), xi_grid.centers(), indexing='ij')

    times = traj.step_times
    k0 = int(np.argmin(np.abs(times - t0)))
    k1 = int(np.argmin(np.abs(times - t1)))
    tol = 1e-9 * max(1.0, abs(t1))
    if abs(times[k0] - t0) > tol or abs(times[k1] - t1) > tol:
        raise KineticError(f"[{t0}, {t1}] does not start and end on solver steps")

    if flow_times is None:
        flow_times = [t for t in times if t0 + tol < t <= t1 + tol]
    flow_times = sorted(set(float(t) for t in flow_times) | {float(times[k1])})
    if c.is_zero:
        flow_times = [float(times[k1])]

    if not transported_support_check(rho0, dom, xi_grid.centers(), t0, flow_times, path, c, flow_params):
        raise SupportViolationError("Transported test function touches the boundary cells")

    def transported(r: float) -> np.ndarray:
        if c.is_zero or r <= t0:
            return np.asarray(rho0(xs, xis), dtype=float)
        return transported_test_function(rho0, xs, xis, t0, r, path, c, flow_params)

    rho_cache: Dict[float, np.ndarray] = {r: transported(r) for r in flow_times}
    weight = params.m * np.abs(xis) ** (params.m - 1.0) + params.eta

    def chi(values):
        return bin_fractions(values, xi_grid)

    rho_start = transported(t0)
    rho_end = rho_cache[float(times[k1])]
    bracket = np.sum(chi(traj.values[k1]) * rho_end - chi(traj.values[k0]) * rho_start) * h * dxi

    diffusion = 0.0
    defect = 0.0
    for k in range(k0, k1):
        tb = times[k + 1]
        r = next(r for r in flow_times if r >= tb - tol)
        rho = rho_cache[r]
        u_next = traj.values[k + 1]
        diffusion += (tb - times[k]) * np.sum(weight * chi(u_next) * _laplacian_x(rho, h)) * h * dxi
        drho = _at_values(_derivative_xi(rho, dxi), u_next, xi_grid)
        defect += np.sum((tally.p_mass[k] + tally.q_mass[k]) * drho)

    residual = abs(bracket - (diffusion - defect))
    logger.debug("Weak residual on [%.4g, %.4g]: bracket %.4g, diffusion %.4g, defect %.4g",
                 t0, t1, bracket, diffusion, defect)
    return float(residual)


def singular_moment(tally: DefectTally, delta: float) -> float:
    """delta sum |xi_bin|^(delta-1) (p + q)"""
    if not 0.0 < delta <= 1.0:
        raise KineticError(f"Moment order must lie in (0, 1], got {delta}")
    if tally.steps == 0:
        raise EmptyTallyError("Defect tally has no recorded steps")
    p, q = tally.binned()
    return float(delta * np.sum(np.abs(tally.xi_grid.centers()) ** (delta - 1.0) * (p + q)))


@dataclass
class SobolevReport:
    """Poincare ratio and |grad u^[m]|_{p_m} per snapshot"""
    times: np.ndarray
    poincare_ratios: np.ndarray
    pm_norms: np.ndarray
    p_m: float

    @property
    def poincare_ratio_max(self) -> float:
        return float(np.max(self.poincare_ratios)) if self.poincare_ratios.size else 0.0

    @property
    def pm_norm_max(self) -> float:
        return float(np.max(self.pm_norms)) if self.pm_norms.size else 0.0


def poincare_ratio(values: np.ndarray, dom: Domain, m: float) -> float:
    """||u||_{m+1}^{m+1} / ||grad u^[(m+1)/2]||^2, defined as 0 for u = 0"""
    numerator = dom.h * np.sum(np.abs(values) ** (m + 1.0))
    grad = face_gradients(signed_power(values, 0.5 * (m + 1.0)), dom)
    denominator = np.sum(grad ** 2 * dom.face_weights())
    return float(numerator / denominator) if denominator > 0.0 else 0.0


def sobolev_diagnostics(traj: Trajectory, params: SolverParams) -> SobolevReport:
    """Discrete Poincare ratio and the p_m = min((m+1)/m, 2) norm of grad u^[m] over time"""
    p_m = min((params.m + 1.0) / params.m, 2.0)
    weights = traj.dom.face_weights()
    ratios, norms = [], []
    for values in traj.snapshots:
        ratios.append(poincare_ratio(values, traj.dom, params.m))
        grad = face_gradients(signed_power(values, params.m), traj.dom)
        norms.append(float(np.sum(np.abs(grad) ** p_m * weights) ** (1.0 / p_m)))
    return SobolevReport(traj.times.copy(), np.asarray(ratios), np.asarray(norms), p_m)


@dataclass
class KineticReport:
    """Aggregated kinetic diagnostics of one run"""
    q_total: float = 0.0
    p_total: float = 0.0
    singular_moments: Dict[float, float] = field(default_factory=dict)
    poincare_ratio_max: float = 0.0
    sobolev_pm_norm: float = 0.0
    weak_residuals: List[dict] = field(default_factory=list)

    def add_residual(self, rho_id: str, t0: float, t1: float, value: float):
        self.weak_residuals.append({'rho_id': rho_id, 't0': t0, 't1': t1, 'value': value})

    def to_dict(self) -> dict:
        return {
            'q_total': self.q_total,
            'p_total': self.p_total,
            'singular_moments': {str(delta): value for delta, value in self.singular_moments.items()},
            'poincare_ratio_max': self.poincare_ratio_max,
            'sobolev_pm_norm': self.sobolev_pm_norm,
            'weak_residuals': list(self.weak_residuals),
        }


def kinetic_report(traj: Trajectory, params: SolverParams, deltas: Sequence[float] = (1.0, 0.5, 0.25),
                   xi_grid: Optional[XiGrid] = None) -> KineticReport:
    """Defect totals, singular moments and Sobolev diagnostics of a trajectory"""
    tally = defect_tally(traj, params, xi_grid)
    sobolev = sobolev_diagnostics(traj, params)
    report = KineticReport(q_total=tally.q_total, p_total=tally.p_total,
                           poincare_ratio_max=sobolev.poincare_ratio_max,
                           sobolev_pm_norm=sobolev.pm_norm_max)
    if tally.steps:
        report.singular_moments = {delta: singular_moment(tally, delta) for delta in deltas}
    return report
