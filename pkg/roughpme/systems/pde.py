"""
PDE System - Finite-volume IMEX solver for
    du/dt = (u^[m])_xx + eta u_xx + (A(x, u) . zdot)_x   on Q,   u = 0 on the boundary

Cell-centred mesh with the Dirichlet value held on the boundary faces.
Diffusion is backward Euler in the potential w = u^[m] + eta u, solved by
damped Newton with a tridiagonal Jacobian. Transport is explicit with upwind
or central face values. The conservative update is applied with the
converged potential, so the cell-sum change equals the boundary flux to
round-off.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import solve_banded

from ..domain.geometry import Domain
from ..engine.constants import (
    DEFAULT_CFL_GUARD, DEFAULT_THETA_REG, INNER_SOLVE_MAX_ITER, INNER_SOLVE_TOL, SUPPORT_THRESHOLD,
)
from ..engine.errors import CFLViolationError, InnerSolveError, SolverError
from ..signals.roughpath import SmoothPath
from .coefficients import Coefficient

logger = logging.getLogger(__name__)

FLUX_SCHEMES = ("upwind", "central")

_LINE_SEARCH_HALVINGS = 10
_FALLBACK_DAMPING = 0.1
_BISECTION_STEPS = 64
_TIME_TOL = 1e-12


def signed_power(u, m: float):
    """u^[m] = |u|^(m-1) u, with 0^[m] = 0"""
    if m <= 0.0:
        raise SolverError(f"Signed power needs m > 0, got {m}")
    out = np.sign(u) * np.abs(u) ** m
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class GridFunction:
    """Cell averages of a field on the mesh of dom at one time"""
    dom: Domain
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.dom.cells,):
            raise SolverError(f"Expected {self.dom.cells} cell values, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise SolverError("Grid function has non-finite values")

    def mass(self) -> float:
        return float(self.dom.h * np.sum(self.values))

    def l1_norm(self) -> float:
        return float(self.dom.h * np.sum(np.abs(self.values)))

    def l2_squared(self) -> float:
        return float(self.dom.h * np.sum(self.values ** 2))

    def at(self, time: float) -> "GridFunction":
        return GridFunction(self.dom, self.values.copy(), time)


@dataclass(frozen=True)
class SolverParams:
    """Regularised equation parameters and scheme settings"""
    m: float
    eta: float = 0.0
    dt: float = 1e-4
    theta_reg: float = DEFAULT_THETA_REG
    flux_scheme: str = "upwind"
    cfl_guard: float = DEFAULT_CFL_GUARD
    inner_tol: float = INNER_SOLVE_TOL
    max_iter: int = INNER_SOLVE_MAX_ITER

    def __post_init__(self):
        if self.m <= 0.0:
            raise SolverError(f"Diffusion exponent must be positive, got {self.m}")
        if not 0.0 <= self.eta < 1.0:
            raise SolverError(f"Viscosity must lie in [0, 1), got {self.eta}")
        if self.dt <= 0.0:
            raise SolverError(f"Time step must be positive, got {self.dt}")
        if self.theta_reg <= 0.0:
            raise SolverError(f"Regularisation floor must be positive, got {self.theta_reg}")
        if self.flux_scheme not in FLUX_SCHEMES:
            raise SolverError(f"Unknown flux scheme '{self.flux_scheme}'")
        if not 0.0 < self.cfl_guard < 1.0:
            raise SolverError(f"CFL guard must lie in (0, 1), got {self.cfl_guard}")

    @property
    def q_prefactor(self) -> float:
        """4m/(m+1)^2, the weight of the parabolic defect density"""
        return 4.0 * self.m / (self.m + 1.0) ** 2


@dataclass(frozen=True)
class RecordPolicy:
    """Snapshot times, plus every-step values and per-cell tallies when cell_tallies is set"""
    times: Optional[Tuple[float, ...]] = None
    cell_tallies: bool = False

    @classmethod
    def uniform(cls, t_start: float, t_end: float, count: int, cell_tallies: bool = False) -> "RecordPolicy":
        return cls(tuple(np.linspace(t_start, t_end, count).tolist()), cell_tallies)


@dataclass
class StepTally:
    """Gradient energies of the post-step state and the boundary exchange of one step"""
    gradient_energy: float
    viscous_dissipation: float
    boundary_flux: float
    newton_iterations: int
    gradient_cells: Optional[np.ndarray] = None
    viscous_cells: Optional[np.ndarray] = None


@dataclass
class Trajectory:
    """Snapshots at the recording times plus per-step tallies

    gradient_energy[k] is |grad u^[(m+1)/2]|^2 dt and viscous_dissipation[k]
    is eta |grad u|^2 dt, both for the state at step_times[k+1].
    boundary_flux[k] is the net inflow through the boundary during step k.
    """
    dom: Domain
    params: SolverParams
    times: np.ndarray
    snapshots: np.ndarray
    step_times: np.ndarray
    gradient_energy: np.ndarray
    viscous_dissipation: np.ndarray
    boundary_flux: np.ndarray
    mass: np.ndarray
    min_value: np.ndarray
    l2_squared: np.ndarray
    values: Optional[np.ndarray] = None
    gradient_cells: Optional[np.ndarray] = None
    viscous_cells: Optional[np.ndarray] = None

    @property
    def initial(self) -> GridFunction:
        return GridFunction(self.dom, self.snapshots[0], float(self.times[0]))

    @property
    def final(self) -> GridFunction:
        return GridFunction(self.dom, self.snapshots[-1], float(self.times[-1]))

    @property
    def steps(self) -> int:
        return self.step_times.size - 1

    @property
    def q_dissipation(self) -> np.ndarray:
        """Per-step parabolic defect mass"""
        return self.params.q_prefactor * self.gradient_energy

    def snapshot(self, k: int) -> GridFunction:
        return GridFunction(self.dom, self.snapshots[k], float(self.times[k]))

    def snapshot_at(self, t: float) -> GridFunction:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise SolverError(f"No snapshot recorded at t={t}")
        return self.snapshot(k)

    def with_values(self, values: np.ndarray) -> "Trajectory":
        """Copy with the every-step values replaced, snapshots left alone"""
        return Trajectory(**{**self.__dict__, 'values': np.asarray(values, dtype=float)})


def face_gradients(values: np.ndarray, dom: Domain) -> np.ndarray:
    """Gradients on all faces with zero ghost values on the boundary"""
    padded = np.concatenate(([0.0], values, [0.0]))
    return np.diff(padded) / dom.face_weights()


def gradient_energy_faces(values: np.ndarray, dom: Domain) -> np.ndarray:
    """|grad v|^2 integrated over the dual cell of each face"""
    return face_gradients(values, dom) ** 2 * dom.face_weights()


def faces_to_cells(face_values: np.ndarray) -> np.ndarray:
    """Split interior faces evenly to both neighbours; boundary faces go to their cell"""
    cells = 0.5 * (face_values[:-1] + face_values[1:])
    cells[0] += 0.5 * face_values[0]
    cells[-1] += 0.5 * face_values[-1]
    return cells


def chain_rule_gap(values: np.ndarray, dom: Domain, m: float) -> float:
    """max over interior faces of |grad u^[m] - (2m/(m+1)) |u|^((m-1)/2) grad u^[(m+1)/2]|"""
    half = 0.5 * (m + 1.0)
    lhs = face_gradients(signed_power(values, m), dom)[1:-1]
    face_abs = 0.5 * (np.abs(values[:-1]) + np.abs(values[1:]))
    rhs = (2.0 * m / (m + 1.0)) * face_abs ** ((m - 1.0) / 2.0) * face_gradients(signed_power(values, half), dom)[1:-1]
    return float(np.max(np.abs(lhs - rhs)))


def _potential(u: np.ndarray, params: SolverParams) -> np.ndarray:
    return np.sign(u) * np.abs(u) ** params.m + params.eta * u


def _capped_slope(u: np.ndarray, params: SolverParams) -> np.ndarray:
    """d w / d u, with |u| floored at theta_reg when m < 1"""
    if params.m < 1.0:
        return params.m * np.maximum(np.abs(u), params.theta_reg) ** (params.m - 1.0) + params.eta
    return params.m * np.abs(u) ** (params.m - 1.0) + params.eta


def _invert_potential(w: np.ndarray, params: SolverParams) -> np.ndarray:
    """u with u^[m] + eta u = w"""
    if params.eta == 0.0:
        return signed_power(w, 1.0 / params.m)
    target = np.abs(w)
    lo = np.zeros_like(target)
    hi = np.minimum(target / params.eta, target ** (1.0 / params.m))
    for _ in range(_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        above = mid ** params.m + params.eta * mid > target
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    return np.sign(w) * 0.5 * (lo + hi)


def _banded_jacobian(diag: np.ndarray, slope: np.ndarray, fw: np.ndarray, ratio: float) -> np.ndarray:
    """diag(diag) + K diag(slope), K the implicit Dirichlet stiffness times dt/h"""
    ab = np.zeros((3, slope.size))
    ab[0, 1:] = -ratio / fw[1:-1] * slope[1:]
    ab[1] = diag + ratio * (1.0 / fw[:-1] + 1.0 / fw[1:]) * slope
    ab[2, :-1] = -ratio / fw[1:-1] * slope[:-1]
    return ab


def _diffusion_solve(rhs: np.ndarray, guess: np.ndarray, dt: float, dom: Domain,
                     params: SolverParams) -> Tuple[np.ndarray, int]:
    """Potential w of the backward Euler state v solving v - dt Lap_h w(v) = rhs

    For m >= 1 Newton runs on v, for m < 1 on w with v recovered by inversion,
    which keeps both linearisations bounded at v = 0.
    """
    fw = dom.face_weights()
    ratio = dt / dom.h
    on_potential = params.m < 1.0

    def divergence(w):
        return np.diff(face_gradients(w, dom))

    if on_potential:
        def residual(w):
            return _invert_potential(w, params) - rhs - ratio * divergence(w)

        def jacobian(w):
            slope = 1.0 / _capped_slope(_invert_potential(w, params), params)
            return _banded_jacobian(slope, np.ones_like(w), fw, ratio)

        y = _potential(guess, params)
    else:
        def residual(v):
            return v - rhs - ratio * divergence(_potential(v, params))

        def jacobian(v):
            return _banded_jacobian(np.ones_like(v), _capped_slope(v, params), fw, ratio)

        y = guess.copy()

    r = residual(y)
    norm = np.max(np.abs(r))
    iterations = 0
    while norm > params.inner_tol:
        if iterations >= params.max_iter:
            raise InnerSolveError(f"Diffusion solve stalled at residual {norm:.3g} "
                                  f"after {iterations} iterations")
        delta = solve_banded((1, 1), jacobian(y), -r)
        lam = 1.0
        for _ in range(_LINE_SEARCH_HALVINGS):
            trial = y + lam * delta
            r_trial = residual(trial)
            if np.max(np.abs(r_trial)) < norm:
                break
            lam *= 0.5
        else:
            trial = y + _FALLBACK_DAMPING * delta
            r_trial = residual(trial)
        y, r = trial, r_trial
        norm = np.max(np.abs(r))
        iterations += 1
        if not np.isfinite(norm):
            raise InnerSolveError("Diffusion solve diverged to a non-finite residual")

    w = y if on_potential else _potential(y, params)
    return w, iterations


def _transport_flux(values: np.ndarray, dom: Domain, zdot: np.ndarray, c: Coefficient,
                    scheme: str) -> Tuple[np.ndarray, np.ndarray]:
    """Face fluxes A(x_face, u_face) . zdot and face speeds d_xi A(x_face, u_mean) . zdot"""
    left = np.concatenate(([0.0], values))
    right = np.concatenate((values, [0.0]))
    mean = 0.5 * (left + right)
    faces = dom.faces()
    speed = c.eval_dxiA(faces, mean) @ zdot
    if scheme == "upwind":
        u_face = np.where(speed > 0.0, right, left)
    else:
        u_face = mean
    # Dirichlet value on the boundary faces
    u_face[0] = u_face[-1] = 0.0
    return c.eval_A(faces, u_face) @ zdot, speed


def _advance(values: np.ndarray, t: float, dt: float, dom: Domain, params: SolverParams,
             path: SmoothPath, c: Coefficient, cell_tallies: bool) -> Tuple[np.ndarray, StepTally]:
    ratio = dt / dom.h
    if c.is_zero:
        transport = np.zeros(dom.cells + 1)
    else:
        transport, speed = _transport_flux(values, dom, path.velocity(t), c, params.flux_scheme)
        courant = dt * float(np.max(np.abs(speed))) / dom.h
        if courant > params.cfl_guard:
            raise CFLViolationError(f"Courant number {courant:.4g} exceeds the guard "
                                    f"{params.cfl_guard} at t={t:.6g}")
    explicit = values + ratio * np.diff(transport)

    w, iterations = _diffusion_solve(explicit, values, dt, dom, params)
    grad_w = face_gradients(w, dom)
    new = explicit + ratio * np.diff(grad_w)

    half = 0.5 * (params.m + 1.0)
    grad_faces = gradient_energy_faces(signed_power(new, half), dom) * dt
    visc_faces = params.eta * gradient_energy_faces(new, dom) * dt
    tally = StepTally(
        gradient_energy=float(np.sum(grad_faces)),
        viscous_dissipation=float(np.sum(visc_faces)),
        boundary_flux=dt * float(grad_w[-1] - grad_w[0] + transport[-1] - transport[0]),
        newton_iterations=iterations,
        gradient_cells=faces_to_cells(grad_faces) if cell_tallies else None,
        viscous_cells=faces_to_cells(visc_faces) if cell_tallies else None,
    )
    return new, tally


def step(u: GridFunction, t: float, params: SolverParams, path: SmoothPath,
         c: Coefficient) -> GridFunction:
    """One IMEX step of size params.dt from time t, driver frozen on the segment containing t"""
    new, tally = _advance(u.values, t, params.dt, u.dom, params, path, c, cell_tallies=False)
    logger.debug("Step at t=%.6g took %d Newton iterations", t, tally.newton_iterations)
    return GridFunction(u.dom, new, t + params.dt)


def solve(u0: GridFunction, T: float, params: SolverParams, path: SmoothPath, c: Coefficient,
          record: Optional[RecordPolicy] = None) -> Trajectory:
    """Integrate from u0.time to T on a step grid aligned with path kinks and record times"""
    record = record or RecordPolicy()
    t_start = u0.time
    if T < t_start:
        raise SolverError(f"End time {T} precedes the start time {t_start}")
    if T > path.horizon * (1.0 + _TIME_TOL):
        raise SolverError(f"End time {T} beyond the path horizon {path.horizon}")

    wanted = [t_start, T] if record.times is None else sorted(set([t_start, T]) | set(record.times))
    wanted = np.asarray([t for t in wanted if t_start - _TIME_TOL <= t <= T + _TIME_TOL])
    grid = path.aligned_grid(t_start, T, params.dt, wanted) if T > t_start else np.array([t_start])

    dom = u0.dom
    values = u0.values.copy()
    times: List[float] = [t_start]
    snapshots: List[np.ndarray] = [values.copy()]
    tallies: List[StepTally] = []
    masses = [u0.mass()]
    minima = [float(np.min(values))]
    l2 = [u0.l2_squared()]
    every_step = [values.copy()] if record.cell_tallies else None

    for ta, tb in zip(grid[:-1], grid[1:]):
        values, tally = _advance(values, ta, tb - ta, dom, params, path, c, record.cell_tallies)
        tallies.append(tally)
        masses.append(float(dom.h * np.sum(values)))
        minima.append(float(np.min(values)))
        l2.append(float(dom.h * np.sum(values ** 2)))
        if every_step is not None:
            every_step.append(values.copy())
        if np.any(np.abs(wanted - tb) <= _TIME_TOL * max(1.0, abs(T))) and tb > times[-1]:
            times.append(float(tb))
            snapshots.append(values.copy())

    logger.debug("Solved %d steps on [%.4g, %.4g], m=%.3g eta=%.3g", len(tallies), t_start, T,
                 params.m, params.eta)
    n = len(tallies)
    gradient_cells = viscous_cells = None
    if record.cell_tallies:
        empty = np.zeros((0, dom.cells))
        gradient_cells = np.stack([s.gradient_cells for s in tallies]) if n else empty
        viscous_cells = np.stack([s.viscous_cells for s in tallies]) if n else empty
    return Trajectory(
        dom=dom, params=params,
        times=np.asarray(times), snapshots=np.stack(snapshots),
        step_times=np.asarray(grid, dtype=float),
        gradient_energy=np.fromiter((s.gradient_energy for s in tallies), float, n),
        viscous_dissipation=np.fromiter((s.viscous_dissipation for s in tallies), float, n),
        boundary_flux=np.fromiter((s.boundary_flux for s in tallies), float, n),
        mass=np.asarray(masses), min_value=np.asarray(minima), l2_squared=np.asarray(l2),
        values=np.stack(every_step) if every_step is not None else None,
        gradient_cells=gradient_cells,
        viscous_cells=viscous_cells,
    )


def max_stable_dt(path: SmoothPath, c: Coefficient, dom: Domain, cfl_guard: float = DEFAULT_CFL_GUARD,
                  u_max: float = 1.0, samples: int = 65) -> float:
    """Largest dt meeting the CFL guard for states with |u| <= u_max"""
    if c.is_zero:
        return float('inf')
    xs, xis = np.meshgrid(dom.faces(), np.linspace(-u_max, u_max, samples), indexing='ij')
    rates = np.abs(c.eval_dxiA(xs, xis).reshape(-1, c.n) @ path.segment_velocities().T)
    fastest = float(np.max(rates))
    return float('inf') if fastest == 0.0 else cfl_guard * dom.h / fastest


@dataclass
class StabilityReport:
    """Terms of the stable L^2 estimate for one trajectory"""
    sup_l2: float = 0.0
    gradient_energy: float = 0.0
    viscous_energy: float = 0.0
    energy_balance: float = 0.0
    initial_l2: float = 0.0

    @property
    def combined(self) -> float:
        return self.sup_l2 + self.gradient_energy + self.viscous_energy

    def to_dict(self) -> dict:
        return {
            'sup_l2': self.sup_l2,
            'gradient_energy': self.gradient_energy,
            'viscous_energy': self.viscous_energy,
            'combined': self.combined,
            'energy_balance': self.energy_balance,
            'initial_l2': self.initial_l2,
        }


def stability_report(traj: Trajectory) -> StabilityReport:
    """sup ||u||^2, int ||grad u^[(m+1)/2]||^2, eta int ||grad u||^2 and their sum

    energy_balance is max_t ||u(t)||^2 + 2 int_0^t (q + p), which matches
    ||u0||^2 up to O(dt) without noise.
    """
    dissipated = np.concatenate(([0.0], np.cumsum(traj.q_dissipation + traj.viscous_dissipation)))
    return StabilityReport(
        sup_l2=float(np.max(traj.l2_squared)),
        gradient_energy=float(np.sum(traj.gradient_energy)),
        viscous_energy=float(np.sum(traj.viscous_dissipation)),
        energy_balance=float(np.max(traj.l2_squared + 2.0 * dissipated)),
        initial_l2=float(traj.l2_squared[0]),
    )


def l1_distance(u, v, dom: Optional[Domain] = None) -> float:
    """h sum |u - v| for grid functions or value arrays on dom"""
    if isinstance(u, GridFunction):
        dom, u = u.dom, u.values
    if isinstance(v, GridFunction):
        dom, v = v.dom, v.values
    if dom is None:
        raise SolverError("Need a domain to measure raw arrays")
    return float(dom.h * np.sum(np.abs(np.asarray(u) - np.asarray(v))))


def l1_series(traj_a: Trajectory, traj_b: Trajectory) -> np.ndarray:
    """||u_a(t) - u_b(t)||_1 at the shared recording times"""
    if traj_a.times.shape != traj_b.times.shape or not np.allclose(traj_a.times, traj_b.times):
        raise SolverError("Trajectories were recorded at different times")
    return traj_a.dom.h * np.sum(np.abs(traj_a.snapshots - traj_b.snapshots), axis=1)


def l1l1_distance(traj_a: Trajectory, traj_b: Trajectory) -> float:
    """int ||u_a - u_b||_1 dt by the trapezoidal rule over the recording times"""
    series = l1_series(traj_a, traj_b)
    if series.size < 2:
        return 0.0
    return float(np.sum(0.5 * (series[:-1] + series[1:]) * np.diff(traj_a.times)))


def support_contact_time(traj: Trajectory, threshold: float = SUPPORT_THRESHOLD) -> Optional[float]:
    """First step time at which a boundary cell exceeds threshold, from every-step values"""
    if traj.values is None:
        raise SolverError("Support tracking needs every-step values (RecordPolicy.cell_tallies)")
    touching = np.maximum(np.abs(traj.values[:, 0]), np.abs(traj.values[:, -1])) > threshold
    if not np.any(touching):
        return None
    return float(traj.step_times[int(np.argmax(touching))])


def _cell_average(dom: Domain, profile, nodes: int = 6) -> np.ndarray:
    ref, weights = np.polynomial.legendre.leggauss(nodes)
    centers = dom.centers()
    points = centers[:, None] + 0.5 * dom.h * ref
    return 0.5 * np.sum(weights * profile(points), axis=1)


def bump(dom: Domain, center: float, width: float, height: float = 1.0, time: float = 0.0) -> GridFunction:
    """Cell averages of height (1 - r^2)^2 with r = (x - center)/width, zero for |r| >= 1"""
    if width <= 0.0:
        raise SolverError(f"Bump width must be positive, got {width}")

    def profile(x):
        r = (x - center) / width
        return height * np.where(np.abs(r) < 1.0, (1.0 - r ** 2) ** 2, 0.0)

    return GridFunction(dom, _cell_average(dom, profile), time)


def sine(dom: Domain, k: int = 1, amplitude: float = 1.0, time: float = 0.0) -> GridFunction:
    """Cell averages of amplitude sin(k pi (x - lo)/L)"""
    return GridFunction(dom, _cell_average(
        dom, lambda x: amplitude * np.sin(k * np.pi * (x - dom.lo) / dom.length)), time)


def heat_sine(dom: Domain, t: float, k: int = 1, amplitude: float = 1.0, eta: float = 0.0) -> GridFunction:
    """Exact cell averages at time t of the m = 1 flow started from sine(dom, k, amplitude)"""
    rate = (1.0 + eta) * (k * np.pi / dom.length) ** 2
    return sine(dom, k, amplitude * np.exp(-rate * t), time=t)


def zero(dom: Domain, time: float = 0.0) -> GridFunction:
    return GridFunction(dom, np.zeros(dom.cells), time)


def constant(dom: Domain, value: float, time: float = 0.0) -> GridFunction:
    return GridFunction(dom, np.full(dom.cells, float(value)), time)


def signed_bump(dom: Domain, center: float, width: float, height: float = 1.0,
                offset: Optional[float] = None, time: float = 0.0) -> GridFunction:
    """A positive bump at center minus an equal bump at center + offset"""
    offset = 2.0 * width if offset is None else offset
    plus = bump(dom, center, width, height).values
    minus = bump(dom, center + offset, width, height).values
    return GridFunction(dom, plus - minus, time)
