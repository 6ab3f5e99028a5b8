"""
Characteristics System - Forward and backward flows of the kinetic transport,
their derivative flows and the checks of their structural properties

The forward system is
    dX/dt  = -d_xi A(X, Xi) . zdot
    dXi/dt =  d_x A(X, Xi) . zdot
and the derivative flow J = D(X, Xi)/D(x, xi) solves dJ/dt = M J with a
trace-free M. Backward flows are forward flows driven by the reversed path.
All states are batched: x and xi are 1-D arrays of start positions.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from ..domain.geometry import Domain
from ..engine.constants import DEFAULT_FLOW_DT, DEFAULT_R0
from ..engine.errors import BallViolationError, FlowError, StepAlignmentError
from ..signals.roughpath import (
    HolderMetricParams, SmoothPath, holder_distance, reverse, stratonovich_lift, zero_path,
)
from .coefficients import Coefficient

logger = logging.getLogger(__name__)

TestFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]

_ALIGN_TOL = 1e-9
_DIVERGENCE_STEP = 1e-6


@dataclass(frozen=True)
class CharState:
    """Batch of characteristic states with optional derivative-flow matrices

    jac has shape (batch, 2, 2) with blocks [[DxX, d_xi X], [Dx Xi, d_xi Xi]].
    """
    x: np.ndarray
    xi: np.ndarray
    jac: Optional[np.ndarray] = None

    @classmethod
    def start(cls, x, xi, with_jacobian: bool = False) -> "CharState":
        x, xi = np.broadcast_arrays(np.atleast_1d(np.asarray(x, dtype=float)),
                                    np.atleast_1d(np.asarray(xi, dtype=float)))
        jac = np.tile(np.eye(2), (x.size, 1, 1)) if with_jacobian else None
        return cls(x.ravel().copy(), xi.ravel().copy(), jac)

    @property
    def size(self) -> int:
        return self.x.size

    def det(self) -> np.ndarray:
        if self.jac is None:
            raise FlowError("State carries no derivative flow")
        return np.linalg.det(self.jac)


@dataclass(frozen=True)
class FlowParams:
    """Fixed-step classical RK4 settings"""
    dt: float = DEFAULT_FLOW_DT
    with_jacobian: bool = False
    strict_alignment: bool = False

    def __post_init__(self):
        if self.dt <= 0.0:
            raise FlowError(f"Flow step must be positive, got {self.dt}")


@dataclass
class FlowTrajectory:
    """Recorded states of a flow, arrays indexed (time, point)"""
    times: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    jac: Optional[np.ndarray] = None

    def state(self, k: int) -> CharState:
        return CharState(self.x[k], self.xi[k], None if self.jac is None else self.jac[k])


def _rhs(c: Coefficient, x: np.ndarray, xi: np.ndarray, jac: Optional[np.ndarray],
         zdot: np.ndarray):
    dx = -(c.eval_dxiA(x, xi) @ zdot)
    dxi = c.eval_divA(x, xi) @ zdot
    if jac is None:
        return dx, dxi, None
    a = c.eval_dx_dxiA(x, xi) @ zdot
    m = np.empty(x.shape + (2, 2))
    m[:, 0, 0] = -a
    m[:, 0, 1] = -(c.eval_dxixiA(x, xi) @ zdot)
    m[:, 1, 0] = c.eval_dxxA(x, xi) @ zdot
    m[:, 1, 1] = a
    return dx, dxi, m @ jac


def _rk4_step(c: Coefficient, state: CharState, zdot: np.ndarray, h: float) -> CharState:
    x, xi, jac = state.x, state.xi, state.jac
    with_jac = jac is not None

    k1 = _rhs(c, x, xi, jac, zdot)
    k2 = _rhs(c, x + 0.5 * h * k1[0], xi + 0.5 * h * k1[1],
              jac + 0.5 * h * k1[2] if with_jac else None, zdot)
    k3 = _rhs(c, x + 0.5 * h * k2[0], xi + 0.5 * h * k2[1],
              jac + 0.5 * h * k2[2] if with_jac else None, zdot)
    k4 = _rhs(c, x + h * k3[0], xi + h * k3[1],
              jac + h * k3[2] if with_jac else None, zdot)

    def combine(y, i):
        return y + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])

    return CharState(combine(x, 0), combine(xi, 1), combine(jac, 2) if with_jac else None)


def _check_alignment(grid: np.ndarray, dt: float):
    steps = np.diff(grid)
    if steps.size and np.any(np.abs(steps - dt) > _ALIGN_TOL * dt):
        worst = steps[np.argmax(np.abs(steps - dt))]
        raise StepAlignmentError(f"Sub-step {worst:.6g} differs from dt={dt:.6g}",
                                 time=float(grid[np.argmax(np.abs(steps - dt))]))


def _integrate(s0: CharState, t0: float, t1: float, path: SmoothPath, c: Coefficient,
               p: FlowParams, record_times: Optional[Sequence[float]] = None,
               record_all: bool = False) -> Tuple[CharState, List[float], List[CharState]]:
    if not 0.0 <= t0 <= t1 <= path.horizon * (1.0 + 1e-12):
        raise FlowError(f"Flow interval [{t0}, {t1}] outside [0, {path.horizon}]")
    extra = () if record_times is None else record_times
    grid = path.aligned_grid(t0, t1, p.dt, extra)
    if p.strict_alignment:
        _check_alignment(grid, p.dt)

    wanted = None if record_times is None else np.asarray(record_times, dtype=float)
    times: List[float] = []
    states: List[CharState] = []

    def record(t: float, state: CharState):
        if record_all or (wanted is not None and np.any(np.abs(wanted - t) <= 1e-12 * max(1.0, t1))):
            times.append(t)
            states.append(state)

    state = s0
    if p.with_jacobian and state.jac is None:
        state = CharState.start(state.x, state.xi, with_jacobian=True)
    record(float(grid[0]), state)
    for ta, tb in zip(grid[:-1], grid[1:]):
        state = _rk4_step(c, state, path.velocity(ta), tb - ta)
        if not (np.all(np.isfinite(state.x)) and np.all(np.isfinite(state.xi))):
            raise FlowError("Characteristic flow produced a non-finite state", time=float(tb))
        record(float(tb), state)
    return state, times, states


def forward_flow(s0: CharState, t0: float, t1: float, path: SmoothPath, c: Coefficient,
                 p: FlowParams) -> CharState:
    """(X_{t0,t1}, Xi_{t0,t1}) of the batch s0, with derivative flow if requested"""
    final, _, _ = _integrate(s0, t0, t1, path, c, p)
    return final


def flow_trajectory(s0: CharState, t0: float, t1: float, path: SmoothPath, c: Coefficient,
                    p: FlowParams, record_times: Optional[Sequence[float]] = None) -> FlowTrajectory:
    """Forward flow recorded at every sub-step, or only at record_times when given"""
    _, times, states = _integrate(s0, t0, t1, path, c, p, record_times=record_times,
                                  record_all=record_times is None)
    jac = None if states[0].jac is None else np.stack([s.jac for s in states])
    return FlowTrajectory(times=np.asarray(times),
                          x=np.stack([s.x for s in states]),
                          xi=np.stack([s.xi for s in states]),
                          jac=jac)


def backward_flow(s0: CharState, t0: float, s: float, path: SmoothPath, c: Coefficient,
                  p: FlowParams) -> CharState:
    """(Y_{t0,s}, Pi_{t0,s}) = (X_{t0,t0-s}, Xi_{t0,t0-s}), for 0 <= s <= t0"""
    if not 0.0 <= s <= t0:
        raise FlowError(f"Backward duration {s} outside [0, {t0}]")
    if s == 0.0:
        if p.with_jacobian and s0.jac is None:
            return CharState.start(s0.x, s0.xi, with_jacobian=True)
        return s0
    return forward_flow(s0, 0.0, s, reverse(path, t0), c, p)


def backward_trajectory(s0: CharState, t0: float, path: SmoothPath, c: Coefficient,
                        p: FlowParams) -> FlowTrajectory:
    """Backward flow from t0 recorded against the elapsed backward time s in [0, t0]"""
    if t0 == 0.0:
        state = backward_flow(s0, 0.0, 0.0, path, c, p)
        return FlowTrajectory(np.zeros(1), state.x[None], state.xi[None],
                              None if state.jac is None else state.jac[None])
    return flow_trajectory(s0, 0.0, t0, reverse(path, t0), c, p)


def check_inverse(x, xi, t0: float, t: float, path: SmoothPath, c: Coefficient,
                  p: FlowParams) -> float:
    """Residual of X_{t0,t}(Y_{t,t-t0}(x, xi)) against (x, xi), max over the batch"""
    if t < t0:
        raise FlowError(f"Inverse check needs t >= t0, got t={t}, t0={t0}")
    start = CharState.start(x, xi)
    plain = replace(p, with_jacobian=False)
    back = backward_flow(start, t, t - t0, path, c, plain)
    there = forward_flow(back, t0, t, path, c, plain)
    return float(np.max(np.hypot(there.x - start.x, there.xi - start.xi)))


def rhs_divergence(c: Coefficient, x, xi, zdot: np.ndarray, step: float = _DIVERGENCE_STEP) -> np.ndarray:
    """Trace of the Jacobian of the forward vector field

    Central differences of the integrated field itself, so the result does
    not rely on the mixed-derivative evaluators agreeing with eval_dxiA and
    eval_divA.
    """
    x, xi = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(xi, dtype=float))
    zdot = np.asarray(zdot, dtype=float)
    hx = np.full(x.shape, step)
    hxi = step * np.maximum(1.0, np.abs(xi))
    dx_plus = _rhs(c, x + hx, xi, None, zdot)[0]
    dx_minus = _rhs(c, x - hx, xi, None, zdot)[0]
    dxi_plus = _rhs(c, x, xi + hxi, None, zdot)[1]
    dxi_minus = _rhs(c, x, xi - hxi, None, zdot)[1]
    return (dx_plus - dx_minus) / (2.0 * hx) + (dxi_plus - dxi_minus) / (2.0 * hxi)


def integrated_divergence(x, xi, t0: float, t: float, path: SmoothPath, c: Coefficient,
                          p: FlowParams) -> float:
    """Largest |int tr(DF) dt| along the trajectories, zero for measure-preserving flows"""
    traj = flow_trajectory(CharState.start(x, xi), t0, t, path, c, replace(p, with_jacobian=False))
    if traj.times.size < 2:
        return 0.0
    trace = np.stack([rhs_divergence(c, traj.x[k], traj.xi[k], path.velocity(traj.times[k]))
                      for k in range(traj.times.size - 1)])
    # Left-point rule: the driver is constant on each sub-step
    return float(np.max(np.abs(np.sum(trace * np.diff(traj.times)[:, None], axis=0))))


def measure_preservation(x, xi, t0: float, t: float, path: SmoothPath, c: Coefficient,
                         p: FlowParams) -> float:
    """max |det DX_{t0,t} - 1| over the batch"""
    final = forward_flow(CharState.start(x, xi, with_jacobian=True), t0, t, path, c,
                         replace(p, with_jacobian=True))
    return float(np.max(np.abs(final.det() - 1.0)))


def sign_preservation(x, xi, t0: float, t: float, path: SmoothPath, c: Coefficient,
                      p: FlowParams, zero_tol: float = 1e-12) -> bool:
    """sign(Xi_{t0,r}) = sign(xi) for every recorded r, with Xi = 0 exactly when xi = 0"""
    traj = flow_trajectory(CharState.start(x, xi), t0, t, path, c, replace(p, with_jacobian=False))
    xi0 = traj.xi[0]
    moving = xi0 != 0.0
    same_sign = np.all(np.sign(traj.xi[:, moving]) == np.sign(xi0[moving]))
    resting = np.all(np.abs(traj.xi[:, ~moving]) <= zero_tol)
    if not (same_sign and resting):
        logger.warning("Velocity sign changed along a characteristic")
    return bool(same_sign and resting)


def fit_power_law(distances: Sequence[float], values: Sequence[float]) -> Tuple[float, float]:
    """Least-squares fit values ~ prefactor * distances^exponent in log-log scale"""
    distances = np.asarray(distances, dtype=float)
    values = np.asarray(values, dtype=float)
    if distances.size < 2 or np.any(values <= 0.0) or np.any(distances <= 0.0):
        raise FlowError("Power-law fit needs at least two positive samples")
    fit = stats.linregress(np.log(distances), np.log(values))
    return float(fit.slope), float(np.exp(fit.intercept))


def _flatness(distances: np.ndarray, values: np.ndarray) -> Tuple[float, float]:
    """Fitted exponent and the largest relative spread of values / distances^exponent"""
    if np.all(values <= 1e-300):
        return 0.0, 0.0
    if np.any(values <= 1e-300):
        return float('nan'), float('inf')
    exponent, _ = fit_power_law(distances, values)
    normalised = values / distances ** exponent
    centre = np.median(normalised)
    return exponent, float(np.max(np.abs(normalised / centre - 1.0)))


def _growth(distances: np.ndarray, ratios: np.ndarray) -> float:
    """Relative excess of the ratios on the finer half of the ladder over the coarser half"""
    if np.all(ratios <= 1e-300):
        return 0.0
    ordered = ratios[np.argsort(-distances)]
    half = max(1, ordered.size // 2)
    coarse, fine = float(np.max(ordered[:half])), float(np.max(ordered[half:], initial=0.0))
    if coarse <= 0.0:
        return float('inf')
    return max(0.0, fine / coarse - 1.0)


@dataclass
class BoundaryReport:
    """Boundary slowdown ratios per distance of the ladder"""
    distances: np.ndarray
    displacement: np.ndarray
    xi_derivative: np.ndarray
    x_derivative: np.ndarray
    standstill: float
    exponents: dict
    spreads: dict
    growth: dict

    @property
    def ratio_bound(self) -> float:
        """Largest ratio over the ladder, the k-independent constant"""
        return float(max(np.max(self.displacement), np.max(self.xi_derivative),
                         np.max(self.x_derivative)))

    def flat(self, tol: float) -> bool:
        return all(spread <= tol for spread in self.spreads.values())

    def bounded(self, tol: float) -> bool:
        """No ratio grows by more than tol towards the boundary"""
        return all(excess <= tol for excess in self.growth.values())


def boundary_estimates(dom: Domain, xi_samples: Sequence[float], t0: float, horizon: float,
                       path: SmoothPath, c: Coefficient, p: FlowParams,
                       levels: Sequence[int] = range(3, 9)) -> BoundaryReport:
    """Ratios |X - x|/delta, |d_xi Y|/delta and |DxY - 1|/delta on the ladder delta_k = 2^-k

    Sample points sit at distance delta_k from both endpoints. Forward flows run
    on [t0, t0 + horizon] and backward flows start from t0 + horizon.
    """
    t_end = t0 + horizon
    xi_samples = np.asarray(xi_samples, dtype=float)
    distances = np.array([2.0 ** -k for k in levels]) * dom.length
    plain = replace(p, with_jacobian=False)
    with_jac = replace(p, with_jacobian=True)

    displacement, xi_derivative, x_derivative = [], [], []
    for delta in distances:
        x = np.repeat([dom.lo + delta, dom.hi - delta], xi_samples.size)
        xi = np.tile(xi_samples, 2)
        fwd = flow_trajectory(CharState.start(x, xi), t0, t_end, path, c, plain)
        bwd = backward_trajectory(CharState.start(x, xi, with_jacobian=True), t_end, path, c, with_jac)
        displacement.append(np.max(np.abs(fwd.x - x)) / delta)
        xi_derivative.append(np.max(np.abs(bwd.jac[:, :, 0, 1])) / delta)
        x_derivative.append(np.max(np.abs(bwd.jac[:, :, 0, 0] - 1.0)) / delta)

    ends = np.repeat([dom.lo, dom.hi], xi_samples.size)
    edge = flow_trajectory(CharState.start(ends, np.tile(xi_samples, 2)), t0, t_end, path, c, plain)
    standstill = float(np.max(np.abs(edge.x - ends)))

    report = BoundaryReport(distances=distances,
                            displacement=np.asarray(displacement),
                            xi_derivative=np.asarray(xi_derivative),
                            x_derivative=np.asarray(x_derivative),
                            standstill=standstill, exponents={}, spreads={}, growth={})
    for name in ('displacement', 'xi_derivative', 'x_derivative'):
        # Fit the raw sup values; the ratio divides out one power of delta
        ratios = getattr(report, name)
        report.exponents[name], report.spreads[name] = _flatness(distances, ratios * distances)
        report.growth[name] = _growth(distances, ratios)
    logger.debug("Boundary exponents %s, standstill %.3g", report.exponents, standstill)
    return report


@dataclass
class VelocityComparability:
    """Range of |Pi|/|xi| along backward flows and the gradient ratio of Pi"""
    lower: float
    upper: float
    gradient_ratio: float

    @property
    def constant(self) -> float:
        """Smallest C >= 1 with lower >= 1/C and upper <= C"""
        return float(max(1.0, self.upper, 1.0 / self.lower if self.lower > 0.0 else np.inf))

    def as_tuple(self) -> Tuple[float, float]:
        return self.lower, self.upper


def velocity_comparability(x, xi, t0: float, path: SmoothPath, c: Coefficient, p: FlowParams,
                           alpha: float = 0.5) -> VelocityComparability:
    """min and max over s in [0, t0] of |Pi_{t0,s}|/|xi|, plus sup |DxPi| / (s^alpha (|xi| min 1))"""
    start = CharState.start(x, xi, with_jacobian=True)
    if np.any(start.xi == 0.0):
        raise FlowError("Velocity comparability needs nonzero xi")
    traj = backward_trajectory(start, t0, path, c, replace(p, with_jacobian=True))
    ratio = np.abs(traj.xi) / np.abs(start.xi)
    elapsed = traj.times > 0.0
    if np.any(elapsed):
        scale = traj.times[elapsed, None] ** alpha * np.minimum(np.abs(start.xi), 1.0)
        gradient = float(np.max(np.abs(traj.jac[elapsed, :, 1, 0]) / scale))
    else:
        gradient = 0.0
    return VelocityComparability(float(np.min(ratio)), float(np.max(ratio)), gradient)


def path_ball_radius(path: SmoothPath, metric: HolderMetricParams) -> float:
    """d_alpha(z, e) against the trivial path"""
    return holder_distance(stratonovich_lift(path), stratonovich_lift(zero_path(path.n, path.horizon)),
                           metric)


def flow_stability(path_a: SmoothPath, path_b: SmoothPath, c: Coefficient, p: FlowParams,
                   points: Tuple[np.ndarray, np.ndarray], metric: HolderMetricParams,
                   r0: float = DEFAULT_R0, record_times: Optional[Sequence[float]] = None) -> float:
    """sup over start points, record times and j in {0, 1} of |D^j (flow_a - flow_b)|"""
    for label, path in (("first", path_a), ("second", path_b)):
        radius = path_ball_radius(path, metric)
        if radius > r0:
            raise BallViolationError(f"The {label} path has d_alpha(z, e)={radius:.4g} > R0={r0}")
    horizon = min(path_a.horizon, path_b.horizon)
    if record_times is None:
        record_times = np.linspace(0.0, horizon, 17)
    with_jac = replace(p, with_jacobian=True)
    start = CharState.start(*points, with_jacobian=True)
    traj_a = flow_trajectory(start, 0.0, horizon, path_a, c, with_jac, record_times)
    traj_b = flow_trajectory(start, 0.0, horizon, path_b, c, with_jac, record_times)
    level0 = np.max(np.hypot(traj_a.x - traj_b.x, traj_a.xi - traj_b.xi))
    level1 = np.max(np.linalg.norm(traj_a.jac - traj_b.jac, axis=(-2, -1)))
    return float(max(level0, level1))


def transported_test_function(rho0: TestFunction, x, xi, t0: float, r: float, path: SmoothPath,
                              c: Coefficient, p: FlowParams) -> np.ndarray:
    """rho_{t0,r}(x, xi) = rho0(Y_{r,r-t0}, Pi_{r,r-t0}) evaluated node by node"""
    x, xi = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(xi, dtype=float))
    state = backward_flow(CharState.start(x, xi), r, r - t0, path, c, replace(p, with_jacobian=False))
    return np.asarray(rho0(state.x, state.xi)).reshape(x.shape)


def transported_support_check(rho0: TestFunction, dom: Domain, xi_grid: np.ndarray, t0: float,
                              times: Sequence[float], path: SmoothPath, c: Coefficient,
                              p: FlowParams, tol: float = 0.0) -> bool:
    """True when rho_{t0,r} vanishes on both boundary cells for every r in times"""
    edge_x, edge_xi = np.meshgrid(dom.centers()[[0, -1]], np.asarray(xi_grid, dtype=float),
                                  indexing='ij')
    for r in times:
        values = transported_test_function(rho0, edge_x, edge_xi, t0, r, path, c, p)
        if np.max(np.abs(values)) > tol:
            logger.info("Transported test function reached the boundary cells at r=%.4g", r)
            return False
    return True
