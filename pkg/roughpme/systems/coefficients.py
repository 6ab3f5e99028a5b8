"""
Noise Coefficient System - A(x, xi), its derivatives, a catalog of closed-form
building blocks and validators for the structural assumptions

All evaluators broadcast x and xi against each other and append the noise
dimension as the last axis, so A(x, xi) has shape broadcast(x, xi) + (n,).
The spatial dimension is one, so the d x n matrix of A is its single row.
"""

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..domain.geometry import Domain
from ..engine.errors import CoefficientError

logger = logging.getLogger(__name__)

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]

_BOUNDARY_TOL = 1e-10


class CoefficientKind(Enum):
    """Kinds of noise coefficient accepted in experiment configs"""
    ZERO = "zero"
    LINEAR_IN_XI = "linear-in-xi"
    BASIS_PRODUCT = "basis-product"


@dataclass(frozen=True)
class Nonlinearity:
    """A closed-form sigma(x, xi) with sigma(x, 0) = 0 and its derivatives up to order two"""
    id: str
    value: Evaluator
    d_xi: Evaluator
    d_xixi: Evaluator
    d_x: Evaluator
    d_xx: Evaluator
    d_xxi: Evaluator


@dataclass(frozen=True)
class BasisFunction:
    """A smooth rho(x) on Q with value and derivatives up to order two"""
    id: str
    value: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Coefficient:
    """Noise coefficient A with the derivative evaluators used by flows and validators"""
    n: int
    eval_A: Evaluator
    eval_dxiA: Evaluator
    eval_divA: Evaluator
    eval_dx_dxiA: Evaluator
    eval_dxixiA: Evaluator
    eval_dxxA: Evaluator
    smoothness_budget: float = 1.0
    label: str = "custom"

    @property
    def is_zero(self) -> bool:
        return self.label == "zero"


@dataclass
class ValidationReport:
    """Largest violation found for each structural assumption"""
    violations: Dict[str, float] = field(default_factory=dict)
    tol: float = 1e-10

    @property
    def boundary_violation(self) -> float:
        return max(self.violations.get('xi_derivative_on_boundary', 0.0),
                   self.violations.get('mixed_derivative_on_boundary', 0.0))

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.violations.values())

    def failures(self) -> List[str]:
        return [name for name, v in self.violations.items() if v > self.tol]


@dataclass(frozen=True)
class SampleGrid:
    """Tensor grid of (x, xi) sample points plus the boundary points"""
    x: np.ndarray
    xi: np.ndarray
    boundary: np.ndarray

    @classmethod
    def covering(cls, dom: Domain, xi_max: float, points: int = 65) -> "SampleGrid":
        return cls(x=np.linspace(dom.lo, dom.hi, points),
                   xi=np.linspace(-xi_max, xi_max, points),
                   boundary=np.array([dom.lo, dom.hi]))


def _zeros(x, xi):
    return np.zeros(np.broadcast(np.asarray(x), np.asarray(xi)).shape)


def _broadcast(x, xi):
    return np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(xi, dtype=float))


class CoefficientCatalog:
    """Registry of nonlinearities sigma and boundary-vanishing basis functions"""

    def __init__(self, kappa: float = 0.1):
        self.kappa = kappa
        self.nonlinearities: Dict[str, Nonlinearity] = {}
        self._initialize_nonlinearities()

    def _initialize_nonlinearities(self):
        """Register the closed-form sigma family"""
        kappa2 = self.kappa ** 2

        self.nonlinearities["zero"] = Nonlinearity(
            id="zero", value=_zeros, d_xi=_zeros, d_xixi=_zeros,
            d_x=_zeros, d_xx=_zeros, d_xxi=_zeros,
        )

        self.nonlinearities["identity"] = Nonlinearity(
            id="identity",
            value=lambda x, xi: _broadcast(x, xi)[1].copy(),
            d_xi=lambda x, xi: np.ones(np.broadcast(np.asarray(x), np.asarray(xi)).shape),
            d_xixi=_zeros, d_x=_zeros, d_xx=_zeros, d_xxi=_zeros,
        )

        def saturating(x, xi):
            xi = _broadcast(x, xi)[1]
            return xi / (1.0 + xi ** 2)

        def saturating_d1(x, xi):
            xi = _broadcast(x, xi)[1]
            return (1.0 - xi ** 2) / (1.0 + xi ** 2) ** 2

        def saturating_d2(x, xi):
            xi = _broadcast(x, xi)[1]
            return (2.0 * xi ** 3 - 6.0 * xi) / (1.0 + xi ** 2) ** 3

        self.nonlinearities["saturating"] = Nonlinearity(
            id="saturating", value=saturating, d_xi=saturating_d1, d_xixi=saturating_d2,
            d_x=_zeros, d_xx=_zeros, d_xxi=_zeros,
        )

        # Smooth odd approximation of sqrt(|xi|) sgn(xi)
        def smoothed_sqrt(x, xi):
            xi = _broadcast(x, xi)[1]
            return xi * (xi ** 2 + kappa2) ** -0.25

        def smoothed_sqrt_d1(x, xi):
            xi = _broadcast(x, xi)[1]
            return (0.5 * xi ** 2 + kappa2) * (xi ** 2 + kappa2) ** -1.25

        def smoothed_sqrt_d2(x, xi):
            xi = _broadcast(x, xi)[1]
            return -xi * (0.25 * xi ** 2 + 1.5 * kappa2) * (xi ** 2 + kappa2) ** -2.25

        self.nonlinearities["smoothed_sqrt"] = Nonlinearity(
            id="smoothed_sqrt", value=smoothed_sqrt, d_xi=smoothed_sqrt_d1, d_xixi=smoothed_sqrt_d2,
            d_x=_zeros, d_xx=_zeros, d_xxi=_zeros,
        )

    def get_nonlinearity(self, sigma_id: str) -> Nonlinearity:
        """Get a registered nonlinearity"""
        if sigma_id not in self.nonlinearities:
            raise CoefficientError(f"Unknown nonlinearity '{sigma_id}', "
                                   f"known: {sorted(self.nonlinearities)}")
        return self.nonlinearities[sigma_id]

    def basis_function(self, basis_id: str, dom: Domain) -> BasisFunction:
        """Build a basis function on dom from its id

        Ids: sin2_<k> for sin^2(k pi y), bubble for 16 y^2 (1-y)^2 and sin_<k>
        for sin(k pi y), with y the position rescaled to [0, 1]. The sin_<k>
        family does not vanish to first order and exists as a negative example.
        """
        lo, length = dom.lo, dom.length

        def y(x):
            return (np.asarray(x, dtype=float) - lo) / length

        match = re.fullmatch(r"sin2_(\d+)", basis_id)
        if match:
            w = int(match.group(1)) * np.pi
            return BasisFunction(
                id=basis_id,
                value=lambda x: np.sin(w * y(x)) ** 2,
                d1=lambda x: (w / length) * np.sin(2.0 * w * y(x)),
                d2=lambda x: 2.0 * (w / length) ** 2 * np.cos(2.0 * w * y(x)),
            )

        match = re.fullmatch(r"sin_(\d+)", basis_id)
        if match:
            w = int(match.group(1)) * np.pi
            return BasisFunction(
                id=basis_id,
                value=lambda x: np.sin(w * y(x)),
                d1=lambda x: (w / length) * np.cos(w * y(x)),
                d2=lambda x: -(w / length) ** 2 * np.sin(w * y(x)),
            )

        if basis_id == "bubble":
            return BasisFunction(
                id=basis_id,
                value=lambda x: 16.0 * y(x) ** 2 * (1.0 - y(x)) ** 2,
                d1=lambda x: 32.0 * y(x) * (1.0 - y(x)) * (1.0 - 2.0 * y(x)) / length,
                d2=lambda x: 32.0 * (1.0 - 6.0 * y(x) + 6.0 * y(x) ** 2) / length ** 2,
            )

        raise CoefficientError(f"Unknown basis function '{basis_id}'")


def zero_coefficient(n: int = 1) -> Coefficient:
    """A identically zero"""
    def zeros(x, xi):
        return np.zeros(np.broadcast(np.asarray(x), np.asarray(xi)).shape + (n,))

    return Coefficient(n=n, eval_A=zeros, eval_dxiA=zeros, eval_divA=zeros,
                       eval_dx_dxiA=zeros, eval_dxixiA=zeros, eval_dxxA=zeros,
                       smoothness_budget=0.0, label="zero")


def linear_in_xi_coefficient(weights: Sequence[float] = (1.0,), amplitude: float = 1.0) -> Coefficient:
    """A(x, xi) = amplitude * xi * w, constant in x

    It violates the boundary assumption and is used only where the flows can
    run in free space.
    """
    w = amplitude * np.asarray(weights, dtype=float)
    n = w.size

    def shape(x, xi):
        return np.broadcast(np.asarray(x), np.asarray(xi)).shape

    def zeros(x, xi):
        return np.zeros(shape(x, xi) + (n,))

    return Coefficient(
        n=n,
        eval_A=lambda x, xi: _broadcast(x, xi)[1][..., None] * w,
        eval_dxiA=lambda x, xi: np.ones(shape(x, xi))[..., None] * w,
        eval_divA=zeros, eval_dx_dxiA=zeros, eval_dxixiA=zeros, eval_dxxA=zeros,
        smoothness_budget=float(np.max(np.abs(w))), label="linear-in-xi",
    )


def build_basis_coefficient(sigma: Nonlinearity, basis: Sequence[BasisFunction], dom: Domain,
                            amplitude: float = 1.0, smoothness_budget: float = 1.0) -> Coefficient:
    """A(x, xi) = amplitude * sigma(x, xi) [rho_1(x) | rho_2(x) | ...]

    Every rho_i and its derivative must vanish at both endpoints, and sigma
    must vanish at xi = 0.
    """
    if not basis:
        raise CoefficientError("Basis product needs at least one basis function")
    ends = np.array([dom.lo, dom.hi])
    for rho in basis:
        worst = max(np.max(np.abs(rho.value(ends))), np.max(np.abs(rho.d1(ends))))
        if worst > _BOUNDARY_TOL:
            raise CoefficientError(
                f"Basis function '{rho.id}' does not vanish with its derivative on the boundary "
                f"(max {worst:.3g})")
    xs = np.linspace(dom.lo, dom.hi, 17)
    if np.max(np.abs(sigma.value(xs, 0.0))) > _BOUNDARY_TOL:
        raise CoefficientError(f"Nonlinearity '{sigma.id}' does not vanish at xi=0")

    n = len(basis)

    def stack(parts):
        return amplitude * np.stack(parts, axis=-1)

    def eval_A(x, xi):
        x, xi = _broadcast(x, xi)
        s = sigma.value(x, xi)
        return stack([s * rho.value(x) for rho in basis])

    def eval_dxiA(x, xi):
        x, xi = _broadcast(x, xi)
        s = sigma.d_xi(x, xi)
        return stack([s * rho.value(x) for rho in basis])

    def eval_dxixiA(x, xi):
        x, xi = _broadcast(x, xi)
        s = sigma.d_xixi(x, xi)
        return stack([s * rho.value(x) for rho in basis])

    def eval_divA(x, xi):
        x, xi = _broadcast(x, xi)
        s, sx = sigma.value(x, xi), sigma.d_x(x, xi)
        return stack([sx * rho.value(x) + s * rho.d1(x) for rho in basis])

    def eval_dx_dxiA(x, xi):
        x, xi = _broadcast(x, xi)
        s, sx = sigma.d_xi(x, xi), sigma.d_xxi(x, xi)
        return stack([sx * rho.value(x) + s * rho.d1(x) for rho in basis])

    def eval_dxxA(x, xi):
        x, xi = _broadcast(x, xi)
        s, sx, sxx = sigma.value(x, xi), sigma.d_x(x, xi), sigma.d_xx(x, xi)
        return stack([sxx * rho.value(x) + 2.0 * sx * rho.d1(x) + s * rho.d2(x) for rho in basis])

    label = "zero" if sigma.id == "zero" or amplitude == 0.0 else \
        f"basis-product[{sigma.id}; {', '.join(rho.id for rho in basis)}]"
    logger.debug("Built coefficient %s with n=%d", label, n)
    return Coefficient(n=n, eval_A=eval_A, eval_dxiA=eval_dxiA, eval_divA=eval_divA,
                       eval_dx_dxiA=eval_dx_dxiA, eval_dxixiA=eval_dxixiA, eval_dxxA=eval_dxxA,
                       smoothness_budget=smoothness_budget, label=label)


def build_coefficient(kind: str, dom: Domain, sigma: str = "identity",
                      basis: Sequence[str] = ("sin2_1",), amplitude: float = 1.0,
                      smoothness_budget: float = 1.0, kappa: float = 0.1,
                      n: int = 1, catalog: Optional[CoefficientCatalog] = None) -> Coefficient:
    """Build a coefficient from its configuration block"""
    try:
        kind = CoefficientKind(kind)
    except ValueError as e:
        raise CoefficientError(f"Unknown coefficient kind '{kind}'") from e

    if kind is CoefficientKind.ZERO:
        return zero_coefficient(n)
    if kind is CoefficientKind.LINEAR_IN_XI:
        return linear_in_xi_coefficient(np.ones(n), amplitude)

    catalog = catalog or CoefficientCatalog(kappa=kappa)
    return build_basis_coefficient(
        catalog.get_nonlinearity(sigma),
        [catalog.basis_function(basis_id, dom) for basis_id in basis],
        dom, amplitude=amplitude, smoothness_budget=smoothness_budget,
    )


def validate_assumptions(c: Coefficient, dom: Domain, grid: Optional[SampleGrid] = None,
                         tol: float = 1e-10) -> ValidationReport:
    """Measure how far c is from the sign and boundary assumptions

    Checks div_x A(x, 0) = 0 on Q and d_xi A = D_x d_xi A = 0 on the boundary.
    """
    grid = grid or SampleGrid.covering(dom, xi_max=2.0)
    xs, xis = np.meshgrid(grid.boundary, grid.xi, indexing='ij')
    report = ValidationReport(tol=tol)
    report.violations['divergence_at_zero'] = float(np.max(np.abs(c.eval_divA(grid.x, 0.0))))
    report.violations['xi_derivative_on_boundary'] = float(np.max(np.abs(c.eval_dxiA(xs, xis))))
    report.violations['mixed_derivative_on_boundary'] = float(np.max(np.abs(c.eval_dx_dxiA(xs, xis))))
    if not report.passed:
        logger.info("Coefficient %s fails assumptions: %s", c.label, report.failures())
    return report


def finite_difference_consistency(c: Coefficient, x: np.ndarray, xi: np.ndarray, h: float) -> float:
    """Largest gap between analytic derivatives and centred differences at the points (x, xi)"""
    if h <= 0.0:
        raise CoefficientError(f"Difference step must be positive, got {h}")
    x, xi = _broadcast(x, xi)
    pairs = (
        (c.eval_dxiA, (c.eval_A(x, xi + h) - c.eval_A(x, xi - h)) / (2.0 * h)),
        (c.eval_divA, (c.eval_A(x + h, xi) - c.eval_A(x - h, xi)) / (2.0 * h)),
        (c.eval_dx_dxiA, (c.eval_dxiA(x + h, xi) - c.eval_dxiA(x - h, xi)) / (2.0 * h)),
        (c.eval_dxixiA, (c.eval_dxiA(x, xi + h) - c.eval_dxiA(x, xi - h)) / (2.0 * h)),
        (c.eval_dxxA, (c.eval_divA(x + h, xi) - c.eval_divA(x - h, xi)) / (2.0 * h)),
    )
    return float(max(np.max(np.abs(analytic(x, xi) - numeric)) for analytic, numeric in pairs))
