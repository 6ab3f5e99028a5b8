"""
Geometry - The interval domain Q, its mesh, boundary layers and the cutoff family
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from ..engine.constants import CUTOFF_QUADRATURE_NODES, MIN_CELLS, default_gamma
from ..engine.errors import DomainError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(CUTOFF_QUADRATURE_NODES)


def _bump(r: np.ndarray) -> np.ndarray:
    """Unnormalised standard mollifier exp(-1/(1-r^2)) on (-1, 1)"""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def _bump_mass() -> float:
    nodes, weights = np.polynomial.legendre.leggauss(4 * CUTOFF_QUADRATURE_NODES)
    return float(np.sum(weights * _bump(nodes)))


_BUMP_MASS = _bump_mass()


def mollifier(r: ArrayLike) -> np.ndarray:
    """Unit-mass mollifier supported in [-1, 1]"""
    return _bump(r) / _BUMP_MASS


def _gauss_legendre(lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights mapping the reference rule onto [lo, hi], broadcast per row"""
    half = 0.5 * (hi - lo)[..., None]
    mid = 0.5 * (hi + lo)[..., None]
    return mid + half * _GL_NODES, half * _GL_WEIGHTS


@dataclass(frozen=True)
class Domain:
    """Open interval Q=(lo, hi) with a uniform cell-centred mesh"""
    lo: float = 0.0
    hi: float = 1.0
    cells: int = 128

    def __post_init__(self):
        if not self.lo < self.hi:
            raise DomainError(f"Empty interval: lo={self.lo} must be below hi={self.hi}")
        if self.cells < MIN_CELLS:
            raise DomainError(f"Mesh needs at least {MIN_CELLS} cells, got {self.cells}")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def h(self) -> float:
        """Uniform cell width"""
        return self.length / self.cells

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def centers(self) -> np.ndarray:
        """Cell centres"""
        return self.lo + (np.arange(self.cells) + 0.5) * self.h

    def faces(self) -> np.ndarray:
        """Cell faces, boundary faces included"""
        return self.lo + np.arange(self.cells + 1) * self.h

    def face_weights(self) -> np.ndarray:
        """Distance between the values a face gradient is taken across

        Interior faces span one cell width, the two boundary faces span half a
        cell because the Dirichlet value sits on the boundary itself.
        """
        weights = np.full(self.cells + 1, self.h)
        weights[0] = weights[-1] = 0.5 * self.h
        return weights

    def refine(self, factor: int = 2) -> "Domain":
        return Domain(self.lo, self.hi, self.cells * factor)


@dataclass(frozen=True)
class CutoffParams:
    """Parameters of the cutoff phi_beta vanishing in the inner boundary layer"""
    beta: float
    m: float
    gamma_m: Optional[float] = field(default=None)

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise DomainError(f"Cutoff scale beta must lie in (0,1), got {self.beta}")
        if self.m <= 0.0:
            raise DomainError(f"Diffusion exponent must be positive, got {self.m}")
        if self.gamma_m is None:
            object.__setattr__(self, 'gamma_m', default_gamma(self.m))

    @property
    def inner(self) -> float:
        """Start of the linear ramp, beta^gamma_m"""
        return self.beta ** self.gamma_m

    @property
    def outer(self) -> float:
        """End of the linear ramp, beta + beta^gamma_m"""
        return self.beta + self.inner

    @property
    def mollifier_scale(self) -> float:
        return 0.5 * self.inner


def signed_distance(dom: Domain, x: ArrayLike) -> ArrayLike:
    """Distance to the boundary, positive inside Q and negative outside"""
    d = np.minimum(np.asarray(x, dtype=float) - dom.lo, dom.hi - np.asarray(x, dtype=float))
    return float(d) if np.ndim(d) == 0 else d


def extended_normal(dom: Domain, x: ArrayLike) -> ArrayLike:
    """Outward unit normal of the nearest boundary point

    Satisfies d/dx signed_distance = -extended_normal away from the midpoint.
    """
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr == dom.midpoint):
        raise DomainError(f"Extended normal is ambiguous at the midpoint {dom.midpoint}")
    n = np.where(x_arr < dom.midpoint, -1.0, 1.0)
    return float(n) if n.ndim == 0 else n


def _ramp(params: CutoffParams, s: np.ndarray) -> np.ndarray:
    """Piecewise linear profile before mollification"""
    return np.clip((s - params.inner) / params.beta, 0.0, 1.0)


def _profile(params: CutoffParams, s: np.ndarray) -> np.ndarray:
    """Mollified ramp psi_beta evaluated at distances s"""
    delta = params.mollifier_scale
    # Integrand kinks sit where s - delta*r hits a ramp corner; integrate piecewise.
    r_a = np.clip((s - params.inner) / delta, -1.0, 1.0)
    r_b = np.clip((s - params.outer) / delta, -1.0, 1.0)
    total = np.zeros_like(s)
    for lo, hi in ((np.full_like(s, -1.0), r_b), (r_b, r_a), (r_a, np.ones_like(s))):
        nodes, weights = _gauss_legendre(lo, hi)
        values = mollifier(nodes) * _ramp(params, s[..., None] - delta * nodes)
        total += np.sum(weights * values, axis=-1)
    return total


def _profile_slope(params: CutoffParams, s: np.ndarray) -> np.ndarray:
    """First derivative of psi_beta"""
    delta = params.mollifier_scale
    r_a = np.clip((s - params.inner) / delta, -1.0, 1.0)
    r_b = np.clip((s - params.outer) / delta, -1.0, 1.0)
    nodes, weights = _gauss_legendre(r_b, r_a)
    return np.sum(weights * mollifier(nodes), axis=-1) / params.beta


def _profile_curvature(params: CutoffParams, s: np.ndarray) -> np.ndarray:
    """Second derivative of psi_beta: two rescaled mollifier bumps of opposite sign"""
    delta = params.mollifier_scale
    rise = mollifier((s - params.inner) / delta) / delta
    fall = mollifier((s - params.outer) / delta) / delta
    return (rise - fall) / params.beta


def cutoff(params: CutoffParams, dom: Domain, x: ArrayLike) -> ArrayLike:
    """Cutoff phi_beta(x) = psi_beta(signed distance), values in [0, 1]"""
    s = np.atleast_1d(np.asarray(signed_distance(dom, x), dtype=float))
    phi = np.clip(_profile(params, s), 0.0, 1.0)
    return float(phi[0]) if np.ndim(x) == 0 else phi


def cutoff_derivatives(params: CutoffParams, dom: Domain, x: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """First and second derivative of phi_beta

    In one dimension the curvature of the boundary vanishes, so the Laplacian
    reduces to psi_beta'' of the signed distance.
    """
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    s = signed_distance(dom, x_arr)
    # d/dx signed_distance is +1 on the left half, -1 on the right half
    ds = np.sign(dom.midpoint - x_arr)
    first = _profile_slope(params, s) * ds
    second = _profile_curvature(params, s) * ds ** 2
    if np.ndim(x) == 0:
        return float(first[0]), float(second[0])
    return first, second


def boundary_layer_measure(dom: Domain, ell: float, c1: float = 1.0) -> float:
    """Lebesgue measure of the boundary layer {x in Q : d(x) <= c1*ell}"""
    if ell < 0.0:
        raise DomainError(f"Layer width must be nonnegative, got {ell}")
    return float(min(2.0 * c1 * ell, dom.length))


def boundary_layer_mask(dom: Domain, ell: float, c1: float = 1.0) -> np.ndarray:
    """Cells whose centre lies in the boundary layer of width c1*ell"""
    return signed_distance(dom, dom.centers()) <= c1 * ell
