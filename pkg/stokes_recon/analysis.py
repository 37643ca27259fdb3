"""
Analytic benchmark solutions, error norms and convergence orders.

Fields take points of shape (N, 2) and return (N,), (N, 2) or (N, 2, 2)
arrays; gradients are stored as ``grad_u[:, c, d] = d u_c / d x_d``.
The forcing is ``f = -nu Laplace u + grad p``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .assembly import cell_quadrature
from .models import Element
from .projectors import nodal_average
from .quadrature import MAX_TRIANGLE_DEGREE
from .spaces import DiscreteFunction, call_field, lagrange_space

logger = logging.getLogger(__name__)

__all__ = [
    "ExactSolution",
    "PRESETS",
    "preset",
    "list_presets",
    "check_preset",
    "error_h1",
    "error_l2",
    "error_l2_pressure",
    "pressure_best_approx_distance",
    "eoc",
]

Field = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ExactSolution:
    """Closed-form velocity/pressure pair with hand-derived derivatives."""

    name: str
    u: Field
    grad_u: Field
    laplace_u: Field
    p: Field
    grad_p: Field
    nu: float

    def f(self, x: np.ndarray) -> np.ndarray:
        return -self.nu * self.laplace_u(x) + self.grad_p(x)

    def f_navier_stokes(self, x: np.ndarray) -> np.ndarray:
        """``f + (u . grad) u``."""
        return self.f(x) + np.einsum("ncd,nd->nc", self.grad_u(x), self.u(x))

    def divergence(self, x: np.ndarray) -> np.ndarray:
        g = self.grad_u(x)
        return g[:, 0, 0] + g[:, 1, 1]

    def with_nu(self, nu: float) -> "ExactSolution":
        if nu <= 0:
            raise ValueError(f"viscosity must be positive, got {nu}")
        return replace(self, nu=float(nu))


# ----------------------------------------------------------------------
# Presets
# ----------------------------------------------------------------------
def _g(t):
    return t**2 * (t - 1) ** 2


def _g1(t):
    return 2 * t * (t - 1) * (2 * t - 1)


def _g2(t):
    return 12 * t**2 - 12 * t + 2


def _g3(t):
    return 24 * t - 12


def _seventh_power_pressure():
    def p(x):
        return x[:, 0] ** 7 + x[:, 1] ** 7 - 0.25

    def grad_p(x):
        return 7 * x**6

    return p, grad_p


def _example1_2d() -> ExactSolution:
    """Stream function ``x^2 (x-1)^2 y^2 (y-1)^2`` with ``p = x^7 + y^7 - 1/4``."""

    def u(x):
        X, Y = x[:, 0], x[:, 1]
        return np.column_stack([_g(X) * _g1(Y), -_g1(X) * _g(Y)])

    def grad_u(x):
        X, Y = x[:, 0], x[:, 1]
        out = np.empty((len(x), 2, 2))
        out[:, 0, 0] = _g1(X) * _g1(Y)
        out[:, 0, 1] = _g(X) * _g2(Y)
        out[:, 1, 0] = -_g2(X) * _g(Y)
        out[:, 1, 1] = -_g1(X) * _g1(Y)
        return out

    def laplace_u(x):
        X, Y = x[:, 0], x[:, 1]
        return np.column_stack([
            _g2(X) * _g1(Y) + _g(X) * _g3(Y),
            -_g3(X) * _g(Y) - _g1(X) * _g2(Y),
        ])

    p, grad_p = _seventh_power_pressure()
    return ExactSolution("example1_2d", u, grad_u, laplace_u, p, grad_p, nu=1e-3)


def _potential_flow() -> ExactSolution:
    """``u = grad Re(z^5)``; the pressure balances the convection exactly."""

    def u(x):
        X, Y = x[:, 0], x[:, 1]
        return np.column_stack([5 * X**4 - 30 * X**2 * Y**2 + 5 * Y**4, -20 * X**3 * Y + 20 * X * Y**3])

    def grad_u(x):
        X, Y = x[:, 0], x[:, 1]
        out = np.empty((len(x), 2, 2))
        out[:, 0, 0] = 20 * X**3 - 60 * X * Y**2
        out[:, 0, 1] = -60 * X**2 * Y + 20 * Y**3
        out[:, 1, 0] = -60 * X**2 * Y + 20 * Y**3
        out[:, 1, 1] = -20 * X**3 + 60 * X * Y**2
        return out

    def laplace_u(x):
        return np.zeros((len(x), 2))

    def p(x):
        r2 = x[:, 0] ** 2 + x[:, 1] ** 2
        return 664.0 / 63.0 - 12.5 * r2**4

    def grad_p(x):
        r2 = x[:, 0] ** 2 + x[:, 1] ** 2
        return -100.0 * (r2**3)[:, None] * x

    return ExactSolution("potential_flow", u, grad_u, laplace_u, p, grad_p, nu=0.1)


def _gradient_forcing() -> ExactSolution:
    """No flow; the forcing ``grad(x^7 + y^7)`` is balanced by the pressure alone."""

    def zero_vector(x):
        return np.zeros((len(x), 2))

    def zero_tensor(x):
        return np.zeros((len(x), 2, 2))

    p, grad_p = _seventh_power_pressure()
    return ExactSolution("gradient_forcing", zero_vector, zero_tensor, zero_vector, p, grad_p, nu=1e-3)


def _quadratic_flow() -> ExactSolution:
    """``u = (y^2, x^2)``, ``p = x - 1/2``: resolved exactly by Taylor–Hood k >= 2."""

    def u(x):
        return np.column_stack([x[:, 1] ** 2, x[:, 0] ** 2])

    def grad_u(x):
        out = np.zeros((len(x), 2, 2))
        out[:, 0, 1] = 2 * x[:, 1]
        out[:, 1, 0] = 2 * x[:, 0]
        return out

    def laplace_u(x):
        return np.full((len(x), 2), 2.0)

    def p(x):
        return x[:, 0] - 0.5

    def grad_p(x):
        return np.column_stack([np.ones(len(x)), np.zeros(len(x))])

    return ExactSolution("quadratic_flow", u, grad_u, laplace_u, p, grad_p, nu=1.0)


PRESETS: Dict[str, Callable[[], ExactSolution]] = {
    "example1_2d": _example1_2d,
    "potential_flow": _potential_flow,
    "gradient_forcing": _gradient_forcing,
    "quadratic_flow": _quadratic_flow,
}


def list_presets() -> List[str]:
    return sorted(PRESETS)


def preset(name: str) -> ExactSolution:
    """Look up a benchmark by name.

    Raises
    ------
    ValueError
        If ``name`` is not a known preset.
    """
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"Unknown preset '{name}'. Available presets: {list_presets()}") from None


def check_preset(exact: ExactSolution, n_samples: int = 50, seed: int = 0, step: float = 1e-5) -> Dict[str, float]:
    """Cross-check the hand-derived fields against central differences.

    Returns the largest relative discrepancies (gradient of u, Laplacian,
    gradient of p) and the largest absolute divergence.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.05, 0.95, size=(n_samples, 2))
    e = np.eye(2) * step

    fd_grad_u = np.stack([(exact.u(x + e[d]) - exact.u(x - e[d])) / (2 * step) for d in range(2)], axis=-1)
    fd_laplace = sum(
        (exact.grad_u(x + e[d])[:, :, d] - exact.grad_u(x - e[d])[:, :, d]) / (2 * step) for d in range(2)
    )
    fd_grad_p = np.column_stack([(exact.p(x + e[d]) - exact.p(x - e[d])) / (2 * step) for d in range(2)])

    def rel(a, b):
        return float(np.abs(a - b).max() / max(np.abs(b).max(), 1.0))

    report = {
        "grad_u": rel(fd_grad_u, exact.grad_u(x)),
        "laplace_u": rel(fd_laplace, exact.laplace_u(x)),
        "grad_p": rel(fd_grad_p, exact.grad_p(x)),
        "divergence": float(np.abs(exact.divergence(x)).max()),
    }
    logger.debug("Preset %s consistency: %s", exact.name, report)
    return report


# ----------------------------------------------------------------------
# Error norms
# ----------------------------------------------------------------------
def _degree(space_degree: int, degree: Optional[int]) -> int:
    return min(2 * space_degree + 10 if degree is None else degree, MAX_TRIANGLE_DEGREE)


def error_h1(u_h: DiscreteFunction, exact: ExactSolution, degree: Optional[int] = None) -> float:
    """``||grad(u - u_h)||_{L2}``."""
    quad = cell_quadrature(u_h.space.mesh, _degree(u_h.space.degree, degree))
    diff = call_field(exact.grad_u, quad.points) - u_h.tabulate(quad.xy, "gradient")
    return float(np.sqrt(np.einsum("cqij,cq->", diff**2, quad.dx)))


def error_l2(u_h: DiscreteFunction, exact: ExactSolution, degree: Optional[int] = None) -> float:
    quad = cell_quadrature(u_h.space.mesh, _degree(u_h.space.degree, degree))
    diff = call_field(exact.u, quad.points) - u_h.tabulate(quad.xy, "value")
    return float(np.sqrt(np.einsum("cqi,cq->", diff**2, quad.dx)))


def error_l2_pressure(p_h: DiscreteFunction, exact: ExactSolution, degree: Optional[int] = None) -> float:
    """L2 pressure error; both the discrete and the exact pressure have zero mean."""
    quad = cell_quadrature(p_h.space.mesh, _degree(p_h.space.degree, degree))
    diff = call_field(exact.p, quad.points) - p_h.tabulate(quad.xy, "value")
    return float(np.sqrt(np.sum(diff**2 * quad.dx)))


def pressure_best_approx_distance(p_h: DiscreteFunction, exact: ExactSolution, element: Element,
                                  degree: Optional[int] = None) -> float:
    """``||S P p - p_h||`` with ``P`` the element-wise L2 projection onto the divergence
    space and ``S`` nodal averaging onto the pressure space (mean removed)."""
    mesh = p_h.space.mesh
    q_space = lagrange_space(mesh, element.divergence_order, continuous=False)
    quad = cell_quadrature(mesh, _degree(q_space.degree, degree))
    phi = q_space.element.values(quad.xy)
    rhs = np.einsum("cq,qj,cq->cj", call_field(exact.p, quad.points), phi, quad.dx)
    coeffs = np.zeros(q_space.n_dofs)
    local_mass = np.einsum("qi,qj,q->ij", phi, phi, quad.weights)
    coeffs[q_space.dof_map] = np.linalg.solve(local_mass, (rhs / mesh.dets[:, None]).T).T
    smoothed = nodal_average(DiscreteFunction(q_space, coeffs), p_h.space)

    diff = smoothed.coefficients - p_h.coefficients
    pq = cell_quadrature(mesh, 2 * p_h.space.degree)
    vals = DiscreteFunction(p_h.space, diff).tabulate(pq.xy, "value")
    vals = vals - np.sum(vals * pq.dx) / np.sum(pq.dx)
    return float(np.sqrt(np.sum(vals**2 * pq.dx)))


def eoc(pairs: Sequence[Tuple[float, float]]) -> List[Optional[float]]:
    """Orders ``log(e_{i-1}/e_i) / log(h_{i-1}/h_i)`` between consecutive levels.

    Entries with a non-positive error or mesh size are ``None``.
    """
    if len(pairs) < 2:
        raise ValueError(f"eoc needs at least two levels, got {len(pairs)}")
    rates: List[Optional[float]] = []
    for (h0, e0), (h1, e1) in zip(pairs[:-1], pairs[1:]):
        if min(h0, h1, e0, e1) <= 0 or h0 == h1:
            logger.warning("eoc omitted for h=(%g, %g), errors=(%g, %g)", h0, h1, e0, e1)
            rates.append(None)
            continue
        rates.append(math.log(e0 / e1) / math.log(h0 / h1))
    return rates
