"""
Projection and averaging operators used by the velocity reconstruction:
bubble projector, Oswald averaging (same order and order-lowering
variant), Koszul multiplier bases and patch-global L2 projections.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg

from .assembly import cell_quadrature
from .mesh import Mesh, VertexPatch
from .spaces import (
    DiscreteFunction,
    FeSpace,
    barycentric,
    call_field,
    lagrange_space,
    monomial_exponents,
)

logger = logging.getLogger(__name__)

__all__ = [
    "KoszulBasis",
    "PatchPolynomial",
    "KoszulReport",
    "bubble_project",
    "oswald",
    "oswald_tilde",
    "nodal_average",
    "koszul_basis",
    "patch_poly_project",
    "patch_l2_distance",
    "koszul_decomposition_check",
]

GRAM_CONDITION_LIMIT = 1e13


def _require_discontinuous(q: DiscreteFunction) -> None:
    if q.space.kind != "lagrange_discontinuous" or q.n_components != 1:
        raise ValueError(f"expected a scalar discontinuous Lagrange function, got {q.space.kind}")


# ----------------------------------------------------------------------
# Bubble projector
# ----------------------------------------------------------------------
def bubble_project(patch: VertexPatch, q: DiscreteFunction) -> DiscreteFunction:
    """Scale nodal coefficients by lambda_V at the nodes; zero outside the patch.

    On every patch cell the result is ``sum_j q_j lambda_V(x_j) phi_j`` and
    therefore vanishes on the edge opposite ``V``.
    """
    _require_discontinuous(q)
    space = q.space
    lam = barycentric(space.element.nodes)  # (nloc, 3)
    out = np.zeros_like(q.coefficients)
    dofs = space.dof_map[patch.cells]
    out[dofs] = q.coefficients[dofs] * lam[:, patch.local_index].T
    return DiscreteFunction(space, out)


# ----------------------------------------------------------------------
# Oswald operators
# ----------------------------------------------------------------------
def nodal_average(q: DiscreteFunction, target: FeSpace) -> DiscreteFunction:
    """Evaluate every cell polynomial of ``q`` at the nodes of ``target`` and average."""
    _require_discontinuous(q)
    if target.kind != "lagrange_continuous":
        raise ValueError(f"target must be a continuous Lagrange space, got {target.kind}")
    local = q.coefficients[q.space.dof_map]
    at_nodes = local @ q.space.element.values(target.element.nodes).T  # (nc, n_target_local)
    dm = target.dof_map.ravel()
    sums = np.bincount(dm, weights=at_nodes.ravel(), minlength=target.n_dofs)
    counts = np.bincount(dm, minlength=target.n_dofs)
    return DiscreteFunction(target, sums / counts)


def oswald(q: DiscreteFunction, target: Optional[FeSpace] = None) -> DiscreteFunction:
    """Oswald interpolator S: arithmetic mean of the incident cell values at each node."""
    _require_discontinuous(q)
    if target is None:
        target = lagrange_space(q.space.mesh, q.space.order, continuous=True)
    elif target.order != q.space.order:
        raise ValueError("oswald keeps the order; use oswald_tilde to lower it")
    return nodal_average(q, target)


def oswald_tilde(q: DiscreteFunction, k: int, target: Optional[FeSpace] = None) -> DiscreteFunction:
    """Order-k Oswald operator applied to a discontinuous function of higher order."""
    _require_discontinuous(q)
    if k > q.space.order:
        raise ValueError(f"target order {k} exceeds the input order {q.space.order}")
    if target is None:
        target = lagrange_space(q.space.mesh, k, continuous=True)
    return nodal_average(q, target)


# ----------------------------------------------------------------------
# Koszul multipliers
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class KoszulBasis:
    """Fields ``(-(y - V_y), x - V_x) * a`` with ``a`` scaled monomials of degree <= k - 3."""

    vertex: int
    center: np.ndarray
    scale: float
    order: int

    @property
    def exponents(self) -> np.ndarray:
        if self.order < 3:
            return np.empty((0, 2), dtype=np.int64)
        return monomial_exponents(self.order - 3)

    @property
    def dimension(self) -> int:
        return len(self.exponents)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Field values, shape (..., dimension, 2)."""
        rel = np.asarray(points, dtype=float) - self.center
        exps = self.exponents
        s = rel / self.scale
        mono = s[..., 0, None] ** exps[:, 0] * s[..., 1, None] ** exps[:, 1]
        rot = np.stack([-rel[..., 1], rel[..., 0]], axis=-1)
        return mono[..., :, None] * rot[..., None, :]


def koszul_basis(patch: VertexPatch, k: int, mesh: Mesh) -> KoszulBasis:
    if k < 2:
        raise ValueError(f"Koszul basis needs k >= 2, got {k}")
    return KoszulBasis(vertex=patch.vertex, center=mesh.vertices[patch.vertex].copy(), scale=patch.h, order=k)


# ----------------------------------------------------------------------
# Patch-global polynomial projection
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class PatchPolynomial:
    """One polynomial (per component) on the whole patch in shifted, h_V-scaled monomials."""

    center: np.ndarray
    scale: float
    order: int
    coefficients: np.ndarray  # (n_basis, n_components)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        s = (np.asarray(points, dtype=float) - self.center) / self.scale
        exps = monomial_exponents(self.order)
        mono = s[..., 0, None] ** exps[:, 0] * s[..., 1, None] ** exps[:, 1]
        out = mono @ self.coefficients
        return out[..., 0] if out.shape[-1] == 1 else out


FieldLike = Union[Callable, DiscreteFunction]


def _field_on_cells(g: FieldLike, mesh: Mesh, cells: np.ndarray, degree: int):
    quad = cell_quadrature(mesh, degree, cells)
    if isinstance(g, DiscreteFunction):
        vals = g.tabulate(quad.xy, "value", cells=cells)
    else:
        vals = call_field(g, quad.points)
    if vals.ndim == 2:
        vals = vals[..., None]
    return quad, vals


def patch_poly_project(patch: VertexPatch, mesh: Mesh, g: FieldLike, m: int,
                       degree: Optional[int] = None) -> PatchPolynomial:
    """L2(omega_V)-orthogonal projection of ``g`` onto Pi^m(omega_V), componentwise.

    Raises
    ------
    ValueError
        If the Gram matrix of the patch is numerically singular.
    """
    if m < 0:
        raise ValueError(f"projection order must be >= 0, got {m}")
    degree = 2 * m + 10 if degree is None else degree
    center = mesh.vertices[patch.vertex].copy()
    quad, vals = _field_on_cells(g, mesh, patch.cells, degree)
    s = (quad.points - center) / patch.h
    exps = monomial_exponents(m)
    mono = s[..., 0, None] ** exps[:, 0] * s[..., 1, None] ** exps[:, 1]  # (nc, nq, nb)
    gram = np.einsum("cqi,cqj,cq->ij", mono, mono, quad.dx)
    rhs = np.einsum("cqi,cqd,cq->id", mono, vals, quad.dx)
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > GRAM_CONDITION_LIMIT:
        raise ValueError(f"singular Gram matrix on patch of vertex {patch.vertex} (condition {cond:.3e})")
    coeffs = scipy.linalg.solve(gram, rhs, assume_a="pos")
    return PatchPolynomial(center=center, scale=patch.h, order=m, coefficients=coeffs)


def patch_l2_distance(patch: VertexPatch, mesh: Mesh, g: FieldLike, m: int,
                      degree: Optional[int] = None) -> float:
    """``||g - P^m g||_{L2(omega_V)}`` summed over components."""
    degree = 2 * m + 10 if degree is None else degree
    poly = patch_poly_project(patch, mesh, g, m, degree)
    quad, vals = _field_on_cells(g, mesh, patch.cells, degree)
    approx = poly.evaluate(quad.points)
    if approx.ndim == 2:
        approx = approx[..., None]
    return float(np.sqrt(np.einsum("cqd,cq->", (vals - approx) ** 2, quad.dx)))


# ----------------------------------------------------------------------
# Koszul decomposition of vector polynomials
# ----------------------------------------------------------------------
@dataclass
class KoszulReport:
    order: int
    dim_full: int
    dim_gradients: int
    dim_koszul: int
    rank: int

    @property
    def passed(self) -> bool:
        return self.dim_full == self.dim_gradients + self.dim_koszul == self.rank

    def as_dict(self) -> dict:
        return {
            "order": self.order,
            "dim_full": self.dim_full,
            "dim_gradients": self.dim_gradients,
            "dim_koszul": self.dim_koszul,
            "rank": self.rank,
            "passed": self.passed,
        }


def koszul_decomposition_check(k: int, n_samples: int = 64, seed: int = 0) -> KoszulReport:
    """Check [Pi^{k-2}]^2 = grad Pi^{k-1} + kappa(Pi^{k-3}) by dimension count and sampled rank."""
    if not 2 <= k <= 6:
        raise ValueError(f"Koszul decomposition check supports 2 <= k <= 6, got {k}")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.0, 1.0, size=(n_samples, 2))

    grad_exps = monomial_exponents(k - 1)[1:]  # constants have zero gradient
    x = pts[:, 0, None]
    y = pts[:, 1, None]
    a = grad_exps[:, 0]
    b = grad_exps[:, 1]
    gx = np.where(a > 0, a * x ** np.maximum(a - 1, 0), 0.0) * y**b
    gy = np.where(b > 0, b * y ** np.maximum(b - 1, 0), 0.0) * x**a
    gradients = np.stack([gx, gy], axis=-1)  # (n, n_grad, 2)

    basis = KoszulBasis(vertex=0, center=np.zeros(2), scale=1.0, order=k)
    kappa = basis.evaluate(pts)  # (n, n_kappa, 2)

    sampled = np.concatenate([gradients, kappa], axis=1)  # (n, total, 2)
    matrix = sampled.transpose(0, 2, 1).reshape(2 * n_samples, -1)
    rank = int(np.linalg.matrix_rank(matrix)) if matrix.shape[1] else 0
    report = KoszulReport(
        order=k,
        dim_full=2 * len(monomial_exponents(k - 2)),
        dim_gradients=gradients.shape[1],
        dim_koszul=kappa.shape[1],
        rank=rank,
    )
    logger.debug("Koszul decomposition k=%d: %s", k, report.as_dict())
    return report
