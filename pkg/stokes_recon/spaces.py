"""
Finite element spaces on a :class:`~stokes_recon.mesh.Mesh`.

Every reference basis is stored as a coefficient matrix over monomials
``x**a * y**b`` on the reference triangle and obtained by inverting the
Vandermonde matrix of its degrees of freedom, so one code path serves all
orders of the Lagrange, bubble-enriched and Raviart–Thomas elements.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import eval_sh_legendre

from .mesh import LOCAL_EDGES, Mesh
from .quadrature import edge_rule, triangle_rule

logger = logging.getLogger(__name__)

__all__ = [
    "KINDS",
    "ScalarElement",
    "RaviartThomasElement",
    "FeSpace",
    "DiscreteFunction",
    "lagrange_element",
    "mini_element",
    "rt_element",
    "lagrange_space",
    "mini_space",
    "rt_space",
    "evaluate",
    "interpolate",
    "call_field",
    "monomial_exponents",
]

KINDS = ("lagrange_continuous", "lagrange_discontinuous", "mini_velocity", "raviart_thomas")
MAX_LAGRANGE_ORDER = 6
MAX_RT_ORDER = 5

REFERENCE_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
# outward orientation of local edge i relative to its tangent rotated clockwise
EDGE_ORIENTATION = np.array([1.0, -1.0, 1.0])


# ----------------------------------------------------------------------
# Monomials
# ----------------------------------------------------------------------
@lru_cache(maxsize=None)
def monomial_exponents(degree: int) -> np.ndarray:
    """Exponents (a, b) of all monomials of total degree <= ``degree``."""
    exps = [(d - b, b) for d in range(degree + 1) for b in range(d + 1)]
    out = np.array(exps, dtype=np.int64).reshape(-1, 2)
    out.setflags(write=False)
    return out


def _monomials(xy: np.ndarray, exps: np.ndarray) -> np.ndarray:
    x = xy[..., 0, None]
    y = xy[..., 1, None]
    return x ** exps[:, 0] * y ** exps[:, 1]


def _monomial_gradients(xy: np.ndarray, exps: np.ndarray) -> np.ndarray:
    x = xy[..., 0, None]
    y = xy[..., 1, None]
    a = exps[:, 0]
    b = exps[:, 1]
    dx = np.where(a > 0, a * x ** np.maximum(a - 1, 0), 0.0) * y**b
    dy = np.where(b > 0, b * y ** np.maximum(b - 1, 0), 0.0) * x**a
    return np.stack([dx, dy], axis=-1)


def barycentric(xy: np.ndarray) -> np.ndarray:
    """Barycentric coordinates (..., 3) of reference points (..., 2)."""
    xy = np.asarray(xy, dtype=float)
    return np.stack([1.0 - xy[..., 0] - xy[..., 1], xy[..., 0], xy[..., 1]], axis=-1)


# ----------------------------------------------------------------------
# Reference elements
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ScalarElement:
    """
    Scalar reference element spanned by polynomials of degree <= ``degree``.

    ``coefficients[:, j]`` are the monomial coefficients of basis function
    ``j``.  For nodal elements ``nodes`` holds the interpolation points;
    the bubble part of the mini element has no nodes.
    """

    name: str
    order: int
    degree: int
    coefficients: np.ndarray
    nodes: np.ndarray
    n_vertex: int
    n_edge: int
    n_interior: int
    n_bubble: int = 0

    @property
    def n_local(self) -> int:
        return self.coefficients.shape[1]

    @property
    def n_nodal(self) -> int:
        return 3 * self.n_vertex + 3 * self.n_edge + self.n_interior

    def values(self, xy: np.ndarray) -> np.ndarray:
        """Basis values at reference points, shape (nq, n_local)."""
        return _monomials(np.atleast_2d(xy), monomial_exponents(self.degree)) @ self.coefficients

    def gradients(self, xy: np.ndarray) -> np.ndarray:
        """Reference gradients, shape (nq, n_local, 2)."""
        g = _monomial_gradients(np.atleast_2d(xy), monomial_exponents(self.degree))
        return np.einsum("qmd,mn->qnd", g, self.coefficients)


def _lagrange_nodes(k: int) -> np.ndarray:
    """Equispaced nodes: vertices, then edge nodes along each local edge, then interior."""
    nodes = [REFERENCE_VERTICES[i] for i in range(3)]
    for a, b in LOCAL_EDGES:
        for s in range(1, k):
            nodes.append(REFERENCE_VERTICES[a] + s / k * (REFERENCE_VERTICES[b] - REFERENCE_VERTICES[a]))
    for j in range(1, k):
        for i in range(1, k - j):
            nodes.append(np.array([i / k, j / k]))
    return np.array(nodes, dtype=float)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def lagrange_element(k: int) -> ScalarElement:
    if not 1 <= k <= MAX_LAGRANGE_ORDER:
        raise ValueError(f"Lagrange order must lie in [1, {MAX_LAGRANGE_ORDER}], got {k}")
    nodes = _lagrange_nodes(k)
    vander = _monomials(nodes, monomial_exponents(k))
    coeffs = np.linalg.solve(vander, np.eye(len(nodes)))
    return ScalarElement(
        name=f"P{k}",
        order=k,
        degree=k,
        coefficients=_frozen(coeffs),
        nodes=_frozen(nodes),
        n_vertex=1,
        n_edge=k - 1,
        n_interior=(k - 1) * (k - 2) // 2,
    )


@lru_cache(maxsize=None)
def mini_element(k: int) -> ScalarElement:
    """P_k enriched with the cell bubbles 27*l0*l1*l2 * P_{k-1} (peak value 1 for k = 1)."""
    if not 1 <= k <= MAX_LAGRANGE_ORDER - 2:
        raise ValueError(f"mini element order must lie in [1, {MAX_LAGRANGE_ORDER - 2}], got {k}")
    base = lagrange_element(k)
    degree = k + 2
    exps = monomial_exponents(degree)

    # fit the bubble products on the degree-(k+2) nodes, where they are exact
    fit_nodes = _lagrange_nodes(degree)
    lam = barycentric(fit_nodes)
    bubble = 27.0 * lam.prod(axis=1)
    inner = np.ones((len(fit_nodes), 1)) if k == 1 else lagrange_element(k - 1).values(fit_nodes)
    targets = bubble[:, None] * inner
    vander = _monomials(fit_nodes, exps)
    bubble_coeffs = np.linalg.solve(vander, targets)

    base_coeffs = np.zeros((len(exps), base.n_local))
    base_coeffs[: base.coefficients.shape[0]] = base.coefficients
    return ScalarElement(
        name=f"P{k}+B",
        order=k,
        degree=degree,
        coefficients=_frozen(np.hstack([base_coeffs, bubble_coeffs])),
        nodes=base.nodes,
        n_vertex=base.n_vertex,
        n_edge=base.n_edge,
        n_interior=base.n_interior,
        n_bubble=bubble_coeffs.shape[1],
    )


@dataclass(frozen=True)
class RaviartThomasElement:
    """
    Reference RT_m element.  Local DOFs: ``m + 1`` normal moments per local
    edge (edge 0, 1, 2) against shifted Legendre polynomials in the edge
    parameter, then ``m (m + 1)`` interior moments against vector monomials
    of degree <= m - 1.
    """

    order: int
    coeff_x: np.ndarray
    coeff_y: np.ndarray

    @property
    def degree(self) -> int:
        return self.order + 1

    @property
    def n_edge(self) -> int:
        return self.order + 1

    @property
    def n_interior(self) -> int:
        return self.order * (self.order + 1)

    @property
    def n_local(self) -> int:
        return (self.order + 1) * (self.order + 3)

    def values(self, xy: np.ndarray) -> np.ndarray:
        """Reference basis values, shape (nq, n_local, 2)."""
        mono = _monomials(np.atleast_2d(xy), monomial_exponents(self.degree))
        return np.stack([mono @ self.coeff_x, mono @ self.coeff_y], axis=-1)

    def divergences(self, xy: np.ndarray) -> np.ndarray:
        """Reference divergences, shape (nq, n_local)."""
        g = _monomial_gradients(np.atleast_2d(xy), monomial_exponents(self.degree))
        return g[..., 0] @ self.coeff_x + g[..., 1] @ self.coeff_y


def _rt_span(m: int):
    """Monomial coefficients (over degree m + 1) of the span [P_m]^2 + x * P~_m."""
    exps = monomial_exponents(m + 1)
    index = {tuple(e): i for i, e in enumerate(exps.tolist())}
    cols_x, cols_y = [], []
    for a, b in monomial_exponents(m).tolist():
        cx = np.zeros(len(exps))
        cx[index[(a, b)]] = 1.0
        cols_x.append(cx)
        cols_y.append(np.zeros(len(exps)))
        cy = np.zeros(len(exps))
        cy[index[(a, b)]] = 1.0
        cols_x.append(np.zeros(len(exps)))
        cols_y.append(cy)
    for b in range(m + 1):
        a = m - b
        cx = np.zeros(len(exps))
        cy = np.zeros(len(exps))
        cx[index[(a + 1, b)]] = 1.0
        cy[index[(a, b + 1)]] = 1.0
        cols_x.append(cx)
        cols_y.append(cy)
    return np.array(cols_x).T, np.array(cols_y).T


def reference_edge_normals() -> np.ndarray:
    """Outward normals of the reference edges scaled by the edge length."""
    normals = np.empty((3, 2))
    for i, (a, b) in enumerate(LOCAL_EDGES):
        tau = REFERENCE_VERTICES[b] - REFERENCE_VERTICES[a]
        normals[i] = EDGE_ORIENTATION[i] * np.array([tau[1], -tau[0]])
    return normals


@lru_cache(maxsize=None)
def rt_element(m: int) -> RaviartThomasElement:
    if not 0 <= m <= MAX_RT_ORDER:
        raise ValueError(f"Raviart-Thomas order must lie in [0, {MAX_RT_ORDER}], got {m}")
    span_x, span_y = _rt_span(m)
    exps = monomial_exponents(m + 1)
    n = span_x.shape[1]

    rows = []
    erule = edge_rule(2 * m + 1)
    normals = reference_edge_normals()
    for i, (a, b) in enumerate(LOCAL_EDGES):
        pts = REFERENCE_VERTICES[a] + erule.t[:, None] * (REFERENCE_VERTICES[b] - REFERENCE_VERTICES[a])
        mono = _monomials(pts, exps)
        flux = (mono @ span_x) * normals[i, 0] + (mono @ span_y) * normals[i, 1]
        for l in range(m + 1):
            rows.append((erule.weights * eval_sh_legendre(l, erule.t)) @ flux)
    if m > 0:
        trule = triangle_rule(2 * m)
        mono = _monomials(trule.xy, exps)
        vx = mono @ span_x
        vy = mono @ span_y
        test = _monomials(trule.xy, monomial_exponents(m - 1))
        for j in range(test.shape[1]):
            rows.append((trule.weights * test[:, j]) @ vx)
            rows.append((trule.weights * test[:, j]) @ vy)
    vander = np.array(rows)
    if vander.shape != (n, n):
        raise RuntimeError(f"RT_{m}: {vander.shape[0]} functionals for a span of dimension {n}")
    coeffs = np.linalg.solve(vander, np.eye(n))
    return RaviartThomasElement(order=m, coeff_x=_frozen(span_x @ coeffs), coeff_y=_frozen(span_y @ coeffs))


# ----------------------------------------------------------------------
# Spaces
# ----------------------------------------------------------------------
class FeSpace:
    """
    Discrete space: reference element + cell-to-global DOF map.

    ``dof_map[c, j]`` is the global index of local basis function ``j`` of
    cell ``c`` (-1 where the DOF is constrained to zero) and ``dof_signs``
    the factor relating the global basis function to the local one.
    """

    def __init__(self, mesh: Mesh, kind: str, order: int, element, dof_map: np.ndarray,
                 dof_signs: np.ndarray, n_dofs: int, boundary_dofs: np.ndarray):
        if kind not in KINDS:
            raise ValueError(f"Unknown space kind '{kind}'. Available kinds: {list(KINDS)}")
        self.mesh = mesh
        self.kind = kind
        self.order = order
        self.element = element
        self.dof_map = dof_map
        self.dof_signs = dof_signs
        self.n_dofs = int(n_dofs)
        self.boundary_dofs = boundary_dofs
        for arr in (self.dof_map, self.dof_signs, self.boundary_dofs):
            arr.setflags(write=False)

    @property
    def is_vector(self) -> bool:
        return self.kind == "raviart_thomas"

    @property
    def degree(self) -> int:
        return self.element.degree

    @property
    def n_local(self) -> int:
        return self.dof_map.shape[1]

    def __repr__(self) -> str:
        return f"FeSpace({self.kind}, order={self.order}, n_dofs={self.n_dofs})"

    def local_coefficients(self, coefficients: np.ndarray, cells=None) -> np.ndarray:
        """Gather global coefficients into per-cell local ones, shape (nc, n_local)."""
        dof_map = self.dof_map if cells is None else self.dof_map[cells]
        signs = self.dof_signs if cells is None else self.dof_signs[cells]
        coefficients = np.asarray(coefficients, dtype=float)
        return np.where(dof_map >= 0, coefficients[np.maximum(dof_map, 0)], 0.0) * signs

    def dof_coordinates(self) -> np.ndarray:
        """Physical coordinates of the nodal DOFs (Lagrange part only), shape (n_dofs, 2)."""
        if self.is_vector:
            raise ValueError("Raviart-Thomas DOFs are moments, not nodal values")
        element = self.element
        n_nodal = element.n_nodal
        coords = np.full((self.n_dofs, 2), np.nan)
        pts = self.mesh.physical_points(element.nodes)
        coords[self.dof_map[:, :n_nodal].ravel()] = pts.reshape(-1, 2)
        return coords


def _edge_layout(mesh: Mesh, per_edge: int, offset: int) -> np.ndarray:
    """Global indices (nc, 3, per_edge) of edge DOFs ordered along the local parameter."""
    idx = offset + mesh.cell_edges[:, :, None] * per_edge + np.arange(per_edge)
    reverse = mesh.cell_edge_signs < 0
    idx[reverse] = idx[reverse][:, ::-1]
    return idx


def _continuous_map(mesh: Mesh, k: int):
    n_edge = k - 1
    n_int = (k - 1) * (k - 2) // 2
    nv, ne, nc = mesh.n_vertices, mesh.n_edges, mesh.n_cells
    edge_part = _edge_layout(mesh, n_edge, nv).reshape(nc, -1)
    interior = nv + ne * n_edge + np.arange(nc)[:, None] * n_int + np.arange(n_int)
    dof_map = np.hstack([mesh.cells, edge_part, interior]).astype(np.int64)
    n_dofs = nv + ne * n_edge + nc * n_int

    bnd_edges = np.flatnonzero(mesh.boundary_edges)
    boundary = np.concatenate(
        [np.flatnonzero(mesh.boundary_vertices), (nv + bnd_edges[:, None] * n_edge + np.arange(n_edge)).ravel()]
    )
    return dof_map, n_dofs, np.sort(boundary).astype(np.int64)


def lagrange_space(mesh: Mesh, k: int, continuous: bool = True) -> FeSpace:
    """Equispaced Lagrange space of order ``k`` (continuous or element-wise)."""
    element = lagrange_element(k)
    if continuous:
        dof_map, n_dofs, boundary = _continuous_map(mesh, k)
        kind = "lagrange_continuous"
    else:
        nloc = element.n_local
        dof_map = np.arange(mesh.n_cells * nloc, dtype=np.int64).reshape(mesh.n_cells, nloc)
        n_dofs = mesh.n_cells * nloc
        boundary = np.empty(0, dtype=np.int64)
        kind = "lagrange_discontinuous"
    signs = np.ones(dof_map.shape)
    return FeSpace(mesh, kind, k, element, dof_map, signs, n_dofs, boundary)


def mini_space(mesh: Mesh, k: int = 1) -> FeSpace:
    """Continuous P_k enriched with cell bubbles of degree k + 2."""
    element = mini_element(k)
    dof_map, n_p, boundary = _continuous_map(mesh, k)
    nb = element.n_bubble
    bubbles = n_p + np.arange(mesh.n_cells)[:, None] * nb + np.arange(nb)
    dof_map = np.hstack([dof_map, bubbles]).astype(np.int64)
    signs = np.ones(dof_map.shape)
    return FeSpace(mesh, "mini_velocity", k, element, dof_map, signs, n_p + mesh.n_cells * nb, boundary)


def rt_space(mesh: Mesh, m: int, zero_normal_on: Optional[Sequence[int]] = None) -> FeSpace:
    """Piola-mapped RT_m space; normal moments on ``zero_normal_on`` edges are removed.

    Global edge DOFs are moments of ``sigma . n_e`` with ``n_e`` the global
    tangent (lower to higher vertex) rotated clockwise, tested against
    shifted Legendre polynomials in the global edge parameter.
    """
    element = rt_element(m)
    nc, ne = mesh.n_cells, mesh.n_edges
    per_edge = m + 1
    constrained = np.zeros(ne, dtype=bool)
    if zero_normal_on is not None:
        zero_normal_on = np.asarray(zero_normal_on)
        if zero_normal_on.dtype == bool:
            constrained[:] = zero_normal_on
        else:
            constrained[zero_normal_on.astype(np.int64)] = True
    free_edges = np.flatnonzero(~constrained)
    edge_slot = -np.ones(ne, dtype=np.int64)
    edge_slot[free_edges] = np.arange(len(free_edges))

    slot = edge_slot[mesh.cell_edges]  # (nc, 3)
    l = np.arange(per_edge)
    edge_idx = slot[:, :, None] * per_edge + l
    edge_idx = np.where(slot[:, :, None] >= 0, edge_idx, -1)
    # local moment = (outward / global normal) * (-1)^(l * reversed) * global moment
    reversed_ = (mesh.cell_edge_signs < 0)[:, :, None]
    sign = EDGE_ORIENTATION[None, :, None] * mesh.cell_edge_signs[:, :, None] * np.where(reversed_ & (l % 2 == 1), -1.0, 1.0)

    n_edge_dofs = len(free_edges) * per_edge
    n_int = element.n_interior
    interior = n_edge_dofs + np.arange(nc)[:, None] * n_int + np.arange(n_int)
    dof_map = np.hstack([edge_idx.reshape(nc, -1), interior]).astype(np.int64)
    signs = np.hstack([sign.reshape(nc, -1), np.ones((nc, n_int))])
    signs = np.where(dof_map >= 0, signs, 0.0)

    bnd = np.flatnonzero(mesh.boundary_edges & ~constrained)
    boundary = np.sort((edge_slot[bnd][:, None] * per_edge + l).ravel()).astype(np.int64)
    space = FeSpace(mesh, "raviart_thomas", m, element, dof_map, signs, n_edge_dofs + nc * n_int, boundary)
    space.edge_dofs = edge_slot[:, None] * per_edge + l
    space.edge_dofs[edge_slot < 0] = -1
    space.edge_dofs.setflags(write=False)
    return space


# ----------------------------------------------------------------------
# Discrete functions
# ----------------------------------------------------------------------
def call_field(field: Callable, points: np.ndarray) -> np.ndarray:
    """Evaluate an analytic field on points of shape (..., 2)."""
    points = np.asarray(points, dtype=float)
    flat = points.reshape(-1, 2)
    out = np.asarray(field(flat), dtype=float)
    return out.reshape(points.shape[:-1] + out.shape[1:])


@dataclass(eq=False)
class DiscreteFunction:
    """
    Coefficient vector over a :class:`FeSpace`.

    Velocity fields use ``n_components=2`` over a scalar space with the
    layout ``[x-component | y-component]``.
    """

    space: FeSpace
    coefficients: np.ndarray
    n_components: int = 1

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        expected = self.space.n_dofs * self.n_components
        if self.coefficients.shape != (expected,):
            raise ValueError(f"expected {expected} coefficients for {self.space}, got {self.coefficients.shape}")
        if self.space.is_vector and self.n_components != 1:
            raise ValueError("Raviart-Thomas functions are intrinsically vector valued")

    def component(self, c: int) -> np.ndarray:
        n = self.space.n_dofs
        return self.coefficients[c * n : (c + 1) * n]

    def tabulate(self, xy: np.ndarray, what: str = "value", cells=None) -> np.ndarray:
        """Values at reference points ``xy`` in every cell (or in ``cells``).

        Shapes: scalar value (nc, nq); vector value (nc, nq, 2); scalar
        gradient (nc, nq, 2); vector gradient (nc, nq, 2, 2) with
        ``[..., c, d] = d u_c / d x_d``; divergence (nc, nq).
        """
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        space = self.space
        mesh = space.mesh
        idx = np.arange(mesh.n_cells) if cells is None else np.atleast_1d(cells)
        if space.is_vector:
            local = space.local_coefficients(self.coefficients, idx)
            if what == "value":
                ref = np.einsum("qnd,cn->cqd", space.element.values(xy), local)
                return np.einsum("cij,cqj->cqi", mesh.jacobians[idx], ref) / mesh.dets[idx, None, None]
            if what == "divergence":
                return (local @ space.element.divergences(xy).T) / mesh.dets[idx, None]
            raise ValueError(f"Unsupported evaluation '{what}' for {space.kind}; use value or divergence")

        if what == "value":
            phi = space.element.values(xy)
            parts = [space.local_coefficients(self.component(c), idx) @ phi.T for c in range(self.n_components)]
            return parts[0] if self.n_components == 1 else np.stack(parts, axis=-1)
        if what in ("gradient", "divergence"):
            ghat = space.element.gradients(xy)
            grads = np.einsum("qnj,cji->cqni", ghat, mesh.inverse_jacobians[idx])
            parts = [np.einsum("cn,cqni->cqi", space.local_coefficients(self.component(c), idx), grads)
                     for c in range(self.n_components)]
            if self.n_components == 1:
                if what == "divergence":
                    raise ValueError("divergence needs a two-component function")
                return parts[0]
            grad = np.stack(parts, axis=-2)
            if what == "gradient":
                return grad
            return grad[..., 0, 0] + grad[..., 1, 1]
        raise ValueError(f"Unknown evaluation '{what}'. Available: value, gradient, divergence")

    def evaluate(self, cell: int, points: np.ndarray, what: str = "value") -> np.ndarray:
        return self.tabulate(points, what, cells=[cell])[0]


def evaluate(f: DiscreteFunction, cell: int, points: np.ndarray, what: str = "value") -> np.ndarray:
    """Physical-space values of ``f`` at reference ``points`` of ``cell``.

    Raviart–Thomas values use the contravariant Piola map
    ``sigma = J sigma_hat / det J`` and ``div sigma = div_hat sigma_hat / det J``.
    """
    return f.evaluate(cell, points, what)


def interpolate(space: FeSpace, field: Callable, n_components: Optional[int] = None) -> DiscreteFunction:
    """Canonical interpolant of an analytic ``field`` (points (N, 2) -> values).

    Lagrange-type spaces take nodal values (bubble coefficients of the mini
    space are zero); Raviart–Thomas takes the edge and interior moments.
    """
    if space.is_vector:
        return DiscreteFunction(space, _rt_interpolate(space, field))

    coords = space.dof_coordinates()
    known = ~np.isnan(coords[:, 0])
    sample = call_field(field, coords[known])
    found = 1 if sample.ndim == 1 else sample.shape[1]
    if n_components is not None and n_components != found:
        raise ValueError(f"field has {found} components, expected {n_components}")
    n_components = found
    values = np.zeros((space.n_dofs,) + sample.shape[1:])
    values[known] = sample
    coefficients = values if n_components == 1 else values.T.ravel()
    logger.debug("Interpolated field into %s (%d components)", space, n_components)
    return DiscreteFunction(space, coefficients, n_components)


def _rt_interpolate(space: FeSpace, field: Callable) -> np.ndarray:
    mesh = space.mesh
    element = space.element
    m = element.order
    coeffs = np.zeros(space.n_dofs)

    erule = edge_rule(max(2 * m + 8, 12))
    free = np.flatnonzero(space.edge_dofs[:, 0] >= 0)
    if len(free):
        a = mesh.vertices[mesh.edges[free, 0]]
        b = mesh.vertices[mesh.edges[free, 1]]
        tau = b - a
        normal = np.column_stack([tau[:, 1], -tau[:, 0]])  # length-scaled, so ds = dt
        pts = a[:, None, :] + erule.t[None, :, None] * tau[:, None, :]
        flux = np.einsum("eqd,ed->eq", call_field(field, pts), normal)
        legendre = np.array([eval_sh_legendre(l, erule.t) for l in range(m + 1)])
        coeffs[space.edge_dofs[free]] = np.einsum("eq,q,lq->el", flux, erule.weights, legendre)

    if element.n_interior:
        trule = triangle_rule(min(2 * m + 10, 30))
        pts = mesh.physical_points(trule.xy)
        vals = call_field(field, pts)  # (nc, nq, 2)
        pulled = mesh.dets[:, None, None] * np.einsum("cij,cqj->cqi", mesh.inverse_jacobians, vals)
        test = _monomials(trule.xy, monomial_exponents(m - 1))
        moments = np.einsum("cqd,q,qj->cjd", pulled, trule.weights, test).reshape(mesh.n_cells, -1)
        n_edge_local = 3 * (m + 1)
        coeffs[space.dof_map[:, n_edge_local:]] = moments
    return coeffs
