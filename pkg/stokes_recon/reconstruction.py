"""
Divergence-free velocity reconstruction by local flux equilibration.

For every vertex patch a small mixed problem is solved: find
``(sigma, phi, lambda, r)`` in RT_m(omega_V) with zero normal trace on the
patch boundary, element-wise polynomials, Koszul multipliers and one
mean-value multiplier such that

    (sigma, tau) + (div tau, phi) + (tau, lambda)           = 0
    (div sigma, psi) + r (1, psi)                           = (div w, L_V psi)
    (sigma, mu)                                             = 0
    (phi, 1)                                                = 0

where ``L_V`` localises ``psi - S psi`` with the barycentric weight of ``V``
(``S`` is the Oswald operator onto the pressure space).  The local fluxes
add up to ``sigma(w)`` and the reconstruction is ``R_h w = w - sigma(w)``.

``L_V`` is assembled from averages over patch cells only:

    L_V psi = I[ lam_V (psi - S_V psi)
                 + sum_i lam_V(y_i) phi_i sum_{U in T} lam_U (a_i^U - a_i^V) ]

with ``a_i^U`` the mean of the cell values at pressure node ``y_i`` over the
patch cells that also contain vertex ``U``.  The operators sum to
``I - S`` over all vertices and vanish on polynomials of the pressure
degree on the patch.  For Taylor–Hood it coincides with
``P^B_V (psi - S psi)`` node by node.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .assembly import (
    assemble_load,
    assemble_rt_load,
    cell_quadrature,
    physical_gradients,
)
from .mesh import Mesh, VertexPatch, build_patches
from .models import Element, PatchDiagnostics
from .projectors import KoszulBasis, koszul_basis, patch_l2_distance
from .quadrature import MAX_TRIANGLE_DEGREE, triangle_rule
from .spaces import (
    DiscreteFunction,
    FeSpace,
    barycentric,
    lagrange_element,
    lagrange_space,
    monomial_exponents,
    rt_space,
)

logger = logging.getLogger(__name__)

__all__ = [
    "PatchSolveError",
    "ReconstructionContext",
    "PatchSystem",
    "ReconstructionMap",
    "assemble_patch_system",
    "patch_rhs",
    "solve_patch",
    "build_reconstruction",
    "reconstructed_divergence",
    "reconstructed_load",
    "data_oscillation",
    "consistency_ratio",
    "patch_stability_ratio",
    "patch_orthogonality_residual",
]

PIVOT_TOLERANCE = 1e-12


class PatchSolveError(RuntimeError):
    """Singular local problem; ``vertex`` names the patch."""

    def __init__(self, vertex: int, message: str):
        self.vertex = vertex
        super().__init__(f"patch of vertex {vertex}: {message}")


VelocityLike = Union[DiscreteFunction, np.ndarray]


def _velocity_coefficients(w: VelocityLike) -> np.ndarray:
    if isinstance(w, DiscreteFunction):
        if w.n_components != 2:
            raise ValueError("expected a two-component velocity")
        return w.coefficients
    return np.asarray(w, dtype=float)


# ----------------------------------------------------------------------
# Shared per-mesh data
# ----------------------------------------------------------------------
class ReconstructionContext:
    """
    Spaces and per-cell element matrices shared by all patch problems of one
    (mesh, element, velocity space) triple.
    """

    def __init__(self, mesh: Mesh, element: Element, velocity_space: FeSpace):
        self.mesh = mesh
        self.element = element
        self.velocity_space = velocity_space

        m = element.flux_order
        self.sigma_space = rt_space(mesh, m, zero_normal_on=mesh.boundary_edges)
        self.q_element = lagrange_element(element.divergence_order)
        self.pressure_space = lagrange_space(mesh, element.pressure_order, continuous=True)
        p_element = self.pressure_space.element

        degree = max(2 * m + 2, velocity_space.degree - 1 + self.q_element.degree)
        self.rule = triangle_rule(min(degree, MAX_TRIANGLE_DEGREE))
        self.quad = cell_quadrature(mesh, self.rule.degree)
        xy, w = self.rule.xy, self.rule.weights

        rt = self.sigma_space.element
        psi_hat = rt.values(xy)  # (nq, nrt, 2)
        div_hat = rt.divergences(xy)  # (nq, nrt)
        chi = self.q_element.values(xy)  # (nq, nql)
        signs = self.sigma_space.dof_signs  # (nc, nrt)

        # J psi_hat per cell: physical field times det J
        self.j_psi = np.einsum("cij,qnj->cqni", mesh.jacobians, psi_hat) * signs[:, None, :, None]
        self.mass = np.einsum("cqid,cqjd,q->cij", self.j_psi, self.j_psi, w) / mesh.dets[:, None, None]
        self.div = np.einsum("q,ql,qi->li", w, chi, div_hat)[None, :, :] * signs[:, None, :]
        self.mean = mesh.dets[:, None] * (w @ chi)[None, :]
        grads = physical_gradients(velocity_space, xy)  # (nc, nq, nvl, 2)
        self.bdiv = np.einsum("q,ql,cqad,c->clda", w, chi, grads, mesh.dets)

        # nodal operators between the divergence and pressure orders
        self.eval_at_pressure_nodes = self.q_element.values(p_element.nodes)  # (nsl, nql)
        self.pressure_basis_at_q_nodes = p_element.values(self.q_element.nodes)  # (nql, nsl)
        self.lam_q = barycentric(self.q_element.nodes)  # (nql, 3)
        self.lam_p = barycentric(p_element.nodes)  # (nsl, 3)

    @property
    def n_q_local(self) -> int:
        return self.q_element.n_local


# ----------------------------------------------------------------------
# Patch problems
# ----------------------------------------------------------------------
@dataclass
class PatchSystem:
    """Dense local saddle-point problem of one vertex patch, factorised once."""

    patch: VertexPatch
    element: Element
    sigma_dofs: np.ndarray  # global RT indices of the local flux unknowns
    cell_sigma: np.ndarray  # (n_cells, nrt) local flux index or -1
    koszul: KoszulBasis
    matrix: np.ndarray
    lu: tuple
    velocity_columns: np.ndarray  # global velocity DOFs ([x | y] layout) touching the patch
    div_matrix: np.ndarray  # (n_q, n_columns): (d_c phi_a, chi_l) on patch cells
    localiser: np.ndarray  # (n_q, n_q): coefficients of L_V psi in terms of psi
    diagnostics: PatchDiagnostics
    context: ReconstructionContext = field(repr=False)

    @property
    def n_sigma(self) -> int:
        return len(self.sigma_dofs)

    @property
    def n_q(self) -> int:
        return self.localiser.shape[0]

    @property
    def n_w(self) -> int:
        return self.koszul.dimension

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def mass(self) -> np.ndarray:
        return self.matrix[: self.n_sigma, : self.n_sigma]

    def flux_values(self, sigma: np.ndarray, xy: np.ndarray) -> np.ndarray:
        """Physical values of a local flux at reference points of the patch cells, (n_cells, nq, 2)."""
        ctx = self.context
        cells = self.patch.cells
        local = np.where(self.cell_sigma >= 0, sigma[np.maximum(self.cell_sigma, 0)], 0.0)
        local = local * ctx.sigma_space.dof_signs[cells]
        ref = np.einsum("qnd,cn->cqd", ctx.sigma_space.element.values(xy), local)
        mesh = ctx.mesh
        return np.einsum("cij,cqj->cqi", mesh.jacobians[cells], ref) / mesh.dets[cells, None, None]


def _localiser(patch: VertexPatch, ctx: ReconstructionContext) -> np.ndarray:
    """Matrix of ``psi -> L_V psi`` on the element-wise polynomials of the patch."""
    mesh = ctx.mesh
    cells = patch.cells
    n_cells = len(cells)
    nql = ctx.n_q_local
    nsl = ctx.eval_at_pressure_nodes.shape[0]
    n_q = n_cells * nql
    E = ctx.eval_at_pressure_nodes
    Phi = ctx.pressure_basis_at_q_nodes

    nodes = ctx.pressure_space.dof_map[cells]  # (n_cells, nsl)
    cell_vertices = mesh.cells[cells]  # (n_cells, 3)

    # patch cells touching each pressure node
    touching: Dict[int, List[tuple]] = {}
    for t in range(n_cells):
        for i in range(nsl):
            touching.setdefault(int(nodes[t, i]), []).append((t, i))

    def average(node: int, vertex: int) -> np.ndarray:
        row = np.zeros(n_q)
        members = [(t, i) for t, i in touching[node] if vertex in cell_vertices[t]]
        for t, i in members:
            row[t * nql : (t + 1) * nql] += E[i]
        return row / len(members)

    L = np.zeros((n_q, n_q))
    for t in range(n_cells):
        lv = int(patch.local_index[t])
        a_v = np.array([average(int(nodes[t, i]), patch.vertex) for i in range(nsl)])  # (nsl, n_q)
        block = slice(t * nql, (t + 1) * nql)
        identity = np.zeros((nql, n_q))
        identity[:, block] = np.eye(nql)
        lam_v = ctx.lam_q[:, lv]
        L[block] = lam_v[:, None] * (identity - Phi @ a_v)

        weight = Phi * ctx.lam_p[:, lv][None, :]  # (nql, nsl)
        if not np.any(weight):
            continue
        correction = -weight @ a_v
        for r in range(3):
            a_u = np.array([average(int(nodes[t, i]), int(cell_vertices[t, r])) for i in range(nsl)])
            correction += ctx.lam_q[:, r][:, None] * (weight @ a_u)
        L[block] += correction
    return L


def assemble_patch_system(patch: VertexPatch, variant: Element, context: ReconstructionContext,
                          condition: bool = False) -> PatchSystem:
    """Assemble and LU-factorise the local problem of ``patch``.

    Raises
    ------
    PatchSolveError
        If a pivot falls below ``1e-12`` relative to the largest one.
    """
    ctx = context
    if variant != ctx.element:
        raise ValueError(f"context was built for {ctx.element}, not {variant}")
    mesh = ctx.mesh
    cells = patch.cells
    n_cells = len(cells)
    nql = ctx.n_q_local

    # local flux unknowns: all RT DOFs of patch cells except patch-boundary normal moments
    dof_map = ctx.sigma_space.dof_map[cells]
    excluded = ctx.sigma_space.edge_dofs[patch.boundary_edges].ravel()
    candidates = np.unique(dof_map[dof_map >= 0])
    sigma_dofs = np.setdiff1d(candidates, excluded[excluded >= 0])
    cell_sigma = np.where(dof_map >= 0, np.searchsorted(sigma_dofs, np.maximum(dof_map, 0)), -1)
    valid = (dof_map >= 0) & np.isin(dof_map, sigma_dofs)
    cell_sigma = np.where(valid, cell_sigma, -1)

    koszul = koszul_basis(patch, variant.koszul_order, mesh)
    n_s, n_q, n_w = len(sigma_dofs), n_cells * nql, koszul.dimension
    size = n_s + n_q + n_w + 1
    mat = np.zeros((size, size))

    for t, c in enumerate(cells):
        idx = cell_sigma[t]
        ok = idx >= 0
        li = idx[ok]
        mat[np.ix_(li, li)] += ctx.mass[c][np.ix_(ok, ok)]
        rows = n_s + t * nql + np.arange(nql)
        mat[np.ix_(rows, li)] += ctx.div[c][:, ok]
        mat[rows, size - 1] = ctx.mean[c]
        if n_w:
            kappa = koszul.evaluate(ctx.quad.points[c])  # (nq, n_w, 2)
            k_loc = np.einsum("q,qwd,qnd->wn", ctx.rule.weights, kappa, ctx.j_psi[c])
            mat[np.ix_(n_s + n_q + np.arange(n_w), li)] += k_loc[:, ok]
    # symmetric completion
    mat[:n_s, n_s:] = mat[n_s:, :n_s].T
    mat[size - 1, n_s : n_s + n_q] = mat[n_s : n_s + n_q, size - 1]

    lu, piv = scipy.linalg.lu_factor(mat, check_finite=True)
    pivots = np.abs(np.diag(lu))
    min_pivot = float(pivots.min() / pivots.max())
    if not np.isfinite(min_pivot) or min_pivot < PIVOT_TOLERANCE:
        raise PatchSolveError(patch.vertex, f"singular local system (relative pivot {min_pivot:.3e}, size {size})")

    # velocity columns and (d_c phi_a, chi_l) on the patch
    vspace = ctx.velocity_space
    n = vspace.n_dofs
    vdofs = vspace.dof_map[cells]  # (n_cells, nvl)
    cols_full = np.stack([vdofs, vdofs + n], axis=1)  # (n_cells, 2, nvl)
    columns = np.unique(cols_full)
    col_index = np.searchsorted(columns, cols_full)
    div_matrix = np.zeros((n_q, len(columns)))
    for t, c in enumerate(cells):
        rows = t * nql + np.arange(nql)
        for comp in range(2):
            np.add.at(div_matrix, (rows[:, None], col_index[t, comp][None, :]), ctx.bdiv[c, :, comp, :])

    cond = float(np.linalg.cond(mat, 1)) if condition else float("nan")
    diagnostics = PatchDiagnostics(
        vertex=patch.vertex,
        n_cells=n_cells,
        n_sigma=n_s,
        n_q=n_q,
        n_w=n_w,
        condition=cond,
        min_pivot=min_pivot,
    )
    return PatchSystem(
        patch=patch,
        element=variant,
        sigma_dofs=sigma_dofs,
        cell_sigma=cell_sigma,
        koszul=koszul,
        matrix=mat,
        lu=(lu, piv),
        velocity_columns=columns,
        div_matrix=div_matrix,
        localiser=_localiser(patch, ctx),
        diagnostics=diagnostics,
        context=ctx,
    )


def patch_rhs(system: PatchSystem, w: VelocityLike) -> np.ndarray:
    """Right-hand side ``(div w, L_V psi)`` for every local test function (zeros elsewhere).

    ``L_V`` is the patch-local operator of the module docstring.  For the mini
    element a single ``L_V psi`` differs from ``P^B_V (psi - S psi)`` because
    it only reads patch cells; the sum over all vertices is still
    ``psi - S psi``, and each ``L_V`` vanishes on patch polynomials of the
    pressure degree.
    """
    coeffs = _velocity_coefficients(w)
    bdiv = system.div_matrix @ coeffs[system.velocity_columns]
    rhs = np.zeros(system.size)
    rhs[system.n_sigma : system.n_sigma + system.n_q] = system.localiser.T @ bdiv
    return rhs


def solve_patch(system: PatchSystem, rhs: np.ndarray) -> np.ndarray:
    """Local flux coefficients (on ``system.sigma_dofs``); multipliers are dropped."""
    sol = scipy.linalg.lu_solve(system.lu, rhs)
    if not np.all(np.isfinite(sol)):
        raise PatchSolveError(system.patch.vertex, "back substitution produced non-finite values")
    return sol[: system.n_sigma]


# ----------------------------------------------------------------------
# Global operator
# ----------------------------------------------------------------------
@dataclass
class ReconstructionMap:
    """``R`` maps velocity coefficients to RT coefficients of ``sigma(w)``; ``R_h w = w - sigma(w)``."""

    R: sp.csr_matrix
    element: Element
    sigma_space: FeSpace
    velocity_space: FeSpace
    context: ReconstructionContext = field(repr=False)
    patches: List[VertexPatch] = field(default_factory=list, repr=False)
    diagnostics: List[PatchDiagnostics] = field(default_factory=list, repr=False)

    @property
    def mesh(self) -> Mesh:
        return self.velocity_space.mesh

    def sigma(self, w: VelocityLike) -> DiscreteFunction:
        return DiscreteFunction(self.sigma_space, self.R @ _velocity_coefficients(w))

    def tabulate(self, w: VelocityLike, xy: np.ndarray, what: str = "value", cells=None) -> np.ndarray:
        """Values (or divergence) of ``R_h w`` at reference points of every cell."""
        if what not in ("value", "divergence"):
            raise ValueError(f"Unsupported evaluation '{what}' for a reconstruction; use value or divergence")
        coeffs = _velocity_coefficients(w)
        u = DiscreteFunction(self.velocity_space, coeffs, 2)
        return u.tabulate(xy, what, cells) - self.sigma(coeffs).tabulate(xy, what, cells)

    def evaluate(self, w: VelocityLike, cell: int, points: np.ndarray, what: str = "value") -> np.ndarray:
        return self.tabulate(w, points, what, cells=[cell])[0]

    def diagnostics_table(self) -> List[dict]:
        return [
            {
                "vertex": d.vertex,
                "cells": d.n_cells,
                "n_sigma": d.n_sigma,
                "n_q": d.n_q,
                "n_w": d.n_w,
                "size": d.size,
                "condition": d.condition,
                "min_pivot": d.min_pivot,
            }
            for d in self.diagnostics
        ]


def build_reconstruction(mesh: Mesh, velocity_space: FeSpace, variant: Element,
                         patches: Optional[Sequence[VertexPatch]] = None,
                         condition: bool = False) -> ReconstructionMap:
    """Solve every patch problem for all velocity basis functions at once and sum the fluxes."""
    start = time.perf_counter()
    patches = list(build_patches(mesh) if patches is None else patches)
    ctx = ReconstructionContext(mesh, variant, velocity_space)

    rows, cols, vals = [], [], []
    diagnostics = []
    for patch in patches:
        system = assemble_patch_system(patch, variant, ctx, condition=condition)
        rhs = np.zeros((system.size, len(system.velocity_columns)))
        rhs[system.n_sigma : system.n_sigma + system.n_q] = system.localiser.T @ system.div_matrix
        sol = scipy.linalg.lu_solve(system.lu, rhs)[: system.n_sigma]
        if not np.all(np.isfinite(sol)):
            raise PatchSolveError(patch.vertex, "back substitution produced non-finite values")
        rows.append(np.repeat(system.sigma_dofs, sol.shape[1]))
        cols.append(np.tile(system.velocity_columns, system.n_sigma))
        vals.append(sol.ravel())
        diagnostics.append(system.diagnostics)
        logger.debug("patch %d: size %d (%d flux, %d q, %d W)", patch.vertex, system.size,
                     system.n_sigma, system.n_q, system.n_w)

    shape = (ctx.sigma_space.n_dofs, 2 * velocity_space.n_dofs)
    R = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape).tocsr()
    R.sum_duplicates()
    R.eliminate_zeros()
    logger.info("Built %s reconstruction: %d patches, R %dx%d (nnz %d) in %.2fs", variant, len(patches),
                shape[0], shape[1], R.nnz, time.perf_counter() - start)
    return ReconstructionMap(R=R, element=variant, sigma_space=ctx.sigma_space, velocity_space=velocity_space,
                             context=ctx, patches=patches, diagnostics=diagnostics)


def reconstructed_divergence(recon: ReconstructionMap, w: VelocityLike) -> DiscreteFunction:
    """``div R_h w`` as an element-wise Lagrange function of the divergence order (exact per cell)."""
    q_space = lagrange_space(recon.mesh, recon.element.divergence_order, continuous=False)
    values = recon.tabulate(w, q_space.element.nodes, "divergence")  # (nc, nql)
    coeffs = np.zeros(q_space.n_dofs)
    coeffs[q_space.dof_map] = values
    return DiscreteFunction(q_space, coeffs)


def reconstructed_load(recon: ReconstructionMap, f: Callable, degree: Optional[int] = None) -> np.ndarray:
    """``F_i = (f, R_h phi_i) = (f, phi_i) - (R^T f_Sigma)_i``."""
    if degree is None:
        degree = 2 * recon.element.order + 10
    degree = min(degree, MAX_TRIANGLE_DEGREE)
    standard = assemble_load(recon.velocity_space, f, degree)
    flux = assemble_rt_load(recon.sigma_space, f, degree)
    return standard - recon.R.T @ flux


def data_oscillation(mesh: Mesh, patches: Sequence[VertexPatch], g, m: int,
                     degree: Optional[int] = None) -> float:
    """``(sum_V h_V^2 ||g - P^m_{omega_V} g||^2)^{1/2}`` with patch-global projections."""
    total = 0.0
    for patch in patches:
        total += patch.h**2 * patch_l2_distance(patch, mesh, g, m, degree) ** 2
    return float(np.sqrt(total))


def consistency_ratio(recon: ReconstructionMap, g: Callable, w: VelocityLike,
                      oscillation: Optional[float] = None, degree: Optional[int] = None) -> float:
    """``|(g, w - R_h w)| / (osc(g) ||grad w||)`` with the oscillation order of the element."""
    coeffs = _velocity_coefficients(w)
    if degree is None:
        degree = 2 * recon.element.order + 10
    degree = min(degree, MAX_TRIANGLE_DEGREE)
    flux = assemble_rt_load(recon.sigma_space, g, degree)
    term = abs(float(flux @ (recon.R @ coeffs)))
    if oscillation is None:
        oscillation = data_oscillation(recon.mesh, recon.patches, g, recon.element.oscillation_order, degree)
    quad = cell_quadrature(recon.mesh, 2 * recon.velocity_space.degree)
    grad = DiscreteFunction(recon.velocity_space, coeffs, 2).tabulate(quad.xy, "gradient")
    h1 = float(np.sqrt(np.einsum("cqij,cq->", grad**2, quad.dx)))
    denom = oscillation * h1
    return term / denom if denom > 0 else 0.0


def patch_stability_ratio(system: PatchSystem, w: VelocityLike) -> float:
    """``||sigma^V|| / (h_V ||div w||_{omega_V})`` for the local solution driven by ``w``."""
    coeffs = _velocity_coefficients(w)
    sigma = solve_patch(system, patch_rhs(system, coeffs))
    norm_sigma = float(np.sqrt(max(sigma @ system.mass @ sigma, 0.0)))
    ctx = system.context
    quad = cell_quadrature(ctx.mesh, 2 * ctx.velocity_space.degree, system.patch.cells)
    div = DiscreteFunction(ctx.velocity_space, coeffs, 2).tabulate(quad.xy, "divergence", cells=system.patch.cells)
    norm_div = float(np.sqrt(np.sum(div**2 * quad.dx)))
    return norm_sigma / (system.patch.h * norm_div) if norm_div > 0 else 0.0


def patch_orthogonality_residual(system: PatchSystem, sigma: np.ndarray, m: int) -> float:
    """Largest ``|(sigma, xi)| / (||sigma|| ||xi||)`` over vector monomials ``xi`` of degree <= m on the patch."""
    ctx = system.context
    cells = system.patch.cells
    quad = cell_quadrature(ctx.mesh, 2 * ctx.element.flux_order + 2 + m, cells)
    vals = system.flux_values(sigma, quad.xy)  # (n_cells, nq, 2)
    center = ctx.mesh.vertices[system.patch.vertex]
    s = (quad.points - center) / system.patch.h
    exps = monomial_exponents(m)
    mono = s[..., 0, None] ** exps[:, 0] * s[..., 1, None] ** exps[:, 1]  # (n_cells, nq, nb)
    inner = np.einsum("cqd,cqb,cq->bd", vals, mono, quad.dx)
    norm_sigma = np.sqrt(np.einsum("cqd,cq->", vals**2, quad.dx))
    norm_xi = np.sqrt(np.einsum("cqb,cq->b", mono**2, quad.dx))
    if norm_sigma == 0:
        return 0.0
    return float((np.abs(inner) / norm_xi[:, None]).max() / norm_sigma)
