"""
Global sparse operators of the Stokes and Navier–Stokes discretisations.

All forms are assembled cell-wise with numpy (one einsum per form over all
cells) and scattered into ``scipy.sparse`` matrices; duplicate COO entries
are summed on conversion to CSR.

Sign convention: with ``B[j, (c, a)] = (q_j, d_c phi_a)`` the discrete
problem reads ``A u - B^T p = F``, ``-B u = G``, so that ``p`` is the
pressure of ``-nu Laplace u + grad p = f``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Optional

import numpy as np
import scipy.sparse as sp
from scipy.io import mmwrite

from .mesh import Mesh
from .quadrature import MAX_TRIANGLE_DEGREE, triangle_rule
from .spaces import DiscreteFunction, FeSpace, call_field, interpolate

logger = logging.getLogger(__name__)

__all__ = [
    "CellQuadrature",
    "SaddleSystem",
    "cell_quadrature",
    "scalar_stiffness",
    "assemble_laplace",
    "assemble_div",
    "assemble_mass",
    "pressure_mean_vector",
    "assemble_load",
    "assemble_rt_load",
    "assemble_convection",
    "reconstructed_convection",
    "build_saddle_system",
    "apply_dirichlet",
    "export_blocks",
    "is_symmetric",
]


@dataclass(frozen=True)
class CellQuadrature:
    """A reference rule pushed to every (selected) cell."""

    xy: np.ndarray  # (nq, 2) reference points
    weights: np.ndarray  # (nq,)
    points: np.ndarray  # (nc, nq, 2) physical points
    dx: np.ndarray  # (nc, nq) physical weights

    @property
    def n_points(self) -> int:
        return len(self.weights)


def cell_quadrature(mesh: Mesh, degree: int, cells=None) -> CellQuadrature:
    rule = triangle_rule(int(min(max(degree, 0), MAX_TRIANGLE_DEGREE)))
    idx = np.arange(mesh.n_cells) if cells is None else np.asarray(cells)
    origin = mesh.vertices[mesh.cells[idx, 0]]
    points = origin[:, None, :] + np.einsum("cij,qj->cqi", mesh.jacobians[idx], rule.xy)
    dx = mesh.dets[idx, None] * rule.weights[None, :]
    return CellQuadrature(rule.xy, rule.weights, points, dx)


def _to_csr(rows, cols, vals, shape) -> sp.csr_matrix:
    rows = np.asarray(rows).ravel()
    cols = np.asarray(cols).ravel()
    vals = np.asarray(vals).ravel()
    keep = (rows >= 0) & (cols >= 0)
    mat = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=shape).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def physical_gradients(space: FeSpace, xy: np.ndarray, cells=None) -> np.ndarray:
    """Physical basis gradients (nc, nq, n_local, 2) of a scalar space."""
    mesh = space.mesh
    idx = np.arange(mesh.n_cells) if cells is None else np.asarray(cells)
    ghat = space.element.gradients(xy)
    return np.einsum("qnj,cji->cqni", ghat, mesh.inverse_jacobians[idx])


def rt_physical_values(space: FeSpace, xy: np.ndarray, cells=None) -> np.ndarray:
    """Piola-mapped local RT basis values (nc, nq, n_local, 2), without global signs."""
    mesh = space.mesh
    idx = np.arange(mesh.n_cells) if cells is None else np.asarray(cells)
    ref = space.element.values(xy)
    return np.einsum("cij,qnj->cqni", mesh.jacobians[idx], ref) / mesh.dets[idx, None, None, None]


def is_symmetric(mat: sp.spmatrix, rtol: float = 1e-13) -> bool:
    diff = abs(mat - mat.T)
    scale = abs(mat).max() if mat.nnz else 0.0
    return bool(diff.max() <= rtol * scale) if diff.nnz else True


# ----------------------------------------------------------------------
# Bilinear forms
# ----------------------------------------------------------------------
def scalar_stiffness(space: FeSpace) -> sp.csr_matrix:
    """(grad phi_j, grad phi_i) for a scalar space."""
    quad = cell_quadrature(space.mesh, 2 * (space.degree - 1))
    grads = physical_gradients(space, quad.xy)
    local = np.einsum("cqid,cqjd,cq->cij", grads, grads, quad.dx)
    dm = space.dof_map
    rows = np.broadcast_to(dm[:, :, None], local.shape)
    cols = np.broadcast_to(dm[:, None, :], local.shape)
    return _to_csr(rows, cols, local, (space.n_dofs, space.n_dofs))


def assemble_laplace(velocity_space: FeSpace, nu: float) -> sp.csr_matrix:
    """Viscous block ``nu (grad u, grad v)`` for two-component velocities."""
    if nu <= 0:
        raise ValueError(f"viscosity must be positive, got {nu}")
    k = scalar_stiffness(velocity_space)
    return (nu * sp.block_diag([k, k], format="csr")).tocsr()


def assemble_mass(space: FeSpace) -> sp.csr_matrix:
    quad = cell_quadrature(space.mesh, 2 * space.degree)
    phi = space.element.values(quad.xy)
    local = np.einsum("qi,qj,cq->cij", phi, phi, quad.dx)
    dm = space.dof_map
    rows = np.broadcast_to(dm[:, :, None], local.shape)
    cols = np.broadcast_to(dm[:, None, :], local.shape)
    return _to_csr(rows, cols, local, (space.n_dofs, space.n_dofs))


def assemble_div(velocity_space: FeSpace, pressure_space: FeSpace) -> sp.csr_matrix:
    """``B[j, (c, a)] = (q_j, d_c phi_a)``, shape (n_q, 2 n_v)."""
    mesh = velocity_space.mesh
    quad = cell_quadrature(mesh, velocity_space.degree - 1 + pressure_space.degree)
    grads = physical_gradients(velocity_space, quad.xy)
    q = pressure_space.element.values(quad.xy)
    local = np.einsum("qj,cqad,cq->cjda", q, grads, quad.dx)  # (nc, nq_loc, 2, nv_loc)
    n = velocity_space.n_dofs
    rows = np.broadcast_to(pressure_space.dof_map[:, :, None, None], local.shape)
    comp = np.arange(2)[None, None, :, None]
    cols = np.broadcast_to(comp * n + velocity_space.dof_map[:, None, None, :], local.shape)
    return _to_csr(rows, cols, local, (pressure_space.n_dofs, 2 * n))


def pressure_mean_vector(pressure_space: FeSpace) -> np.ndarray:
    """``c_j = (q_j, 1)``: border row enforcing a zero-mean pressure."""
    quad = cell_quadrature(pressure_space.mesh, pressure_space.degree)
    local = quad.dx @ pressure_space.element.values(quad.xy)
    return np.bincount(pressure_space.dof_map.ravel(), weights=local.ravel(), minlength=pressure_space.n_dofs)


def assemble_load(velocity_space: FeSpace, f: Callable, degree: int) -> np.ndarray:
    """``F[(c, a)] = (f_c, phi_a)`` for a vector field ``f``."""
    quad = cell_quadrature(velocity_space.mesh, degree)
    vals = call_field(f, quad.points)  # (nc, nq, 2)
    phi = velocity_space.element.values(quad.xy)
    local = np.einsum("cqd,qa,cq->dca", vals, phi, quad.dx)
    n = velocity_space.n_dofs
    dm = velocity_space.dof_map.ravel()
    return np.concatenate([np.bincount(dm, weights=local[c].ravel(), minlength=n) for c in range(2)])


def assemble_rt_load(sigma_space: FeSpace, f: Callable, degree: int) -> np.ndarray:
    """``f_Sigma[j] = (f, psi_j)`` over the global Raviart–Thomas basis."""
    quad = cell_quadrature(sigma_space.mesh, degree)
    vals = call_field(f, quad.points)
    psi = rt_physical_values(sigma_space, quad.xy)
    local = np.einsum("cqd,cqnd,cq->cn", vals, psi, quad.dx) * sigma_space.dof_signs
    dm = sigma_space.dof_map.ravel()
    keep = dm >= 0
    return np.bincount(dm[keep], weights=local.ravel()[keep], minlength=sigma_space.n_dofs)


def _advection_local(velocity_space: FeSpace, u: DiscreteFunction, quad: CellQuadrature) -> np.ndarray:
    """(u . grad) phi_b at the quadrature points, shape (nc, nq, n_local)."""
    u_vals = u.tabulate(quad.xy, "value")  # (nc, nq, 2)
    grads = physical_gradients(velocity_space, quad.xy)
    return np.einsum("cqd,cqbd->cqb", u_vals, grads)


def assemble_convection(velocity_space: FeSpace, u: DiscreteFunction, test_side: str = "standard",
                        sigma_space: Optional[FeSpace] = None) -> sp.csr_matrix:
    """Picard-linearised convection ``((u . grad) w, v)``.

    ``test_side="standard"`` returns the (2n x 2n) block-diagonal matrix
    tested with the velocity basis; ``test_side="rt"`` returns
    ``N_Sigma[j, (c, b)] = ((u . grad) phi_b, psi_j,c)`` tested with the
    Raviart–Thomas basis of ``sigma_space``.
    """
    n = velocity_space.n_dofs
    du = u.space.degree
    dv = velocity_space.degree
    if test_side == "standard":
        quad = cell_quadrature(velocity_space.mesh, du + dv - 1 + dv)
        adv = _advection_local(velocity_space, u, quad)
        phi = velocity_space.element.values(quad.xy)
        local = np.einsum("qa,cqb,cq->cab", phi, adv, quad.dx)
        dm = velocity_space.dof_map
        rows = np.broadcast_to(dm[:, :, None], local.shape)
        cols = np.broadcast_to(dm[:, None, :], local.shape)
        c = _to_csr(rows, cols, local, (n, n))
        return sp.block_diag([c, c], format="csr")
    if test_side == "rt":
        if sigma_space is None:
            raise ValueError("test_side='rt' needs the Raviart-Thomas space")
        quad = cell_quadrature(velocity_space.mesh, du + dv - 1 + sigma_space.degree)
        adv = _advection_local(velocity_space, u, quad)
        psi = rt_physical_values(sigma_space, quad.xy) * sigma_space.dof_signs[:, None, :, None]
        local = np.einsum("cqjd,cqb,cq->cjdb", psi, adv, quad.dx)
        rows = np.broadcast_to(sigma_space.dof_map[:, :, None, None], local.shape)
        comp = np.arange(2)[None, None, :, None]
        cols = np.broadcast_to(comp * n + velocity_space.dof_map[:, None, None, :], local.shape)
        return _to_csr(rows, cols, local, (sigma_space.n_dofs, 2 * n))
    raise ValueError(f"Unknown test side '{test_side}'. Available: standard, rt")


def reconstructed_convection(velocity_space: FeSpace, u: DiscreteFunction, recon) -> sp.csr_matrix:
    """``((u . grad) w, R_h v)`` as ``N - R^T N_Sigma``."""
    standard = assemble_convection(velocity_space, u, "standard")
    rt = assemble_convection(velocity_space, u, "rt", recon.sigma_space)
    return (standard - recon.R.T @ rt).tocsr()


# ----------------------------------------------------------------------
# Saddle system
# ----------------------------------------------------------------------
@dataclass
class SaddleSystem:
    """Blocks of ``[[A, -B^T, 0], [-B, 0, c], [0, c^T, 0]]`` and its right-hand side."""

    A: sp.csr_matrix
    B: sp.csr_matrix
    mean: np.ndarray
    F: np.ndarray
    velocity_space: FeSpace
    pressure_space: FeSpace
    G: Optional[np.ndarray] = None
    dirichlet_dofs: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    dirichlet_values: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        if self.G is None:
            self.G = np.zeros(self.B.shape[0])

    @property
    def n_velocity(self) -> int:
        return self.A.shape[0]

    @property
    def n_pressure(self) -> int:
        return self.B.shape[0]


def build_saddle_system(velocity_space: FeSpace, pressure_space: FeSpace, A: sp.spmatrix,
                        F: np.ndarray, B: Optional[sp.spmatrix] = None) -> SaddleSystem:
    B = assemble_div(velocity_space, pressure_space) if B is None else B
    return SaddleSystem(
        A=sp.csr_matrix(A),
        B=sp.csr_matrix(B),
        mean=pressure_mean_vector(pressure_space),
        F=np.asarray(F, dtype=float),
        velocity_space=velocity_space,
        pressure_space=pressure_space,
    )


def apply_dirichlet(system: SaddleSystem, g: Callable) -> SaddleSystem:
    """Impose ``u = I_h g`` on boundary velocity DOFs by symmetric elimination.

    Constrained rows and columns of ``A`` are replaced by the identity, the
    corresponding columns of ``B`` are removed and both right-hand sides
    are corrected, so the block structure (and symmetry of ``A``) is kept.
    """
    space = system.velocity_space
    n = space.n_dofs
    bnd = space.boundary_dofs
    dofs = np.concatenate([bnd, n + bnd])
    values = interpolate(space, g, n_components=2).coefficients[dofs]

    lifted = np.zeros(2 * n)
    lifted[dofs] = values
    free = np.ones(2 * n)
    free[dofs] = 0.0
    keep = sp.diags(free)

    A = system.A.tocsr()
    F = system.F - A @ lifted
    F[dofs] = values
    A_c = (keep @ A @ keep + sp.diags(1.0 - free)).tocsr()
    B_c = (system.B @ keep).tocsr()
    G = system.G + system.B @ lifted
    A_c.eliminate_zeros()
    B_c.eliminate_zeros()
    logger.debug("Imposed Dirichlet data on %d velocity DOFs", len(dofs))
    return replace(system, A=A_c, B=B_c, F=F, G=G, dirichlet_dofs=dofs, dirichlet_values=values)


def export_blocks(system: SaddleSystem, directory: str | Path) -> Dict[str, Path]:
    """Write A, B and the mean-constraint vector as Matrix Market files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = {}
    for name, mat in (("A", system.A), ("B", system.B), ("mean", system.mean.reshape(-1, 1))):
        path = directory / f"{name}.mtx"
        mmwrite(str(path), mat)
        out[name] = path
    logger.info("Exported saddle blocks to %s", directory)
    return out
