"""
Direct solvers for the discrete Stokes and steady Navier–Stokes problems.

The bordered saddle matrix

    [[ A, -B^T, 0],
     [-B,  0,   c],
     [ 0,  c^T, 0]]

is factorised with ``scipy.sparse.linalg.splu``; the extra row pins the
pressure mean to zero.  With ``reconstruct=True`` the load and the
convection term are tested with ``R_h v`` instead of ``v``.
"""
from __future__ import annotations

import logging
import time
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import (
    SaddleSystem,
    apply_dirichlet,
    assemble_convection,
    assemble_div,
    assemble_load,
    build_saddle_system,
    cell_quadrature,
    pressure_mean_vector,
    reconstructed_convection,
    scalar_stiffness,
)
from .mesh import Mesh
from .models import Element, NavierStokesResult, StokesResult
from .quadrature import MAX_TRIANGLE_DEGREE
from .reconstruction import ReconstructionMap, build_reconstruction, reconstructed_load
from .spaces import DiscreteFunction, lagrange_space, mini_space

logger = logging.getLogger(__name__)

__all__ = [
    "SolverError",
    "ConvergenceError",
    "StokesDiscretization",
    "solve_saddle",
    "solve_stokes",
    "solve_navier_stokes",
    "RESIDUAL_TOL",
]

RESIDUAL_TOL = 1e-12
MIN_DAMPING = 1.0 / 64.0


class SolverError(RuntimeError):
    """Factorisation breakdown or non-finite solution."""

    def __init__(self, message: str, residuals: Optional[List[float]] = None):
        self.residuals = list(residuals or [])
        super().__init__(message)


class ConvergenceError(SolverError):
    """Picard iteration did not meet its tolerance; ``residuals`` holds the increments."""


def _bordered_matrix(system: SaddleSystem) -> sp.csc_matrix:
    c = sp.csr_matrix(system.mean.reshape(-1, 1))
    return sp.bmat(
        [
            [system.A, -system.B.T, None],
            [-system.B, None, c],
            [None, c.T, None],
        ],
        format="csc",
    )


def solve_saddle(system: SaddleSystem,
                 residual_tol: float = RESIDUAL_TOL) -> Tuple[DiscreteFunction, DiscreteFunction, Dict[str, float]]:
    """Solve the bordered system by sparse LU plus one refinement step.

    Returns the velocity, the zero-mean pressure and ``{"residual": ...}``
    (relative algebraic residual after refinement).  A residual above
    ``residual_tol`` is logged as a warning; it does not raise.

    Raises
    ------
    SolverError
        If the factorisation fails or the solution is not finite.
    """
    K = _bordered_matrix(system)
    rhs = np.concatenate([system.F, system.G, [0.0]])
    try:
        lu = splu(K)
    except RuntimeError as exc:
        raise SolverError(f"sparse LU failed on a {K.shape[0]}x{K.shape[0]} saddle matrix: {exc}") from exc

    x = lu.solve(rhs)
    scale = max(np.linalg.norm(rhs), np.finfo(float).tiny)
    residuals = [float(np.linalg.norm(rhs - K @ x) / scale)]
    x = x + lu.solve(rhs - K @ x)
    residuals.append(float(np.linalg.norm(rhs - K @ x) / scale))
    if not np.all(np.isfinite(x)):
        raise SolverError("saddle solve produced non-finite values", residuals)
    if residuals[-1] > residual_tol:
        logger.warning("Relative residual %.3e above %.0e after refinement", residuals[-1], residual_tol)

    nv, npr = system.n_velocity, system.n_pressure
    u = DiscreteFunction(system.velocity_space, x[:nv], 2)
    p = DiscreteFunction(system.pressure_space, x[nv : nv + npr])
    return u, p, {"residual": residuals[-1], "residual_initial": residuals[0]}


class StokesDiscretization:
    """
    Spaces and ν-independent operators of one (mesh, element) pair.

    The unit stiffness, the divergence block and the reconstruction map are
    built once and reused across viscosities and Picard iterations.
    """

    def __init__(self, mesh: Mesh, element: Element, quad_extra: int = 10):
        self.mesh = mesh
        self.element = element
        self.quad_extra = quad_extra
        if element.is_mini:
            self.velocity_space = mini_space(mesh, element.order)
        else:
            self.velocity_space = lagrange_space(mesh, element.order, continuous=True)
        self.pressure_space = lagrange_space(mesh, element.pressure_order, continuous=True)
        stiffness = scalar_stiffness(self.velocity_space)
        self.stiffness = sp.block_diag([stiffness, stiffness], format="csr")
        self.B = assemble_div(self.velocity_space, self.pressure_space)
        self.mean = pressure_mean_vector(self.pressure_space)
        self._reconstruction: Optional[ReconstructionMap] = None

    @property
    def n_dofs(self) -> int:
        return 2 * self.velocity_space.n_dofs + self.pressure_space.n_dofs

    @property
    def load_degree(self) -> int:
        return min(2 * self.element.order + self.quad_extra, MAX_TRIANGLE_DEGREE)

    @property
    def reconstruction(self) -> ReconstructionMap:
        if self._reconstruction is None:
            self._reconstruction = build_reconstruction(self.mesh, self.velocity_space, self.element)
        return self._reconstruction

    def load(self, f: Callable, reconstruct: bool) -> np.ndarray:
        if reconstruct:
            return reconstructed_load(self.reconstruction, f, self.load_degree)
        return assemble_load(self.velocity_space, f, self.load_degree)

    def system(self, nu: float, f: Callable, g: Callable, reconstruct: bool,
               extra: Optional[sp.spmatrix] = None) -> SaddleSystem:
        if nu <= 0:
            raise ValueError(f"viscosity must be positive, got {nu}")
        A = nu * self.stiffness
        if extra is not None:
            A = A + extra
        system = build_saddle_system(self.velocity_space, self.pressure_space, A, self.load(f, reconstruct), self.B)
        return apply_dirichlet(system, g)

    def gradient_norm(self, coefficients: np.ndarray) -> float:
        return float(np.sqrt(max(coefficients @ (self.stiffness @ coefficients), 0.0)))


def _divergence_diagnostics(disc: StokesDiscretization, u: DiscreteFunction, reconstruct: bool) -> Dict[str, float]:
    out = {"discrete_divergence": float(np.abs(disc.B @ u.coefficients).max(initial=0.0))}
    if reconstruct:
        recon = disc.reconstruction
        quad = cell_quadrature(disc.mesh, 2 * disc.velocity_space.degree)
        div = recon.tabulate(u.coefficients, quad.xy, "divergence")
        scale = max(disc.gradient_norm(u.coefficients), np.finfo(float).tiny)
        out["reconstructed_divergence"] = float(np.abs(div).max() / scale)
    return out


def solve_stokes(mesh: Mesh, element: Element, nu: float, exact, reconstruct: bool = True,
                 discretization: Optional[StokesDiscretization] = None) -> StokesResult:
    """Stokes solve with Dirichlet data ``exact.u`` and forcing ``exact.with_nu(nu).f``."""
    start = time.perf_counter()
    disc = discretization or StokesDiscretization(mesh, element)
    if disc.mesh is not mesh or disc.element != element:
        raise ValueError("discretization was built for a different mesh or element")
    data = exact.with_nu(nu)
    system = disc.system(nu, data.f, data.u, reconstruct)
    u, p, info = solve_saddle(system)
    diagnostics = {
        "nu": nu,
        "reconstruct": reconstruct,
        "n_dofs": disc.n_dofs,
        "pressure_mean": float(disc.mean @ p.coefficients),
        **info,
        **_divergence_diagnostics(disc, u, reconstruct),
        "seconds": time.perf_counter() - start,
    }
    logger.info("Stokes %s (%s, nu=%g, recon=%s): %d DOFs, residual %.2e", exact.name, element, nu,
                reconstruct, disc.n_dofs, info["residual"])
    return StokesResult(u=u, p=p, diagnostics=diagnostics)


def solve_navier_stokes(mesh: Mesh, element: Element, nu: float, exact, reconstruct: bool = True,
                        tol: float = 1e-11, max_iter: int = 50,
                        discretization: Optional[StokesDiscretization] = None) -> NavierStokesResult:
    """Picard iteration started from the Stokes solution.

    Stops once ``||grad(u_new - u)|| <= tol * max(1, ||grad u_new||)``.
    The step is halved (down to 1/64) whenever the increment grows.

    Raises
    ------
    ConvergenceError
        After ``max_iter`` iterations without meeting the tolerance.
    """
    start = time.perf_counter()
    disc = discretization or StokesDiscretization(mesh, element)
    data = exact.with_nu(nu)
    forcing = data.f_navier_stokes

    u, p, _ = solve_saddle(disc.system(nu, forcing, data.u, reconstruct))
    damping = 1.0
    increments: List[float] = []
    for iteration in range(1, max_iter + 1):
        if reconstruct:
            N = reconstructed_convection(disc.velocity_space, u, disc.reconstruction)
        else:
            N = assemble_convection(disc.velocity_space, u, "standard")
        u_new, p_new, info = solve_saddle(disc.system(nu, forcing, data.u, reconstruct, extra=N))

        step = u_new.coefficients - u.coefficients
        coeffs = u.coefficients + damping * step
        increment = disc.gradient_norm(damping * step)
        if increments and increment > increments[-1] and damping > MIN_DAMPING:
            damping = max(damping / 2.0, MIN_DAMPING)
            logger.debug("Picard increment grew; damping now %g", damping)
        increments.append(increment)
        u = DiscreteFunction(disc.velocity_space, coeffs, 2)
        p = DiscreteFunction(disc.pressure_space, p.coefficients + damping * (p_new.coefficients - p.coefficients))
        logger.debug("Picard %d: increment %.3e", iteration, increment)

        if increment <= tol * max(1.0, disc.gradient_norm(coeffs)):
            diagnostics = {
                "nu": nu,
                "reconstruct": reconstruct,
                "n_dofs": disc.n_dofs,
                "tol": tol,
                "damping": damping,
                "residual": info["residual"],
                **_divergence_diagnostics(disc, u, reconstruct),
                "seconds": time.perf_counter() - start,
            }
            logger.info("Navier-Stokes %s (%s, recon=%s) converged in %d iterations", exact.name, element,
                        reconstruct, iteration)
            return NavierStokesResult(u=u, p=p, iterations=iteration, increments=increments,
                                      converged=True, diagnostics=diagnostics)

    raise ConvergenceError(
        f"Picard iteration did not converge in {max_iter} iterations (last increment {increments[-1]:.3e})",
        increments,
    )
