"""
Command-line experiment runner.

Commands: ``convergence``, ``nu-sweep``, ``gradient-forcing``,
``navier-stokes`` and ``verify``.  Each command returns its tables plus a
list of :class:`~stokes_recon.models.Check`; the exit code is 0 only when
every check passed.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .analysis import (
    ExactSolution,
    check_preset,
    eoc,
    error_h1,
    error_l2,
    error_l2_pressure,
    preset,
    pressure_best_approx_distance,
)
from .assembly import cell_quadrature, export_blocks
from .config_loader import config_hash, get_config, load_config, validate_config
from .mesh import Mesh, build_patches, generate_structured, perturb
from .models import Check, Element, ExperimentConfig
from .paths import prepare_workspace
from .projectors import bubble_project, koszul_decomposition_check, oswald, oswald_tilde
from .quadrature import MAX_TRIANGLE_DEGREE, edge_rule, triangle_rule
from .reconstruction import (
    ReconstructionContext,
    assemble_patch_system,
    build_reconstruction,
    consistency_ratio,
    data_oscillation,
    patch_orthogonality_residual,
    patch_rhs,
    patch_stability_ratio,
    reconstructed_divergence,
    solve_patch,
)
from .report import write_report
from .solver import ConvergenceError, StokesDiscretization, solve_navier_stokes, solve_stokes
from .spaces import DiscreteFunction, barycentric, call_field, interpolate, lagrange_space

logger = logging.getLogger(__name__)

__all__ = ["main", "COMMANDS"]

Tables = Dict[str, Tuple[List[dict], List[str]]]
Outcome = Tuple[Tables, List[Check]]


# ----------------------------------------------------------------------
# Shared helpers
# ----------------------------------------------------------------------
def _mesh(cfg: ExperimentConfig, n: int) -> Mesh:
    mesh = generate_structured(n)
    if cfg.perturb > 0:
        mesh = perturb(mesh, cfg.perturb, cfg.seed + n)
    return mesh


def _h1_norm(exact: ExactSolution, mesh: Mesh, degree: int = 20) -> float:
    quad = cell_quadrature(mesh, degree)
    g = call_field(exact.grad_u, quad.points)
    return float(np.sqrt(np.einsum("cqij,cq->", g**2, quad.dx)))


def _l2_norm_field(f: Callable, mesh: Mesh, degree: int = 20) -> float:
    quad = cell_quadrature(mesh, degree)
    vals = call_field(f, quad.points)
    return float(np.sqrt(np.einsum("cqi,cq->", vals**2, quad.dx)))


def _method(reconstruct: bool) -> str:
    return "modified" if reconstruct else "classical"


def _with_eoc(rows: List[dict], keys: Sequence[str]) -> None:
    """Append ``eoc_<key>`` columns in place (first level gets ``None``)."""
    for key in keys:
        rates = eoc([(r["h"], r[key]) for r in rows]) if len(rows) > 1 else []
        rows[0][f"eoc_{key}"] = None
        for row, rate in zip(rows[1:], rates):
            row[f"eoc_{key}"] = rate


def _ensure_presets(*names: str) -> List[Check]:
    checks = []
    for name in names:
        report = check_preset(preset(name))
        worst = max(report["grad_u"], report["laplace_u"], report["grad_p"])
        checks.append(Check(f"preset {name}: finite-difference consistency", worst, 1e-6))
        checks.append(Check(f"preset {name}: divergence", report["divergence"], 1e-12))
    return checks


def _maybe_export(disc: StokesDiscretization, nu: float, exact: ExactSolution, reconstruct: bool,
                  workspace: Optional[Dict[str, Path]], tag: str) -> None:
    if workspace is None:
        return
    data = exact.with_nu(nu)
    export_blocks(disc.system(nu, data.f, data.u, reconstruct), workspace["tmp_dir"] / tag)


# ----------------------------------------------------------------------
# convergence
# ----------------------------------------------------------------------
def cmd_convergence(cfg: ExperimentConfig, export: Optional[Dict[str, Path]] = None) -> Outcome:
    exact = preset("example1_2d").with_nu(cfg.nu)
    checks = _ensure_presets("example1_2d")
    tol = cfg.tolerances
    tables: Tables = {}
    columns = ["n", "h", "ndof", "err_h1", "eoc_err_h1", "err_l2", "eoc_err_l2", "err_p", "eoc_err_p",
               "dist_p", "div_recon"]

    for element in cfg.element_list:
        rows_by_flag: Dict[bool, List[dict]] = {flag: [] for flag in cfg.reconstruct_flags}
        for n in cfg.levels:
            mesh = _mesh(cfg, n)
            disc = StokesDiscretization(mesh, element, cfg.quad_extra)
            for flag in cfg.reconstruct_flags:
                res = solve_stokes(mesh, element, cfg.nu, exact, reconstruct=flag, discretization=disc)
                rows_by_flag[flag].append({
                    "n": n,
                    "h": mesh.h,
                    "ndof": disc.n_dofs,
                    "err_h1": error_h1(res.u, exact),
                    "err_l2": error_l2(res.u, exact),
                    "err_p": error_l2_pressure(res.p, exact),
                    "dist_p": pressure_best_approx_distance(res.p, exact, element),
                    "div_recon": res.diagnostics.get("reconstructed_divergence"),
                })
                if export is not None:
                    _maybe_export(disc, cfg.nu, exact, flag, export, f"{element.family}{element.order}_n{n}_{_method(flag)}")

        for flag, rows in rows_by_flag.items():
            _with_eoc(rows, ["err_h1", "err_l2", "err_p"])
            tables[f"{element.family}{element.order}_{_method(flag)}"] = (rows, columns)
            if flag and len(rows) >= 2:
                checks.extend(_convergence_checks(element, rows, tol))
    return tables, checks


def _convergence_checks(element: Element, rows: List[dict], tol: Dict[str, float]) -> List[Check]:
    """Final-level orders of the modified method.

    The mini pressure lies in P_k like the velocity, so its error is bounded
    below by the expected order only; it is usually observed near k + 1.
    """
    final = rows[-1]
    k = element.order
    label = f"{element} modified"
    vel_tol = tol["eoc_velocity_mini"] if element.is_mini else tol["eoc_velocity"]
    checks = [
        Check(f"{label}: eoc H1", final["eoc_err_h1"], k + vel_tol, "range", k - vel_tol),
        Check(f"{label}: eoc L2", final["eoc_err_l2"], k + 1 + vel_tol, "range", k + 1 - vel_tol),
    ]
    checks.append(_pressure_rate_check(element, final["eoc_err_p"], tol))
    checks.append(Check(f"{label}: max div R_h u_h", max(r["div_recon"] for r in rows), tol["divergence"]))
    return checks


# ----------------------------------------------------------------------
# nu-sweep
# ----------------------------------------------------------------------
def cmd_nu_sweep(cfg: ExperimentConfig, export: Optional[Dict[str, Path]] = None) -> Outcome:
    base = preset("example1_2d")
    element = cfg.element_list[0]
    tol = cfg.tolerances
    checks = _ensure_presets("example1_2d")
    nus = sorted(cfg.nus)
    rows: List[dict] = []
    columns = ["n", "nu", "method", "err_h1", "err_l2", "err_p"]

    for n in cfg.sweep_levels:
        mesh = _mesh(cfg, n)
        disc = StokesDiscretization(mesh, element, cfg.quad_extra)
        errors: Dict[bool, List[float]] = {}
        for flag in (True, False):
            coeffs = []
            errors[flag] = []
            for nu in nus:
                exact = base.with_nu(nu)
                res = solve_stokes(mesh, element, nu, exact, reconstruct=flag, discretization=disc)
                e1 = error_h1(res.u, exact)
                errors[flag].append(e1)
                coeffs.append(res.u.coefficients)
                rows.append({"n": n, "nu": nu, "method": _method(flag), "err_h1": e1,
                             "err_l2": error_l2(res.u, exact), "err_p": error_l2_pressure(res.p, exact)})
            if flag:
                ref = coeffs[0]
                spread = max(np.linalg.norm(c - ref) for c in coeffs) / max(np.linalg.norm(ref), 1e-300)
                checks.append(Check(f"n={n} {element}: modified velocity invariant in nu", float(spread),
                                    tol["nu_invariance"]))
        if export is not None:
            _maybe_export(disc, nus[0], base, True, export, f"sweep_n{n}")

        small = [i for i, nu in enumerate(nus[:-1]) if nus[i + 1] <= 1e-2 and
                 math.isclose(nus[i + 1] / nu, 10.0, rel_tol=1e-6)]
        if small:
            ratios = [errors[False][i] / errors[False][i + 1] for i in small]
            checks.append(Check(f"n={n}: classical error decade ratio (min)", float(min(ratios)), 12.0, "range", 8.0))
            checks.append(Check(f"n={n}: classical error decade ratio (max)", float(max(ratios)), 12.0, "range", 8.0))
        large = [i for i, nu in enumerate(nus) if nu >= 1.0]
        if large:
            worst = max(errors[True][i] / errors[False][i] for i in large)
            checks.append(Check(f"n={n}: modified/classical error at nu >= 1", float(worst), 3.0))
    return {"nu_sweep": (rows, columns)}, checks


# ----------------------------------------------------------------------
# gradient-forcing
# ----------------------------------------------------------------------
def cmd_gradient_forcing(cfg: ExperimentConfig, export: Optional[Dict[str, Path]] = None) -> Outcome:
    exact = preset("gradient_forcing").with_nu(cfg.nu)
    tol = cfg.tolerances
    checks = _ensure_presets("gradient_forcing")
    tables: Tables = {}
    columns = ["n", "h", "method", "grad_u", "ratio", "err_p", "eoc_err_p"]

    for element in cfg.element_list:
        rows_by_flag: Dict[bool, List[dict]] = {True: [], False: []}
        for n in cfg.sweep_levels:
            mesh = _mesh(cfg, n)
            disc = StokesDiscretization(mesh, element, cfg.quad_extra)
            f_norm = _l2_norm_field(exact.f, mesh)
            for flag in (True, False):
                res = solve_stokes(mesh, element, cfg.nu, exact, reconstruct=flag, discretization=disc)
                grad = disc.gradient_norm(res.u.coefficients)
                rows_by_flag[flag].append({"n": n, "h": mesh.h, "method": _method(flag), "grad_u": grad,
                                           "ratio": grad / f_norm, "err_p": error_l2_pressure(res.p, exact)})
            if export is not None:
                _maybe_export(disc, cfg.nu, exact, True, export, f"gradient_{element.family}{element.order}_n{n}")

        rows = []
        for flag in (True, False):
            _with_eoc(rows_by_flag[flag], ["err_p"])
            rows.extend(rows_by_flag[flag])
        tables[f"{element.family}{element.order}"] = (rows, columns)

        modified = rows_by_flag[True]
        classical = rows_by_flag[False]
        checks.append(Check(f"{element}: modified no-flow ||grad u_h|| / ||f||",
                            max(r["ratio"] for r in modified), tol["no_flow"]))
        gain = min(c["grad_u"] / max(m["grad_u"], 1e-300) for m, c in zip(modified, classical))
        checks.append(Check(f"{element}: classical / modified velocity", float(gain), 1e4, "min"))
        if len(modified) > 1:
            checks.append(_pressure_rate_check(element, modified[-1]["eoc_err_p"], tol))
    return tables, checks


def _pressure_rate_check(element: Element, rate: Optional[float], tol: Dict[str, float]) -> Check:
    k = element.order
    name = f"{element} modified: eoc pressure"
    if element.is_mini:
        return Check(name, rate, k - tol["eoc_pressure_mini"], "min")
    return Check(name, rate, k + tol["eoc_pressure"], "range", k - tol["eoc_pressure"])


# ----------------------------------------------------------------------
# navier-stokes
# ----------------------------------------------------------------------
def cmd_navier_stokes(cfg: ExperimentConfig, export: Optional[Dict[str, Path]] = None) -> Outcome:
    exact = preset("potential_flow").with_nu(cfg.ns_nu)
    tol = cfg.tolerances
    checks = _ensure_presets("potential_flow")
    rows: List[dict] = []
    columns = ["n", "cells", "k", "method", "iterations", "err_h1", "rel_h1", "err_l2", "err_p"]

    for n in cfg.ns_levels:
        mesh = _mesh(cfg, n)
        norm = _h1_norm(exact, mesh)
        for k in cfg.ns_orders:
            element = Element("taylor_hood", k)
            disc = StokesDiscretization(mesh, element, cfg.quad_extra)
            errors: Dict[bool, float] = {}
            for flag in (True, False):
                row = {"n": n, "cells": mesh.n_cells, "k": k, "method": _method(flag)}
                try:
                    res = solve_navier_stokes(mesh, element, cfg.ns_nu, exact, reconstruct=flag,
                                              tol=cfg.picard_tol, max_iter=cfg.picard_max_iter, discretization=disc)
                except ConvergenceError as exc:
                    logger.error("n=%d k=%d %s: %s", n, k, _method(flag), exc)
                    row.update(iterations=None, err_h1=None, rel_h1=None, err_l2=None, err_p=None)
                    checks.append(Check(f"n={n} k={k} {_method(flag)}: Picard converged", float("nan"), 0.0))
                    rows.append(row)
                    continue
                e1 = error_h1(res.u, exact)
                errors[flag] = e1
                row.update(iterations=res.iterations, err_h1=e1, rel_h1=e1 / norm,
                           err_l2=error_l2(res.u, exact), err_p=error_l2_pressure(res.p, exact))
                rows.append(row)
                checks.append(Check(f"n={n} k={k} {_method(flag)}: Picard iterations", res.iterations,
                                    cfg.picard_max_iter))
                if k == 4 and flag:
                    checks.append(Check(f"n={n} k=4 modified: relative H1 error", e1 / norm, tol["navier_stokes"]))
                if k == 4 and not flag:
                    checks.append(Check(f"n={n} k=4 classical: H1 error", e1, 1e-4, "min"))
            if k == 4 and len(errors) == 2:
                gap = errors[False] / max(errors[True], 1e-300)
                checks.append(Check(f"n={n} k=4: classical / modified H1 error", gap, 1e3, "min"))
            if export is not None:
                _maybe_export(disc, cfg.ns_nu, exact, True, export, f"ns_k{k}_n{n}")
    return {"navier_stokes": (rows, columns)}, checks


# ----------------------------------------------------------------------
# verify
# ----------------------------------------------------------------------
def _quadrature_exactness() -> float:
    worst = 0.0
    for degree in range(MAX_TRIANGLE_DEGREE + 1):
        rule = triangle_rule(degree)
        x, y = rule.xy[:, 0], rule.xy[:, 1]
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
                worst = max(worst, abs(rule.weights @ (x**a * y**b) - exact) / exact)
    return worst


def _inner(a: np.ndarray, b: np.ndarray, dx: np.ndarray) -> float:
    return float(np.sum(a * b * dx))


def _normal_jump(sigma: DiscreteFunction) -> float:
    """Largest normal-flux mismatch across interior edges, relative to the largest flux."""
    mesh = sigma.space.mesh
    rule = edge_rule(2 * sigma.space.degree + 2)
    interior = np.flatnonzero(~mesh.boundary_edges)
    worst, scale = 0.0, 0.0
    for e in interior:
        a, b = mesh.vertices[mesh.edges[e]]
        pts = a + rule.t[:, None] * (b - a)
        normal = np.array([(b - a)[1], -(b - a)[0]])
        fluxes = []
        for cell in mesh.edge_cells[e]:
            ref = (pts - mesh.vertices[mesh.cells[cell, 0]]) @ mesh.inverse_jacobians[cell].T
            fluxes.append(sigma.evaluate(int(cell), ref) @ normal)
        worst = max(worst, float(np.abs(fluxes[0] - fluxes[1]).max()))
        scale = max(scale, float(np.abs(fluxes[0]).max()))
    return worst / max(scale, 1e-300)


def _verify_level(cfg: ExperimentConfig, element: Element, n: int, rng: np.random.Generator,
                  tables: Tables) -> List[Check]:
    tol = cfg.tolerances["identity"]
    label = f"{element} n={n}"
    mesh = _mesh(cfg, n)
    disc = StokesDiscretization(mesh, element, cfg.quad_extra)
    recon = build_reconstruction(mesh, disc.velocity_space, element, condition=True)
    disc._reconstruction = recon
    tables[f"patch_diagnostics_{element.family}{element.order}_n{n}"] = (
        recon.diagnostics_table(),
        ["vertex", "cells", "n_sigma", "n_q", "n_w", "size", "condition", "min_pivot"],
    )
    checks: List[Check] = []
    nv = 2 * disc.velocity_space.n_dofs
    q_space = lagrange_space(mesh, element.divergence_order, continuous=False)
    quad = cell_quadrature(mesh, 2 * disc.velocity_space.degree + 2)

    # bubble projector partition of unity and vanishing trace
    trace = 0.0
    q = DiscreteFunction(q_space, rng.standard_normal(q_space.n_dofs))
    total = np.zeros(q_space.n_dofs)
    lam = barycentric(q_space.element.nodes)
    for patch in recon.patches:
        projected = bubble_project(patch, q)
        total += projected.coefficients
        for t, c in enumerate(patch.cells):
            opposite = np.isclose(lam[:, patch.local_index[t]], 0.0)
            trace = max(trace, float(np.abs(projected.coefficients[q_space.dof_map[c]][opposite]).max(initial=0.0)))
    partition = float(np.abs(total - q.coefficients).max() / np.abs(q.coefficients).max())
    checks.append(Check(f"{label}: bubble projectors sum to identity", partition, tol))
    checks.append(Check(f"{label}: bubble projection vanishes opposite V", trace, tol))

    # Oswald operator is the identity on continuous functions
    p_space = disc.pressure_space
    p = rng.standard_normal(p_space.n_dofs)
    p_disc_space = lagrange_space(mesh, element.pressure_order, continuous=False)
    as_disc = np.zeros(p_disc_space.n_dofs)
    as_disc[p_disc_space.dof_map] = p[p_space.dof_map]
    back = oswald(DiscreteFunction(p_disc_space, as_disc), p_space)
    checks.append(Check(f"{label}: Oswald identity", float(np.abs(back.coefficients - p).max() / np.abs(p).max()), tol))

    # RT normal continuity of sigma(w)
    w = rng.standard_normal(nv)
    checks.append(Check(f"{label}: normal continuity of sigma(w)", _normal_jump(recon.sigma(w)), tol))

    # divergence identities: (div R_h w, q) = (div w, S q) and (div sigma(w), q) = (div w, q - S q)
    worst_i, worst_ii = 0.0, 0.0
    for _ in range(cfg.random_samples):
        w = rng.standard_normal(nv)
        qt = DiscreteFunction(q_space, rng.standard_normal(q_space.n_dofs))
        sq = oswald_tilde(qt, element.pressure_order, p_space)
        div_w = DiscreteFunction(disc.velocity_space, w, 2).tabulate(quad.xy, "divergence")
        q_vals = qt.tabulate(quad.xy)
        sq_vals = sq.tabulate(quad.xy)
        div_r = reconstructed_divergence(recon, w).tabulate(quad.xy)
        div_s = recon.sigma(w).tabulate(quad.xy, "divergence")
        scale = math.sqrt(_inner(div_w, div_w, quad.dx) * _inner(q_vals, q_vals, quad.dx))
        worst_i = max(worst_i, abs(_inner(div_r, q_vals, quad.dx) - _inner(div_w, sq_vals, quad.dx)) / scale)
        worst_ii = max(worst_ii, abs(_inner(div_s, q_vals, quad.dx)
                                     - _inner(div_w, q_vals - sq_vals, quad.dx)) / scale)
    checks.append(Check(f"{label}: (div R_h w, q) = (div w, S q)", worst_i, tol))
    checks.append(Check(f"{label}: (div sigma(w), q) = sum of patch right-hand sides", worst_ii, tol))

    # div R_h u_h = 0 for a discretely divergence-free u_h
    res = solve_stokes(mesh, element, cfg.nu, preset("example1_2d").with_nu(cfg.nu), reconstruct=True,
                       discretization=disc)
    div_coeffs = reconstructed_divergence(recon, res.u).coefficients
    grad = disc.gradient_norm(res.u.coefficients)
    checks.append(Check(f"{label}: div R_h u_h = 0", float(np.abs(div_coeffs).max() / grad),
                        cfg.tolerances["divergence"]))

    # local problems: zero input, orthogonality, stability
    ctx = ReconstructionContext(mesh, element, disc.velocity_space)
    sample = rng.choice(len(recon.patches), size=min(len(recon.patches), 12), replace=False)
    zero, ortho, stability = 0.0, 0.0, 0.0
    for idx in sample:
        system = assemble_patch_system(recon.patches[idx], element, ctx)
        zero = max(zero, float(np.abs(solve_patch(system, patch_rhs(system, np.zeros(nv)))).max(initial=0.0)))
        for _ in range(max(1, cfg.random_samples // 4)):
            w = rng.standard_normal(nv)
            sigma = solve_patch(system, patch_rhs(system, w))
            ortho = max(ortho, patch_orthogonality_residual(system, sigma, element.oscillation_order))
            stability = max(stability, patch_stability_ratio(system, w))
    checks.append(Check(f"{label}: zero input gives zero local flux", zero, 0.0))
    checks.append(Check(f"{label}: local flux orthogonal to low-order polynomials", ortho, tol))
    checks.append(Check(f"{label}: local stability ratio finite", stability, 1e6))
    checks.append(Check(f"{label}: sigma(0) = 0", float(np.abs(recon.R @ np.zeros(nv)).max(initial=0.0)), 0.0))
    return checks


def _oscillation_checks(cfg: ExperimentConfig) -> Tuple[List[dict], List[Check]]:
    fields = {
        "sin_x_m0": (lambda x: np.column_stack([np.sin(x[:, 0]), np.zeros(len(x))]), 0, 2),
        "mixed_m1": (lambda x: np.column_stack([np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]),
                                                np.cos(x[:, 0] * x[:, 1])]), 1, 3),
    }
    rows, checks = [], []
    for name, (g, m, expected) in fields.items():
        values = []
        for n in (8, 16):
            mesh = _mesh(cfg, n)
            values.append((mesh.h, data_oscillation(mesh, build_patches(mesh), g, m)))
        rate = eoc(values)[0]
        rows.append({"field": name, "m": m, "osc_8": values[0][1], "osc_16": values[1][1], "eoc_osc": rate})
        r = cfg.tolerances["oscillation_rate"]
        checks.append(Check(f"oscillation rate {name}", rate, expected + r, "range", expected - r))
    return rows, checks


def _consistency_checks(cfg: ExperimentConfig, element: Element) -> Tuple[List[dict], List[Check]]:
    exact = preset("example1_2d")
    g = exact.with_nu(1.0).f
    n0 = cfg.verify_levels[0]
    rows = []
    for n in (max(2, n0 // 2), n0, 2 * n0):
        mesh = _mesh(cfg, n)
        disc = StokesDiscretization(mesh, element, cfg.quad_extra)
        w = interpolate(disc.velocity_space, exact.u, n_components=2)
        rows.append({"element": element.label, "n": n, "ratio": consistency_ratio(disc.reconstruction, g, w)})
    growth = rows[-1]["ratio"] / max(rows[0]["ratio"], 1e-300)
    return rows, [Check(f"{element}: consistency ratio growth over 3 levels", growth, 2.0)]


def _interpolation_monotonicity(cfg: ExperimentConfig) -> Check:
    exact = preset("example1_2d")
    mesh = _mesh(cfg, cfg.verify_levels[0])
    errors = [error_h1(interpolate(lagrange_space(mesh, k), exact.u, n_components=2), exact) for k in range(1, 5)]
    worst = max(b / a for a, b in zip(errors[:-1], errors[1:]))
    return Check("interpolation error decreases with the order", worst, 1.0)


def cmd_verify(cfg: ExperimentConfig, export: Optional[Dict[str, Path]] = None) -> Outcome:
    rng = np.random.default_rng(cfg.seed)
    tables: Tables = {}
    checks = _ensure_presets("example1_2d", "potential_flow", "gradient_forcing")
    checks.append(Check("quadrature exactness up to degree 30", _quadrature_exactness(), cfg.tolerances["identity"]))
    for k in range(2, 7):
        report = koszul_decomposition_check(k, seed=cfg.seed)
        checks.append(Check(f"Koszul decomposition k={k}", 0.0 if report.passed else 1.0, 0.0))
    checks.append(_interpolation_monotonicity(cfg))

    for element in cfg.element_list:
        for n in cfg.verify_levels:
            start = time.perf_counter()
            checks.extend(_verify_level(cfg, element, n, rng, tables))
            logger.info("Verified %s on n=%d in %.1fs", element, n, time.perf_counter() - start)

    osc_rows, osc_checks = _oscillation_checks(cfg)
    tables["oscillation"] = (osc_rows, ["field", "m", "osc_8", "osc_16", "eoc_osc"])
    checks.extend(osc_checks)

    consistency_rows = []
    for element in cfg.element_list:
        rows, more = _consistency_checks(cfg, element)
        consistency_rows.extend(rows)
        checks.extend(more)
    tables["consistency"] = (consistency_rows, ["element", "n", "ratio"])
    return tables, checks


COMMANDS: Dict[str, Callable[..., Outcome]] = {
    "convergence": cmd_convergence,
    "nu-sweep": cmd_nu_sweep,
    "gradient-forcing": cmd_gradient_forcing,
    "navier-stokes": cmd_navier_stokes,
    "verify": cmd_verify,
}


# ----------------------------------------------------------------------
# Entry point
# ----------------------------------------------------------------------
def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stokesrec",
                                description="Pressure-robust Stokes / Navier-Stokes experiments on the unit square.")
    p.add_argument("command", choices=sorted(COMMANDS), help="Experiment to run")
    p.add_argument("--config", "-c", default="default", help="Config name under configs/ or path to a JSON file")
    p.add_argument("--out", "-o", type=Path, default=Path("output"), help="Directory for the report files")
    p.add_argument("--element", action="append",
                   help="Element family with optional order (taylor_hood:3, mini); repeatable")
    p.add_argument("--order", type=int, help="Order for --element values given without one")
    p.add_argument("--levels", help="Comma-separated mesh levels, e.g. 4,8,16")
    p.add_argument("--reconstruct", choices=["on", "off", "both"], help="Run the modified, classical or both methods")
    p.add_argument("--seed", type=int, help="Random seed for verification samples and mesh perturbation")
    p.add_argument("--verbose", "-v", action="store_true", help="Debug logging (per-patch sizes, Picard increments)")
    p.add_argument("--keep-tmp", action="store_true", help="Keep the .sr_tmp scratch directory after the run")
    p.add_argument("--export-matrices", action="store_true", help="Dump saddle blocks as Matrix Market files")
    return p


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    candidate = Path(args.config)
    cfg = load_config(candidate) if candidate.suffix == ".json" or candidate.exists() else get_config(args.config)
    if args.element:
        elements = []
        for text in args.element:
            if ":" not in text and args.order is not None and not any(ch.isdigit() for ch in text):
                text = f"{text}:{args.order}"
            elements.append(Element.parse(text).label)
        cfg.elements = elements
    elif args.order is not None:
        cfg.elements = [Element("taylor_hood", args.order).label]
    if args.levels:
        try:
            levels = [int(v) for v in args.levels.split(",") if v.strip()]
        except ValueError:
            raise ValueError(f"--levels expects comma-separated integers, got {args.levels!r}") from None
        cfg.levels = cfg.sweep_levels = cfg.verify_levels = levels
        cfg.ns_levels = levels
    if args.reconstruct:
        cfg.reconstruct = args.reconstruct
    if args.seed is not None:
        cfg.seed = args.seed
    return validate_config(asdict(cfg))


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one experiment command; returns the process exit code."""
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.getLogger("stokes_recon").setLevel(logging.DEBUG)

    try:
        cfg = _load_config(args)
    except (ValueError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return 2

    workspace = prepare_workspace(args.out, keep_tmp=args.keep_tmp)
    start = time.perf_counter()
    tables, checks = COMMANDS[args.command](cfg, workspace if args.export_matrices else None)
    elapsed = time.perf_counter() - start

    meta = {
        "command": args.command,
        "config": cfg.name or "custom",
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "seconds": f"{elapsed:.1f}",
    }
    write_report(workspace["output_dir"], args.command.replace("-", "_"), tables, meta=meta,
                 tolerances=cfg.tolerances, checks=checks)

    failed = [c for c in checks if not c.passed]
    for c in failed:
        logger.error("FAILED %s: %s (limit %s)", c.name, c.value, c.limit_text)
    logger.info("%s: %d/%d checks passed in %.1fs", args.command, len(checks) - len(failed), len(checks), elapsed)
    return 0 if not failed else 1


if __name__ == "__main__":
    sys.exit(main())
