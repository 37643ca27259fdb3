"""Test bubble and Oswald projectors, Koszul multipliers and patch projections."""

import numpy as np
import pytest
from stokes_recon.mesh import build_patches, generate_structured, perturb
from stokes_recon.projectors import (
    bubble_project,
    koszul_basis,
    koszul_decomposition_check,
    nodal_average,
    oswald,
    oswald_tilde,
    patch_l2_distance,
    patch_poly_project,
)
from stokes_recon.spaces import DiscreteFunction, barycentric, interpolate, lagrange_space


def _quadratic(p):
    return 1.0 + p[:, 0] - 2.0 * p[:, 1] ** 2 + p[:, 0] * p[:, 1]


@pytest.fixture(scope="module")
def perturbed_mesh():
    return perturb(generate_structured(4), 0.2, seed=11)


def test_bubble_projectors_sum_to_identity(perturbed_mesh, rng):
    """Summing the bubble projections over all vertices gives back q."""
    space = lagrange_space(perturbed_mesh, 2, continuous=False)
    q = DiscreteFunction(space, rng.standard_normal(space.n_dofs))
    total = np.zeros(space.n_dofs)
    for patch in build_patches(perturbed_mesh):
        total += bubble_project(patch, q).coefficients
    assert np.allclose(total, q.coefficients)


def test_bubble_projection_vanishes_off_patch_and_on_opposite_edges(mesh4, rng):
    """The projection lives on the patch and has zero trace on its outer edges."""
    space = lagrange_space(mesh4, 3, continuous=False)
    q = DiscreteFunction(space, rng.standard_normal(space.n_dofs))
    patch = build_patches(mesh4)[12]
    projected = bubble_project(patch, q)

    outside = np.setdiff1d(np.arange(mesh4.n_cells), patch.cells)
    assert np.all(projected.coefficients[space.dof_map[outside]] == 0.0)
    lam = barycentric(space.element.nodes)
    for cell, local in zip(patch.cells, patch.local_index):
        opposite = np.isclose(lam[:, local], 0.0)
        assert np.all(projected.coefficients[space.dof_map[cell, opposite]] == 0.0)


def test_bubble_projection_needs_discontinuous_input(mesh4):
    """Continuous functions are rejected."""
    space = lagrange_space(mesh4, 2)
    with pytest.raises(ValueError):
        bubble_project(build_patches(mesh4)[0], DiscreteFunction(space, np.zeros(space.n_dofs)))


def test_oswald_is_identity_on_continuous_functions(perturbed_mesh):
    """Averaging the values of a continuous function changes nothing."""
    continuous = lagrange_space(perturbed_mesh, 2)
    broken = lagrange_space(perturbed_mesh, 2, continuous=False)
    q = interpolate(broken, _quadratic)
    averaged = oswald(q, continuous)
    assert np.allclose(averaged.coefficients, interpolate(continuous, _quadratic).coefficients)


def test_oswald_tilde_lowers_the_order(mesh4):
    """A linear function stored in discontinuous P3 maps to its P1 interpolant."""
    broken = lagrange_space(mesh4, 3, continuous=False)

    def linear(p):
        return 2.0 - p[:, 0] + 3.0 * p[:, 1]

    result = oswald_tilde(interpolate(broken, linear), 1)
    assert result.space.order == 1
    assert np.allclose(result.coefficients, interpolate(lagrange_space(mesh4, 1), linear).coefficients)
    with pytest.raises(ValueError):
        oswald_tilde(interpolate(broken, linear), 4)


def test_oswald_argument_checks(mesh4):
    """Order changes go through oswald_tilde; targets must be continuous."""
    broken = lagrange_space(mesh4, 2, continuous=False)
    q = DiscreteFunction(broken, np.ones(broken.n_dofs))
    with pytest.raises(ValueError):
        oswald(q, lagrange_space(mesh4, 1))
    with pytest.raises(ValueError):
        nodal_average(q, broken)


@pytest.mark.parametrize("k, dim", [(2, 0), (3, 1), (4, 3), (5, 6)])
def test_koszul_basis_dimension(mesh4, k, dim):
    """kappa(Pi^{k-3}) has dimension (k-2)(k-1)/2."""
    patch = build_patches(mesh4)[12]
    basis = koszul_basis(patch, k, mesh4)
    assert basis.dimension == dim
    assert basis.evaluate(np.array([[0.3, 0.4]])).shape == (1, dim, 2)


def test_koszul_fields_are_tangential(mesh4, rng):
    """Koszul fields are orthogonal to the position relative to the vertex."""
    patch = build_patches(mesh4)[12]
    basis = koszul_basis(patch, 4, mesh4)
    pts = rng.uniform(0.0, 1.0, size=(6, 2))
    values = basis.evaluate(pts)
    rel = pts - basis.center
    assert np.allclose(np.einsum("nkd,nd->nk", values, rel), 0.0)
    with pytest.raises(ValueError):
        koszul_basis(patch, 1, mesh4)


@pytest.mark.parametrize("k", [2, 3, 4, 5, 6])
def test_koszul_decomposition(k):
    """Gradients and Koszul fields together span [Pi^{k-2}]^2."""
    report = koszul_decomposition_check(k)
    assert report.passed
    assert report.dim_full == k * (k - 1)
    assert report.as_dict()["rank"] == report.dim_full


def test_koszul_decomposition_order_range():
    """Orders outside 2..6 are rejected."""
    with pytest.raises(ValueError):
        koszul_decomposition_check(7)


def test_patch_projection_reproduces_polynomials(perturbed_mesh):
    """Projecting a quadratic onto Pi^2 of a patch is exact."""
    patch = build_patches(perturbed_mesh)[7]
    poly = patch_poly_project(patch, perturbed_mesh, _quadratic, 2)
    pts = perturbed_mesh.vertices[perturbed_mesh.cells[patch.cells[0]]]
    assert np.allclose(poly.evaluate(pts), _quadratic(pts))
    assert patch_l2_distance(patch, perturbed_mesh, _quadratic, 2) < 1e-12


def test_patch_projection_of_discrete_function(mesh4):
    """Discrete inputs are tabulated on the patch cells."""
    patch = build_patches(mesh4)[6]
    q = interpolate(lagrange_space(mesh4, 2, continuous=False), _quadratic)
    assert patch_l2_distance(patch, mesh4, q, 2) < 1e-12
    assert patch_l2_distance(patch, mesh4, q, 1) > 1e-4


def test_patch_projection_vector_field(mesh4):
    """Vector fields are projected componentwise."""
    patch = build_patches(mesh4)[12]
    poly = patch_poly_project(patch, mesh4, lambda p: np.column_stack([p[:, 0], p[:, 1] ** 2]), 2)
    value = poly.evaluate(np.array([[0.5, 0.25]]))
    assert np.allclose(value, [[0.5, 0.0625]])
    with pytest.raises(ValueError):
        patch_poly_project(patch, mesh4, _quadratic, -1)
