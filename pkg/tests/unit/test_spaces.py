"""Test the reference elements, DOF maps and discrete functions."""

import numpy as np
import pytest
from stokes_recon.mesh import LOCAL_EDGES, generate_structured, perturb
from stokes_recon.quadrature import triangle_rule
from stokes_recon.spaces import (
    REFERENCE_VERTICES,
    DiscreteFunction,
    barycentric,
    interpolate,
    lagrange_element,
    lagrange_space,
    mini_element,
    mini_space,
    rt_element,
    rt_space,
)


def _reference_point(mesh, cell, x):
    """Reference coordinates of the physical point ``x`` in ``cell``."""
    origin = mesh.vertices[mesh.cells[cell, 0]]
    return mesh.inverse_jacobians[cell] @ (x - origin)


@pytest.mark.parametrize("k", [1, 2, 3, 4, 6])
def test_lagrange_element_is_nodal(k):
    """Basis function j is one at node j and zero at the others."""
    element = lagrange_element(k)
    assert element.n_local == (k + 1) * (k + 2) // 2
    assert np.allclose(element.values(element.nodes), np.eye(element.n_local), atol=1e-10)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_lagrange_partition_of_unity(k, rng):
    """Basis values sum to one and their gradients to zero."""
    element = lagrange_element(k)
    pts = rng.dirichlet(np.ones(3), size=10)[:, 1:]
    assert np.allclose(element.values(pts).sum(axis=1), 1.0)
    assert np.allclose(element.gradients(pts).sum(axis=1), 0.0, atol=1e-9)


@pytest.mark.parametrize("factory, order", [(lagrange_element, 0), (lagrange_element, 7),
                                            (mini_element, 5), (rt_element, 6), (rt_element, -1)])
def test_element_order_ranges(factory, order):
    """Orders outside the supported range are rejected."""
    with pytest.raises(ValueError):
        factory(order)


def test_mini_element_bubble():
    """The k = 1 bubble peaks at one in the barycenter and vanishes on the boundary."""
    element = mini_element(1)
    assert element.n_local == 4
    assert element.n_bubble == 1
    assert element.degree == 3
    at_vertices = element.values(REFERENCE_VERTICES)
    assert np.allclose(at_vertices[:, :3], np.eye(3))
    assert np.allclose(at_vertices[:, 3], 0.0)
    assert element.values([[1 / 3, 1 / 3]])[0, 3] == pytest.approx(1.0)
    t = np.linspace(0.0, 1.0, 7)
    on_edges = np.vstack([np.column_stack([t, 0 * t]), np.column_stack([0 * t, t]), np.column_stack([t, 1 - t])])
    assert np.allclose(element.values(on_edges)[:, 3], 0.0, atol=1e-12)


def test_mini_element_higher_order_bubbles():
    """For k = 2 the bubble part is 27 l0 l1 l2 times the P1 basis."""
    element = mini_element(2)
    assert element.n_bubble == 3
    pts = np.array([[0.2, 0.3], [0.5, 0.1], [0.25, 0.25]])
    lam = barycentric(pts)
    expected = 27.0 * lam.prod(axis=1)[:, None] * lagrange_element(1).values(pts)
    assert np.allclose(element.values(pts)[:, 6:], expected)


@pytest.mark.parametrize("m", [0, 1, 2, 3])
def test_rt_divergence_theorem_on_reference(m):
    """The mean divergence of each basis function is its lowest edge moment."""
    element = rt_element(m)
    assert element.n_local == (m + 1) * (m + 3)
    rule = triangle_rule(max(m, 1))
    integrals = rule.weights @ element.divergences(rule.xy)
    expected = np.zeros(element.n_local)
    expected[[i * (m + 1) for i in range(3)]] = 1.0
    assert np.allclose(integrals, expected, atol=1e-10)


def test_space_dof_counts(mesh4):
    """DOF counts of the spaces on the 4x4 mesh."""
    nv, ne, nc = mesh4.n_vertices, mesh4.n_edges, mesh4.n_cells
    assert lagrange_space(mesh4, 1).n_dofs == nv
    assert lagrange_space(mesh4, 2).n_dofs == nv + ne
    assert lagrange_space(mesh4, 3).n_dofs == nv + 2 * ne + nc
    assert lagrange_space(mesh4, 2, continuous=False).n_dofs == 6 * nc
    assert mini_space(mesh4).n_dofs == nv + nc
    assert rt_space(mesh4, 0).n_dofs == ne
    assert rt_space(mesh4, 1).n_dofs == 2 * ne + 2 * nc
    constrained = rt_space(mesh4, 0, zero_normal_on=mesh4.boundary_edges)
    assert constrained.n_dofs == ne - 4 * 4
    assert len(constrained.boundary_dofs) == 0


def test_boundary_dofs_lie_on_boundary(mesh4):
    """Boundary DOF coordinates of P3 sit on the unit square boundary."""
    space = lagrange_space(mesh4, 3)
    xy = space.dof_coordinates()[space.boundary_dofs]
    on_side = np.isclose(xy, 0.0) | np.isclose(xy, 1.0)
    assert on_side.any(axis=1).all()
    assert len(space.boundary_dofs) == 4 * 4 * 3


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_lagrange_interpolation_reproduces_polynomials(k):
    """Interpolating a degree-k polynomial is exact everywhere."""
    mesh = perturb(generate_structured(3), 0.2, seed=5)
    space = lagrange_space(mesh, k)

    def field(p):
        return (1.0 + p[:, 0] + 2 * p[:, 1]) ** k

    f = interpolate(space, field)
    ref = np.array([[0.1, 0.7], [0.3, 0.3], [0.6, 0.2]])
    values = f.tabulate(ref)
    assert np.allclose(values, field(mesh.physical_points(ref).reshape(-1, 2)).reshape(values.shape))


def test_continuous_space_is_continuous(mesh4, rng):
    """Random P3 functions agree from both sides of every interior edge."""
    space = lagrange_space(mesh4, 3)
    f = DiscreteFunction(space, rng.standard_normal(space.n_dofs))
    for e in np.flatnonzero(~mesh4.boundary_edges)[:20]:
        a, b = mesh4.vertices[mesh4.edges[e]]
        x = a + 0.3 * (b - a)
        left, right = mesh4.edge_cells[e]
        vl = f.evaluate(left, _reference_point(mesh4, left, x))
        vr = f.evaluate(right, _reference_point(mesh4, right, x))
        assert vl == pytest.approx(vr, abs=1e-10)


@pytest.mark.parametrize("m", [0, 1, 2])
def test_rt_normal_continuity(mesh4, rng, m):
    """Random RT_m functions have a single-valued normal component."""
    space = rt_space(mesh4, m)
    sigma = DiscreteFunction(space, rng.standard_normal(space.n_dofs))
    for e in np.flatnonzero(~mesh4.boundary_edges)[:20]:
        a, b = mesh4.vertices[mesh4.edges[e]]
        tau = b - a
        normal = np.array([tau[1], -tau[0]])
        x = a + 0.7 * tau
        left, right = mesh4.edge_cells[e]
        fl = sigma.evaluate(left, _reference_point(mesh4, left, x)) @ normal
        fr = sigma.evaluate(right, _reference_point(mesh4, right, x)) @ normal
        assert fl == pytest.approx(fr, abs=1e-9)


def test_rt_interpolation_of_position_field():
    """The field x lies in RT_0: its interpolant is exact with divergence 2."""
    mesh = perturb(generate_structured(4), 0.15, seed=2)
    sigma = interpolate(rt_space(mesh, 0), lambda p: p)
    ref = np.array([[0.2, 0.2], [0.5, 0.4]])
    assert np.allclose(sigma.tabulate(ref), mesh.physical_points(ref))
    assert np.allclose(sigma.tabulate(ref, "divergence"), 2.0)


def test_rt_zero_normal_space_has_no_boundary_flux(mesh4, rng):
    """Constrained spaces carry no normal flux through the boundary."""
    space = rt_space(mesh4, 1, zero_normal_on=mesh4.boundary_edges)
    sigma = DiscreteFunction(space, rng.standard_normal(space.n_dofs))
    for e in np.flatnonzero(mesh4.boundary_edges):
        cell = mesh4.edge_cells[e, 0]
        i = int(np.flatnonzero(mesh4.cell_edges[cell] == e)[0])
        a, b = LOCAL_EDGES[i]
        ref = REFERENCE_VERTICES[a] + 0.35 * (REFERENCE_VERTICES[b] - REFERENCE_VERTICES[a])
        va, vb = mesh4.vertices[mesh4.edges[e]]
        tau = vb - va
        value = sigma.evaluate(cell, ref)
        assert value @ np.array([tau[1], -tau[0]]) == pytest.approx(0.0, abs=1e-10)


def test_vector_layout_and_gradients(mesh4):
    """Two-component interpolants store [x | y] and differentiate correctly."""
    space = lagrange_space(mesh4, 2)
    u = interpolate(space, lambda p: np.column_stack([p[:, 0] * p[:, 1], p[:, 1] ** 2]))
    assert u.n_components == 2
    coords = space.dof_coordinates()
    assert np.allclose(u.component(1), coords[:, 1] ** 2)

    ref = np.array([[0.25, 0.25]])
    x = mesh4.physical_points(ref)[:, 0, :]
    grad = u.tabulate(ref, "gradient")[:, 0]
    assert grad.shape == (mesh4.n_cells, 2, 2)
    assert np.allclose(grad[:, 0, 0], x[:, 1])
    assert np.allclose(grad[:, 0, 1], x[:, 0])
    assert np.allclose(grad[:, 1, 1], 2 * x[:, 1])
    assert np.allclose(u.tabulate(ref, "divergence")[:, 0], 3 * x[:, 1])


def test_discrete_function_validation(mesh4):
    """Wrong sizes and unsupported evaluations are rejected."""
    space = lagrange_space(mesh4, 1)
    with pytest.raises(ValueError):
        DiscreteFunction(space, np.zeros(space.n_dofs + 1))
    scalar = DiscreteFunction(space, np.zeros(space.n_dofs))
    with pytest.raises(ValueError):
        scalar.tabulate([[0.2, 0.2]], "divergence")
    with pytest.raises(ValueError):
        scalar.tabulate([[0.2, 0.2]], "curl")
    with pytest.raises(ValueError):
        interpolate(space, lambda p: p, n_components=1)
