"""Test mesh construction, topology, the ASCII format and vertex patches."""

import numpy as np
import pytest
from stokes_recon.mesh import (
    LOCAL_EDGES,
    Mesh,
    MeshFormatError,
    build_patches,
    export_mesh,
    generate_structured,
    import_mesh,
    perturb,
    read_mesh,
    refine_uniform,
    write_mesh,
)

SINGLE_TRIANGLE = "3 1\n0 0\n1 0\n0 1\n0 1 2\n"


@pytest.mark.parametrize("n", [1, 2, 4, 7])
def test_structured_counts(n):
    """n x n squares give 2n^2 cells, (n+1)^2 vertices and 3n^2 + 2n edges."""
    mesh = generate_structured(n)
    assert mesh.n_cells == 2 * n * n
    assert mesh.n_vertices == (n + 1) ** 2
    assert mesh.n_edges == 3 * n * n + 2 * n
    assert mesh.boundary_edges.sum() == 4 * n
    assert mesh.boundary_vertices.sum() == 4 * n
    # Euler characteristic of a disc
    assert mesh.n_vertices - mesh.n_edges + mesh.n_cells == 1


def test_structured_geometry(mesh4):
    """Cells are positively oriented and tile the unit square."""
    assert np.all(mesh4.areas > 0.0)
    assert mesh4.areas.sum() == pytest.approx(1.0)
    assert mesh4.h == pytest.approx(np.sqrt(2.0) / 4)
    assert mesh4.shape_regularity() == pytest.approx(0.25)
    assert np.allclose(mesh4.dets, 2.0 * mesh4.areas)


def test_structured_rejects_bad_size():
    """A non-positive subdivision count is an error."""
    with pytest.raises(ValueError):
        generate_structured(0)


def test_edge_topology_consistent(mesh4):
    """cell_edges, their signs and edge_cells agree with the cell vertex lists."""
    for c in range(mesh4.n_cells):
        for i, (a, b) in enumerate(LOCAL_EDGES):
            e = mesh4.cell_edges[c, i]
            va, vb = mesh4.cells[c, a], mesh4.cells[c, b]
            assert set(mesh4.edges[e].tolist()) == {va, vb}
            assert mesh4.cell_edge_signs[c, i] == (1 if va < vb else -1)
            assert c in mesh4.edge_cells[e]
    boundary = mesh4.boundary_edges
    assert np.all(mesh4.edge_cells[boundary, 1] == -1)
    assert np.all(mesh4.edge_cells[~boundary] >= 0)


def test_mesh_arrays_are_read_only(mesh4):
    """The mesh is immutable after construction."""
    with pytest.raises(ValueError):
        mesh4.vertices[0, 0] = 0.5


def test_mesh_rejects_inverted_cell():
    """A clockwise cell is rejected by the constructor."""
    with pytest.raises(ValueError, match="non-positive"):
        Mesh([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])


def test_mesh_rejects_unused_vertex():
    """Every vertex must belong to some cell."""
    with pytest.raises(ValueError, match="not referenced"):
        Mesh([[0, 0], [1, 0], [0, 1], [1, 1]], [[0, 1, 2]])


def test_physical_points_match_map_to_physical(mesh4):
    """The vectorised affine map agrees with the per-cell one."""
    ref = np.array([[0.2, 0.3], [1.0, 0.0]])
    pts = mesh4.physical_points(ref)
    for c in (0, 5, 31):
        assert np.allclose(pts[c], mesh4.map_to_physical(c, ref))
    assert np.allclose(mesh4.map_to_physical(3, [[0.0, 0.0]])[0], mesh4.vertices[mesh4.cells[3, 0]])


def test_refine_uniform():
    """Red refinement quadruples the cells and halves the mesh size."""
    coarse = generate_structured(2)
    fine = refine_uniform(coarse)
    assert fine.n_cells == 4 * coarse.n_cells
    assert fine.areas.sum() == pytest.approx(1.0)
    assert fine.h == pytest.approx(coarse.h / 2)
    assert np.all(fine.areas > 0.0)


def test_perturb_keeps_boundary_and_orientation(mesh8):
    """Interior vertices move, boundary vertices stay, no cell inverts."""
    moved = perturb(mesh8, 0.2, seed=3)
    bnd = mesh8.boundary_vertices
    assert np.array_equal(moved.vertices[bnd], mesh8.vertices[bnd])
    assert not np.allclose(moved.vertices[~bnd], mesh8.vertices[~bnd])
    assert np.all(moved.areas > 0.0)
    assert moved.areas.sum() == pytest.approx(1.0)


def test_perturb_is_reproducible(mesh4):
    """The same seed gives the same mesh."""
    a = perturb(mesh4, 0.1, seed=7)
    b = perturb(mesh4, 0.1, seed=7)
    assert np.array_equal(a.vertices, b.vertices)


@pytest.mark.parametrize("amplitude", [-0.1, 0.3, 1.0])
def test_perturb_rejects_amplitude(mesh4, amplitude):
    """Amplitudes outside [0, 0.3) are rejected."""
    with pytest.raises(ValueError):
        perturb(mesh4, amplitude, seed=0)


def test_export_import_round_trip(tmp_path):
    """Exported coordinates and connectivity survive a file round trip."""
    mesh = perturb(generate_structured(3), 0.15, seed=1)
    path = write_mesh(mesh, tmp_path / "mesh.txt")
    again = read_mesh(path)
    assert np.array_equal(again.vertices, mesh.vertices)
    assert np.array_equal(again.cells, mesh.cells)
    assert export_mesh(again) == export_mesh(mesh)


def test_import_skips_comments():
    """Comment and blank lines are ignored."""
    mesh = import_mesh("# one cell\n\n" + SINGLE_TRIANGLE)
    assert mesh.n_cells == 1
    assert mesh.areas[0] == pytest.approx(0.5)


def test_import_repairs_orientation(caplog):
    """A clockwise cell is flipped with a warning."""
    mesh = import_mesh("3 1\n0 0\n1 0\n0 1\n0 2 1\n")
    assert mesh.cells.tolist() == [[0, 1, 2]]
    assert "negatively oriented" in caplog.text


@pytest.mark.parametrize(
    "text, line",
    [
        ("three 1\n", 1),
        ("3 1\n0 0\n1 0\n0 one\n0 1 2\n", 4),
        ("3 1\n0 0\n1 0\n0 1\n0 1 3\n", 5),
        ("3 1\n0 0\n1 0\n0 1\n0 1 1\n", 5),
        ("3 1\n0 0\n1 0\n2 0\n0 1 2\n", 5),
        ("3 1\n0 0\n1 0\n0 1\n", 4),
        ("4 1\n0 0\n1 0\n0 1\n5 5\n0 1 2\n", 5),
    ],
)
def test_import_errors_name_the_line(text, line):
    """Malformed documents raise MeshFormatError with the offending line."""
    with pytest.raises(MeshFormatError) as info:
        import_mesh(text)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_import_empty_document():
    """An empty document has no line to blame."""
    with pytest.raises(MeshFormatError) as info:
        import_mesh("\n# nothing\n")
    assert info.value.line == 0


def test_center_patch_of_two_by_two_mesh():
    """The center of the 2x2 checkerboard mesh touches all eight cells."""
    mesh = generate_structured(2)
    patches = build_patches(mesh)
    center = patches[4]
    assert center.vertex == 4
    assert center.n_cells == 8
    assert not center.on_boundary
    assert len(center.interior_edges) == 8
    assert len(center.boundary_edges) == 8
    assert np.all(mesh.cells[center.cells, center.local_index] == 4)


def test_corner_patch():
    """The origin's patch is the two cells of its square."""
    mesh = generate_structured(2)
    corner = build_patches(mesh)[0]
    assert corner.on_boundary
    assert corner.n_cells == 2
    assert len(corner.interior_edges) == 1
    assert len(corner.boundary_edges) == 4


def test_patches_cover_every_cell_three_times(mesh4):
    """Each cell belongs to exactly the patches of its three vertices."""
    patches = build_patches(mesh4)
    assert len(patches) == mesh4.n_vertices
    counts = np.zeros(mesh4.n_cells, dtype=int)
    for patch in patches:
        counts[patch.cells] += 1
        assert patch.h <= mesh4.h
    assert np.all(counts == 3)


def _invariant_meshes():
    return [
        generate_structured(2),
        generate_structured(6),
        perturb(generate_structured(4), 0.15, seed=3),
        refine_uniform(generate_structured(2)),
        refine_uniform(perturb(generate_structured(4), 0.15, seed=8)),
    ]


@pytest.mark.parametrize("mesh", _invariant_meshes(), ids=["n2", "n6", "perturbed", "refined", "refined_perturbed"])
def test_patch_invariants(mesh):
    """Patches are edge-connected and every cell lies in the patch of an interior vertex."""
    boundary_vertices = np.unique(mesh.edges[mesh.boundary_edges])
    interior = np.setdiff1d(np.arange(mesh.n_vertices), boundary_vertices)
    assert np.all(np.isin(mesh.cells, interior).any(axis=1))

    covered = np.zeros(mesh.n_cells, dtype=bool)
    for patch in build_patches(mesh):
        cells = set(patch.cells.tolist())
        reached = {int(patch.cells[0])}
        frontier = [int(patch.cells[0])]
        while frontier:
            cell = frontier.pop()
            for e in patch.interior_edges:
                pair = [int(c) for c in mesh.edge_cells[e]]
                if cell in pair:
                    other = pair[1] if pair[0] == cell else pair[0]
                    assert other in cells
                    if other not in reached:
                        reached.add(other)
                        frontier.append(other)
        assert reached == cells, f"patch of vertex {patch.vertex} is not edge-connected"
        if not patch.on_boundary:
            covered[patch.cells] = True
    assert covered.all()
