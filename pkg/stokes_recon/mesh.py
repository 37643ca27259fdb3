"""
Conforming triangulations of planar polygonal domains.

Conventions used by every other module:

* cells are positively oriented vertex triples;
* local edge ``i`` of a cell is the edge opposite local vertex ``i``, i.e.
  local vertex pairs (1, 2), (0, 2), (0, 1), parameterised from the lower to
  the higher local vertex;
* global edges run from the lower to the higher global vertex index and
  ``cell_edge_signs`` is -1 where the local parameterisation is reversed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "Mesh",
    "VertexPatch",
    "MeshFormatError",
    "LOCAL_EDGES",
    "generate_structured",
    "perturb",
    "refine_uniform",
    "import_mesh",
    "export_mesh",
    "read_mesh",
    "write_mesh",
    "build_patches",
]

LOCAL_EDGES = np.array([[1, 2], [0, 2], [0, 1]])


class MeshFormatError(ValueError):
    """Malformed ASCII mesh document; ``line`` is 1-based (0 if not tied to a line)."""

    def __init__(self, message: str, line: int = 0):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


def _readonly(arr: np.ndarray, dtype) -> np.ndarray:
    arr = np.array(arr, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class Mesh:
    """
    Triangular mesh with edge topology and per-cell affine geometry.

    Parameters
    ----------
    vertices : array_like, shape (nv, 2)
    cells : array_like, shape (nc, 3)
        Vertex indices, positively oriented.

    Raises
    ------
    ValueError
        Out-of-range indices, unused vertices, non-positive cell areas or
        edges shared by more than two cells.
    """

    def __init__(self, vertices, cells):
        vertices = np.asarray(vertices, dtype=float)
        cells = np.asarray(cells, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ValueError(f"vertices must have shape (nv, 2), got {vertices.shape}")
        if cells.ndim != 2 or cells.shape[1] != 3 or len(cells) == 0:
            raise ValueError(f"cells must have shape (nc, 3) with nc >= 1, got {cells.shape}")
        nv = len(vertices)
        if cells.min() < 0 or cells.max() >= nv:
            raise ValueError(f"cell vertex indices must lie in [0, {nv - 1}]")
        unused = np.setdiff1d(np.arange(nv), cells.ravel())
        if len(unused):
            raise ValueError(f"vertices not referenced by any cell: {unused[:10].tolist()}")

        self.vertices = _readonly(vertices, float)
        self.cells = _readonly(cells, np.int64)

        areas = self._signed_areas(self.vertices, self.cells)
        bad = np.flatnonzero(areas <= 0.0)
        if len(bad):
            raise ValueError(f"cells with non-positive signed area: {bad[:10].tolist()}")
        self.areas = _readonly(areas, float)

        self._build_topology()
        self._build_geometry()

    # ------------------------------------------------------------------
    @staticmethod
    def _signed_areas(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
        p0, p1, p2 = (vertices[cells[:, i]] for i in range(3))
        d1 = p1 - p0
        d2 = p2 - p0
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def _build_topology(self) -> None:
        nc = len(self.cells)
        pairs = self.cells[:, LOCAL_EDGES]  # (nc, 3, 2)
        lo = pairs.min(axis=2)
        hi = pairs.max(axis=2)
        keys = np.stack([lo.ravel(), hi.ravel()], axis=1)
        edges, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.reshape(nc, 3)
        if counts.max() > 2:
            raise ValueError("non-manifold mesh: an edge is shared by more than two cells")

        edge_cells = -np.ones((len(edges), 2), dtype=np.int64)
        flat_cells = np.repeat(np.arange(nc), 3)
        flat_edges = inverse.ravel()
        order = np.argsort(flat_edges, kind="stable")
        first = np.ones(len(order), dtype=bool)
        first[1:] = flat_edges[order][1:] != flat_edges[order][:-1]
        edge_cells[flat_edges[order][first], 0] = flat_cells[order][first]
        edge_cells[flat_edges[order][~first], 1] = flat_cells[order][~first]

        boundary_edges = counts == 1
        boundary_vertices = np.zeros(len(self.vertices), dtype=bool)
        boundary_vertices[edges[boundary_edges].ravel()] = True

        self.edges = _readonly(edges, np.int64)
        self.cell_edges = _readonly(inverse, np.int64)
        self.cell_edge_signs = _readonly(np.where(pairs[:, :, 0] < pairs[:, :, 1], 1, -1), np.int64)
        self.edge_cells = _readonly(edge_cells, np.int64)
        self.boundary_edges = _readonly(boundary_edges, bool)
        self.boundary_vertices = _readonly(boundary_vertices, bool)

    def _build_geometry(self) -> None:
        p0 = self.vertices[self.cells[:, 0]]
        jac = np.empty((len(self.cells), 2, 2))
        jac[:, :, 0] = self.vertices[self.cells[:, 1]] - p0
        jac[:, :, 1] = self.vertices[self.cells[:, 2]] - p0
        self.jacobians = _readonly(jac, float)
        self.dets = _readonly(2.0 * self.areas, float)
        self.inverse_jacobians = _readonly(np.linalg.inv(jac), float)
        lengths = self.edge_lengths
        self.diameters = _readonly(lengths[self.cell_edges].max(axis=1), float)

    # ------------------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def h(self) -> float:
        """Largest cell diameter."""
        return float(self.diameters.max())

    def shape_regularity(self) -> float:
        """Measured constant ``c`` in ``|T| >= c diam(T)^2`` (minimum over cells)."""
        return float((self.areas / self.diameters**2).min())

    def map_to_physical(self, cell: int, ref_points: np.ndarray) -> np.ndarray:
        """Affine image of reference points (n, 2) in ``cell``."""
        ref_points = np.atleast_2d(ref_points)
        return self.vertices[self.cells[cell, 0]] + ref_points @ self.jacobians[cell].T

    def physical_points(self, ref_points: np.ndarray) -> np.ndarray:
        """Affine images of reference points in every cell, shape (nc, n, 2)."""
        ref_points = np.atleast_2d(ref_points)
        origin = self.vertices[self.cells[:, 0]]
        return origin[:, None, :] + np.einsum("cij,qj->cqi", self.jacobians, ref_points)

    def __repr__(self) -> str:
        return f"Mesh({self.n_vertices} vertices, {self.n_cells} cells, {self.n_edges} edges)"


@dataclass(frozen=True)
class VertexPatch:
    """Cells around one vertex together with the edge split of the patch."""

    vertex: int
    cells: np.ndarray
    local_index: np.ndarray  # position of ``vertex`` inside each patch cell
    boundary_edges: np.ndarray
    interior_edges: np.ndarray
    h: float
    on_boundary: bool

    @property
    def n_cells(self) -> int:
        return len(self.cells)


# ----------------------------------------------------------------------
# Construction
# ----------------------------------------------------------------------
def generate_structured(n: int) -> Mesh:
    """Unit square split into ``n x n`` squares, each cut along one diagonal.

    Diagonals alternate in a checkerboard; the square at the origin is cut
    from (0, 0) to (1, 1) so that for even ``n`` every corner cell has a
    vertex in the interior of the domain.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i = i.ravel()
    j = j.ravel()
    a = j * (n + 1) + i
    b = a + 1
    c = a + n + 2
    d = a + n + 1
    main = (i + j) % 2 == 0
    first = np.where(main[:, None], np.column_stack([a, b, c]), np.column_stack([a, b, d]))
    second = np.where(main[:, None], np.column_stack([a, c, d]), np.column_stack([b, c, d]))
    cells = np.empty((2 * n * n, 3), dtype=np.int64)
    cells[0::2] = first
    cells[1::2] = second
    return Mesh(vertices, cells)


def perturb(mesh: Mesh, amplitude: float, seed: int) -> Mesh:
    """Move interior vertices by up to ``amplitude`` times the local mesh size.

    Boundary vertices stay fixed.  If a cell inverts, the displacement is
    halved and retried, at most ten times.
    """
    if not 0.0 <= amplitude < 0.3:
        raise ValueError(f"perturbation amplitude must lie in [0, 0.3), got {amplitude}")
    if amplitude == 0.0:
        return Mesh(mesh.vertices, mesh.cells)

    rng = np.random.default_rng(seed)
    direction = rng.uniform(-1.0, 1.0, size=mesh.vertices.shape)
    direction[mesh.boundary_vertices] = 0.0

    local_h = np.full(mesh.n_vertices, np.inf)
    lengths = mesh.edge_lengths
    np.minimum.at(local_h, mesh.edges[:, 0], lengths)
    np.minimum.at(local_h, mesh.edges[:, 1], lengths)

    scale = amplitude
    for attempt in range(11):
        moved = mesh.vertices + scale * local_h[:, None] * direction
        if (Mesh._signed_areas(moved, mesh.cells) > 0.0).all():
            if attempt:
                logger.warning("Perturbation amplitude reduced from %g to %g", amplitude, scale)
            return Mesh(moved, mesh.cells)
        scale /= 2.0
    raise ValueError(f"could not perturb mesh without inverting cells (amplitude {amplitude}, seed {seed})")


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: every cell is split into four through its edge midpoints."""
    nv = mesh.n_vertices
    midpoints = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])

    v0, v1, v2 = mesh.cells.T
    m0, m1, m2 = (nv + mesh.cell_edges[:, i] for i in range(3))
    children = np.stack(
        [
            np.column_stack([v0, m2, m1]),
            np.column_stack([m2, v1, m0]),
            np.column_stack([m1, m0, v2]),
            np.column_stack([m0, m1, m2]),
        ],
        axis=1,
    ).reshape(-1, 3)
    return Mesh(vertices, children)


# ----------------------------------------------------------------------
# ASCII format: "nv nc", nv lines "x y", nc lines "i j k" (0-based)
# ----------------------------------------------------------------------
def import_mesh(text: str) -> Mesh:
    """Parse the ASCII mesh format.

    Negatively oriented cells are repaired by swapping their last two
    indices (with a warning); every other defect raises
    :class:`MeshFormatError` naming the offending line.
    """
    lines = [(no, raw.split()) for no, raw in enumerate(text.splitlines(), start=1)]
    lines = [(no, fields) for no, fields in lines if fields and not fields[0].startswith("#")]
    if not lines:
        raise MeshFormatError("empty mesh document")

    header_no, header = lines[0]
    try:
        nv, nc = (int(v) for v in header)
    except ValueError:
        raise MeshFormatError(f"expected header 'nv nc', got {' '.join(header)!r}", header_no) from None
    if nv < 3 or nc < 1:
        raise MeshFormatError(f"invalid counts nv={nv}, nc={nc}", header_no)
    if len(lines) - 1 != nv + nc:
        last = lines[-1][0]
        raise MeshFormatError(f"expected {nv} vertex and {nc} cell lines, found {len(lines) - 1}", last)

    vertices = np.empty((nv, 2))
    for k, (no, fields) in enumerate(lines[1 : nv + 1]):
        if len(fields) != 2:
            raise MeshFormatError(f"vertex line needs 2 coordinates, got {len(fields)}", no)
        try:
            vertices[k] = [float(v) for v in fields]
        except ValueError:
            raise MeshFormatError(f"non-numeric coordinate in {' '.join(fields)!r}", no) from None

    cells = np.empty((nc, 3), dtype=np.int64)
    used = np.zeros(nv, dtype=bool)
    for k, (no, fields) in enumerate(lines[nv + 1 :]):
        if len(fields) != 3:
            raise MeshFormatError(f"cell line needs 3 vertex indices, got {len(fields)}", no)
        try:
            idx = [int(v) for v in fields]
        except ValueError:
            raise MeshFormatError(f"non-integer vertex index in {' '.join(fields)!r}", no) from None
        if min(idx) < 0 or max(idx) >= nv:
            raise MeshFormatError(f"vertex index out of range [0, {nv - 1}]: {idx}", no)
        if len(set(idx)) != 3:
            raise MeshFormatError(f"degenerate cell {idx}", no)
        area = Mesh._signed_areas(vertices, np.array([idx]))[0]
        if area == 0.0:
            raise MeshFormatError(f"cell {idx} has zero area", no)
        if area < 0.0:
            logger.warning("line %d: cell %s is negatively oriented, swapping its last two vertices", no, idx)
            idx[1], idx[2] = idx[2], idx[1]
        cells[k] = idx
        used[idx] = True

    if not used.all():
        dangling = np.flatnonzero(~used)
        first_no = lines[1 + dangling[0]][0]
        raise MeshFormatError(f"dangling vertices not used by any cell: {dangling[:10].tolist()}", first_no)
    return Mesh(vertices, cells)


def export_mesh(mesh: Mesh) -> str:
    """Serialise ``mesh`` to the ASCII format (coordinates round-trip exactly)."""
    out = [f"{mesh.n_vertices} {mesh.n_cells}"]
    out.extend(f"{x!r} {y!r}" for x, y in mesh.vertices.tolist())
    out.extend(f"{i} {j} {k}" for i, j, k in mesh.cells.tolist())
    return "\n".join(out) + "\n"


def read_mesh(path: str | Path) -> Mesh:
    return import_mesh(Path(path).read_text(encoding="utf-8"))


def write_mesh(mesh: Mesh, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(export_mesh(mesh), encoding="utf-8")
    return path


# ----------------------------------------------------------------------
# Vertex patches
# ----------------------------------------------------------------------
def build_patches(mesh: Mesh) -> List[VertexPatch]:
    """One :class:`VertexPatch` per vertex, ordered by vertex index."""
    nc = mesh.n_cells
    flat_vertices = mesh.cells.ravel()
    flat_cells = np.repeat(np.arange(nc), 3)
    flat_local = np.tile(np.arange(3), nc)
    order = np.argsort(flat_vertices, kind="stable")
    bounds = np.searchsorted(flat_vertices[order], np.arange(mesh.n_vertices + 1))

    patches: List[VertexPatch] = []
    for v in range(mesh.n_vertices):
        sel = order[bounds[v] : bounds[v + 1]]
        cells = flat_cells[sel]
        local = flat_local[sel]
        patch_edges, counts = np.unique(mesh.cell_edges[cells].ravel(), return_counts=True)
        patches.append(
            VertexPatch(
                vertex=v,
                cells=_readonly(cells, np.int64),
                local_index=_readonly(local, np.int64),
                boundary_edges=_readonly(patch_edges[counts == 1], np.int64),
                interior_edges=_readonly(patch_edges[counts == 2], np.int64),
                h=float(mesh.diameters[cells].max()),
                on_boundary=bool(mesh.boundary_vertices[v]),
            )
        )
    logger.debug("Built %d vertex patches", len(patches))
    return patches
