"""
Reference configuration: tetrahedral mesh, Lagrange spaces and quadrature.

Everything in the solver lives on the fixed reference domain, so the mesh is
loaded once and then shared read-only.  Cells carry a region tag (fluid or
solid) and boundary facets carry one of four labels:

``gamma_in``   Dirichlet inflow / wall boundary of the fluid
``gamma_out``  natural outflow boundary of the fluid
``gamma_c``    fluid-solid interface (interior facets)
``gamma_2``    clamped boundary of the structure
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi, roots_legendre

__all__ = [
    "FLUID",
    "SOLID",
    "REGION_NAMES",
    "FACET_LABELS",
    "MeshError",
    "ReferenceMesh",
    "QuadratureRule",
    "FunctionSpace",
    "PressureSpace",
    "tet_quadrature",
    "triangle_quadrature",
    "load_mesh",
    "parse_mesh",
    "write_mesh",
    "build_space",
    "build_pressure_space",
    "two_cube_mesh",
]

FLUID = 0
SOLID = 1
REGION_NAMES = ("fluid", "solid")
FACET_LABELS = ("gamma_in", "gamma_out", "gamma_c", "gamma_2")
GAMMA_IN, GAMMA_OUT, GAMMA_C, GAMMA_2 = range(4)

# local edge numbering of a tetrahedron, shared by every P2 routine
TET_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
TET_FACES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))


class MeshError(ValueError):
    """Raised for unparsable mesh files and violated mesh invariants."""


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature on the reference simplex.

    ``points`` are barycentric coordinates (Q, dim+1); ``weights`` sum to the
    reference volume (1/6 for the tetrahedron, 1/2 for the triangle).
    """

    points: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def npoints(self) -> int:
        return len(self.weights)


def _jacobi01(n, alpha):
    # Gauss-Jacobi nodes on [0, 1] for the weight (1 - s)**alpha
    x, w = roots_jacobi(n, alpha, 0.0)
    return (1.0 + x) / 2.0, w / 2.0 ** (alpha + 1)


def tet_quadrature(order: int) -> QuadratureRule:
    """Collapsed-coordinate (conical product) rule exact to total degree ``order``."""
    if order < 0:
        raise ValueError("quadrature order must be non-negative")
    n = order // 2 + 1
    s1, w1 = _jacobi01(n, 2.0)
    s2, w2 = _jacobi01(n, 1.0)
    s3, w3 = roots_legendre(n)
    s3, w3 = (1.0 + s3) / 2.0, w3 / 2.0
    a, b, c = np.meshgrid(s1, s2, s3, indexing="ij")
    wa, wb, wc = np.meshgrid(w1, w2, w3, indexing="ij")
    x = a.ravel()
    y = (b * (1.0 - a)).ravel()
    z = (c * (1.0 - a) * (1.0 - b)).ravel()
    w = (wa * wb * wc).ravel()
    bary = np.column_stack([1.0 - x - y - z, x, y, z])
    return QuadratureRule(bary, w, order)


def triangle_quadrature(order: int) -> QuadratureRule:
    n = order // 2 + 1
    s1, w1 = _jacobi01(n, 1.0)
    s2, w2 = roots_legendre(n)
    s2, w2 = (1.0 + s2) / 2.0, w2 / 2.0
    a, b = np.meshgrid(s1, s2, indexing="ij")
    wa, wb = np.meshgrid(w1, w2, indexing="ij")
    x = a.ravel()
    y = (b * (1.0 - a)).ravel()
    bary = np.column_stack([1.0 - x - y, x, y])
    return QuadratureRule(bary, (wa * wb).ravel(), order)


# ---------------------------------------------------------------------------
# mesh


@dataclass(frozen=True, eq=False)
class ReferenceMesh:
    vertices: np.ndarray
    cells: np.ndarray
    cell_region: np.ndarray
    facets: np.ndarray
    facet_label: np.ndarray
    # False skips the region and labeling invariants (building blocks, spaces on bare cells)
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        for name, dtype in (("vertices", float), ("cells", np.int64),
                            ("cell_region", np.int8), ("facets", np.int64),
                            ("facet_label", np.int8)):
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.validate:
            _validate(self)

    @property
    def ncells(self) -> int:
        return len(self.cells)

    @property
    def nvertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def jacobians(self) -> np.ndarray:
        """Columns X1-X0, X2-X0, X3-X0 per cell, shape (M, 3, 3)."""
        X = self.vertices[self.cells]
        return np.stack([X[:, 1] - X[:, 0], X[:, 2] - X[:, 0], X[:, 3] - X[:, 0]], axis=2)

    @cached_property
    def volumes(self) -> np.ndarray:
        return np.linalg.det(self.jacobians) / 6.0

    @cached_property
    def grad_lambda(self) -> np.ndarray:
        """Gradients of the four barycentric coordinates, shape (M, 4, 3)."""
        Jinv = np.linalg.inv(self.jacobians)
        return np.concatenate([-Jinv.sum(axis=1, keepdims=True), Jinv], axis=1)

    def cells_in(self, region: int) -> np.ndarray:
        return np.flatnonzero(self.cell_region == region)

    def facets_with(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.facet_label == label)

    def barycentric(self, cell_ids, points) -> np.ndarray:
        """Barycentric coordinates of physical ``points`` (..., 3) in ``cell_ids``."""
        cell_ids = np.asarray(cell_ids)
        X0 = self.vertices[self.cells[cell_ids, 0]]
        Jinv = np.linalg.inv(self.jacobians[cell_ids])
        ref = np.einsum("...ij,...j->...i", Jinv, np.asarray(points) - X0)
        return np.concatenate([1.0 - ref.sum(axis=-1, keepdims=True), ref], axis=-1)

    @cached_property
    def facet_cells(self) -> np.ndarray:
        """Adjacent cells of each labeled facet, (K, 2); -1 when absent.

        For ``gamma_c`` facets column 0 is the fluid cell, column 1 the solid cell.
        """
        table = _face_table(self.cells)
        out = np.full((len(self.facets), 2), -1, dtype=np.int64)
        for k, f in enumerate(self.facets):
            cells = table.get(tuple(sorted(f)), [])
            if self.facet_label[k] == GAMMA_C and len(cells) == 2:
                cells = sorted(cells, key=lambda c: self.cell_region[c])
            out[k, : len(cells)] = cells
        return out

    def facet_normals(self, facet_ids, from_cells) -> np.ndarray:
        """Unit normals of facets pointing out of ``from_cells``."""
        F = self.vertices[self.facets[facet_ids]]
        n = np.cross(F[:, 1] - F[:, 0], F[:, 2] - F[:, 0])
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        centroid = self.vertices[self.cells[from_cells]].mean(axis=1)
        flip = np.einsum("ij,ij->i", n, F[:, 0] - centroid) < 0
        n[flip] *= -1.0
        return n

    def facet_areas(self, facet_ids) -> np.ndarray:
        F = self.vertices[self.facets[facet_ids]]
        return 0.5 * np.linalg.norm(np.cross(F[:, 1] - F[:, 0], F[:, 2] - F[:, 0]), axis=1)

    def translated(self, shift) -> "ReferenceMesh":
        return ReferenceMesh(self.vertices + np.asarray(shift, float), self.cells,
                             self.cell_region, self.facets, self.facet_label)


def _face_table(cells):
    table = {}
    for c, cell in enumerate(cells):
        for face in TET_FACES:
            key = tuple(sorted(cell[list(face)]))
            table.setdefault(key, []).append(c)
    return table


def _validate(mesh: ReferenceMesh):
    nv = mesh.nvertices
    if mesh.vertices.ndim != 2 or mesh.vertices.shape[1] != 3:
        raise MeshError("vertices must have shape (N, 3)")
    if mesh.cells.ndim != 2 or mesh.cells.shape[1] != 4:
        raise MeshError("cells must have shape (M, 4)")
    if mesh.facets.size and (mesh.facets.ndim != 2 or mesh.facets.shape[1] != 3):
        raise MeshError("facets must have shape (K, 3)")
    if len(mesh.cell_region) != mesh.ncells or len(mesh.facet_label) != len(mesh.facets):
        raise MeshError("region/label arrays do not match cell/facet counts")
    if mesh.cells.size and (mesh.cells.min() < 0 or mesh.cells.max() >= nv):
        bad = int(np.flatnonzero((mesh.cells < 0).any(1) | (mesh.cells >= nv).any(1))[0])
        raise MeshError(f"cell {bad} references a missing vertex")
    if not np.isin(mesh.cell_region, (FLUID, SOLID)).all():
        raise MeshError("unknown cell region")
    if not np.isin(mesh.facet_label, range(4)).all():
        raise MeshError("unknown facet label")
    if not (mesh.cell_region == FLUID).any():
        raise MeshError("Fluid region empty")
    if not (mesh.cell_region == SOLID).any():
        raise MeshError("Solid region empty")
    vol = mesh.volumes
    if (vol <= 0).any():
        bad = int(np.flatnonzero(vol <= 0)[0])
        raise MeshError(f"cell {bad} has non-positive signed volume {vol[bad]:.3e}")

    table = _face_table(mesh.cells)
    labeled = {}
    for k, f in enumerate(mesh.facets):
        key = tuple(sorted(f))
        if len(set(key)) != 3:
            raise MeshError(f"facet {k} is degenerate")
        if key in labeled:
            raise MeshError(f"facet {k} carries more than one label (also facet {labeled[key]})")
        labeled[key] = k
        cells = table.get(key)
        if cells is None:
            raise MeshError(f"facet {k} is not a face of any cell")
        regions = sorted(int(mesh.cell_region[c]) for c in cells)
        if mesh.facet_label[k] == GAMMA_C:
            if regions != [FLUID, SOLID]:
                raise MeshError(f"facet {k}: interface not conforming")
        elif len(cells) != 1:
            raise MeshError(f"facet {k} labeled {FACET_LABELS[mesh.facet_label[k]]} "
                            "is not on the boundary")
        elif mesh.facet_label[k] in (GAMMA_IN, GAMMA_OUT) and regions != [FLUID]:
            raise MeshError(f"facet {k}: fluid boundary label on a solid cell")
        elif mesh.facet_label[k] == GAMMA_2 and regions != [SOLID]:
            raise MeshError(f"facet {k}: gamma_2 on a fluid cell")
    for key, cells in table.items():
        if len(cells) > 2:
            raise MeshError(f"face {key} shared by more than two cells")
        regions = {int(mesh.cell_region[c]) for c in cells}
        if (len(cells) == 1 or len(regions) == 2) and key not in labeled:
            raise MeshError(f"boundary face {key} of cell {cells[0]} is unlabeled")


# ---------------------------------------------------------------------------
# file format


def parse_mesh(text: str) -> ReferenceMesh:
    lines = [ln.split() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln[0].startswith("#")]
    pos = 0

    def take(n_expected, what):
        nonlocal pos
        if pos >= len(lines):
            raise MeshError(f"unexpected end of file while reading {what}")
        tok = lines[pos]
        pos += 1
        if n_expected is not None and len(tok) != n_expected:
            raise MeshError(f"line {pos}: expected {n_expected} fields for {what}, got {len(tok)}")
        return tok

    if take(None, "header") != ["fsi-mesh", "v1"]:
        raise MeshError("missing header 'fsi-mesh v1'")

    def section(name):
        tok = take(2, f"'{name}' section")
        if tok[0] != name:
            raise MeshError(f"line {pos}: expected section '{name}', got '{tok[0]}'")
        try:
            return int(tok[1])
        except ValueError:
            raise MeshError(f"line {pos}: bad count {tok[1]!r}") from None

    try:
        nv = section("vertices")
        verts = [[float(x) for x in take(3, "vertex")] for _ in range(nv)]
        nc = section("cells")
        cells, regions = [], []
        for _ in range(nc):
            tok = take(5, "cell")
            cells.append([int(x) for x in tok[:4]])
            if tok[4] not in REGION_NAMES:
                raise MeshError(f"line {pos}: unknown region {tok[4]!r}")
            regions.append(REGION_NAMES.index(tok[4]))
        nf = section("facets")
        facets, labels = [], []
        for _ in range(nf):
            tok = take(4, "facet")
            facets.append([int(x) for x in tok[:3]])
            if tok[3] not in FACET_LABELS:
                raise MeshError(f"line {pos}: unknown facet label {tok[3]!r}")
            labels.append(FACET_LABELS.index(tok[3]))
    except ValueError as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"line {pos}: {exc}") from None
    if pos != len(lines):
        raise MeshError(f"line {pos + 1}: trailing content")
    return ReferenceMesh(np.array(verts, float).reshape(-1, 3),
                         np.array(cells, np.int64).reshape(-1, 4),
                         np.array(regions), np.array(facets, np.int64).reshape(-1, 3),
                         np.array(labels))


def load_mesh(path) -> ReferenceMesh:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MeshError(f"cannot read mesh file {path}: {exc}") from exc
    return parse_mesh(text)


def format_mesh(mesh: ReferenceMesh) -> str:
    out = ["fsi-mesh v1", f"vertices {mesh.nvertices}"]
    out += ["%.17g %.17g %.17g" % tuple(v) for v in mesh.vertices]
    out.append(f"cells {mesh.ncells}")
    out += ["%d %d %d %d %s" % (*c, REGION_NAMES[r]) for c, r in zip(mesh.cells, mesh.cell_region)]
    out.append(f"facets {len(mesh.facets)}")
    out += ["%d %d %d %s" % (*f, FACET_LABELS[l]) for f, l in zip(mesh.facets, mesh.facet_label)]
    return "\n".join(out) + "\n"


def write_mesh(mesh: ReferenceMesh, path) -> None:
    Path(path).write_text(format_mesh(mesh))


# ---------------------------------------------------------------------------
# Lagrange spaces


def shape_functions(degree, lam):
    """Lagrange shape functions on a tetrahedron in barycentric form.

    Returns values (..., nb) and derivatives with respect to the four
    barycentric coordinates (..., nb, 4).  Works for complex input.
    """
    lam = np.asarray(lam)
    if degree == 1:
        phi = lam
        dphi = np.broadcast_to(np.eye(4), lam.shape[:-1] + (4, 4)).astype(lam.dtype)
        return phi, dphi
    if degree != 2:
        raise ValueError(f"unsupported polynomial degree {degree}")
    vals = [lam[..., i] * (2 * lam[..., i] - 1) for i in range(4)]
    vals += [4 * lam[..., i] * lam[..., j] for i, j in TET_EDGES]
    phi = np.stack(vals, axis=-1)
    dphi = np.zeros(lam.shape[:-1] + (10, 4), dtype=lam.dtype)
    for i in range(4):
        dphi[..., i, i] = 4 * lam[..., i] - 1
    for e, (i, j) in enumerate(TET_EDGES):
        dphi[..., 4 + e, i] = 4 * lam[..., j]
        dphi[..., 4 + e, j] = 4 * lam[..., i]
    return phi, dphi


def shape_hessians_lambda(degree):
    """Second derivatives of shape functions w.r.t. barycentric coordinates (nb, 4, 4)."""
    if degree == 1:
        return np.zeros((4, 4, 4))
    d2 = np.zeros((10, 4, 4))
    for i in range(4):
        d2[i, i, i] = 4.0
    for e, (i, j) in enumerate(TET_EDGES):
        d2[4 + e, i, j] = d2[4 + e, j, i] = 4.0
    return d2


@dataclass(eq=False)
class FunctionSpace:
    """Continuous vector-valued Lagrange space on the whole reference domain.

    Vector dof ``3 * node + component``.  Interface nodes exist once, so the
    fluid-side and solid-side traces of a field coincide by construction.
    """

    mesh: ReferenceMesh
    degree: int
    node_coords: np.ndarray
    cell_nodes: np.ndarray
    edges: np.ndarray
    dirichlet_mask: np.ndarray
    inflow_mask: np.ndarray
    _facet_nodes: np.ndarray = field(repr=False)

    @property
    def nnodes(self) -> int:
        return len(self.node_coords)

    @property
    def ndofs(self) -> int:
        return 3 * self.nnodes

    @property
    def nbasis(self) -> int:
        return self.cell_nodes.shape[1]

    @cached_property
    def dof_coordinates(self) -> np.ndarray:
        return np.repeat(self.node_coords, 3, axis=0)

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        """(M, nb*3) with local ordering (basis, component)."""
        return (3 * self.cell_nodes[:, :, None] + np.arange(3)).reshape(self.mesh.ncells, -1)

    @cached_property
    def dof_to_cell(self) -> sp.csr_matrix:
        M, nb = self.cell_nodes.shape
        rows = self.cell_nodes.ravel()
        cols = np.repeat(np.arange(M), nb)
        return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(self.nnodes, M))

    def region_nodes(self, region: int) -> np.ndarray:
        return np.unique(self.cell_nodes[self.mesh.cell_region == region])

    def region_dof_mask(self, region: int) -> np.ndarray:
        mask = np.zeros(self.ndofs, bool)
        nodes = self.region_nodes(region)
        mask[(3 * nodes[:, None] + np.arange(3)).ravel()] = True
        return mask

    def facet_nodes(self, facet_ids) -> np.ndarray:
        return self._facet_nodes[facet_ids]

    def label_nodes(self, label: int) -> np.ndarray:
        return np.unique(self._facet_nodes[self.mesh.facet_label == label])

    @cached_property
    def interface_nodes(self) -> np.ndarray:
        return self.label_nodes(GAMMA_C)

    def restrict(self, u, region: int) -> np.ndarray:
        """Zero every dof that does not belong to ``region`` (interface dofs kept)."""
        out = np.array(u, dtype=float, copy=True)
        out[..., ~self.region_dof_mask(region)] = 0.0
        return out

    def interpolate(self, func) -> np.ndarray:
        """Nodal interpolant of ``func(x) -> (n, 3)`` as a dof vector."""
        return np.asarray(func(self.node_coords), float).reshape(self.nnodes, 3).ravel()

    def local(self, u) -> np.ndarray:
        """Cell-local coefficients (..., M, nb, 3) of a dof vector (..., ndofs)."""
        u = np.asarray(u)
        return u[..., self.cell_dofs].reshape(u.shape[:-1] + self.cell_nodes.shape + (3,))

    def evaluate(self, cell_ids, lam, u, derivatives=1):
        """Values and gradients of ``u`` at barycentric points ``lam`` of ``cell_ids``.

        ``lam`` has shape (C, P, 4) or (P, 4) (shared by all cells).  Returns
        values (C, P, 3) and gradients (C, P, 3, 3) with ``grad[..., i, a] = d_a u_i``.
        """
        cell_ids = np.asarray(cell_ids)
        U = self.local(u)[cell_ids]
        phi, dphi = shape_functions(self.degree, np.asarray(lam))
        if phi.ndim == 2:
            phi = np.broadcast_to(phi, (len(cell_ids),) + phi.shape)
            dphi = np.broadcast_to(dphi, (len(cell_ids),) + dphi.shape)
        vals = np.einsum("cpb,cbi->cpi", phi, U)
        if derivatives == 0:
            return vals
        gphi = np.einsum("cpbk,ckd->cpbd", dphi, self.mesh.grad_lambda[cell_ids])
        grads = np.einsum("cpbd,cbi->cpid", gphi, U)
        return vals, grads

    def hessian(self, cell_ids, u) -> np.ndarray:
        """Cellwise second derivatives ``hess[c, j, a, b] = d_a d_b u_j`` (constant per cell)."""
        cell_ids = np.asarray(cell_ids)
        d2 = shape_hessians_lambda(self.degree)
        gl = self.mesh.grad_lambda[cell_ids]
        H = np.einsum("Bkl,cka,clb->cBab", d2, gl, gl)
        return np.einsum("cBab,cBj->cjab", H, self.local(u)[cell_ids])


@dataclass(eq=False)
class PressureSpace:
    """Continuous P1 scalar space on the fluid cells."""

    mesh: ReferenceMesh
    degree: int
    cells: np.ndarray
    cell_dofs: np.ndarray
    dof_vertices: np.ndarray

    @property
    def ndofs(self) -> int:
        return len(self.dof_vertices)

    @property
    def coordinates(self) -> np.ndarray:
        return self.mesh.vertices[self.dof_vertices]

    def interpolate(self, func) -> np.ndarray:
        return np.asarray(func(self.coordinates), float).reshape(-1)


def build_space(mesh: ReferenceMesh, degree: int) -> FunctionSpace:
    if degree not in (1, 2):
        raise ValueError(f"unsupported polynomial degree {degree}; use 1 or 2")
    nv = mesh.nvertices
    local_edges = np.sort(mesh.cells[:, np.array(TET_EDGES)], axis=2)  # (M, 6, 2)
    edges, inverse = np.unique(local_edges.reshape(-1, 2), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    if degree == 1:
        coords = mesh.vertices.copy()
        cell_nodes = mesh.cells.copy()
    else:
        coords = np.vstack([mesh.vertices, mesh.vertices[edges].mean(axis=1)])
        cell_nodes = np.hstack([mesh.cells, nv + inverse.reshape(-1, 6)])

    edge_index = {tuple(e): k for k, e in enumerate(edges)}
    fnodes = [list(f) for f in mesh.facets]
    if degree == 2:
        for k, f in enumerate(mesh.facets):
            a, b, c = f
            for e in ((a, b), (a, c), (b, c)):
                fnodes[k].append(nv + edge_index[tuple(sorted(e))])
    facet_nodes = np.array(fnodes, np.int64).reshape(len(mesh.facets), 3 if degree == 1 else 6)

    nn = len(coords)
    pinned_nodes = np.unique(facet_nodes[np.isin(mesh.facet_label, (GAMMA_IN, GAMMA_2))])
    inflow_nodes = np.unique(facet_nodes[mesh.facet_label == GAMMA_IN])
    dirichlet = np.zeros(3 * nn, bool)
    dirichlet[(3 * pinned_nodes[:, None] + np.arange(3)).ravel()] = True
    inflow = np.zeros(3 * nn, bool)
    inflow[(3 * inflow_nodes[:, None] + np.arange(3)).ravel()] = True
    return FunctionSpace(mesh, degree, coords, cell_nodes, edges, dirichlet, inflow, facet_nodes)


def build_pressure_space(mesh: ReferenceMesh, degree: int = 1) -> PressureSpace:
    if degree != 1:
        raise ValueError("only continuous P1 pressure is supported")
    cells = mesh.cells_in(FLUID)
    verts = np.unique(mesh.cells[cells])
    lookup = np.full(mesh.nvertices, -1, np.int64)
    lookup[verts] = np.arange(len(verts))
    return PressureSpace(mesh, 1, cells, lookup[mesh.cells[cells]], verts)


# ---------------------------------------------------------------------------
# reference meshes

# Kuhn subdivision of the unit cube into six positively oriented tetrahedra
_KUHN = [(0, 1, 3, 7), (0, 1, 5, 7), (0, 2, 3, 7), (0, 2, 6, 7), (0, 4, 5, 7), (0, 4, 6, 7)]


def two_cube_mesh(n: int = 2, length: float = 1.0) -> ReferenceMesh:
    """Fluid cube ``[0,L]^3`` glued to a solid cube ``[L,2L]x[0,L]^2`` at ``x = L``.

    Each cube is split into ``n^3`` sub-cubes of six tetrahedra (conforming
    Kuhn pattern).  Fluid facets: ``x = 0``, ``y = 0``, ``y = L`` and ``z = 0``
    are ``gamma_in`` (no-slip when the inflow datum is zero), ``z = L`` is
    ``gamma_out``.  All exterior faces of the solid are ``gamma_2``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    nx, ny, nz = 2 * n, n, n
    h = length / n
    gx, gy, gz = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), np.arange(nz + 1), indexing="ij")
    vertices = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()]) * h

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    cells, regions = [], []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                corner = [vid(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1)) for c in range(8)]
                for tet in _KUHN:
                    cells.append([corner[t] for t in tet])
                    regions.append(FLUID if i < n else SOLID)
    cells = np.array(cells, np.int64)
    X = vertices[cells]
    J = np.stack([X[:, 1] - X[:, 0], X[:, 2] - X[:, 0], X[:, 3] - X[:, 0]], axis=2)
    neg = np.linalg.det(J) < 0
    cells[neg] = cells[neg][:, [0, 2, 1, 3]]

    regions = np.array(regions)
    table = _face_table(cells)
    facets, labels = [], []
    eps = 1e-9 * length
    for key, owners in sorted(table.items()):
        if len(owners) == 2:
            if regions[owners[0]] != regions[owners[1]]:
                facets.append(key)
                labels.append(GAMMA_C)
            continue
        c = vertices[list(key)].mean(axis=0)
        if regions[owners[0]] == SOLID:
            labels.append(GAMMA_2)
        elif abs(c[2] - length) < eps:
            labels.append(GAMMA_OUT)
        else:
            labels.append(GAMMA_IN)
        facets.append(key)
    return ReferenceMesh(vertices, cells, regions, np.array(facets), np.array(labels))
