"""
Galerkin assembly on the reference configuration.

The discretization context :class:`Discretization` caches the quadrature
geometry of both regions and of the interface.  Matrices are assembled in the
ambient vector space (3 dofs per node, fluid and solid share interface nodes)
and reduced onto the weighted divergence-free basis of :class:`DivFreeBasis`.

Cells are processed in fixed-size chunks.  With ``threads > 1`` the chunks run
on a thread pool, but the local blocks are always concatenated in chunk order
before the sparse reduction, so the result does not depend on the thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .constitutive import MaterialParams, coefficient_divergence, combined_coefficients
from .kinematics import DEFAULT_DET_FLOOR, MapState, TensorField, cofactor, determinant, inverse
from .mesh import (FLUID, GAMMA_C, SOLID, FunctionSpace, PressureSpace, ReferenceMesh, build_pressure_space,
                   build_space, shape_functions, tet_quadrature, triangle_quadrature)

__all__ = [
    "Discretization",
    "ConstraintMatrix",
    "DivFreeBasis",
    "GalerkinOperators",
    "discretize",
    "build_constraint",
    "build_divfree_basis",
    "assemble_operators",
    "map_state_from_displacement",
    "project_initial",
    "piola_residual",
    "weighted_mass",
    "divergence_matrix",
    "fluid_stiffness_matrix",
    "compose_initial",
    "InterfaceMismatchError",
]

CHUNK = 64
NULLSPACE_RCOND = 1e-10


class InterfaceMismatchError(ValueError):
    """Initial fluid velocity and solid velocity disagree on an interface dof."""

    def __init__(self, message, dof=None):
        super().__init__(message)
        self.dof = dof


@dataclass(eq=False)
class Discretization:
    mesh: ReferenceMesh
    space: FunctionSpace
    pspace: PressureSpace
    params: MaterialParams
    quad_order: int
    threads: int = 1
    det_floor: float = DEFAULT_DET_FLOOR
    hessian_mode: str = "projection"

    def __post_init__(self):
        if self.hessian_mode not in ("projection", "local"):
            raise ValueError(f"unknown hessian mode {self.hessian_mode!r}")
        self.quad = tet_quadrature(self.quad_order)
        self.fluid_cells = self.mesh.cells_in(FLUID)
        self.solid_cells = self.mesh.cells_in(SOLID)
        phi, dphi = shape_functions(self.space.degree, self.quad.points)
        self.phi = phi                                                # (Q, nb)
        self.gphi = np.einsum("qbk,ckd->cqbd", dphi, self.mesh.grad_lambda)   # (M, Q, nb, 3)
        self.wdet = 6.0 * self.mesh.volumes[:, None] * self.quad.weights[None, :]  # (M, Q)
        self._setup_interface()

    # -- geometry -----------------------------------------------------------

    def _setup_interface(self):
        mesh = self.mesh
        tri = triangle_quadrature(self.quad_order)
        self.gc_facets = mesh.facets_with(GAMMA_C)
        fc = mesh.facet_cells[self.gc_facets]
        self.gc_fluid_cells = fc[:, 0]
        self.gc_solid_cells = fc[:, 1]
        X = mesh.vertices[mesh.facets[self.gc_facets]]             # (F, 3, 3)
        pts = np.einsum("pm,fmd->fpd", tri.points, X)               # (F, P, 3)
        self.gc_points = pts
        self.gc_lam_fluid = mesh.barycentric(self.gc_fluid_cells[:, None], pts)
        self.gc_lam_solid = mesh.barycentric(self.gc_solid_cells[:, None], pts)
        # fluid-outward normal, pointing into the solid
        self.gc_normals = mesh.facet_normals(self.gc_facets, self.gc_fluid_cells)
        self.gc_weights = 2.0 * mesh.facet_areas(self.gc_facets)[:, None] * tri.weights[None, :]

    @property
    def ndofs(self) -> int:
        return self.space.ndofs

    def region_cells(self, region: int) -> np.ndarray:
        return self.fluid_cells if region == FLUID else self.solid_cells

    def gradients(self, u, cells) -> np.ndarray:
        """Gradients ``grad[c, q, i, a] = d_a u_i`` at the volume quadrature points."""
        U = self.space.local(u)[cells]
        return np.swapaxes(np.swapaxes(self.gphi[cells], -1, -2) @ U[:, None], -1, -2)

    def values(self, u, cells) -> np.ndarray:
        U = self.space.local(u)[cells]
        return np.einsum("qb,cbi->cqi", self.phi, U)

    def interface_fields(self, u, side: int = SOLID):
        """Values (F, P, 3) and gradients (F, P, 3, 3) on the interface from one side."""
        cells = self.gc_solid_cells if side == SOLID else self.gc_fluid_cells
        lam = self.gc_lam_solid if side == SOLID else self.gc_lam_fluid
        return self.space.evaluate(cells, lam, u)

    # -- chunked assembly -----------------------------------------------------

    def _map(self, fn, cells):
        chunks = [cells[i:i + CHUNK] for i in range(0, len(cells), CHUNK)]
        if self.threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                return list(pool.map(fn, chunks))
        return [fn(c) for c in chunks]

    def assemble_cells(self, cells, local_fn, row_dofs=None, col_dofs=None, shape=None) -> sp.csr_matrix:
        """Sum local blocks ``local_fn(chunk) -> (C, nrow, ncol)`` into a sparse matrix."""
        row_dofs = self.space.cell_dofs if row_dofs is None else row_dofs
        col_dofs = self.space.cell_dofs if col_dofs is None else col_dofs
        shape = (self.ndofs, self.ndofs) if shape is None else shape
        blocks = self._map(local_fn, cells)
        if not blocks:
            return sp.csr_matrix(shape)
        local = np.concatenate(blocks, axis=0)
        rc = row_dofs[cells]
        cc = col_dofs[cells]
        rows = np.broadcast_to(rc[:, :, None], local.shape).ravel()
        cols = np.broadcast_to(cc[:, None, :], local.shape).ravel()
        return sp.coo_matrix((local.ravel(), (rows, cols)), shape=shape).tocsr()

    def mass_matrix(self, cells, weight=None) -> sp.csr_matrix:
        """Vector mass matrix with an optional pointwise weight (C, Q) on ``cells``."""
        cells = np.asarray(cells)
        wfull = np.ones((len(cells), self.quad.npoints)) if weight is None else np.asarray(weight)
        index = {int(c): k for k, c in enumerate(cells)}

        def local(chunk):
            w = wfull[[index[int(c)] for c in chunk]] * self.wdet[chunk]
            m = (w[:, None, :] * self.phi.T[None]) @ self.phi
            nb = m.shape[1]
            return np.einsum("cab,ij->caibj", m, np.eye(3)).reshape(len(chunk), 3 * nb, 3 * nb)

        return self.assemble_cells(cells, local)

    def stiffness_matrix(self, cells) -> sp.csr_matrix:
        """Vector Laplacian Gram matrix int grad u : grad w on ``cells``."""
        cells = np.asarray(cells)

        def local(chunk):
            k = np.einsum("cq,cqad,cqbd->cab", self.wdet[chunk], self.gphi[chunk], self.gphi[chunk])
            nb = k.shape[1]
            return np.einsum("cab,ij->caibj", k, np.eye(3)).reshape(len(chunk), 3 * nb, 3 * nb)

        return self.assemble_cells(cells, local)

    # -- cached Gram matrices ---------------------------------------------------

    @cached_property
    def grams(self) -> dict:
        """Plain L2 and H1 Gram matrices per region, used by the discrete norms."""
        out = {}
        for name, region in (("fluid", FLUID), ("solid", SOLID)):
            cells = self.region_cells(region)
            m = self.mass_matrix(cells)
            out[(name, "l2")] = m
            out[(name, "h1")] = (m + self.stiffness_matrix(cells)).tocsr()
        return out

    @cached_property
    def reference_mass(self) -> sp.csr_matrix:
        """Weighted mass [[.,.]] with identity maps: rho_f on fluid cells, rho_s on solid cells."""
        return (self.params.rho_f * self.grams[("fluid", "l2")]
                + self.params.rho_s * self.grams[("solid", "l2")]).tocsr()

    @cached_property
    def _solid_projector(self):
        dofs = np.flatnonzero(self.space.region_dof_mask(SOLID))
        m = self.grams[("solid", "l2")][dofs][:, dofs].tocsc()
        return dofs, splu(m)

    @cached_property
    def load_operator(self) -> sp.csr_matrix:
        """Linear map from interface samples g (F, P, 3) to the load int_{Gamma_c} g . psi."""
        phi, _ = shape_functions(self.space.degree, self.gc_lam_fluid)   # (F, P, nb)
        F, P, nb = phi.shape
        dofs = self.space.cell_dofs[self.gc_fluid_cells].reshape(F, nb, 3)
        vals = np.einsum("fp,fpb,ij->fbipj", self.gc_weights, phi, np.eye(3))
        rows = np.broadcast_to(dofs[:, :, :, None, None], vals.shape).ravel()
        cols = np.broadcast_to((np.arange(F)[:, None, None, None, None] * P * 3
                                + np.arange(P)[None, None, None, :, None] * 3
                                + np.arange(3)[None, None, None, None, :]), vals.shape).ravel()
        return sp.coo_matrix((vals.ravel(), (rows, cols)), shape=(self.ndofs, F * P * 3)).tocsr()

    # -- second derivatives of the displacement --------------------------------

    def displacement_hessian(self, u) -> np.ndarray:
        """``hess[c, q, j, a, b] ~ d_a d_b u_j`` on solid quadrature points.

        ``projection`` (default) differentiates the L2 projection of grad u onto
        the continuous space over the solid; ``local`` uses the cellwise second
        derivatives of u itself (constant per cell).
        """
        cells = self.solid_cells
        if self.hessian_mode == "local":
            h = self.space.hessian(cells, u)
            return np.broadcast_to(h[:, None], (len(cells), self.quad.npoints, 3, 3, 3)).copy()
        dofs, lu = self._solid_projector
        grad = self.gradients(u, cells)                              # (C, Q, j, b)
        W = self.wdet[cells][:, :, None, None] * grad
        nb = self.phi.shape[1]
        hess = np.empty((len(cells), self.quad.npoints, 3, 3, 3))
        for j in range(3):
            local = np.einsum("cqb,qa->cab", W[:, :, j, :], self.phi).reshape(len(cells), 3 * nb)
            rhs = np.bincount(self.space.cell_dofs[cells].ravel(), local.ravel(), minlength=self.ndofs)
            proj = np.zeros(self.ndofs)
            proj[dofs] = lu.solve(rhs[dofs])
            g = self.gradients(proj, cells)                          # g[c, q, b, a] = d_a (grad u_j)_b
            hess[:, :, j] = 0.5 * (g + np.swapaxes(g, -1, -2))
        return hess


def discretize(mesh: ReferenceMesh, params: MaterialParams | None = None, degree: int = 2,
               quad_order: int | None = None, threads: int = 1, det_floor: float = DEFAULT_DET_FLOOR,
               hessian_mode: str = "projection") -> Discretization:
    """Function spaces and quadrature; the default order is 2 * degree + 2."""
    space = build_space(mesh, degree)
    pspace = build_pressure_space(mesh, 1)
    order = 2 * degree + 2 if quad_order is None else int(quad_order)
    return Discretization(mesh, space, pspace, params or MaterialParams(), order, max(int(threads), 1),
                          det_floor, hessian_mode)


# ---------------------------------------------------------------------------
# maps


def map_state_from_displacement(disc: Discretization, u, time: float = 0.0) -> MapState:
    """Flow map (fluid) and deformation (solid) gradients of x + u.

    ``u`` is the ambient time-integrated velocity: its fluid part is the flow
    map displacement, its solid part the structure displacement.
    """
    u = np.asarray(u, float)
    fc, sc = disc.fluid_cells, disc.solid_cells
    eye = np.eye(3)
    flow = TensorField(eye + disc.gradients(u, fc), time, fc)
    defo = TensorField(eye + disc.gradients(u, sc), time, sc)
    return MapState.from_gradients(flow, defo, disc.det_floor)


def piola_residual(disc: Discretization, u, region: int = FLUID) -> np.ndarray:
    """int cof(Id + grad u) : grad psi_k over ``region`` for every dof k.

    Vanishes (to roundoff) on dofs interior to the region for any continuous
    piecewise polynomial u: the cellwise divergence of a cofactor is zero and
    the normal component cof(F) n only sees tangential derivatives, which are
    continuous across faces.
    """
    cells = disc.region_cells(region)
    F = np.eye(3) + disc.gradients(np.asarray(u, float), cells)
    local = np.einsum("cq,cqia,cqba->cbi", disc.wdet[cells], cofactor(F), disc.gphi[cells])
    return np.bincount(disc.space.cell_dofs[cells].ravel(), local.reshape(-1), minlength=disc.ndofs)


# ---------------------------------------------------------------------------
# constraint and basis


@dataclass
class ConstraintMatrix:
    """Weighted divergence rows (pressure tests x velocity dofs) plus pinned dofs."""

    divergence: sp.csr_matrix
    pinned: np.ndarray

    @property
    def matrix(self) -> sp.csr_matrix:
        pins = sp.identity(len(self.pinned), format="csr")[np.flatnonzero(self.pinned)]
        return sp.vstack([self.divergence, pins]).tocsr()

    def residual(self, u) -> np.ndarray:
        u = np.asarray(u)
        return np.concatenate([self.divergence @ u, u[self.pinned]])


def divergence_matrix(disc: Discretization, flow_grad=None) -> sp.csr_matrix:
    """Rows int q cof(A) : grad psi over the fluid for P1 pressure tests q.

    By the Piola identity this is the weak form of div(det(A) A^{-1} psi).
    """
    cells = disc.fluid_cells
    ps = disc.pspace
    index = {int(c): k for k, c in enumerate(cells)}
    cof_all = None
    if flow_grad is not None:
        A = getattr(flow_grad, "values", flow_grad)
        inverse(A, disc.det_floor)  # raises below the floor
        cof_all = cofactor(A)
    prow = np.full((disc.mesh.ncells, 4), -1, np.int64)
    prow[cells] = ps.cell_dofs
    lam = disc.quad.points

    def local(chunk):
        w = disc.wdet[chunk]
        g = disc.gphi[chunk]
        if cof_all is None:
            cg = g  # cof(Id) : grad(phi_b e_j) = d_j phi_b
        else:
            cof = cof_all[[index[int(c)] for c in chunk]]
            cg = np.einsum("cqja,cqba->cqbj", cof, g)
        loc = np.einsum("cq,qm,cqbj->cmbj", w, lam, cg)
        return loc.reshape(len(chunk), 4, -1)

    return disc.assemble_cells(cells, local, row_dofs=prow, shape=(ps.ndofs, disc.ndofs))


def build_constraint(disc: Discretization, map_state: MapState | None = None) -> ConstraintMatrix:
    """Weighted divergence constraint and the pins on every boundary except the outflow."""
    flow = None if map_state is None else map_state.flow_map_grad
    return ConstraintMatrix(divergence_matrix(disc, flow), disc.space.dirichlet_mask.copy())


@dataclass
class DivFreeBasis:
    """Columns of ``basis_matrix`` are ambient coefficient vectors of the basis fields."""

    basis_matrix: np.ndarray
    constraint: ConstraintMatrix
    mass: sp.csr_matrix

    @property
    def dimension(self) -> int:
        return self.basis_matrix.shape[1]

    def expand(self, coeffs) -> np.ndarray:
        """Ambient field(s) from Galerkin coefficients (..., n)."""
        return np.asarray(coeffs) @ self.basis_matrix.T

    def reduce(self, matrix) -> np.ndarray:
        """B^T A B for an ambient operator A."""
        B = self.basis_matrix
        return B.T @ (matrix @ B)


def build_divfree_basis(constraint: ConstraintMatrix, mass) -> DivFreeBasis:
    """Numerical nullspace of the constraint, orthonormal in the weighted mass."""
    free = np.flatnonzero(~constraint.pinned)
    div = constraint.divergence[:, free].toarray()
    if len(free) == 0:
        raise ValueError("W̃ₙ is empty")
    Zf = sla.null_space(div, rcond=NULLSPACE_RCOND) if div.shape[0] else np.eye(len(free))
    if Zf.shape[1] == 0:
        raise ValueError("W̃ₙ is empty")
    N = len(constraint.pinned)
    Z = np.zeros((N, Zf.shape[1]))
    Z[free] = Zf
    G = Z.T @ (mass @ Z)
    L = sla.cholesky(0.5 * (G + G.T), lower=True)
    B = sla.solve_triangular(L, Z.T, lower=True).T
    return DivFreeBasis(B, constraint, sp.csr_matrix(mass))


# ---------------------------------------------------------------------------
# Galerkin operators


@dataclass
class GalerkinOperators:
    """Reduced blocks of  A dF/dt = B F + C  with F = (f, h).

    ``structure_stiffness`` D is the sum of the coefficient part ``elastic``
    (int b d_b psi_l d_a psi_k) and the gradient part ``coefficient_gradient``
    (int d_a b d_b psi_l psi_k).
    """

    mass_block: np.ndarray
    fluid_stiffness: np.ndarray
    elastic: np.ndarray
    coefficient_gradient: np.ndarray
    boundary_load: np.ndarray
    time: float = 0.0
    mass_fluid: np.ndarray | None = None
    ambient: dict = field(default_factory=dict, repr=False)

    @property
    def structure_stiffness(self) -> np.ndarray:
        return self.elastic + self.coefficient_gradient

    @property
    def n(self) -> int:
        return self.mass_block.shape[0]

    @property
    def A(self) -> np.ndarray:
        n = self.n
        out = np.zeros((2 * n, 2 * n))
        out[:n, :n] = self.mass_block
        out[n:, n:] = np.eye(n)
        return out

    @property
    def B(self) -> np.ndarray:
        n = self.n
        out = np.zeros((2 * n, 2 * n))
        out[:n, :n] = -self.fluid_stiffness
        out[:n, n:] = -self.structure_stiffness
        out[n:, :n] = np.eye(n)
        return out

    @property
    def C(self) -> np.ndarray:
        return np.concatenate([self.boundary_load, np.zeros(self.n)])


def fluid_stiffness_matrix(disc: Discretization, flow_grad) -> sp.csr_matrix:
    """int sigma_f(psi_l) : grad psi_k with the Lagrangian viscous stress."""
    cells = disc.fluid_cells
    A = getattr(flow_grad, "values", flow_grad)
    Ainv = inverse(A, disc.det_floor)
    det = determinant(A)
    index = {int(c): k for k, c in enumerate(cells)}
    mu = disc.params.mu

    def local(chunk):
        sel = [index[int(c)] for c in chunk]
        w = mu * disc.wdet[chunk] * det[sel]
        gt = disc.gphi[chunk] @ Ainv[sel]                            # g~_m = sum_k Ainv_km d_k phi
        C, Q, nb, _ = gt.shape
        Wg = (w[:, :, None, None] * gt).transpose(0, 2, 1, 3).reshape(C, nb, Q * 3)
        G = gt.transpose(0, 1, 3, 2).reshape(C, Q * 3, nb)
        lap = Wg @ G                                                 # (c, a, b)
        Wq = (w[:, :, None, None] * gt).transpose(0, 2, 3, 1).reshape(C, 3 * nb, Q)   # (a j), q
        Gq = gt.reshape(C, Q, nb * 3)                                # q, (b i)
        cross = (Wq @ Gq).reshape(C, nb, 3, nb, 3).transpose(0, 1, 4, 3, 2)   # (a, i, b, j)
        s = lap[:, :, None, :, None] * np.eye(3)[None, None, :, None, :] + cross
        return s.reshape(C, 3 * nb, 3 * nb)

    return disc.assemble_cells(cells, local)


def structure_coefficients(disc: Discretization, u):
    """b(grad u) and e_{ijb} = sum_a d_a b_{iajb} on solid quadrature points."""
    sc = disc.solid_cells
    H = disc.gradients(u, sc)
    b = combined_coefficients(H, disc.params)
    if not np.any(u[disc.space.region_dof_mask(SOLID)]):
        return b, np.zeros(b.shape[:2] + (3, 3, 3))
    hess = disc.displacement_hessian(u)                              # [c, q, j, a, b]
    dH = np.transpose(hess, (0, 1, 3, 2, 4))                         # d_a H_jb
    return b, coefficient_divergence(H, dH, disc.params)


def structure_matrices(disc: Discretization, b, e):
    sc = disc.solid_cells
    index = {int(c): k for k, c in enumerate(sc)}
    Q = disc.quad.npoints

    def local_elastic(chunk):
        sel = [index[int(c)] for c in chunk]
        C = len(chunk)
        g = disc.gphi[chunk]                                         # (C, Q, nb, 3)
        nb = g.shape[2]
        # Y[c, q, (i a j), B] = sum_b b_{iajb} d_b phi_B
        Y = b[sel].reshape(C, Q, 27, 3) @ np.swapaxes(g, -1, -2)
        Y = Y.reshape(C, Q, 3, 3, 3, nb).transpose(0, 1, 3, 2, 4, 5).reshape(C, Q * 3, 9 * nb)
        Wg = (disc.wdet[chunk][:, :, None, None] * g).transpose(0, 2, 1, 3).reshape(C, nb, Q * 3)
        d = (Wg @ Y).reshape(C, nb, 3, 3, nb)                        # (c, A, i, j, B)
        return d.transpose(0, 1, 2, 4, 3).reshape(C, 3 * nb, 3 * nb)

    def local_gradient(chunk):
        sel = [index[int(c)] for c in chunk]
        C = len(chunk)
        g = disc.gphi[chunk]
        nb = g.shape[2]
        Y = e[sel].reshape(C, Q, 9, 3) @ np.swapaxes(g, -1, -2)      # (c, q, (i j), B)
        Wp = (disc.wdet[chunk][:, :, None] * disc.phi[None]).transpose(0, 2, 1)   # (c, A, q)
        d = (Wp @ Y.reshape(C, Q, 9 * nb)).reshape(C, nb, 3, 3, nb)
        return d.transpose(0, 1, 2, 4, 3).reshape(C, 3 * nb, 3 * nb)

    return disc.assemble_cells(sc, local_elastic), disc.assemble_cells(sc, local_gradient)


def weighted_mass(disc: Discretization, map_state: MapState, split: bool = False):
    """[[.,.]] with weights rho_f det(A) on the fluid and rho_s det(grad phi) on the solid."""
    p = disc.params
    mf = disc.mass_matrix(disc.fluid_cells, p.rho_f * map_state.det_flow)
    ms = disc.mass_matrix(disc.solid_cells, p.rho_s * map_state.det_defo)
    if split:
        return mf, ms
    return (mf + ms).tocsr()


def assemble_operators(disc: Discretization, basis: DivFreeBasis, displacement=None, g=None,
                       time: float = 0.0, keep_ambient: bool = False) -> GalerkinOperators:
    """Reduced Galerkin blocks for the frozen maps of ``displacement``.

    ``displacement`` is the ambient time-integrated velocity at this instant
    (None for identity maps); ``g`` the interface datum sampled on the
    interface quadrature points, shape (F, P, 3).
    """
    N = disc.ndofs
    if basis.basis_matrix.shape[0] != N:
        raise ValueError(f"basis has {basis.basis_matrix.shape[0]} rows, the space has {N} dofs")
    u = np.zeros(N) if displacement is None else np.asarray(displacement, float)
    if u.shape != (N,):
        raise ValueError(f"displacement has shape {u.shape}, expected ({N},)")
    ms = map_state_from_displacement(disc, u, time)
    Mf, Ms = weighted_mass(disc, ms, split=True)
    M = (Mf + Ms).tocsr()
    S = fluid_stiffness_matrix(disc, ms.flow_map_grad)
    b, e = structure_coefficients(disc, u)
    D1, D2 = structure_matrices(disc, b, e)
    load = np.zeros(N) if g is None else disc.load_operator @ _check_load(disc, g).ravel()
    B = basis.basis_matrix
    amb = {"mass": M, "fluid_stiffness": S, "elastic": D1, "coefficient_gradient": D2, "load": load,
           "map_state": ms} if keep_ambient else {}
    return GalerkinOperators(basis.reduce(M), basis.reduce(S), basis.reduce(D1), basis.reduce(D2),
                             B.T @ load, time, basis.reduce(Mf), amb)


def _check_load(disc: Discretization, g):
    g = np.asarray(g, float)
    expected = disc.gc_points.shape
    if g.shape != expected:
        raise ValueError(f"interface datum has shape {g.shape}, expected {expected}")
    return g


def project_initial(disc: Discretization, basis: DivFreeBasis, v0, xi1, tol: float = 1e-10) -> np.ndarray:
    """Weighted projection of gamma_0 = (v0 on the fluid, xi1 on the solid).

    Returns f(0); h(0) = 0.  Raises when v0 and xi1 disagree on an interface dof.
    """
    space = disc.space
    v0 = np.asarray(v0, float)
    xi1 = np.asarray(xi1, float)
    idofs = (3 * space.interface_nodes[:, None] + np.arange(3)).ravel()
    gap = np.abs(v0[idofs] - xi1[idofs])
    if gap.size and gap.max() > tol:
        k = int(np.argmax(gap))
        dof = int(idofs[k])
        raise InterfaceMismatchError(
            f"v0 and xi1 differ by {gap[k]:.3g} on interface dof {dof} "
            f"(node {dof // 3}, component {dof % 3})", dof=dof)
    gamma = compose_initial(disc, v0, xi1)
    return basis.basis_matrix.T @ (basis.mass @ gamma)


def compose_initial(disc: Discretization, v0, xi1) -> np.ndarray:
    """One continuous field: v0 on fluid dofs, xi1 on the remaining solid dofs."""
    fluid = disc.space.region_dof_mask(FLUID)
    return np.where(fluid, np.asarray(v0, float), np.asarray(xi1, float))
