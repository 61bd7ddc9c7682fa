"""
Post-processing checks: initial-data compatibility, the discrete energy
identity, interface residuals and membership of the fixed-point set.

The compatibility checker works with exact cellwise polynomials.  Finite
element fields restricted to one cell are polynomials in (x, y, z); products
and derivatives of them stay polynomials, so every expression in the nine
conditions is evaluated without projection error and the residual norms only
carry quadrature error from a rule of sufficient order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.signal import convolve

from .assembly import Discretization, fluid_stiffness_matrix, map_state_from_displacement
from .constitutive import combined_coefficients, lagrangian_fluid_stress
from .mesh import FLUID, SOLID, TET_EDGES, tet_quadrature, triangle_quadrature
from .norms import history_norms

__all__ = [
    "Poly3",
    "CompatibilityReport",
    "EnergyLedger",
    "check_compatibility",
    "energy_ledger",
    "interface_residuals",
    "membership_ledger",
    "cell_polynomials",
]

# ---------------------------------------------------------------------------
# exact polynomials in three variables


class Poly3:
    """Polynomial sum c[i, j, k] x^i y^j z^k."""

    __slots__ = ("c",)

    def __init__(self, coeffs):
        c = np.asarray(coeffs, float)
        if c.ndim == 0:
            c = c.reshape(1, 1, 1)
        self.c = c

    @classmethod
    def constant(cls, value) -> "Poly3":
        return cls(np.full((1, 1, 1), float(value)))

    @classmethod
    def affine(cls, const, grad) -> "Poly3":
        c = np.zeros((2, 2, 2))
        c[0, 0, 0] = const
        c[1, 0, 0], c[0, 1, 0], c[0, 0, 1] = grad
        return cls(c)

    def _pad(self, shape):
        out = np.zeros(shape)
        out[: self.c.shape[0], : self.c.shape[1], : self.c.shape[2]] = self.c
        return out

    def __add__(self, other):
        if not isinstance(other, Poly3):
            other = Poly3.constant(other)
        shape = tuple(max(a, b) for a, b in zip(self.c.shape, other.c.shape))
        return Poly3(self._pad(shape) + other._pad(shape))

    __radd__ = __add__

    def __neg__(self):
        return Poly3(-self.c)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Poly3):
            return Poly3(convolve(self.c, other.c, method="direct"))
        return Poly3(self.c * float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Poly3(self.c / float(other))

    def d(self, axis: int) -> "Poly3":
        if self.c.shape[axis] == 1:
            return Poly3(np.zeros((1, 1, 1)))
        return Poly3(npoly.polyder(self.c, axis=axis))

    def __call__(self, points):
        points = np.asarray(points, float)
        return npoly.polyval3d(points[..., 0], points[..., 1], points[..., 2], self.c)

    def is_zero(self) -> bool:
        return not np.any(self.c)


def _zero():
    return Poly3(np.zeros((1, 1, 1)))


def _vec(items):
    out = np.empty(3, dtype=object)
    for i in range(3):
        out[i] = items[i]
    return out


def _mat(fn):
    out = np.empty((3, 3), dtype=object)
    for i in range(3):
        for j in range(3):
            out[i, j] = fn(i, j)
    return out


def _eye(scalar):
    return _mat(lambda i, j: scalar if i == j else _zero())


def _grad_vec(v):
    """G[i, a] = d_a v_i."""
    return _mat(lambda i, a: v[i].d(a))


def _grad_scalar(s):
    return _vec([s.d(a) for a in range(3)])


def _div_mat(T):
    """(div T)_i = sum_j d_j T_ij."""
    return _vec([T[i, 0].d(0) + T[i, 1].d(1) + T[i, 2].d(2) for i in range(3)])


def _div_vec(v):
    return v[0].d(0) + v[1].d(1) + v[2].d(2)


def _mm(A, B):
    return _mat(lambda i, j: A[i, 0] * B[0, j] + A[i, 1] * B[1, j] + A[i, 2] * B[2, j])


def _mv(A, n):
    # n is a numeric vector
    return _vec([A[i, 0] * n[0] + A[i, 1] * n[1] + A[i, 2] * n[2] for i in range(3)])


def _tr(A):
    return A[0, 0] + A[1, 1] + A[2, 2]


def _sym(A):
    return _mat(lambda i, j: (A[i, j] + A[j, i]) * 0.5)


def _cof(A):
    def entry(i, j):
        m, n = (i + 1) % 3, (i + 2) % 3
        p, q = (j + 1) % 3, (j + 2) % 3
        return A[m, p] * A[n, q] - A[m, q] * A[n, p]
    return _mat(entry)


def _eval(obj, points):
    """Evaluate a scalar / vector / matrix of polynomials at ``points`` (P, 3)."""
    if isinstance(obj, Poly3):
        return obj(points)
    arr = np.asarray(obj, dtype=object)
    out = np.empty((len(points),) + arr.shape)
    for idx in np.ndindex(arr.shape):
        out[(slice(None),) + idx] = arr[idx](points)
    return out


def cell_polynomials(space, cell: int, u, scalar: bool = False):
    """Restriction of a finite element field to one cell as exact polynomials."""
    mesh = space.mesh
    gl = mesh.grad_lambda[cell]
    X0 = mesh.vertices[mesh.cells[cell, 0]]
    lam = [Poly3.affine((1.0 if k == 0 else 0.0) - gl[k] @ X0, gl[k]) for k in range(4)]
    if space.degree == 1:
        basis = lam
    else:
        basis = [lam[i] * (lam[i] * 2.0 - 1.0) for i in range(4)]
        basis += [lam[i] * lam[j] * 4.0 for i, j in TET_EDGES]
    nodes = space.cell_nodes[cell] if hasattr(space, "cell_nodes") else None
    u = np.asarray(u, float)
    if scalar:
        coeffs = u[nodes]
        out = _zero()
        for b, c in zip(basis, coeffs):
            out = out + b * c
        return out
    U = u.reshape(-1, 3)[nodes]
    comps = []
    for i in range(3):
        acc = _zero()
        for b, c in zip(basis, U[:, i]):
            if c != 0.0:
                acc = acc + b * c
        comps.append(acc)
    return _vec(comps)


class _P1Scalar:
    """Minimal view making a pressure vector look like a degree-1 scalar space."""

    def __init__(self, disc: Discretization):
        self.mesh = disc.mesh
        self.degree = 1
        lookup = np.full(disc.mesh.nvertices, -1)
        lookup[disc.pspace.dof_vertices] = np.arange(disc.pspace.ndofs)
        self.lookup = lookup
        self.cell_nodes = None

    def poly(self, cell, p):
        if p is None:
            return _zero()
        verts = self.mesh.cells[cell]
        idx = self.lookup[verts]
        if np.any(idx < 0):
            raise ValueError(f"cell {cell} is not a fluid cell")
        gl = self.mesh.grad_lambda[cell]
        X0 = self.mesh.vertices[verts[0]]
        out = _zero()
        for k in range(4):
            out = out + Poly3.affine((1.0 if k == 0 else 0.0) - gl[k] @ X0, gl[k]) * float(p[idx[k]])
        return out


# ---------------------------------------------------------------------------
# compatibility


@dataclass
class CompatibilityReport:
    residuals: dict
    tolerances: dict
    severity: dict
    skipped: list
    intermediates: dict = field(default_factory=dict)

    @property
    def passed(self) -> dict:
        return {k: (None if r is None else bool(r <= self.tolerances[k])) for k, r in self.residuals.items()}

    def failures(self, strict: bool = True) -> list:
        """Conditions with error severity that fail (strict), or only condition 1."""
        out = []
        for k, ok in self.passed.items():
            if ok is False and (k == 1 or (strict and self.severity[k] == "error")):
                out.append(k)
        return out

    @property
    def ok(self) -> bool:
        return not self.failures(strict=True)


SEVERITY = {1: "error", 2: "error", 3: "error", 4: "error", 5: "error",
            6: "warn", 7: "warn", 8: "warn", 9: "warn"}


def _fluid_terms(disc, v, p, dtp, d2tp):
    pr = disc.params
    mu, rho_f = pr.mu, pr.rho_f
    Gv = _grad_vec(v)
    D = _sym(Gv)
    divv = _tr(Gv)
    sigma = _mat(lambda i, j: D[i, j] * (2.0 * mu) - (p if i == j else 0.0))
    divsig = _div_mat(sigma)
    GvT = _mat(lambda i, j: Gv[j, i])
    S3 = _mat(lambda i, j: (divv if i == j else _zero()) - GvT[i, j])
    Q = _mat(lambda i, j: _mm(D, D)[i, j] - _mm(GvT, Gv)[i, j] * 2.0)
    S1 = _mat(lambda i, j: Q[i, j] * (-mu) + _mm(sigma, S3)[i, j])
    ddiv = _div_vec(divsig)
    gdiv = _grad_vec(divsig)
    cofG = _cof(Gv)
    S4 = _mat(lambda i, j: (ddiv / rho_f if i == j else _zero()) - gdiv[i, j] / rho_f + cofG[i, j] * 2.0)
    return dict(Gv=Gv, D=D, divv=divv, sigma=sigma, divsig=divsig, S3=S3, Q=Q, S1=S1, S4=S4)


def _coupled_terms(disc, fl, xi, dtp, d2tp):
    pr = disc.params
    Gx = _grad_vec(xi)
    eps = _sym(Gx)
    divx = _tr(Gx)
    E1 = _mat(lambda i, j: eps[i, j] * (2.0 * pr.mu_s)
              + ((divx * pr.lambda_s + fl["divv"]) if i == j else _zero()))
    out = dict(E1=E1)
    GxT = _mat(lambda i, j: Gx[j, i])
    GE = _mm(Gx, E1)
    GtG = _mm(GxT, Gx)
    E2 = _mat(lambda i, j: GE[i, j] * 2.0 + GtG[i, j] * (2.0 * pr.mu_s) + Gx[i, j] * pr.lambda_s
              + (fl["divv"] * fl["S3"][i, j] + fl["S4"][i, j]) * 2.0)
    out["E2"] = E2
    if dtp is not None and d2tp is not None:
        divE1 = _div_mat(E1)
        epsdivE1 = _sym(_grad_vec(divE1))
        QS3 = _mm(fl["Q"], fl["S3"])
        DS4 = _mm(fl["D"], fl["S4"])
        p0 = fl["p"]
        out["S2"] = _mat(lambda i, j: (d2tp if i == j else _zero()) + fl["S3"][i, j] * dtp * 2.0
                         + fl["S4"][i, j] * p0 + epsdivE1[i, j] * (2.0 * pr.mu)
                         - QS3[i, j] * 2.0 + DS4[i, j] * 2.0)
    return out


def check_compatibility(disc: Discretization, v0, xi1, p0=None, dtp0=None, d2tp0=None,
                        rel_tol: float = 1e-8) -> CompatibilityReport:
    """Residual norms of the nine compatibility conditions on the initial data.

    ``v0`` and ``xi1`` are ambient velocity vectors (only their fluid and
    solid parts are read); ``p0``, ``dtp0``, ``d2tp0`` are pressure-space
    vectors.  Conditions needing an absent time derivative of the pressure
    are skipped.  Interface conditions are evaluated on the interface facets
    with fluid quantities from the fluid cell and solid quantities from the
    solid cell; the normal is the fluid-outward one.
    """
    space = disc.space
    pr = disc.params
    v0 = np.asarray(v0, float)
    xi1 = np.asarray(xi1, float)
    arrays = [v0, xi1] + [np.asarray(a, float) for a in (p0, dtp0, d2tp0) if a is not None]
    scale = max(1.0, max(float(np.max(np.abs(a), initial=0.0)) for a in arrays))
    have1 = dtp0 is not None
    have2 = have1 and d2tp0 is not None
    skipped = ([6, 7] if not have1 else []) + ([8, 9] if not have2 else [])
    psp = _P1Scalar(disc)
    sq = {k: 0.0 for k in range(1, 10)}

    vol = tet_quadrature(12)
    for c in disc.fluid_cells:
        v = cell_polynomials(space, c, v0)
        p = psp.poly(c, p0)
        X = disc.mesh.vertices[disc.mesh.cells[c]]
        pts = vol.points @ X
        w = vol.weights * 6.0 * disc.mesh.volumes[c]
        D = _sym(_grad_vec(v))
        r3 = _eval(_mat(lambda i, j: (p if i == j else _zero()) - D[i, j] * (2.0 * pr.mu)), pts)
        sq[3] += float(np.sum(w * np.sum(r3 ** 2, axis=(1, 2))))
        lap = _vec([v[i].d(0).d(0) + v[i].d(1).d(1) + v[i].d(2).d(2) for i in range(3)])
        r4 = _eval(_vec([p.d(a) - lap[a] * pr.mu for a in range(3)]), pts)
        sq[4] += float(np.sum(w * np.sum(r4 ** 2, axis=1)))

    tri = triangle_quadrature(12)
    inter = {}
    for k, f in enumerate(disc.gc_facets):
        cf, cs = disc.gc_fluid_cells[k], disc.gc_solid_cells[k]
        n = disc.gc_normals[k]
        X = disc.mesh.vertices[disc.mesh.facets[f]]
        pts = tri.points @ X
        w = tri.weights * 2.0 * disc.mesh.facet_areas(np.array([f]))[0]
        v = cell_polynomials(space, cf, v0)
        xi = cell_polynomials(space, cs, xi1)
        p = psp.poly(cf, p0)
        dtp = psp.poly(cf, dtp0) if have1 else None
        d2tp = psp.poly(cf, d2tp0) if have2 else None
        fl = _fluid_terms(disc, v, p, dtp, d2tp)
        fl["p"] = p
        co = _coupled_terms(disc, fl, xi, dtp, d2tp)

        def add(cond, expr):
            vals = _eval(expr, pts)
            sq[cond] += float(np.sum(w * np.sum(vals.reshape(len(pts), -1) ** 2, axis=1)))

        add(1, _vec([v[i] - xi[i] for i in range(3)]))
        add(2, _mv(fl["sigma"], n))
        add(5, fl["divsig"])
        if have1:
            S1n = _mv(fl["S1"], n)
            E1n = _mv(co["E1"], n)
            add(6, _vec([dtp * n[i] - S1n[i] - E1n[i] for i in range(3)]))
            lhs = _div_mat(_mat(lambda i, j: fl["S1"][i, j] + (dtp if i == j else _zero())))
            rhs = _div_mat(co["E1"])
            add(7, _vec([lhs[i] * pr.rho_s - rhs[i] * pr.rho_f for i in range(3)]))
        if have2:
            divE1 = _div_mat(co["E1"])
            divE2 = _div_mat(co["E2"])
            divS2 = _div_mat(co["S2"])
            add(8, _vec([(fl["divv"] * divE1[i] * 2.0 + divE2[i]) * pr.rho_f - divS2[i] for i in range(3)]))
            M9 = _mat(lambda i, j: co["E2"][i, j] - (fl["divv"] * fl["S3"][i, j] + fl["S4"][i, j]) * 2.0
                      - co["S2"][i, j] * pr.rho_s)
            add(9, _mv(M9, n))
        for name, val in (("S1", fl["S1"]), ("S3", fl["S3"]), ("S4", fl["S4"]), ("E1", co["E1"]),
                          ("E2", co["E2"])) + ((("S2", co["S2"]),) if have2 else ()):
            inter.setdefault(name, []).append(_eval(val, pts))

    residuals = {k: (None if k in skipped else float(np.sqrt(sq[k]))) for k in range(1, 10)}
    tolerances = {k: rel_tol * scale for k in range(1, 10)}
    intermediates = {k: np.array(v) for k, v in inter.items()}
    return CompatibilityReport(residuals, tolerances, dict(SEVERITY), skipped, intermediates)


# ---------------------------------------------------------------------------
# energy identity


@dataclass
class EnergyLedger:
    """Per-node terms of the discrete energy identity.

    ``kinetic_fluid + kinetic_solid + elastic`` at node k equals its value at
    node 0 minus ``dissipation`` minus ``coefficient_gradient`` plus
    ``boundary_work`` plus ``mass_correction`` plus ``elastic_correction``
    (all cumulative from 0 to t_k).
    """

    times: np.ndarray
    kinetic_fluid: np.ndarray
    kinetic_solid: np.ndarray
    elastic: np.ndarray
    dissipation: np.ndarray
    coefficient_gradient: np.ndarray
    mass_correction: np.ndarray
    elastic_correction: np.ndarray
    boundary_work: np.ndarray
    imbalance: np.ndarray
    scale: np.ndarray
    a_priori_ratio: float = 0.0

    @property
    def energy(self) -> np.ndarray:
        return self.kinetic_fluid + self.kinetic_solid + self.elastic

    @property
    def relative_imbalance(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.scale > 0, self.imbalance / np.where(self.scale > 0, self.scale, 1.0), 0.0)

    COLUMNS = ("time", "kinetic_fluid", "kinetic_solid", "elastic", "dissipation", "coefficient_gradient",
               "mass_correction", "elastic_correction", "boundary_work", "imbalance", "relative_imbalance")

    def rows(self):
        rel = self.relative_imbalance
        for k in range(len(self.times)):
            yield (self.times[k], self.kinetic_fluid[k], self.kinetic_solid[k], self.elastic[k],
                   self.dissipation[k], self.coefficient_gradient[k], self.mass_correction[k],
                   self.elastic_correction[k], self.boundary_work[k], self.imbalance[k], rel[k])


def energy_ledger(trajectory, disc: Discretization | None = None) -> EnergyLedger:
    """Evaluate every term of the discrete energy identity on a trajectory.

    Uses the node operators stored on the trajectory (the ones the time
    stepper used), so the balance holds to roundoff for any frozen maps.
    """
    ops = trajectory.operators
    t = np.asarray(trajectory.times, float)
    f, h = trajectory.f_history, trajectory.h_history
    K = len(t)
    loads = trajectory.loads if trajectory.loads is not None else np.zeros_like(f)
    kin_f = np.zeros(K)
    kin_s = np.zeros(K)
    ela = np.zeros(K)
    D1s = [0.5 * (o.elastic + o.elastic.T) for o in ops]
    for k in range(K):
        Mk = ops[k].mass_block
        Mf = ops[k].mass_fluid if ops[k].mass_fluid is not None else Mk
        kin_f[k] = 0.5 * f[k] @ Mf @ f[k]
        kin_s[k] = 0.5 * f[k] @ Mk @ f[k] - kin_f[k]
        ela[k] = 0.5 * h[k] @ D1s[k] @ h[k]
    diss = np.zeros(K)
    coef = np.zeros(K)
    mcor = np.zeros(K)
    ecor = np.zeros(K)
    work = np.zeros(K)
    for k in range(K - 1):
        dt = t[k + 1] - t[k]
        o0, o1 = ops[k], ops[k + 1]
        fb = 0.5 * (f[k] + f[k + 1])
        hb = 0.5 * (h[k] + h[k + 1])
        S = 0.5 * (o0.fluid_stiffness + o1.fluid_stiffness)
        D = 0.5 * (o0.structure_stiffness + o1.structure_stiffness)
        Ds = 0.5 * (D1s[k] + D1s[k + 1])
        dM = o1.mass_block - o0.mass_block
        dD = D1s[k + 1] - D1s[k]
        diss[k + 1] = diss[k] + dt * fb @ S @ fb
        coef[k + 1] = coef[k] + dt * fb @ (D - Ds) @ hb
        mcor[k + 1] = mcor[k] + 0.25 * (f[k + 1] @ dM @ f[k + 1] + f[k] @ dM @ f[k])
        ecor[k + 1] = ecor[k] + 0.25 * (h[k + 1] @ dD @ h[k + 1] + h[k] @ dD @ h[k])
        work[k + 1] = work[k] + dt * fb @ (0.5 * (loads[k] + loads[k + 1]))
    energy = kin_f + kin_s + ela
    rhs = energy[0] - diss - coef + work + mcor + ecor
    imb = np.abs(energy - rhs)
    scale = (np.abs(energy) + abs(energy[0]) + np.abs(diss) + np.abs(coef) + np.abs(work)
             + np.abs(mcor) + np.abs(ecor))
    # estimate-form summary: sup (energy + dissipation) against data plus |g|^2
    g2 = 0.0
    if trajectory.g_history is not None and disc is not None:
        gg = np.einsum("tfpi,tfpi,fp->t", trajectory.g_history, trajectory.g_history, disc.gc_weights)
        g2 = float(np.trapezoid(gg, t)) if hasattr(np, "trapezoid") else float(np.trapz(gg, t))
    data = energy[0] + g2
    ratio = float(np.max(energy + diss) / data) if data > 0 else 0.0
    return EnergyLedger(t, kin_f, kin_s, ela, diss, coef, mcor, ecor, work, imb, scale, ratio)


# ---------------------------------------------------------------------------
# interface residuals and membership


def interface_residuals(disc: Discretization, trajectory, pressure=None):
    """Per-step (velocity continuity, traction balance) residuals on the interface.

    Velocity continuity compares the fluid-side and solid-side interface dofs
    of the velocity field, which are shared, so it is exactly zero.  The
    traction residual is the L2 norm over the interface of
    sigma_f(v, p) n - sum (b d_b xi_j) n_a - g at the step midpoints, with the
    frozen maps of the trajectory and the recovered pressure (zero if absent).
    """
    space = disc.space
    idofs = (3 * space.interface_nodes[:, None] + np.arange(3)).ravel()
    t = trajectory.times
    vel = trajectory.velocity()
    disp = trajectory.displacement()
    maps = trajectory.map_displacement
    if maps is None:
        maps = np.zeros_like(disp)
    g = trajectory.g_history
    fluid_mask = space.region_dof_mask(FLUID)
    solid_mask = space.region_dof_mask(SOLID)
    vres, tres = [], []
    for k in range(len(t) - 1):
        vmid = 0.5 * (vel[k] + vel[k + 1])
        vf = np.where(fluid_mask, vmid, 0.0)[idofs]
        vs = np.where(solid_mask, vmid, 0.0)[idofs]
        vres.append(float(np.max(np.abs(vf - vs), initial=0.0)))
        umap = 0.5 * (maps[k] + maps[k + 1])
        xi = 0.5 * (disp[k] + disp[k + 1])
        _, gv = disc.interface_fields(vmid, FLUID)
        _, gu = disc.interface_fields(umap, FLUID)
        A = np.eye(3) + gu
        if pressure is not None and k < len(pressure):
            pv = pressure[k].values
            lam = disc.gc_lam_fluid
            lookup = np.full(disc.mesh.nvertices, -1)
            lookup[disc.pspace.dof_vertices] = np.arange(disc.pspace.ndofs)
            pdofs = lookup[disc.mesh.cells[disc.gc_fluid_cells]]
            p = np.einsum("fpk,fk->fp", lam, pv[pdofs])
        else:
            p = np.zeros(gv.shape[:2])
        sig = lagrangian_fluid_stress(gv, p, A, disc.params.mu, disc.det_floor)
        _, gs = disc.interface_fields(umap, SOLID)
        b = combined_coefficients(gs, disc.params)
        _, gx = disc.interface_fields(xi, SOLID)
        n = disc.gc_normals
        solid = np.einsum("fpiajb,fpjb,fa->fpi", b, gx, n)
        gm = 0.5 * (g[k] + g[k + 1]) if g is not None else 0.0
        defect = np.einsum("fpia,fa->fpi", sig, n) - solid - gm
        tres.append(float(np.sqrt(np.sum(disc.gc_weights[..., None] * defect ** 2))))
    return np.array(vres), np.array(tres)


def membership_ledger(disc: Discretization, trajectory, M_bound: float) -> dict:
    """Discrete F-norm of the fluid velocity and S-norm of the displacement against M."""
    if hasattr(trajectory, "velocity") and callable(trajectory.velocity):
        vel, disp = trajectory.velocity(), trajectory.displacement()
    else:
        vel, disp = trajectory.velocity, trajectory.displacement
    F = history_norms(disc, vel, trajectory.times, "fluid")
    S = history_norms(disc, disp, trajectory.times, "solid")
    return {"F": F, "S": S, "M_bound": float(M_bound),
            "member": bool(F["total"] <= M_bound and S["total"] <= M_bound),
            "violations": [name for name, val in (("F", F["total"]), ("S", S["total"])) if val > M_bound]}
