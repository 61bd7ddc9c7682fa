"""
Saint Venant-Kirchhoff structure with a quasi-incompressibility penalty, and
the Lagrangian Newtonian fluid stress.

All point functions act on the trailing (3, 3) axes and broadcast over any
leading axes.  Index convention for the fourth-order tensors:
``c[..., i, a, j, b] = dP_ia / dH_jb`` with ``H_jb = d_b xi_j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import LEVI_CIVITA, cofactor, determinant, inverse

__all__ = [
    "MaterialParams",
    "ElasticTensorField",
    "green_lagrange",
    "second_piola",
    "first_piola",
    "first_piola_from_strain",
    "quasi_inc_stress",
    "svk_coefficients",
    "quasi_inc_coefficients",
    "combined_coefficients",
    "coefficient_derivative",
    "coefficient_divergence",
    "contract_divergence",
    "piola_divergence",
    "boundary_traction_integral",
    "lagrangian_fluid_stress",
    "finite_difference_jacobian",
    "tensor_selftest",
]

_I = np.eye(3)
# frequently used delta products, indexed (i, a, j, b)
_D_IJ_AB = np.einsum("ij,ab->iajb", _I, _I)
_D_IB_AJ = np.einsum("ib,aj->iajb", _I, _I)
_D_IA_JB = np.einsum("ia,jb->iajb", _I, _I)
# eps_jni eps_bqa : derivative of cof(F)_ia with respect to F_jb is K[i,a,j,b,n,q] F_nq
_K_COF = np.einsum("jni,bqa->iajbnq", LEVI_CIVITA, LEVI_CIVITA)
_K_COF_MAT = _K_COF.reshape(81, 9).T.copy()


@dataclass(frozen=True)
class MaterialParams:
    rho_f: float = 1.0
    rho_s: float = 1.0
    mu: float = 1.0
    mu_s: float = 1.0
    lambda_s: float = 1.0
    C_penalty: float = 10.0

    def __post_init__(self):
        for name in ("rho_f", "rho_s", "mu", "mu_s", "C_penalty"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not self.lambda_s >= 0:
            raise ValueError(f"lambda_s must be non-negative, got {self.lambda_s!r}")


@dataclass
class ElasticTensorField:
    """Fourth-order coefficients per point, ``coeffs`` (..., 3, 3, 3, 3).

    ``parts`` optionally keeps the polynomial-degree split (list indexed by degree).
    """

    coeffs: np.ndarray
    parts: list | None = None


def green_lagrange(F):
    F = np.asarray(F)
    return 0.5 * (np.swapaxes(F, -1, -2) @ F - _I)


def second_piola(E, params: MaterialParams):
    E = np.asarray(E)
    tr = np.trace(E, axis1=-2, axis2=-1)
    return 2.0 * params.mu_s * E + params.lambda_s * tr[..., None, None] * _I


def first_piola_from_strain(F, params: MaterialParams):
    """P = F S(E(F))."""
    return np.asarray(F) @ second_piola(green_lagrange(F), params)


def first_piola(H, params: MaterialParams):
    """First Piola-Kirchhoff stress written in the displacement gradient H.

    P = (Id + H) (mu_s (H + H^T + H^T H) + lambda_s/2 (2 tr H + |H|^2) Id)
    """
    H = np.asarray(H)
    Ht = np.swapaxes(H, -1, -2)
    tr = np.trace(H, axis1=-2, axis2=-1)
    frob2 = np.einsum("...ij,...ij->...", H, H)
    inner = params.mu_s * (H + Ht + Ht @ H) + (0.5 * params.lambda_s * (2 * tr + frob2))[..., None, None] * _I
    return (_I + H) @ inner


def quasi_inc_stress(H):
    """(det F - 1) cof F with F = Id + H."""
    F = _I + np.asarray(H)
    return (determinant(F) - 1.0)[..., None, None] * cofactor(F)


def svk_coefficients(H, params: MaterialParams, return_parts: bool = False):
    """c_{iajb}(H) = dP_ia/dH_jb, a quadratic polynomial in H.

    The summed tensor is evaluated in the closed form
    delta_ij S_ba + mu_s (F_ib F_ja + (F F^T)_ij delta_ab) + lambda_s F_ia F_jb;
    ``return_parts`` also returns the constant, linear and quadratic parts.
    """
    H = np.asarray(H)
    mu, lam = params.mu_s, params.lambda_s
    if not return_parts:
        F = _I + H
        Ft = np.swapaxes(F, -1, -2)
        S = second_piola(green_lagrange(F), params)
        FFt = F @ Ft
        # output axes (i, a, j, b)
        return (_I[:, None, :, None] * np.swapaxes(S, -1, -2)[..., None, :, None, :]
                + mu * (F[..., :, None, None, :] * Ft[..., None, :, :, None]
                        + FFt[..., :, None, :, None] * _I[None, :, None, :])
                + lam * F[..., :, :, None, None] * F[..., None, None, :, :])
    const = mu * (_D_IB_AJ + _D_IJ_AB) + lam * _D_IA_JB
    const = np.broadcast_to(const, H.shape[:-2] + (3, 3, 3, 3))
    # H[..., x, y] = d_y xi_x
    tr = np.trace(H, axis1=-2, axis2=-1)
    lin = mu * (np.einsum("ij,...ab->...iajb", _I, H)      # d_ij d_b xi_a
                + np.einsum("aj,...ib->...iajb", _I, H)    # d_aj d_b xi_i
                + np.einsum("ij,...ba->...iajb", _I, H)    # d_ij d_a xi_b
                + np.einsum("ab,...ij->...iajb", _I, H)    # d_ab d_j xi_i
                + np.einsum("ib,...ja->...iajb", _I, H)    # d_ib d_a xi_j
                + np.einsum("ab,...ji->...iajb", _I, H))   # d_ab d_i xi_j
    lin = lin + lam * (np.einsum("ia,...jb->...iajb", _I, H)
                       + tr[..., None, None, None, None] * _D_IJ_AB
                       + np.einsum("jb,...ia->...iajb", _I, H))
    frob2 = np.einsum("...ij,...ij->...", H, H)
    quad = mu * (np.einsum("ij,...mb,...ma->...iajb", _I, H, H)
                 + np.einsum("...ib,...ja->...iajb", H, H)
                 + np.einsum("ab,...jm,...im->...iajb", _I, H, H))
    quad = quad + lam * (0.5 * frob2[..., None, None, None, None] * _D_IJ_AB
                         + np.einsum("...ia,...jb->...iajb", H, H))
    return ElasticTensorField(const + lin + quad, [np.array(const), lin, quad])


def quasi_inc_coefficients(H, return_parts: bool = False):
    """d_{iajb}(H) = d[(det F - 1) cof F]_ia / dH_jb, a quartic polynomial in H.

    Product rule on the Levi-Civita forms:
    d = cof F (x) cof F + (det F - 1) eps_jni eps_bqa F_nq,
    with cof(Id + H) = Id + (tr H Id - H^T) + cof H and
    det(Id + H) - 1 = tr H + tr cof H + det H.
    """
    H = np.asarray(H)
    if not return_parts:
        F = _I + H
        cof = cofactor(F)
        jm1 = determinant(F) - 1.0
        KF = (F.reshape(F.shape[:-2] + (9,)) @ _K_COF_MAT).reshape(F.shape[:-2] + (3, 3, 3, 3))
        return cof[..., :, :, None, None] * cof[..., None, None, :, :] + jm1[..., None, None, None, None] * KF
    Ht = np.swapaxes(H, -1, -2)
    tr = np.trace(H, axis1=-2, axis2=-1)
    shape = H.shape[:-2]
    C0 = np.broadcast_to(_I, shape + (3, 3))
    C1 = tr[..., None, None] * _I - Ht
    C2 = cofactor(H)
    j1 = tr
    j2 = np.trace(C2, axis1=-2, axis2=-1)
    j3 = determinant(H)
    K0 = np.broadcast_to(np.einsum("iajbnn->iajb", _K_COF), shape + (3, 3, 3, 3))
    K1 = np.einsum("iajbnq,...nq->...iajb", _K_COF, H)

    def outer(A, B):
        return np.einsum("...ia,...jb->...iajb", A, B)

    parts = [
        outer(C0, C0),
        outer(C0, C1) + outer(C1, C0) + j1[..., None, None, None, None] * K0,
        outer(C0, C2) + outer(C2, C0) + outer(C1, C1)
        + j1[..., None, None, None, None] * K1 + j2[..., None, None, None, None] * K0,
        outer(C1, C2) + outer(C2, C1)
        + j2[..., None, None, None, None] * K1 + j3[..., None, None, None, None] * K0,
        outer(C2, C2) + j3[..., None, None, None, None] * K1,
    ]
    return ElasticTensorField(parts[0] + parts[1] + parts[2] + parts[3] + parts[4], parts)


def combined_coefficients(H, params: MaterialParams):
    """b = c + C_penalty d."""
    return svk_coefficients(H, params) + params.C_penalty * quasi_inc_coefficients(H)


def coefficient_derivative(H, dH, params: MaterialParams, step: float = 1e-30):
    """Directional derivative of b at H along dH (complex step, exact for polynomials)."""
    H = np.asarray(H, float)
    dH = np.asarray(dH, float)
    return combined_coefficients(H + 1j * step * dH, params).imag / step


def _cof_bilinear(F, G):
    # derivative of the quadratic map cof at F along G
    return cofactor(F + G) - cofactor(F) - cofactor(G)


def coefficient_divergence(H, dH, params: MaterialParams):
    """e_{ijb} = sum_a d_a b_{iajb}(H(x)) given the spatial derivatives of H.

    ``dH[..., a, k, l] = d_a H_kl``.  Evaluated in closed form by the product
    rule on c = delta_ij S_ba + mu_s (F_ib F_ja + (F F^T)_ij delta_ab)
    + lambda_s F_ia F_jb and d = cof F (x) cof F + (det F - 1) K F.
    """
    H = np.asarray(H, float)
    G = np.asarray(dH, float)
    mu, lam = params.mu_s, params.lambda_s
    F = _I + H
    Ft = np.swapaxes(F, -1, -2)
    Gt = np.swapaxes(G, -1, -2)
    # c part
    Edot = 0.5 * (Gt @ F[..., None, :, :] + Ft[..., None, :, :] @ G)       # (..., a, k, l)
    divS = 2 * mu * np.einsum("...aba->...b", Edot) + lam * np.einsum("...bkk->...b", Edot)
    divF = np.einsum("...aia->...i", G)
    e = _I[:, :, None] * divS[..., None, None, :]
    e = e + mu * (np.einsum("...aib,...ja->...ijb", G, F)
                  + F[..., :, None, :] * divF[..., None, :, None]
                  + np.einsum("...bik,...jk->...ijb", G, F)
                  + np.einsum("...ik,...bjk->...ijb", F, G))
    e = e + lam * (divF[..., :, None, None] * F[..., None, :, :]
                   + np.einsum("...ia,...ajb->...ijb", F, G))
    # d part
    cof = cofactor(F)
    Fa = np.broadcast_to(F[..., None, :, :], G.shape)
    dcof = _cof_bilinear(Fa, G)                                            # (..., a, k, l)
    jm1 = determinant(F) - 1.0
    dJ = np.einsum("...kl,...akl->...a", cof, G)
    KF = (F.reshape(F.shape[:-2] + (9,)) @ _K_COF_MAT).reshape(F.shape[:-2] + (3, 3, 3, 3))
    KG = (G.reshape(G.shape[:-2] + (9,)) @ _K_COF_MAT).reshape(G.shape[:-2] + (3, 3, 3, 3))
    d = (np.einsum("...aia->...i", dcof)[..., :, None, None] * cof[..., None, :, :]
         + np.einsum("...ia,...ajb->...ijb", cof, dcof)
         + np.einsum("...a,...iajb->...ijb", dJ, KF)
         + jm1[..., None, None, None] * np.einsum("...aiajb->...ijb", KG))
    return e + params.C_penalty * d


def contract_divergence(coeffs, xi_hessian):
    """sum_{a,j,b} coeffs_{iajb} d_a d_b xi_j; ``xi_hessian[..., j, a, b]``."""
    return np.einsum("...iajb,...jab->...i", coeffs, xi_hessian)


def piola_divergence(coeffs, space, xi, cells):
    """Strong divergence of the stress, evaluated cellwise.

    ``coeffs`` (C, Q, 3, 3, 3, 3) on ``cells``.  Requires a degree >= 2 space
    (second derivatives vanish identically inside P1 cells).
    """
    if space.degree < 2:
        raise ValueError("strong divergence needs a degree >= 2 displacement space")
    hess = space.hessian(cells, xi)
    return contract_divergence(coeffs, hess[:, None])


def boundary_traction_integral(times, coeff_history, rate_grad_history, normals, initial_grad=None,
                               params: MaterialParams | None = None):
    """Normal stress rebuilt from its time derivative.

    sum_{a,j,b} (int_0^t c_{iajb} d_s d_b xi_j ds) n_a by cumulative trapezoid.

    ``coeff_history`` (T, ..., 3, 3, 3, 3), ``rate_grad_history`` (T, ..., 3, 3)
    and ``normals`` (..., 3).  Returns (T, ..., 3).  The initial stress on the
    facets must vanish; pass ``initial_grad`` to have that checked.
    """
    times = np.asarray(times, float)
    if times[0] != 0.0:
        raise ValueError(f"traction history must start at t=0, starts at {times[0]:g}")
    if initial_grad is not None:
        P0 = first_piola(initial_grad, params or MaterialParams())
        if np.max(np.abs(P0), initial=0.0) > 0.0:
            raise ValueError("initial traction is nonzero on the facet set")
    rate = np.einsum("t...iajb,t...jb->t...ia", np.asarray(coeff_history), np.asarray(rate_grad_history))
    from .kinematics import integrate_history
    stress = integrate_history(times, rate)
    return np.einsum("t...ia,...a->t...i", stress, np.asarray(normals))


def lagrangian_fluid_stress(grad_v, p, flow_grad, mu: float, det_floor: float = 0.1,
                            viscous_only: bool = False):
    """(mu (grad v A^{-1} + A^{-T} grad v^T) - p Id) cof(A) with A the flow-map gradient."""
    G = np.asarray(grad_v)
    A = getattr(flow_grad, "values", flow_grad)
    Ainv = inverse(A, det_floor)
    cof = cofactor(A)
    X = G @ Ainv
    visc = mu * (X + np.swapaxes(X, -1, -2)) @ cof
    if viscous_only:
        return visc
    p = np.asarray(p, float)
    return visc - p[..., None, None] * cof


def finite_difference_jacobian(fn, H, step: float = 1e-5):
    """Central differences J[i, a, j, b] = (fn(H + s e_jb) - fn(H - s e_jb))_ia / 2s."""
    H = np.asarray(H, float)
    out = np.zeros(H.shape[:-2] + (3, 3, 3, 3))
    for j in range(3):
        for b in range(3):
            E = np.zeros((3, 3))
            E[j, b] = step
            out[..., :, :, j, b] = (fn(H + E) - fn(H - E)) / (2 * step)
    return out


def tensor_selftest(n: int = 100, max_norm: float = 0.3, seed: int = 0,
                    params: MaterialParams | None = None) -> dict:
    """Max relative errors of the analytic c and d against finite differences.

    Draws ``n`` displacement gradients with Frobenius norm at most ``max_norm``.
    """
    params = params or MaterialParams()
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((n, 3, 3))
    H *= (max_norm * rng.uniform(0.0, 1.0, n) / np.linalg.norm(H, axis=(1, 2)))[:, None, None]
    c = svk_coefficients(H, params)
    d = quasi_inc_coefficients(H)
    c_fd = finite_difference_jacobian(lambda X: first_piola(X, params), H)
    d_fd = finite_difference_jacobian(quasi_inc_stress, H)

    def rel(a, b):
        return float(np.max(np.linalg.norm((a - b).reshape(n, -1), axis=1)
                            / np.linalg.norm(b.reshape(n, -1), axis=1)))

    return {"c": rel(c, c_fd), "d": rel(d, d_fd), "samples": n}
