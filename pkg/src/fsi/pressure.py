"""
Pressure recovery and the discrete inf-sup constant.

The divergence-free formulation carries no pressure.  It is recovered
afterwards as the least-squares multiplier of the fluid momentum residual
against velocity tests that vanish on the pinned boundaries and on the
interface; the outflow boundary stays free, which fixes the additive constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import splu

from .assembly import (Discretization, divergence_matrix, fluid_stiffness_matrix, map_state_from_displacement)
from .mesh import FLUID

__all__ = [
    "PressureField",
    "InfSupReport",
    "SingularPressureError",
    "pressure_test_dofs",
    "momentum_residual",
    "recover_pressure",
    "recover_pressure_history",
    "measure_infsup",
    "DEFAULT_INFSUP_THRESHOLD",
]

DEFAULT_INFSUP_THRESHOLD = 1e-3


class SingularPressureError(np.linalg.LinAlgError):
    """The pressure normal equations are singular (vanishing inf-sup constant)."""


@dataclass
class PressureField:
    values: np.ndarray
    time_stamp: float = 0.0
    residual_norm: float = 0.0
    load_norm: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("pressure values must be finite")


@dataclass
class InfSupReport:
    beta_h: float
    velocity_degree: int
    pressure_degree: int
    n_velocity: int
    n_pressure: int
    threshold: float

    @property
    def passed(self) -> bool:
        return self.beta_h > self.threshold


def pressure_test_dofs(disc: Discretization) -> np.ndarray:
    """Fluid velocity dofs off the pinned boundaries and off the interface."""
    space = disc.space
    mask = space.region_dof_mask(FLUID) & ~space.dirichlet_mask
    idofs = (3 * space.interface_nodes[:, None] + np.arange(3)).ravel()
    mask[idofs] = False
    return np.flatnonzero(mask)


def _operators(disc: Discretization, displacement):
    u = np.zeros(disc.ndofs) if displacement is None else np.asarray(displacement, float)
    ms = map_state_from_displacement(disc, u)
    Z = pressure_test_dofs(disc)
    B = divergence_matrix(disc, ms.flow_map_grad)[:, Z].toarray()
    K = disc.grams[("fluid", "h1")][Z][:, Z].tocsc()
    return ms, Z, B, splu(K)


def _pressure_mass(disc: Discretization) -> np.ndarray:
    ps = disc.pspace
    m = np.einsum("cq,qa,qb->cab", disc.wdet[ps.cells], disc.quad.points, disc.quad.points)
    out = np.zeros((ps.ndofs, ps.ndofs))
    np.add.at(out, (ps.cell_dofs[:, :, None], ps.cell_dofs[:, None, :]), m)
    return out


def momentum_residual(disc: Discretization, velocity, velocity_rate, displacement=None,
                      displacement_end=None) -> np.ndarray:
    """int rho_f det(A) d_t v . z + int sigma_f(v) : grad z for every ambient test dof z.

    With ``displacement_end`` the operators are the averages of the two map
    states, as in one implicit-midpoint step.
    """
    states = [displacement] if displacement_end is None else [displacement, displacement_end]
    out = 0.0
    for u in states:
        u = np.zeros(disc.ndofs) if u is None else np.asarray(u, float)
        ms = map_state_from_displacement(disc, u)
        M = disc.mass_matrix(disc.fluid_cells, disc.params.rho_f * ms.det_flow)
        S = fluid_stiffness_matrix(disc, ms.flow_map_grad)
        out = out + M @ np.asarray(velocity_rate, float) + S @ np.asarray(velocity, float)
    return out / len(states)


def recover_pressure(disc: Discretization, velocity, velocity_rate, displacement=None,
                     time: float = 0.0, threshold: float = DEFAULT_INFSUP_THRESHOLD,
                     displacement_end=None) -> PressureField:
    """Least-squares pressure of the momentum residual in the dual H1 norm.

    Minimizes |R - B^T p|_{K^{-1}} with B the weighted divergence rows and K
    the H1 Gram matrix of the test velocities.  ``displacement`` fixes the
    maps; with ``displacement_end`` the residual uses the step-averaged
    operators and B the midpoint maps.
    """
    mid = displacement
    if displacement_end is not None:
        u0 = np.zeros(disc.ndofs) if displacement is None else np.asarray(displacement, float)
        mid = 0.5 * (u0 + np.asarray(displacement_end, float))
    _, Z, B, Klu = _operators(disc, mid)
    R = momentum_residual(disc, velocity, velocity_rate, displacement, displacement_end)[Z]
    KiBt = Klu.solve(B.T)
    N = B @ KiBt
    Mp = _pressure_mass(disc)
    lam = sla.eigh(0.5 * (N + N.T), Mp, eigvals_only=True, subset_by_index=[0, 0])[0]
    beta = float(np.sqrt(max(lam, 0.0)))
    if beta <= threshold:
        raise SingularPressureError(f"pressure normal equations are singular: beta_h = {beta:.3g}")
    KiR = Klu.solve(R)
    p = sla.solve(N, B @ KiR, assume_a="pos")
    r = R - B.T @ p
    return PressureField(p, float(time), float(np.sqrt(max(r @ Klu.solve(r), 0.0))),
                         float(np.sqrt(max(R @ KiR, 0.0))))


def recover_pressure_history(disc: Discretization, trajectory) -> list:
    """One pressure per time step, at the step midpoints, with the frozen maps of the trajectory."""
    t = trajectory.times
    vel = trajectory.velocity()
    maps = trajectory.map_displacement
    if maps is None:
        maps = np.zeros((len(t), disc.ndofs))
    out = []
    for k in range(len(t) - 1):
        dt = t[k + 1] - t[k]
        same = np.array_equal(maps[k], maps[k + 1])
        out.append(recover_pressure(disc, 0.5 * (vel[k] + vel[k + 1]), (vel[k + 1] - vel[k]) / dt,
                                    maps[k], 0.5 * (t[k] + t[k + 1]),
                                    displacement_end=None if same else maps[k + 1]))
    return out


def measure_infsup(disc: Discretization, displacement=None,
                   threshold: float = DEFAULT_INFSUP_THRESHOLD) -> InfSupReport:
    """Smallest singular value of M_p^{-1/2} B K^{-1/2}.

    Computed as the square root of the smallest generalized eigenvalue of
    (B K^{-1} B^T, M_p).
    """
    _, Z, B, Klu = _operators(disc, displacement)
    N = B @ Klu.solve(B.T)
    Mp = _pressure_mass(disc)
    lam = sla.eigh(0.5 * (N + N.T), Mp, eigvals_only=True, subset_by_index=[0, 0])[0]
    return InfSupReport(float(np.sqrt(max(lam, 0.0))), disc.space.degree, disc.pspace.degree, len(Z),
                        disc.pspace.ndofs, float(threshold))
