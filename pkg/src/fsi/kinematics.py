"""
Flow map and structure deformation on the reference configuration.

Gradients are stored per (cell, quadrature point) as 3x3 matrices.  The
determinant and cofactor use the Levi-Civita contractions directly, so they
work unchanged for complex arguments (used for complex-step derivatives in
the assembly).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .mesh import FLUID, SOLID, FunctionSpace

__all__ = [
    "LEVI_CIVITA",
    "DetFloorError",
    "TensorField",
    "MapState",
    "MonitorReport",
    "determinant",
    "cofactor",
    "determinant_einsum",
    "cofactor_einsum",
    "inverse",
    "integrate_history",
    "build_flow_map",
    "build_deformation",
    "det_floor_monitor",
]

DEFAULT_DET_FLOOR = 0.1


def _levi_civita():
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1.0
    eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1.0
    return eps


LEVI_CIVITA = _levi_civita()


class DetFloorError(ArithmeticError):
    """A Jacobian determinant dropped below the admissible floor."""

    def __init__(self, message, value=None, index=None):
        super().__init__(message)
        self.value = value
        self.index = index


@dataclass
class TensorField:
    """3x3 matrices at quadrature points of ``cells``; ``values`` is (C, Q, 3, 3)."""

    values: np.ndarray
    time: float = 0.0
    cells: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape[-2:] != (3, 3):
            raise ValueError("TensorField values must end in (3, 3)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("TensorField contains non-finite entries")


_PERMS = [(p, LEVI_CIVITA[p]) for p in np.ndindex(3, 3, 3) if LEVI_CIVITA[p] != 0]


def determinant(F):
    """det F = 1/6 eps_ijk eps_pqr F_ip F_jq F_kr, pointwise over leading axes.

    The double sum collapses onto the six nonzero permutation symbols.
    """
    F = np.asarray(getattr(F, "values", F))
    out = 0.0
    for (p, q, r), sign in _PERMS:
        out = out + sign * F[..., 0, p] * F[..., 1, q] * F[..., 2, r]
    return out


def cofactor(F):
    """cof(F)_ij = 1/2 eps_mni eps_pqj F_mp F_nq.

    Only the two cyclic successors of i and of j contribute.
    """
    F = np.asarray(getattr(F, "values", F))
    out = np.empty(F.shape, dtype=F.dtype)
    for i in range(3):
        m, n = (i + 1) % 3, (i + 2) % 3
        for j in range(3):
            p, q = (j + 1) % 3, (j + 2) % 3
            out[..., i, j] = F[..., m, p] * F[..., n, q] - F[..., m, q] * F[..., n, p]
    return out


def determinant_einsum(F):
    """Dense Levi-Civita contraction, kept as a reference for tests."""
    F = np.asarray(getattr(F, "values", F))
    e = LEVI_CIVITA
    return np.einsum("ijk,pqr,...ip,...jq,...kr->...", e, e, F, F, F, optimize=True) / 6.0


def cofactor_einsum(F):
    F = np.asarray(getattr(F, "values", F))
    e = LEVI_CIVITA
    return 0.5 * np.einsum("mni,pqj,...mp,...nq->...ij", e, e, F, F, optimize=True)


def inverse(F, det_floor: float = DEFAULT_DET_FLOOR):
    """F^{-1} = cof(F)^T / det F, refusing points where det F <= ``det_floor``."""
    F = getattr(F, "values", F)
    det = determinant(F)
    if det.size:
        k = np.unravel_index(np.argmin(det.real), det.shape)
        if det.real[k] <= det_floor:
            raise DetFloorError(
                f"det = {det.real[k]:.6g} at point {tuple(int(i) for i in k)} "
                f"is below the floor {det_floor:g}", value=float(det.real[k]), index=k)
    return np.swapaxes(cofactor(F), -1, -2) / det[..., None, None]


def integrate_history(times, values, t=None):
    """Trapezoidal integral of a sampled history.

    Without ``t`` returns the cumulative integral at every sample (same shape
    as ``values``); with ``t`` returns the integral over ``[times[0], t]``.
    """
    times = np.asarray(times, float)
    values = np.asarray(values)
    cum = cumulative_trapezoid(values, times, axis=0, initial=0.0)
    if t is None:
        return cum
    k = int(np.searchsorted(times, t, side="right")) - 1
    k = min(max(k, 0), len(times) - 1)
    if np.isclose(t, times[k], rtol=0.0, atol=1e-14):
        return cum[k]
    tau = t - times[k]
    slope = (values[k + 1] - values[k]) / (times[k + 1] - times[k])
    return cum[k] + tau * values[k] + 0.5 * tau * tau * slope


def _check_history(times, t):
    times = np.asarray(times, float)
    if times.ndim != 1 or len(times) == 0:
        raise ValueError("velocity history is empty")
    if times[0] != 0.0:
        raise ValueError(f"velocity history must start at t=0, starts at {times[0]:g}")
    if np.any(np.diff(times) <= 0):
        raise ValueError("velocity history times must increase strictly")
    if t < 0.0 or t > times[-1] * (1 + 1e-12) + 1e-15:
        raise ValueError(f"t={t:g} lies outside the history [0, {times[-1]:g}]")
    if len(times) > 2:
        gaps = np.diff(times)
        step = np.median(gaps)
        if gaps.max() > 1.5 * step:
            k = int(np.argmax(gaps))
            raise ValueError(f"history gap {gaps[k]:g} after t={times[k]:g} exceeds one step ({step:g})")


def build_flow_map(space: FunctionSpace, quad, velocity_history, t: float, cells=None) -> TensorField:
    """Gradient of the flow map x + int_0^t v(x, s) ds at quadrature points.

    ``velocity_history`` is a sequence of ``(time, dof_vector)`` pairs.
    """
    times = np.array([s for s, _ in velocity_history], float)
    _check_history(times, t)
    if cells is None:
        cells = space.mesh.cells_in(FLUID)
    if t == 0.0:
        vals = np.broadcast_to(np.eye(3), (len(cells), quad.npoints, 3, 3)).copy()
        return TensorField(vals, 0.0, cells)
    values = np.array([u for _, u in velocity_history], float)
    disp = integrate_history(times, values, t)
    _, grad = space.evaluate(cells, quad.points, disp)
    return TensorField(np.eye(3) + grad, float(t), cells)


def build_deformation(space: FunctionSpace, quad, displacement, cells=None, time: float = 0.0,
                      atol: float = 0.0) -> TensorField:
    """Deformation gradient Id + grad(xi) on the solid cells."""
    displacement = np.asarray(displacement, float)
    outside = ~space.region_dof_mask(SOLID)
    if np.any(np.abs(displacement[outside]) > atol):
        k = int(np.flatnonzero(np.abs(displacement[outside]) > atol)[0])
        dof = int(np.flatnonzero(outside)[k])
        raise ValueError(f"displacement is nonzero on dof {dof}, which is not in the solid region")
    if cells is None:
        cells = space.mesh.cells_in(SOLID)
    _, grad = space.evaluate(cells, quad.points, displacement)
    return TensorField(np.eye(3) + grad, float(time), cells)


@dataclass
class MapState:
    flow_map_grad: TensorField
    defo_grad: TensorField
    det_flow: np.ndarray
    det_defo: np.ndarray
    cof_flow: TensorField
    cof_defo: TensorField
    inv_flow: TensorField

    @classmethod
    def from_gradients(cls, flow_grad: TensorField, defo_grad: TensorField,
                       det_floor: float = DEFAULT_DET_FLOOR) -> "MapState":
        inv = inverse(flow_grad.values, det_floor)
        det_d = determinant(defo_grad.values)
        if det_d.size and det_d.min() <= det_floor:
            k = np.unravel_index(np.argmin(det_d), det_d.shape)
            raise DetFloorError(f"deformation det = {det_d[k]:.6g} is below the floor {det_floor:g}",
                                value=float(det_d[k]), index=k)
        return cls(flow_grad, defo_grad, determinant(flow_grad.values), det_d,
                   TensorField(cofactor(flow_grad.values), flow_grad.time, flow_grad.cells),
                   TensorField(cofactor(defo_grad.values), defo_grad.time, defo_grad.cells),
                   TensorField(inv, flow_grad.time, flow_grad.cells))

    @classmethod
    def identity(cls, space: FunctionSpace, quad) -> "MapState":
        mesh = space.mesh
        fc, sc = mesh.cells_in(FLUID), mesh.cells_in(SOLID)
        eye = np.eye(3)
        return cls.from_gradients(
            TensorField(np.broadcast_to(eye, (len(fc), quad.npoints, 3, 3)).copy(), 0.0, fc),
            TensorField(np.broadcast_to(eye, (len(sc), quad.npoints, 3, 3)).copy(), 0.0, sc))


@dataclass
class MonitorReport:
    min_det: float
    region: str
    time: float
    flagged: bool
    floor: float
    per_region: dict


def det_floor_monitor(map_states, floor: float = DEFAULT_DET_FLOOR) -> MonitorReport:
    """Smallest determinant over all points, regions and states.  Never raises."""
    if isinstance(map_states, MapState):
        map_states = [map_states]
    best = (np.inf, "none", 0.0)
    per_region = {"fluid": np.inf, "solid": np.inf}
    for ms in map_states:
        for region, det, t in (("fluid", ms.det_flow, ms.flow_map_grad.time),
                               ("solid", ms.det_defo, ms.defo_grad.time)):
            if np.size(det) == 0:
                continue
            m = float(np.min(np.real(det)))
            per_region[region] = min(per_region[region], m)
            if m < best[0]:
                best = (m, region, float(t))
    return MonitorReport(best[0], best[1], best[2], bool(best[0] < floor), floor, per_region)
