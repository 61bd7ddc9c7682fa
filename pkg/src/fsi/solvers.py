"""
Time stepping of the Galerkin system and the two fixed-point loops.

The Galerkin unknowns are F = (f, h) with gamma = sum f_l psi_l the velocity
(fluid velocity on the fluid, structure velocity on the solid) and
h' = f, so that sum h_l psi_l is the time-integrated velocity: the flow-map
displacement on the fluid and the structure displacement on the solid.

One step of the implicit midpoint rule for  A F' = B F + C  with
B = [[-S, -D], [Id, 0]] uses the averages of the operators at both ends of
the step.  Eliminating h_{k+1} = h_k + dt (f_k + f_{k+1}) / 2 gives

    (M/dt + S/2 + D dt/4) f_{k+1} = (M/dt - S/2 - D dt/4) f_k - D h_k + C.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .assembly import (Discretization, DivFreeBasis, GalerkinOperators, assemble_operators, build_constraint,
                       build_divfree_basis, compose_initial, project_initial)
from .constitutive import combined_coefficients
from .kinematics import DetFloorError
from .mesh import SOLID
from .norms import history_norms, relative_update

__all__ = [
    "SolverConfig",
    "Iterate",
    "TrajectoryState",
    "IterationLog",
    "NonlinearResult",
    "BisectOutcome",
    "NonContractionError",
    "IncompatibleDataError",
    "ode_step",
    "prepare_sweep",
    "interface_datum",
    "auxiliary_solve",
    "linearized_solve",
    "nonlinear_solve",
    "time_window_bisect",
    "make_basis",
]

log = logging.getLogger(__name__)

# updates below this relative size are roundoff; their ratios are not judged
NOISE_FLOOR = 1e-13


class NonContractionError(RuntimeError):
    """A fixed-point loop failed to contract; ``log`` holds the iteration history."""

    def __init__(self, message, log=None, loop="outer"):
        super().__init__(message)
        self.log = log
        self.loop = loop


class IncompatibleDataError(ValueError):
    """Initial data fail the configured compatibility check."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class SolverConfig:
    T: float = 0.05
    dt: float = 0.001
    fp_inner_tol: float = 1e-8
    fp_outer_tol: float = 1e-8
    max_inner_iters: int = 20
    max_outer_iters: int = 20
    M_bound: float = 10.0
    T_bisect_max: int = 3
    relaxation: float = 1.0

    def __post_init__(self):
        if not (self.T > 0 and 0 < self.dt <= self.T):
            raise ValueError(f"need 0 < dt <= T, got dt={self.dt!r}, T={self.T!r}")
        if not (self.fp_inner_tol > 0 and self.fp_outer_tol > 0):
            raise ValueError("fixed-point tolerances must be positive")
        if not self.M_bound > 1:
            raise ValueError(f"M_bound must exceed 1, got {self.M_bound!r}")
        if self.max_inner_iters < 1 or self.max_outer_iters < 1:
            raise ValueError("iteration limits must be at least 1")
        if self.T_bisect_max < 0:
            raise ValueError("T_bisect_max must be non-negative")
        if not 0 < self.relaxation <= 1:
            raise ValueError(f"relaxation must lie in (0, 1], got {self.relaxation!r}")

    @property
    def nsteps(self) -> int:
        return max(int(np.ceil(self.T / self.dt - 1e-9)), 1)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nsteps + 1)


@dataclass
class Iterate:
    """A given pair (v, xi) as ambient histories on the time grid.

    ``velocity[k]`` is the velocity field, ``displacement[k]`` its trapezoidal
    time integral (flow-map displacement on the fluid, xi on the solid).
    """

    times: np.ndarray
    velocity: np.ndarray
    displacement: np.ndarray

    @classmethod
    def constant_extension(cls, times, gamma0) -> "Iterate":
        """v = v0 for all t and xi(t) = t xi1."""
        times = np.asarray(times, float)
        gamma0 = np.asarray(gamma0, float)
        vel = np.broadcast_to(gamma0, (len(times), len(gamma0))).copy()
        return cls(times, vel, times[:, None] * gamma0[None, :])


@dataclass
class IterationLog:
    loop: str
    updates: list = field(default_factory=list)
    relative: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.updates)

    def as_rows(self):
        for k, (u, r) in enumerate(zip(self.updates, self.relative)):
            ratio = self.ratios[k - 1] if k >= 1 and k - 1 < len(self.ratios) else np.nan
            yield k + 1, u, r, ratio


@dataclass
class TrajectoryState:
    times: np.ndarray
    f_history: np.ndarray
    h_history: np.ndarray
    basis: DivFreeBasis
    g_history: np.ndarray | None = None
    operators: list | None = field(default=None, repr=False)
    loads: np.ndarray | None = field(default=None, repr=False)
    norms: dict = field(default_factory=dict)
    logs: list = field(default_factory=list)
    map_displacement: np.ndarray | None = field(default=None, repr=False)

    @property
    def nsteps(self) -> int:
        return len(self.times) - 1

    def velocity(self) -> np.ndarray:
        """Ambient velocity history (T, N)."""
        return self.basis.expand(self.f_history)

    def displacement(self) -> np.ndarray:
        """Ambient time-integrated velocity history (T, N)."""
        return self.basis.expand(self.h_history)

    def to_iterate(self) -> Iterate:
        return Iterate(self.times.copy(), self.velocity(), self.displacement())


@dataclass
class NonlinearResult:
    trajectory: TrajectoryState
    pressure: list
    outer_log: IterationLog
    inner_logs: list
    membership: dict
    compatibility: object = None


@dataclass
class BisectOutcome:
    config: SolverConfig
    result: object
    halvings: int
    failures: list


# ---------------------------------------------------------------------------
# one step


def ode_step(ops, state, dt: float, ops_next=None):
    """One implicit-midpoint step of  A F' = B F + C.

    ``ops`` provides ``A``, ``B``, ``C`` (a :class:`GalerkinOperators` or a
    tuple of arrays); with ``ops_next`` the operators are averaged over the
    step.  ``state`` is F or a pair (f, h); the result has the same form.
    """
    def blocks(o):
        if isinstance(o, tuple):
            A, B, C = o
        else:
            A, B, C = o.A, o.B, o.C
        return np.atleast_2d(np.asarray(A, float)), np.atleast_2d(np.asarray(B, float)), np.atleast_1d(np.asarray(C, float))

    A, B, C = blocks(ops)
    if ops_next is not None:
        A1, B1, C1 = blocks(ops_next)
        A, B, C = 0.5 * (A + A1), 0.5 * (B + B1), 0.5 * (C + C1)
    pair = isinstance(state, tuple)
    F0 = np.concatenate([np.atleast_1d(s) for s in state]) if pair else np.atleast_1d(np.asarray(state, float))
    lhs = A / dt - 0.5 * B
    rhs = (A / dt + 0.5 * B) @ F0 + C
    try:
        F1 = sla.solve(lhs, rhs)
    except sla.LinAlgError as exc:
        raise sla.LinAlgError(f"implicit midpoint system is singular: {exc}") from exc
    if pair:
        n = len(np.atleast_1d(state[0]))
        return F1[:n], F1[n:]
    return F1 if np.ndim(state) else F1[0]


# ---------------------------------------------------------------------------
# per-sweep operators


@dataclass
class Sweep:
    """Operators frozen for one iterate: node operators, step factors, interface data."""

    times: np.ndarray
    operators: list
    step_lu: list
    step_rhs: list
    step_D: list
    delta_bn: np.ndarray
    load_reduced: np.ndarray


def _facet_coefficients(disc: Discretization, u):
    _, grad = disc.interface_fields(u, SOLID)
    return combined_coefficients(grad, disc.params)


def prepare_sweep(disc: Discretization, basis: DivFreeBasis, iterate: Iterate) -> Sweep:
    """Assemble the frozen operators of ``iterate`` at every time node."""
    times = np.asarray(iterate.times, float)
    ops, bn = [], []
    prev_u = None
    for k, t in enumerate(times):
        u = iterate.displacement[k]
        if prev_u is not None and np.array_equal(u, prev_u):
            ops.append(replace(ops[-1], time=float(t)))
            bn.append(bn[-1])
            continue
        try:
            ops.append(assemble_operators(disc, basis, u, time=float(t)))
        except DetFloorError as exc:
            raise DetFloorError(f"t={t:.6g}: {exc}", exc.value, exc.index) from exc
        bn.append(np.einsum("fpiajb,fa->fpijb", _facet_coefficients(disc, u), disc.gc_normals))
        prev_u = u
    bn = np.array(bn)
    lus, rhs, Ds = [], [], []
    for k in range(len(times) - 1):
        dt = times[k + 1] - times[k]
        o0, o1 = ops[k], ops[k + 1]
        M = 0.5 * (o0.mass_block + o1.mass_block)
        S = 0.5 * (o0.fluid_stiffness + o1.fluid_stiffness)
        D = 0.5 * (o0.structure_stiffness + o1.structure_stiffness)
        lus.append(sla.lu_factor(M / dt + 0.5 * S + 0.25 * dt * D))
        rhs.append(M / dt - 0.5 * S - 0.25 * dt * D)
        Ds.append(D)
    load = basis.basis_matrix.T @ disc.load_operator
    return Sweep(times, ops, lus, rhs, Ds, np.diff(bn, axis=0), load)


def interface_datum(disc: Discretization, sweep: Sweep, xi_history) -> np.ndarray:
    """g(t_k) = -sum_{a,j,b} (int_0^t d_s b_{iajb} d_b xi_j ds) n_a on the interface.

    Time integral by summation by parts on the grid: the increment of b over a
    step times the step average of grad xi.  Returns (T, F, P, 3) with g(0) = 0.
    """
    xi_history = np.asarray(xi_history, float)
    grads = np.array([disc.interface_fields(x, SOLID)[1] for x in xi_history])   # (T, F, P, j, b)
    avg = 0.5 * (grads[1:] + grads[:-1])
    incr = np.einsum("tfpijb,tfpjb->tfpi", sweep.delta_bn, avg)
    g = np.zeros((len(xi_history),) + incr.shape[1:])
    g[1:] = -np.cumsum(incr, axis=0)
    return g


# ---------------------------------------------------------------------------
# auxiliary problem


def _membership(disc, iterate: Iterate, M_bound: float) -> dict:
    fv = history_norms(disc, iterate.velocity, iterate.times, "fluid")
    sx = history_norms(disc, iterate.displacement, iterate.times, "solid")
    return {"F": fv, "S": sx, "member": bool(fv["total"] <= M_bound and sx["total"] <= M_bound)}


def auxiliary_solve(disc: Discretization, basis: DivFreeBasis, iterate: Iterate, g, f0, config: SolverConfig,
                    sweep: Sweep | None = None) -> TrajectoryState:
    """Trajectory of the Galerkin system with frozen maps of ``iterate`` and interface datum ``g``.

    ``g`` is (T, F, P, 3) on the interface quadrature points, or None for g = 0.
    """
    times = np.asarray(iterate.times, float)
    n = basis.dimension
    nF = disc.gc_points.shape
    if g is None:
        g = np.zeros((len(times),) + nF)
    g = np.asarray(g, float)
    if g.shape != (len(times),) + nF:
        raise ValueError(f"interface datum has shape {g.shape}, expected {(len(times),) + nF}")
    if np.max(np.abs(g[0]), initial=0.0) > 0.0:
        raise ValueError("interface datum must vanish at t=0")
    f0 = np.asarray(f0, float)
    if f0.shape != (n,):
        raise ValueError(f"initial coefficients have shape {f0.shape}, expected ({n},)")
    if sweep is None:
        sweep = prepare_sweep(disc, basis, iterate)
    loads = g.reshape(len(times), -1) @ sweep.load_reduced.T      # (T, n)
    f = np.zeros((len(times), n))
    h = np.zeros((len(times), n))
    f[0] = f0
    for k in range(len(times) - 1):
        dt = times[k + 1] - times[k]
        rhs = sweep.step_rhs[k] @ f[k] - sweep.step_D[k] @ h[k] + 0.5 * (loads[k] + loads[k + 1])
        f[k + 1] = sla.lu_solve(sweep.step_lu[k], rhs)
        h[k + 1] = h[k] + 0.5 * dt * (f[k] + f[k + 1])
    traj = TrajectoryState(times, f, h, basis, g, sweep.operators, loads,
                           map_displacement=np.asarray(iterate.displacement, float))
    traj.norms["iterate"] = _membership(disc, iterate, config.M_bound)
    return traj


# ---------------------------------------------------------------------------
# fixed points


def _contraction_step(logobj: IterationLog, diff: float, size: float, tol: float):
    rel = relative_update(diff, size)
    if logobj.updates:
        prev = logobj.updates[-1]
        logobj.ratios.append(diff / prev if prev > 0 else (0.0 if diff == 0 else np.inf))
    logobj.updates.append(diff)
    logobj.relative.append(rel)
    if rel < tol:
        logobj.converged = True
        return True
    if logobj.ratios and logobj.ratios[-1] >= 1.0 and rel > NOISE_FLOOR:
        raise NonContractionError(
            f"{logobj.loop} fixed point is not contracting: update ratio "
            f"{logobj.ratios[-1]:.4g} at iteration {logobj.iterations}", logobj, logobj.loop)
    return False


def linearized_solve(disc: Discretization, basis: DivFreeBasis, iterate: Iterate, f0, config: SolverConfig,
                     sweep: Sweep | None = None) -> TrajectoryState:
    """Inner fixed point: xi_hat -> xi_tilde through the auxiliary problem with g = h(xi_hat)."""
    if sweep is None:
        sweep = prepare_sweep(disc, basis, iterate)
    times = iterate.times
    xi_hat = np.asarray(iterate.displacement, float)
    logobj = IterationLog("inner")
    omega = config.relaxation
    traj = None
    for _ in range(config.max_inner_iters):
        g = interface_datum(disc, sweep, xi_hat)
        traj = auxiliary_solve(disc, basis, iterate, g, f0, config, sweep)
        xi = traj.displacement()
        diff = history_norms(disc, xi - xi_hat, times, "solid")["total"]
        size = history_norms(disc, xi, times, "solid")["total"]
        done = _contraction_step(logobj, diff, size, config.fp_inner_tol)
        log.debug("inner %d: update %.3e relative %.3e", logobj.iterations, diff, logobj.relative[-1])
        if done:
            break
        xi_hat = xi_hat + omega * (xi - xi_hat)
    if not logobj.converged:
        raise NonContractionError(
            f"inner fixed point did not reach {config.fp_inner_tol:g} in {config.max_inner_iters} iterations",
            logobj, "inner")
    traj.logs.append(logobj)
    return traj


def make_basis(disc: Discretization) -> DivFreeBasis:
    """Divergence-free basis for the t = 0 maps (identity) of every iterate."""
    return build_divfree_basis(build_constraint(disc), disc.reference_mass)


def nonlinear_solve(disc: Discretization, v0, xi1, p0=None, config: SolverConfig | None = None,
                    basis: DivFreeBasis | None = None, compatibility: str = "interface",
                    dtp0=None, d2tp0=None, recover: bool = True) -> NonlinearResult:
    """Outer fixed point (v, xi) -> (v~, xi~) started from v = v0, xi = t xi1.

    ``compatibility`` selects the checked conditions before solving:
    ``"off"``, ``"interface"`` (velocity continuity only) or ``"strict"``
    (every condition with error severity).
    """
    config = config or SolverConfig()
    basis = basis or make_basis(disc)
    report = None
    if compatibility != "off":
        from .diagnostics import check_compatibility
        report = check_compatibility(disc, v0, xi1, p0, dtp0, d2tp0)
        failing = report.failures(strict=(compatibility == "strict"))
        if failing:
            raise IncompatibleDataError(
                "initial data fail compatibility condition(s) " + ", ".join(str(c) for c in failing), report)
    f0 = project_initial(disc, basis, v0, xi1)
    gamma0 = compose_initial(disc, v0, xi1)
    times = config.times
    iterate = Iterate.constant_extension(times, gamma0)
    outer = IterationLog("outer")
    inner_logs = []
    traj = None
    omega = config.relaxation
    for _ in range(config.max_outer_iters):
        traj = linearized_solve(disc, basis, iterate, f0, config)
        inner_logs.append(traj.logs[-1])
        new = traj.to_iterate()
        dv = history_norms(disc, new.velocity - iterate.velocity, times, "fluid")["total"]
        dx = history_norms(disc, new.displacement - iterate.displacement, times, "solid")["total"]
        size = (history_norms(disc, new.velocity, times, "fluid")["total"]
                + history_norms(disc, new.displacement, times, "solid")["total"])
        try:
            done = _contraction_step(outer, dv + dx, size, config.fp_outer_tol)
        except NonContractionError as exc:
            exc.inner_logs = inner_logs
            raise
        log.debug("outer %d: update %.3e relative %.3e", outer.iterations, dv + dx, outer.relative[-1])
        if done:
            break
        iterate = Iterate(times, iterate.velocity + omega * (new.velocity - iterate.velocity),
                          iterate.displacement + omega * (new.displacement - iterate.displacement))
    if not outer.converged:
        exc = NonContractionError(
            f"outer fixed point did not reach {config.fp_outer_tol:g} in {config.max_outer_iters} iterations",
            outer, "outer")
        exc.inner_logs = inner_logs
        raise exc
    traj.logs.append(outer)
    membership = _membership(disc, traj.to_iterate(), config.M_bound)
    traj.norms["solution"] = membership
    pressure = []
    if recover:
        from .pressure import recover_pressure_history
        pressure = recover_pressure_history(disc, traj)
    return NonlinearResult(traj, pressure, outer, inner_logs, membership, report)


def time_window_bisect(solve, config: SolverConfig) -> BisectOutcome:
    """Halve T (and dt) until ``solve(config)`` stops failing to contract.

    Failures are :class:`NonContractionError` and :class:`DetFloorError`.
    Raises :class:`NonContractionError` once ``T_bisect_max`` halvings are spent.
    """
    failures = []
    cfg = config
    for halving in range(config.T_bisect_max + 1):
        try:
            result = solve(cfg)
        except (NonContractionError, DetFloorError) as exc:
            failures.append((cfg.T, str(exc), exc))
            log.info("T=%g failed: %s", cfg.T, exc)
            cfg = replace(cfg, T=cfg.T / 2, dt=cfg.dt / 2)
            continue
        return BisectOutcome(cfg, result, halving, failures)
    last = failures[-1][2] if failures else None
    exc = NonContractionError(
        f"no contraction after {config.T_bisect_max} halvings of T (last T={failures[-1][0]:g})",
        getattr(last, "log", None), getattr(last, "loop", "outer"))
    exc.failures = failures
    raise exc
