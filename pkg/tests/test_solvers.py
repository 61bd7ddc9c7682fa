import numpy as np
import pytest
from scipy.integrate import cumulative_trapezoid

from fsi.assembly import discretize
from fsi.kinematics import DetFloorError
from fsi.mesh import two_cube_mesh
from fsi.solvers import (IncompatibleDataError, Iterate, NonContractionError, SolverConfig, auxiliary_solve,
                         interface_datum, linearized_solve, make_basis, nonlinear_solve, ode_step,
                         prepare_sweep, time_window_bisect)

rng = np.random.default_rng(5)


@pytest.fixture(scope="module")
def disc():
    return discretize(two_cube_mesh(2))


@pytest.fixture(scope="module")
def basis(disc):
    return make_basis(disc)


def smooth_data(disc, basis, amplitude=1e-3):
    x = disc.space.node_coords
    raw = np.column_stack([np.sin(np.pi * x[:, 1]) * x[:, 0] * (2 - x[:, 0]), 0 * x[:, 0], 0 * x[:, 0]]).ravel()
    gam = basis.expand(basis.basis_matrix.T @ (basis.mass @ raw))
    return gam * amplitude / np.sqrt(gam @ basis.mass @ gam)


@pytest.mark.parametrize("kw", [dict(T=0.0), dict(dt=0.2, T=0.1), dict(fp_inner_tol=0), dict(M_bound=1.0),
                                dict(max_outer_iters=0), dict(T_bisect_max=-1), dict(relaxation=1.5)])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_ode_step_scalar_decay():
    f1 = ode_step(((1.0,), (-1.0,), (0.0,)), 1.0, 0.1)
    assert f1 == pytest.approx((1 - 0.05) / (1 + 0.05), rel=1e-15)


def test_ode_step_zero_stays_zero():
    A = np.eye(4)
    B = rng.standard_normal((4, 4))
    f, h = ode_step((A, B, np.zeros(4)), (np.zeros(2), np.zeros(2)), 0.01)
    assert not f.any() and not h.any()


def test_ode_step_conserves_quadratic_invariant():
    L = rng.standard_normal((6, 6))
    A = L @ L.T + 6 * np.eye(6)
    K = rng.standard_normal((6, 6))
    B = K - K.T              # d/dt (F.A.F) = -2 F.B.F = 0
    F = rng.standard_normal(6)
    e0 = F @ A @ F
    for _ in range(10):
        F = ode_step((A, B, np.zeros(6)), F, 0.05)
        assert abs(F @ A @ F - e0) <= 1e-12 * e0


def test_auxiliary_zero(disc, basis):
    cfg = SolverConfig(T=0.003, dt=0.001)
    it = Iterate.constant_extension(cfg.times, np.zeros(disc.ndofs))
    traj = auxiliary_solve(disc, basis, it, None, np.zeros(basis.dimension), cfg)
    assert not traj.f_history.any() and not traj.h_history.any()


def test_auxiliary_energy_and_h_consistency(disc, basis):
    cfg = SolverConfig(T=0.01, dt=0.001)
    it = Iterate.constant_extension(cfg.times, np.zeros(disc.ndofs))
    f0 = rng.standard_normal(basis.dimension) * 1e-3
    traj = auxiliary_solve(disc, basis, it, None, f0, cfg)
    M = traj.operators[0].mass_block
    E = 0.5 * np.einsum("ti,ij,tj->t", traj.f_history, M, traj.f_history)
    E += 0.5 * np.einsum("ti,ij,tj->t", traj.h_history, traj.operators[0].elastic, traj.h_history)
    assert (E <= E[0] + 1e-12).all()
    h_ref = cumulative_trapezoid(traj.f_history, traj.times, axis=0, initial=0.0)
    assert np.abs(traj.h_history - h_ref).max() <= 1e-12
    assert not traj.h_history[0].any()


def test_auxiliary_rejects_nonzero_initial_datum(disc, basis):
    cfg = SolverConfig(T=0.002, dt=0.001)
    it = Iterate.constant_extension(cfg.times, np.zeros(disc.ndofs))
    g = np.ones((3,) + disc.gc_points.shape)
    with pytest.raises(ValueError, match="vanish at t=0"):
        auxiliary_solve(disc, basis, it, g, np.zeros(basis.dimension), cfg)


def test_interface_datum_vanishes_for_frozen_coefficients(disc, basis):
    cfg = SolverConfig(T=0.003, dt=0.001)
    it = Iterate.constant_extension(cfg.times, np.zeros(disc.ndofs))
    sweep = prepare_sweep(disc, basis, it)
    xi = rng.standard_normal((4, disc.ndofs))
    g = interface_datum(disc, sweep, xi)
    assert not g.any()


def test_interface_datum_matches_direct_sum(disc, basis):
    cfg = SolverConfig(T=0.002, dt=0.001)
    gam = smooth_data(disc, basis, 0.05)
    it = Iterate.constant_extension(cfg.times, gam)
    sweep = prepare_sweep(disc, basis, it)
    xi = it.displacement
    g = interface_datum(disc, sweep, xi)
    # direct: -sum_k (b_{k+1} - b_k) n : (grad xi_k + grad xi_{k+1}) / 2
    from fsi.constitutive import combined_coefficients
    from fsi.mesh import SOLID
    bs = [combined_coefficients(disc.interface_fields(u, SOLID)[1], disc.params) for u in xi]
    gr = [disc.interface_fields(u, SOLID)[1] for u in xi]
    n = disc.gc_normals
    acc = np.zeros_like(g[0])
    for k in range(2):
        acc -= np.einsum("fpiajb,fa,fpjb->fpi", bs[k + 1] - bs[k], n, 0.5 * (gr[k] + gr[k + 1]))
        assert np.allclose(g[k + 1], acc, rtol=1e-12, atol=1e-18)


def test_linearized_zero_one_iteration(disc, basis):
    cfg = SolverConfig(T=0.003, dt=0.001)
    it = Iterate.constant_extension(cfg.times, np.zeros(disc.ndofs))
    traj = linearized_solve(disc, basis, it, np.zeros(basis.dimension), cfg)
    assert traj.logs[-1].iterations == 1 and traj.logs[-1].converged


def test_nonlinear_zero_data(disc, basis):
    z = np.zeros(disc.ndofs)
    res = nonlinear_solve(disc, z, z, config=SolverConfig(T=0.003, dt=0.001), basis=basis)
    assert res.outer_log.iterations == 1
    assert not res.trajectory.f_history.any()
    assert all(not p.values.any() for p in res.pressure)
    assert res.membership["member"]


@pytest.fixture(scope="module")
def small_run(disc, basis):
    gam = smooth_data(disc, basis)
    return nonlinear_solve(disc, gam, gam, config=SolverConfig(T=0.005, dt=0.001), basis=basis)


def test_small_data_contracts(small_run):
    out = small_run.outer_log
    assert out.converged and all(r < 1 for r in out.ratios)
    assert all(r < 1 for lg in small_run.inner_logs for r in lg.ratios)
    assert np.all(np.diff(out.updates) < 0)


def test_constraint_and_interface_continuity(disc, basis, small_run):
    vel = small_run.trajectory.velocity()
    assert np.abs(vel @ basis.constraint.matrix.T).max() <= 1e-10
    nodes = disc.space.interface_nodes
    # single dof per interface node: the trace read from either side is the same entry
    assert len(np.unique(nodes)) == len(nodes)


def test_deterministic(disc, basis, small_run):
    gam = smooth_data(disc, basis)
    again = nonlinear_solve(disc, gam, gam, config=SolverConfig(T=0.005, dt=0.001), basis=basis)
    assert np.array_equal(again.trajectory.f_history, small_run.trajectory.f_history)
    assert np.array_equal(again.trajectory.h_history, small_run.trajectory.h_history)


def test_incompatible_interface_data(disc, basis):
    v = np.zeros(disc.ndofs)
    xi = np.zeros(disc.ndofs)
    xi[3 * disc.space.interface_nodes[0]] = 1e-3
    with pytest.raises(IncompatibleDataError, match="condition"):
        nonlinear_solve(disc, v, xi, config=SolverConfig(T=0.002, dt=0.001), basis=basis)


def test_membership_violation_reported(disc, basis):
    gam = smooth_data(disc, basis, 5.0)
    res = nonlinear_solve(disc, gam, gam, config=SolverConfig(T=0.002, dt=0.001, M_bound=1.01), basis=basis,
                          recover=False)
    assert not res.membership["member"]


def test_bisect_always_contracts():
    cfg = SolverConfig(T=0.4, dt=0.1)
    out = time_window_bisect(lambda c: "ok", cfg)
    assert out.config.T == 0.4 and out.halvings == 0 and out.result == "ok"


def test_bisect_contracts_below_quarter():
    cfg = SolverConfig(T=0.4, dt=0.1, T_bisect_max=3)

    def solve(c):
        if c.T > 0.1 + 1e-12:
            raise NonContractionError("no", None, "outer")
        return c.T

    out = time_window_bisect(solve, cfg)
    assert out.halvings == 2 and out.config.T == pytest.approx(0.1) and out.config.dt == pytest.approx(0.025)


def test_bisect_never_contracts():
    cfg = SolverConfig(T=0.4, dt=0.1, T_bisect_max=2)
    calls = []

    def solve(c):
        calls.append(c.T)
        raise DetFloorError("det")

    with pytest.raises(NonContractionError, match="2 halvings"):
        time_window_bisect(solve, cfg)
    assert len(calls) == 3
