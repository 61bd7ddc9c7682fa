import numpy as np
import pytest
import scipy.linalg as sla

from fsi.assembly import discretize, divergence_matrix
from fsi.mesh import two_cube_mesh
from fsi.pressure import (SingularPressureError, measure_infsup, momentum_residual, pressure_test_dofs,
                          recover_pressure, recover_pressure_history)
from fsi.solvers import Iterate, SolverConfig, auxiliary_solve, make_basis

rng = np.random.default_rng(11)


@pytest.fixture(scope="module")
def disc():
    return discretize(two_cube_mesh(2))


def dense_infsup(disc):
    # independent: explicit symmetric square roots and an SVD
    Z = pressure_test_dofs(disc)
    B = divergence_matrix(disc).toarray()[:, Z]
    K = disc.grams[("fluid", "h1")].toarray()[np.ix_(Z, Z)]
    ps = disc.pspace
    Mp = np.zeros((ps.ndofs, ps.ndofs))
    for k, c in enumerate(ps.cells):
        local = disc.mesh.volumes[c] / 20 * (np.ones((4, 4)) + np.eye(4))   # exact P1 mass
        Mp[np.ix_(ps.cell_dofs[k], ps.cell_dofs[k])] += local
    Ki = sla.inv(sla.sqrtm(K).real)
    Mi = sla.inv(sla.sqrtm(Mp).real)
    return sla.svdvals(Mi @ B @ Ki).min()


def test_infsup_p2_p1_positive(disc):
    rep = measure_infsup(disc)
    assert rep.passed and rep.beta_h > 0.05
    assert rep.beta_h == pytest.approx(dense_infsup(disc), rel=1e-8)


def test_infsup_p1_p1_below_threshold():
    d1 = discretize(two_cube_mesh(2), degree=1)
    rep = measure_infsup(d1)
    assert not rep.passed
    with pytest.raises(SingularPressureError):
        recover_pressure(d1, np.zeros(d1.ndofs), np.zeros(d1.ndofs))


def test_zero_velocity_zero_pressure(disc):
    z = np.zeros(disc.ndofs)
    p = recover_pressure(disc, z, z)
    assert not p.values.any() and p.residual_norm == 0.0


def test_residual_after_recovery_identity_maps(disc):
    basis = make_basis(disc)
    cfg = SolverConfig(T=0.004, dt=0.001)
    it = Iterate.constant_extension(cfg.times, np.zeros(disc.ndofs))
    traj = auxiliary_solve(disc, basis, it, None, 1e-3 * rng.standard_normal(basis.dimension), cfg)
    ps = recover_pressure_history(disc, traj)
    assert len(ps) == 4
    for p in ps:
        assert p.load_norm > 0
        assert p.residual_norm <= 1e-8 * p.load_norm


def test_pure_gradient_residual_recovered(disc):
    # R = B^T q for a known q: the recovered pressure is q
    Z = pressure_test_dofs(disc)
    q = rng.standard_normal(disc.pspace.ndofs)
    B = divergence_matrix(disc).toarray()
    R_full = B.T @ q
    # realize R as a momentum residual through a velocity rate with M rate = R on Z
    z = np.zeros(disc.ndofs)
    M = disc.mass_matrix(disc.fluid_cells, disc.params.rho_f * np.ones_like(disc.wdet[disc.fluid_cells]))
    Mz = M.toarray()[np.ix_(Z, Z)]
    rate = np.zeros(disc.ndofs)
    rate[Z] = np.linalg.solve(Mz, R_full[Z])
    assert np.allclose(momentum_residual(disc, z, rate)[Z], R_full[Z], atol=1e-10)
    p = recover_pressure(disc, z, rate)
    assert np.allclose(p.values, q, rtol=0, atol=1e-8 * np.abs(q).max())


def test_translation_invariance(disc):
    moved = discretize(two_cube_mesh(2).translated([1.5, -2.0, 0.25]))
    assert measure_infsup(moved).beta_h == pytest.approx(measure_infsup(disc).beta_h, rel=1e-10)
