import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from fsi.assembly import (ConstraintMatrix, DivFreeBasis, InterfaceMismatchError, assemble_operators,
                          build_constraint, build_divfree_basis, compose_initial, discretize, divergence_matrix,
                          map_state_from_displacement, project_initial)
from fsi.constitutive import MaterialParams, combined_coefficients
from fsi.kinematics import DetFloorError, TensorField
from fsi.mesh import FLUID, SOLID, tet_quadrature, two_cube_mesh
from fsi.solvers import make_basis

rng = np.random.default_rng(3)


@pytest.fixture(scope="module")
def disc():
    return discretize(two_cube_mesh(2), MaterialParams(rho_f=1.3, rho_s=2.1, mu=0.7, mu_s=1.1, lambda_s=0.4))


@pytest.fixture(scope="module")
def basis(disc):
    return make_basis(disc)


def plain_divergence(disc):
    # independent assembly: loop over fluid cells, int q_m d_j phi_b with the exact P1 x P2 rule
    q = tet_quadrature(4)
    from fsi.mesh import shape_functions
    _, dphi = shape_functions(2, q.points)
    ps = disc.pspace
    out = np.zeros((ps.ndofs, disc.ndofs))
    for k, c in enumerate(disc.fluid_cells):
        gl = disc.mesh.grad_lambda[c]
        vol = disc.mesh.volumes[c]
        grads = dphi @ gl                                   # (Q, nb, 3)
        for m in range(4):
            w = 6 * vol * q.weights * q.points[:, m]
            loc = np.einsum("q,qbj->bj", w, grads)
            dofs = disc.space.cell_dofs[c].reshape(-1, 3)
            for b in range(dofs.shape[0]):
                for j in range(3):
                    out[ps.cell_dofs[k, m], dofs[b, j]] += loc[b, j]
    return out


def test_identity_constraint_is_plain_divergence(disc):
    B = divergence_matrix(disc).toarray()
    assert np.allclose(B, plain_divergence(disc), rtol=0, atol=1e-14)
    con = build_constraint(disc)
    assert con.matrix.shape == (disc.pspace.ndofs + con.pinned.sum(), disc.ndofs)


def test_dilation_scales_rows_by_four(disc):
    shape = (len(disc.fluid_cells), disc.quad.npoints, 3, 3)
    A = TensorField(np.broadcast_to(2 * np.eye(3), shape).copy())
    ratio = divergence_matrix(disc, A).toarray()
    base = divergence_matrix(disc).toarray()
    assert np.allclose(ratio, 4 * base, rtol=1e-14, atol=1e-15)


def test_pins_exclude_outflow(disc):
    space = disc.space
    from fsi.mesh import GAMMA_2, GAMMA_IN, GAMMA_OUT
    pinned = build_constraint(disc).pinned
    for lab in (GAMMA_IN, GAMMA_2):
        nodes = space.label_nodes(lab)
        assert pinned[3 * nodes].all()
    only_out = np.setdiff1d(space.label_nodes(GAMMA_OUT),
                            np.concatenate([space.label_nodes(GAMMA_IN), space.label_nodes(GAMMA_2)]))
    assert len(only_out) > 0 and not pinned[3 * only_out].any()


def test_constant_field_residual_is_pins_only(disc):
    con = build_constraint(disc)
    u = np.tile([0.3, -0.2, 0.5], disc.space.nnodes)
    res = con.residual(u)
    npres = disc.pspace.ndofs
    # div of a constant vanishes only up to the boundary flux; compare with the assembled rows
    assert np.allclose(res[:npres], con.divergence @ u, rtol=0, atol=0)
    assert np.array_equal(res[npres:], u[con.pinned])


def test_basis_properties(disc, basis):
    B = basis.basis_matrix
    con = basis.constraint
    assert np.abs(con.matrix @ B).max() <= 1e-10
    G = B.T @ (basis.mass @ B)
    assert np.allclose(G, np.eye(basis.dimension), rtol=0, atol=1e-12)
    # rank-nullity on the constraint matrix
    rank = np.linalg.matrix_rank(con.matrix.toarray(), tol=1e-10 * sla.norm(con.matrix.toarray(), 2))
    assert basis.dimension == disc.ndofs - rank


def test_basis_mass_is_weighted(disc, basis):
    ms = map_state_from_displacement(disc, np.zeros(disc.ndofs))
    p = disc.params
    direct = (disc.mass_matrix(disc.fluid_cells, p.rho_f * ms.det_flow)
              + disc.mass_matrix(disc.solid_cells, p.rho_s * ms.det_defo))
    assert abs(direct - basis.mass).max() <= 1e-14


def test_full_rank_constraint_rejected():
    con = ConstraintMatrix(sp.csr_matrix(np.eye(3)), np.zeros(3, bool))
    with pytest.raises(ValueError, match="W̃ₙ is empty"):
        build_divfree_basis(con, sp.identity(3))


def test_constant_velocity_projection(disc, basis):
    u = np.tile([0.0, 0.0, 1.0], disc.space.nnodes)
    proj = basis.expand(basis.basis_matrix.T @ (basis.mass @ u))
    assert np.abs(basis.constraint.matrix @ proj).max() <= 1e-10


def test_operators_symmetry_and_spd(disc, basis):
    ops = assemble_operators(disc, basis)
    sla.cholesky(ops.mass_block)
    assert np.abs(ops.fluid_stiffness - ops.fluid_stiffness.T).max() <= 1e-12
    assert np.abs(ops.elastic - ops.elastic.T).max() <= 1e-12
    assert np.array_equal(ops.coefficient_gradient, np.zeros_like(ops.coefficient_gradient))
    assert np.array_equal(ops.boundary_load, np.zeros(basis.dimension))
    assert np.isfinite(np.linalg.cond(ops.mass_block))
    n = ops.n
    assert np.array_equal(ops.B[n:, :n], np.eye(n))
    assert np.array_equal(ops.B[:n, n:], -ops.structure_stiffness)


def test_single_basis_function_hand_assembly(disc, basis):
    psi = basis.basis_matrix[:, [5]]
    one = DivFreeBasis(psi, basis.constraint, basis.mass)
    ops = assemble_operators(disc, one)
    p = disc.params
    q = tet_quadrature(6)
    mass = stiff = elastic = 0.0
    b0 = combined_coefficients(np.zeros((3, 3)), p)
    for c in range(disc.mesh.ncells):
        vals, grads = disc.space.evaluate([c], q.points, psi[:, 0])
        w = 6 * disc.mesh.volumes[c] * q.weights
        if disc.mesh.cell_region[c] == FLUID:
            mass += p.rho_f * w @ np.sum(vals[0] ** 2, axis=1)
            sym = grads[0] + np.swapaxes(grads[0], 1, 2)
            stiff += p.mu * w @ np.einsum("qij,qij->q", sym, grads[0])
        else:
            mass += p.rho_s * w @ np.sum(vals[0] ** 2, axis=1)
            elastic += w @ np.einsum("iajb,qjb,qia->q", b0, grads[0], grads[0])
    assert ops.mass_block[0, 0] == pytest.approx(mass, rel=1e-12)
    assert ops.fluid_stiffness[0, 0] == pytest.approx(stiff, rel=1e-12)
    assert ops.elastic[0, 0] == pytest.approx(elastic, rel=1e-12)


def test_load_linear_in_g(disc, basis):
    shape = disc.gc_points.shape
    g1, g2 = rng.standard_normal(shape), rng.standard_normal(shape)
    l1 = assemble_operators(disc, basis, g=g1).boundary_load
    l2 = assemble_operators(disc, basis, g=g2).boundary_load
    l12 = assemble_operators(disc, basis, g=g1 + g2).boundary_load
    assert np.allclose(l12, l1 + l2, rtol=0, atol=1e-14 * np.abs(l12).max())


def test_dimension_mismatch(disc, basis):
    with pytest.raises(ValueError, match="interface datum"):
        assemble_operators(disc, basis, g=np.zeros((2, 2, 3)))
    with pytest.raises(ValueError, match="displacement"):
        assemble_operators(disc, basis, displacement=np.zeros(5))


def test_deterministic_and_threaded(basis):
    mesh = two_cube_mesh(2)
    u = 0.01 * rng.standard_normal(basis.basis_matrix.shape[0])
    serial = discretize(mesh, threads=1)
    a = assemble_operators(serial, basis, u)
    b = assemble_operators(serial, basis, u)
    for name in ("mass_block", "fluid_stiffness", "elastic", "coefficient_gradient"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    par = assemble_operators(discretize(mesh, threads=4), basis, u)
    for name in ("mass_block", "fluid_stiffness", "elastic", "coefficient_gradient"):
        ref = getattr(a, name)
        assert np.abs(getattr(par, name) - ref).max() <= 1e-14 * max(1.0, np.abs(ref).max())


def test_det_floor_in_operators(disc, basis):
    u = disc.space.interpolate(lambda x: np.column_stack([-0.95 * x[:, 0], 0 * x[:, 0], 0 * x[:, 0]]))
    with pytest.raises(DetFloorError):
        assemble_operators(disc, basis, u)


def test_projection_of_basis_member(disc, basis):
    coeffs = rng.standard_normal(basis.dimension)
    gamma = basis.expand(coeffs)
    assert np.allclose(project_initial(disc, basis, gamma, gamma), coeffs, rtol=0, atol=1e-12)
    z = np.zeros(disc.ndofs)
    assert np.array_equal(project_initial(disc, basis, z, z), np.zeros(basis.dimension))


def test_projection_interface_mismatch(disc, basis):
    v = np.zeros(disc.ndofs)
    xi = np.zeros(disc.ndofs)
    node = disc.space.interface_nodes[3]
    xi[3 * node + 1] = 1e-6
    with pytest.raises(InterfaceMismatchError, match=f"dof {3 * node + 1}"):
        project_initial(disc, basis, v, xi)


def test_compose_initial(disc):
    v = np.ones(disc.ndofs)
    xi = 2 * np.ones(disc.ndofs)
    out = compose_initial(disc, v, xi)
    fluid = disc.space.region_dof_mask(FLUID)
    assert (out[fluid] == 1).all() and (out[~fluid] == 2).all()
    assert (out[disc.space.region_dof_mask(SOLID) & fluid] == 1).all()
