import math

import numpy as np
import pytest

from homlab import fem
from homlab.fem import NodalField, SolverParams, build_mesh, classify_holes
from homlab.problem_model import (
    Constant,
    ConstantDensity,
    Domain,
    HoleDirichlet,
    Laminate,
    Load,
    Penalized,
    PerforationLattice,
    Zero,
)

I2 = Constant.isotropic(1.0, 2)
I3 = Constant.isotropic(1.0, 3)


def test_build_mesh_shape_and_boundary():
    m = build_mesh(Domain.unit(2), 0.25)
    assert m.shape == (5, 5)
    assert m.boundary_mask.sum() == 16
    assert m.lumped_mass().sum() == pytest.approx(1.0)


@pytest.mark.parametrize("h", [0.3, 2.0, 0.75])
def test_build_mesh_rejects_bad_h(h):
    with pytest.raises(ValueError):
        build_mesh(Domain.unit(2), h)


def test_lumped_mass_3d_sums_to_volume():
    m = build_mesh(Domain((0, 0, 0), (1, 2, 1)), 0.25)
    assert m.lumped_mass().sum() == pytest.approx(2.0)


def test_single_node_hand_assembly():
    # unit square, h = 1/2: one free node with diagonal 4 and load h^2 * f = 1/4
    mesh = build_mesh(Domain.unit(2), 0.5)
    sys_ = fem.assemble(mesh, I2, Zero(), Load(f=1.0))
    c = 4
    assert sys_.matrix[c, c] == pytest.approx(4.0)
    assert sys_.rhs[c] == pytest.approx(0.25)
    u = fem.solve(sys_)
    assert u.values[c] == pytest.approx(1 / 16)
    assert np.all(u.values[mesh.boundary_mask] == 0)


def test_single_node_with_density():
    mesh = build_mesh(Domain.unit(2), 0.5)
    u = fem.solve(fem.assemble(mesh, I2, ConstantDensity(4.0), Load(f=1.0)))
    # (4 + 4 * 1/4) u = 1/4
    assert u.values[4] == pytest.approx(0.05)


def test_stiffness_symmetric_rows_sum_to_zero():
    for dim, h in ((2, 0.25), (3, 0.25)):
        mesh = build_mesh(Domain.unit(dim), h)
        A = Laminate(alpha=1, beta=4, period=0.5)
        K = fem.stiffness_matrix(mesh, A)
        assert abs(K - K.T).max() < 1e-13
        assert np.abs(K @ np.ones(mesh.n_nodes)).max() < 1e-12
        off = K - np.diag(K.diagonal())
        assert off.max() <= 1e-15  # M-matrix sign pattern for isotropic A


def test_anisotropic_matches_scalar_path():
    mesh = build_mesh(Domain.unit(3), 0.25)
    iso = Constant.isotropic(2.0, 3)

    # force the matrix path through a subclass without scalar values
    class M(Constant):
        def scalar_values(self, points):
            return None

    mat = M(alpha=2.0, beta=2.0, matrix=2.0 * np.eye(3))
    K1 = fem.stiffness_matrix(mesh, iso)
    K2 = fem.stiffness_matrix(mesh, mat)
    assert abs(K1 - K2).max() < 1e-13


def test_classify_holes_tags():
    lat = PerforationLattice(0.5, 2.0, 3)
    mesh = classify_holes(build_mesh(Domain.unit(3), 1 / 16), lat)
    c = mesh.coords().reshape(-1, 3)
    centre = np.all(np.isclose(c, 0.5), axis=1)
    assert mesh.hole_mask[centre].all()
    assert not np.any(mesh.hole_mask & mesh.boundary_mask)
    assert np.any(mesh.node_class == fem.HOLE_BOUNDARY)
    assert not mesh.under_resolved


def test_under_resolved_flag(caplog):
    lat = PerforationLattice(0.5, 2.0, 3)
    mesh = classify_holes(build_mesh(Domain.unit(3), 0.25), lat)
    assert mesh.under_resolved


def test_hole_dirichlet_needs_classified_mesh():
    lat = PerforationLattice(0.5, 2.0, 3)
    with pytest.raises(ValueError):
        fem.assemble(build_mesh(Domain.unit(3), 0.25), I3, HoleDirichlet(lat), Load(f=1.0))


def test_pcg_reports_non_convergence():
    mesh = build_mesh(Domain.unit(2), 1 / 32)
    sys_ = fem.assemble(mesh, I2, Zero(), Load(f=1.0))
    with pytest.raises(fem.ConvergenceError) as info:
        fem.solve(sys_, SolverParams(rel_tol=1e-12, max_iter=3))
    assert info.value.iterations == 3


def test_pcg_detects_indefinite():
    with pytest.raises(fem.IndefiniteSystemError):
        fem.pcg(lambda v: -v, np.ones(3), None, 1e-8, 10)


def test_energy_and_l2_of_linear_field():
    mesh = build_mesh(Domain.unit(3), 0.25)
    u = NodalField.interpolate(mesh, lambda x: x[..., 0] + 2 * x[..., 2])
    assert fem.energy_seminorm(u, I3) == pytest.approx(5.0)
    one = NodalField.interpolate(mesh, 1.0)
    assert fem.l2_norm(one) == pytest.approx(1.0)
    A = Constant(alpha=1.0, beta=3.0, matrix=np.diag([1.0, 2.0, 3.0]))
    assert fem.energy_seminorm(u, A) == pytest.approx(1.0 + 12.0)


def test_energy_region_weight():
    mesh = build_mesh(Domain.unit(2), 0.25)
    u = NodalField.interpolate(mesh, lambda x: x[..., 1])
    half = (mesh.cell_centers()[..., 0] < 0.5).astype(float)
    assert fem.energy_seminorm(u, I2, region=half) == pytest.approx(0.5)


def test_apply_stiffness_matches_matrix():
    mesh = build_mesh(Domain.unit(3), 0.25)
    A = Laminate(alpha=1, beta=4, period=0.5, axis=2)
    u = NodalField.interpolate(mesh, lambda x: np.sin(3 * x[..., 0]) * x[..., 1] + x[..., 2] ** 2)
    K = fem.stiffness_matrix(mesh, A)
    assert np.allclose(fem.apply_stiffness(u, A), K @ u.values, atol=1e-13)


def test_gradients_of_linear_field():
    mesh = build_mesh(Domain.unit(2), 0.25)
    u = NodalField.interpolate(mesh, lambda x: 3 * x[..., 0] - x[..., 1])
    g = fem.cell_gradients(u)
    assert np.allclose(g[..., 0], 3) and np.allclose(g[..., 1], -1)
    gx, gy = fem.nodal_gradients(u)
    assert np.allclose(gx.values, 3) and np.allclose(gy.values, -1)


def test_error_norms_vanish_for_interpolated_linear():
    mesh = build_mesh(Domain.unit(3), 0.25)
    f = lambda x: 1 + x[..., 0] - 2 * x[..., 1] + 0.5 * x[..., 2]  # noqa: E731
    g = lambda x: np.broadcast_to(np.array([1.0, -2.0, 0.5]), x.shape)  # noqa: E731
    h1, l2 = fem.h1_l2_errors(NodalField.interpolate(mesh, f), f, g)
    assert h1 < 1e-12 and l2 < 1e-12


def test_reactions_sum_to_total_load():
    mesh = build_mesh(Domain.unit(2), 1 / 8)
    sys_ = fem.assemble(mesh, I2, Zero(), Load(f=1.0))
    u = fem.solve(sys_, SolverParams(rel_tol=1e-12))
    r = fem.reaction_forces(sys_, u)
    assert r.values.sum() == pytest.approx(1.0, rel=1e-9)
    assert np.all(np.abs(r.values[~mesh.boundary_mask]) < 1e-10)


def test_reaction_forces_rejects_non_solution():
    mesh = build_mesh(Domain.unit(2), 1 / 8)
    sys_ = fem.assemble(mesh, I2, Zero(), Load(f=1.0))
    with pytest.raises(ValueError):
        fem.reaction_forces(sys_, NodalField(mesh, np.zeros(mesh.n_nodes)))


def test_penalized_weights_only_on_holes():
    lat = PerforationLattice(0.5, 2.0, 3)
    mesh = classify_holes(build_mesh(Domain.unit(3), 1 / 16), lat)
    w = fem.measure_weights(mesh, Penalized(lat, 10.0))
    assert np.all(w[~mesh.hole_mask] == 0)
    assert np.all(w[mesh.hole_mask] > 0)
    with pytest.raises(ValueError):
        fem.weighted_mass(NodalField.interpolate(mesh, 1.0), NodalField.interpolate(mesh, 1.0), HoleDirichlet(lat))


def test_load_g_term():
    mesh = build_mesh(Domain.unit(2), 0.5)
    u = fem.solve(fem.assemble(mesh, I2, ConstantDensity(4.0), Load(f=0.0, g=1.0)))
    # (4 + 1) u = 4 * 1/4
    assert u.values[4] == pytest.approx(0.2)


def test_nodal_field_mesh_mismatch():
    a = NodalField.interpolate(build_mesh(Domain.unit(2), 0.5), 1.0)
    b = NodalField.interpolate(build_mesh(Domain.unit(2), 0.25), 1.0)
    with pytest.raises(ValueError):
        a + b
    with pytest.raises(ValueError):
        NodalField(a.mesh, np.full(9, np.nan))
