import math

import numpy as np
import pytest

from homlab.problem_model import (
    Constant,
    ConstantDensity,
    Domain,
    GridDensity,
    Laminate,
    Penalized,
    PerforationLattice,
    TwoPhasePerforation,
    c_eps,
    coefficient_samples_ok,
    lattice_centers,
    mu0_prediction,
    sphere_area,
    with_outside,
)


def test_sphere_area_known_values():
    assert sphere_area(2) == pytest.approx(2 * math.pi, rel=1e-14)
    assert sphere_area(3) == pytest.approx(4 * math.pi, rel=1e-14)


def test_domain_validation():
    with pytest.raises(ValueError):
        Domain((0, 0), (1, 0))
    with pytest.raises(ValueError):
        Domain((0,), (1,))
    d = Domain((0, 0, 0), (1, 2, 3))
    assert d.volume == 6
    assert d.contains([0.5, 1, 1])
    assert not d.contains([0.0, 1, 1], closed=False)
    assert d.distance(np.array([[2.0, 1.0, 1.0]]))[0] == pytest.approx(1.0)


def test_c_eps_hand_value():
    # eps=0.1, n=3, gamma=2: 1 / (1 - 0.1**(3 - 2)) = 10/9
    assert c_eps(0.1, 3, 2.0) == pytest.approx(10 / 9, rel=1e-12)


@pytest.mark.parametrize("gamma", [1.0, 3.0, 3.5])
def test_gamma_range_rejected(gamma):
    with pytest.raises(ValueError):
        c_eps(0.1, 3, gamma)
    with pytest.raises(ValueError):
        PerforationLattice(0.1, gamma, 3)


def test_mu0_prediction():
    assert mu0_prediction(1.0, 3) == pytest.approx(4 * math.pi, rel=1e-12)
    assert mu0_prediction(2.0, 3) == pytest.approx(8 * math.pi, rel=1e-12)
    with pytest.raises(ValueError):
        mu0_prediction(1.0, 2)


def test_lattice_radii_and_disjointness():
    lat = PerforationLattice(0.25, 2.0, 3)
    assert lat.r_hole == pytest.approx(0.25**3)
    assert lat.r_outer == pytest.approx(0.0625)
    assert lat.balls_disjoint
    assert lat.r_hole < lat.r_outer


def test_lattice_centers_unit_cube():
    lat = PerforationLattice(0.25, 2.0, 3)
    c = lattice_centers(lat, Domain.unit(3))
    # indices 0..4 on each axis lie in the closed cube; -1 and 5 are exactly eps away
    assert len(c) == 125
    assert np.all(c >= 0) and np.all(c <= 1)


def test_nearest_center():
    lat = PerforationLattice(0.5, 2.0, 3)
    c, d = lat.nearest_center(np.array([[0.45, 0.55, 0.0]]))
    assert np.allclose(c, [[0.5, 0.5, 0.0]])
    assert d[0] == pytest.approx(math.sqrt(0.005))


def test_constant_coefficient_bounds():
    with pytest.raises(ValueError):
        Constant(alpha=1.0, beta=2.0, matrix=np.diag([0.5, 1.0]))
    with pytest.raises(ValueError):
        Constant(alpha=1.0, beta=2.0, matrix=np.array([[1.0, 0.3], [0.0, 1.0]]))
    c = Constant.isotropic(2.0, 3)
    assert c.is_isotropic
    assert c.scalar_values(np.zeros((4, 3))).tolist() == [2.0] * 4


def test_laminate_means_and_profile():
    lam = Laminate(alpha=1.0, beta=4.0, period=0.25)
    assert lam.harmonic_mean == pytest.approx(1.6)
    assert lam.arithmetic_mean == pytest.approx(2.5)
    x = np.array([[0.05, 0.3], [0.2, 0.9], [0.3, 0.1]])
    assert lam.scalar_values(x).tolist() == [1.0, 4.0, 1.0]
    H = lam.homogenized(2).matrix
    assert np.allclose(H, np.diag([1.6, 2.5]))


def test_laminate_rejects_out_of_bounds_values():
    with pytest.raises(ValueError):
        Laminate(alpha=1.0, beta=2.0, period=0.1)
    with pytest.raises(ValueError):
        Laminate(alpha=1.0, beta=4.0, period=0.1, profile=((0.4, 1.0), (0.4, 4.0)))


def test_two_phase_perforation_values():
    lat = PerforationLattice(0.25, 2.0, 3)
    A = TwoPhasePerforation(alpha=1.0, beta=2.0, a=1.0, b=2.0, lattice=lat)
    pts = np.array([[0.25, 0.25, 0.25], [0.25 + 0.05, 0.25, 0.25], [0.4, 0.4, 0.4]])
    assert A.scalar_values(pts).tolist() == [2.0, 2.0, 1.0]
    assert coefficient_samples_ok(A, pts)


def test_extension_outside_domain():
    lam = Laminate(alpha=1.0, beta=4.0, period=0.5)
    ext = with_outside(lam, Domain.unit(2), 1.0)
    pts = np.array([[-0.1, 0.5], [0.3, 0.5]])
    assert ext.scalar_values(pts).tolist() == [1.0, 4.0]
    m = ext.matrices(pts)
    assert m.shape == (2, 2, 2)


def test_measure_validation():
    with pytest.raises(ValueError):
        ConstantDensity(-1.0)
    with pytest.raises(ValueError):
        ConstantDensity(math.inf)
    lat = PerforationLattice(0.5, 2.0, 3)
    with pytest.raises(ValueError):
        Penalized(lat, 0.0)


def test_grid_density_rejects_negative():
    from homlab.fem import NodalField, build_mesh

    mesh = build_mesh(Domain.unit(2), 0.5)
    with pytest.raises(ValueError):
        GridDensity(NodalField(mesh, -np.ones(9)))
