"""Randomised invariants of the discretisation and the pipeline."""
import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from homlab import fem
from homlab import homogenization as hom
from homlab.example6 import RadialCell, cell_energy_closed_form, cell_energy_quadrature
from homlab.fem import NodalField, build_mesh
from homlab.problem_model import (
    Constant,
    ConstantDensity,
    Domain,
    Laminate,
    Load,
    PerforationLattice,
    Zero,
    c_eps,
)

FAST = settings(max_examples=25, deadline=None)
MESH2 = build_mesh(Domain.unit(2), 1 / 8)
MESH3 = build_mesh(Domain.unit(3), 1 / 4)

coef = st.floats(0.5, 8.0)
nodal2 = st.lists(st.floats(-10, 10), min_size=MESH2.n_nodes, max_size=MESH2.n_nodes).map(np.array)
nodal3 = st.lists(st.floats(-10, 10), min_size=MESH3.n_nodes, max_size=MESH3.n_nodes).map(np.array)


def _laminate(a, b, period, axis=0):
    lo, hi = min(a, b), max(a, b)
    return Laminate(alpha=lo, beta=hi, period=period, axis=axis, profile=((0.5, a), (0.5, b)))


@FAST
@given(a=coef, b=coef, vals=nodal2)
def test_discrete_coercivity_2d(a, b, vals):
    A = _laminate(a, b, 0.25)
    u = NodalField(MESH2, vals * (~MESH2.boundary_mask))
    e = fem.energy_seminorm(u, A)
    assert e >= A.alpha * fem.energy_seminorm(u, Constant.isotropic(1.0, 2)) * (1 - 1e-12) - 1e-12
    assert e <= A.beta * fem.energy_seminorm(u, Constant.isotropic(1.0, 2)) * (1 + 1e-12) + 1e-12


@FAST
@given(a=coef, b=coef, vals=nodal3)
def test_discrete_coercivity_3d(a, b, vals):
    A = _laminate(a, b, 0.5, axis=2)
    u = NodalField(MESH3, vals * (~MESH3.boundary_mask))
    grad = fem.energy_seminorm(u, Constant.isotropic(1.0, 3))
    assert fem.energy_seminorm(u, A) >= A.alpha * grad * (1 - 1e-12) - 1e-12


@FAST
@given(a=coef, m=st.floats(0.0, 50.0), f=st.floats(0.1, 10.0))
def test_energy_identity_and_poincare_bound(a, m, f):
    # alpha |Du|^2 + int u^2 dmu = <f, u>, and Poincare gives |Du| <= |f| / (alpha sqrt(2) pi)
    A = Constant.isotropic(a, 2)
    mesh = build_mesh(Domain.unit(2), 1 / 16)
    u = hom.solve_relaxed(A, ConstantDensity(m), Load(f=f), mesh, fem.SolverParams(rel_tol=1e-12))
    lhs = fem.energy_seminorm(u, A) + fem.weighted_mass(u, u, ConstantDensity(m))
    rhs = f * float(mesh.lumped_mass() @ u.values)
    assert math.isclose(lhs, rhs, rel_tol=1e-8)
    grad = math.sqrt(fem.energy_seminorm(u, Constant.isotropic(1.0, 2)))
    assert grad <= 1.01 * f / (a * math.sqrt(2) * math.pi)


@FAST
@given(f1=st.floats(0.0, 5.0), df=st.floats(0.0, 5.0), m=st.floats(0.0, 20.0), a=coef, b=coef)
def test_maximum_and_comparison_principles(f1, df, m, a, b):
    A = _laminate(a, b, 0.25, axis=1)
    mu = ConstantDensity(m)
    u1 = hom.solve_relaxed(A, mu, Load(f=f1), MESH2)
    u2 = hom.solve_relaxed(A, mu, Load(f=lambda x: f1 + df * x[..., 0]), MESH2)
    assert u1.values.min() >= -1e-10
    assert np.all(u1.values <= u2.values + 1e-10)


@FAST
@given(m=st.floats(0.0, 100.0), a=coef)
def test_w_bounded_by_measure_free_w(m, a):
    A = Constant.isotropic(a, 3)
    w = hom.solve_w(A, ConstantDensity(m), MESH3)
    w0 = hom.solve_w(A, Zero(), MESH3)
    assert w.values.min() >= -1e-12
    assert np.all(w.values <= w0.values + 1e-12)


@FAST
@given(s=st.floats(-5, 5), t=st.floats(-5, 5), m=st.floats(0.0, 10.0))
def test_solver_linearity(s, t, m):
    A = _laminate(1.0, 3.0, 0.25)
    p = fem.SolverParams(rel_tol=1e-12)
    f1 = lambda x: np.sin(3 * x[..., 0])  # noqa: E731
    f2 = lambda x: x[..., 1] ** 2  # noqa: E731
    u1 = hom.solve_relaxed(A, ConstantDensity(m), Load(f=f1), MESH2, p)
    u2 = hom.solve_relaxed(A, ConstantDensity(m), Load(f=f2), MESH2, p)
    u = hom.solve_relaxed(A, ConstantDensity(m), Load(f=lambda x: s * f1(x) + t * f2(x)), MESH2, p)
    assert np.allclose(u.values, s * u1.values + t * u2.values, atol=1e-9 * (1 + abs(s) + abs(t)))


@FAST
@given(c=st.floats(1e-3, 1e3), vals=st.lists(st.floats(0, 10), min_size=MESH3.n_nodes, max_size=MESH3.n_nodes))
def test_extraction_linearity(c, vals):
    lat = PerforationLattice(0.5, 2.0, 3)
    mesh = fem.classify_holes(MESH3, lat)
    nu = NodalField(mesh, np.array(vals))
    w = hom.solve_w(Constant.isotropic(1.0, 3), Zero(), mesh)
    e1 = hom.extract_strange_term(nu, w, 0.5, 1e-6)
    e2 = hom.extract_strange_term(nu * c, w, 0.5, 1e-6)
    np.testing.assert_allclose(e2.window_density, c * e1.window_density, rtol=1e-12, atol=0)
    assert e1.mu_hat.field.values.min() >= 0


@FAST
@given(m1=st.floats(1e-3, 1e3), m2=st.floats(1e-3, 1e3), alpha=st.floats(0.1, 1.0), k=st.floats(1.0, 5.0))
def test_comparison_check_reflexive_and_antisymmetric(m1, m2, alpha, k):
    beta = alpha * k
    assert hom.comparison_bounds_check(m1, m1, alpha, beta).passed
    fwd = hom.comparison_bounds_check(m1, m2, alpha, beta)
    bwd = hom.comparison_bounds_check(m2, m1, alpha, beta)
    assert fwd.passed == bwd.passed
    assert math.isclose(fwd.min_ratio * bwd.max_ratio, 1.0, rel_tol=1e-12)


@FAST
@given(eps=st.floats(0.02, 0.4), gamma=st.floats(1.05, 2.95))
def test_closed_form_constants(eps, gamma):
    c = c_eps(eps, 3, gamma)
    assert c > 1.0
    q = cell_energy_quadrature(RadialCell(eps, 3, gamma), 256)
    assert math.isclose(q, cell_energy_closed_form(eps, 3, gamma), rel_tol=1e-3)


@FAST
@given(vals=nodal2)
def test_reaction_summation_identity(vals):
    # reactions of any solved system add up to the total load
    f = NodalField(MESH2, np.abs(vals))
    sys_ = fem.assemble(MESH2, Constant.isotropic(1.0, 2), Zero(), Load(f=f))
    u = fem.solve(sys_, fem.SolverParams(rel_tol=1e-12))
    r = fem.reaction_forces(sys_, u)
    total = float(MESH2.lumped_mass() @ f.values)
    assert math.isclose(r.values.sum(), total, rel_tol=1e-9, abs_tol=1e-12)
    assert r.values[MESH2.boundary_mask].min() >= -1e-10
