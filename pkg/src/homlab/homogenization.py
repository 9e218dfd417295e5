"""Homogenization pipeline on top of the structured-grid solver.

Covers the relaxed Dirichlet solve, the torsion-like test function ``w``,
oscillating correctors ``z_j`` on an enlarged box, the multiplicative
corrector ``(psi + sum_j D_j psi z_j) omega``, reaction measures on the holes
and the window-averaged extraction ``mu = nu / w`` of the limit zero-order
term.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.ndimage as ndi

from . import fem
from .fem import Mesh, NodalField, SolverParams
from .problem_model import (
    CoefficientField,
    Constant,
    ConstantDensity,
    Domain,
    GridDensity,
    HoleDirichlet,
    Load,
    MeasureSpec,
    Penalized,
    Zero,
    with_outside,
)


def solve_relaxed(
    A: CoefficientField,
    mu: MeasureSpec,
    load: Load,
    mesh: Mesh,
    params: SolverParams | None = None,
) -> NodalField:
    system = fem.assemble(mesh, A, mu, load)
    return fem.solve(system, params)


def solve_w(A: CoefficientField, mu: MeasureSpec, mesh: Mesh, params: SolverParams | None = None) -> NodalField:
    """Relaxed solution with right-hand side 1."""
    return solve_relaxed(A, mu, Load(f=1.0), mesh, params)


# --------------------------------------------------------------------------
# correctors


@dataclass(eq=False)
class CorrectorSet:
    eps: float
    z: list
    A_eps: CoefficientField
    A0: CoefficientField
    z_enlarged: list = field(default_factory=list)

    @property
    def sup_norms(self) -> list[float]:
        return [zj.sup_norm() for zj in self.z]


def enlarged_mesh(mesh: Mesh, margin_cells: int = 2) -> Mesh:
    """Same spacing, box padded by ``margin_cells`` on every side."""
    if margin_cells < 2:
        raise ValueError("the enlarged box needs a margin of at least 2 cells")
    pad = margin_cells * mesh.h
    dom = Domain(
        tuple(l - pad for l in mesh.domain.lower), tuple(u + pad for u in mesh.domain.upper)
    )
    return fem.build_mesh(dom, mesh.h)


def restrict(u: NodalField, mesh: Mesh) -> NodalField:
    """Restrict a field on an enlarged grid to the sub-grid of ``mesh``."""
    big = u.mesh
    if abs(big.h - mesh.h) > 1e-14 * mesh.h:
        raise ValueError("grids have different spacing")
    start = [int(round((lo - blo) / mesh.h)) for lo, blo in zip(mesh.domain.lower, big.domain.lower)]
    sl = tuple(slice(s, s + n) for s, n in zip(start, mesh.shape))
    return NodalField(mesh, u.grid[sl].ravel())


def _cell_flux_rhs(mesh: Mesh, F: np.ndarray) -> np.ndarray:
    """``int F . D phi_i dx`` for a cellwise-constant vector field ``F``."""
    n = mesh.dim
    G = fem._gradient_tensor(n)
    corners = np.array(fem._corners(n), dtype=float)
    # int_cell d_k phi_P = sum_Q G[k,k,P,Q] * corner_Q[k] on the unit cell
    D = np.einsum("kkpq,qk->kp", G, corners) * mesh.h ** (n - 1)
    out = np.zeros(mesh.shape)
    for P, p in enumerate(fem._corners(n)):
        acc = sum(D[k, P] * F[..., k] for k in range(n))
        out[fem._corner_slice(mesh, p)] += acc
    return out.ravel()


def solve_corrector_z(
    A_eps: CoefficientField,
    A0: CoefficientField,
    j: int,
    mesh: Mesh,
    params: SolverParams | None = None,
    inner: Domain | None = None,
) -> NodalField:
    """``z in H^1_0(mesh box)`` with ``-div(A_eps (Dz + e_j)) = -div(A0 e_j)``.

    When ``inner`` is given, both coefficients are replaced by ``alpha I``
    outside it (``alpha`` of ``A_eps``), which is how the enlarged box is used.
    """
    n = mesh.dim
    if inner is not None:
        A_eps = with_outside(A_eps, inner, A_eps.alpha)
        A0 = with_outside(A0, inner, A_eps.alpha)
    centers = mesh.cell_centers()
    diff = np.asarray(A0.matrices(centers), dtype=float) - np.asarray(A_eps.matrices(centers), dtype=float)
    rhs = _cell_flux_rhs(mesh, diff[..., :, j])
    system = fem.SparseSystem(
        mesh=mesh,
        matrix=fem.stiffness_matrix(mesh, A_eps),
        rhs=rhs,
        constrained=mesh.boundary_mask.copy(),
    )
    z = fem.solve(system, params)
    z.info = dict(z.info or {}, sup_norm=z.sup_norm())
    return z


def compute_correctors(
    A_eps: CoefficientField,
    A0: CoefficientField,
    mesh: Mesh,
    eps: float,
    params: SolverParams | None = None,
    margin_cells: int = 2,
) -> CorrectorSet:
    big = enlarged_mesh(mesh, margin_cells)
    zs_big = [solve_corrector_z(A_eps, A0, j, big, params, inner=mesh.domain) for j in range(mesh.dim)]
    zs = [restrict(z, mesh) for z in zs_big]
    return CorrectorSet(eps=eps, z=zs, A_eps=A_eps, A0=A0, z_enlarged=zs_big)


def homogenized_flux(correctors: CorrectorSet, region: Domain | None = None) -> np.ndarray:
    """Matrix ``H[i, j] = mean over region of (A_eps (D z_j + e_j)) . e_i``."""
    mesh = correctors.z[0].mesh
    n = mesh.dim
    centers = mesh.cell_centers()
    A = np.asarray(correctors.A_eps.matrices(centers), dtype=float)
    weight = np.ones(mesh.cell_shape)
    if region is not None:
        weight = region.contains(centers).astype(float)
    H = np.zeros((n, n))
    for j, zj in enumerate(correctors.z):
        g = fem.cell_gradients(zj)
        g[..., j] += 1.0
        flux = np.einsum("...ik,...k->...i", A, g)
        H[:, j] = (flux * weight[..., None]).reshape(-1, n).sum(axis=0) / weight.sum()
    return H


def build_corrector(psi: NodalField, correctors: CorrectorSet | None, omega: NodalField) -> NodalField:
    """``(psi + sum_j D_j psi z_j) * omega`` at the nodes."""
    if not psi.mesh.same_grid(omega.mesh):
        raise ValueError("psi and omega live on different meshes")
    inner = psi.values.copy()
    if correctors is not None:
        grads = fem.nodal_gradients(psi)
        for gj, zj in zip(grads, correctors.z):
            if not zj.mesh.same_grid(psi.mesh):
                raise ValueError("corrector lives on a different mesh")
            inner += gj.values * zj.values
    return NodalField(psi.mesh, inner * omega.values)


def choose_psi_delta(
    u0: NodalField,
    omega0: NodalField,
    theta: float,
    smoothing_radius: float,
    beta: float = 1.0,
    mu0: MeasureSpec | None = None,
    target: float | None = None,
) -> NodalField:
    """Box-filtered ``u0 / max(omega0, theta)``.

    ``info['delta']`` holds ``beta |D(u0 - psi omega0)|^2 + int |u0 - psi omega0|^2 dmu0``;
    ``info['reached']`` says whether it is below ``target`` (when given).
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    if np.any(omega0.values < 0):
        raise ValueError("omega0 must be nonnegative")
    mesh = u0.mesh
    q = (u0.values / np.maximum(omega0.values, theta)).reshape(mesh.shape)
    k = int(round(smoothing_radius / mesh.h))
    if k > 0:
        q = ndi.uniform_filter(q, size=2 * k + 1, mode="nearest")
    psi = NodalField(mesh, q.ravel())
    diff = u0 - psi * omega0
    delta = beta * fem.energy_seminorm(diff, Constant.isotropic(1.0, mesh.dim))
    if mu0 is not None and not isinstance(mu0, (Zero, HoleDirichlet)):
        delta += fem.weighted_mass(diff, diff, mu0)
    psi.info = {"delta": delta, "reached": None if target is None else bool(delta < target)}
    return psi


def _region_weight(mesh: Mesh, region: Domain | None):
    if region is None:
        return None
    return region.contains(mesh.cell_centers()).astype(float)


def corrector_error(
    u_eps: NodalField,
    v: NodalField,
    A_eps: CoefficientField,
    mu_eps: MeasureSpec,
    region: Domain | None = None,
) -> tuple[float, float]:
    """``(alpha |D(u - v)|^2, int |u - v|^2 dmu)``, optionally over a sub-box.

    For ``HoleDirichlet`` the measure term is 0 when ``u - v`` vanishes on
    the hole nodes and ``inf`` otherwise.
    """
    if not u_eps.mesh.same_grid(v.mesh):
        raise ValueError("fields live on different meshes")
    diff = u_eps - v
    energy = A_eps.alpha * fem.energy_seminorm(
        diff, Constant.isotropic(1.0, diff.mesh.dim), region=_region_weight(diff.mesh, region)
    )
    if isinstance(mu_eps, HoleDirichlet):
        mask = diff.mesh.hole_mask
        if region is not None:
            mask = mask & region.contains(diff.mesh.coords().reshape(-1, diff.mesh.dim))
        on_holes = np.max(np.abs(diff.values[mask]), initial=0.0)
        return energy, 0.0 if on_holes <= 1e-12 else math.inf
    w = fem.measure_weights(diff.mesh, mu_eps)
    if region is not None:
        w = w * region.contains(diff.mesh.coords().reshape(-1, diff.mesh.dim))
    return energy, float(np.sum(w * diff.values**2))


# --------------------------------------------------------------------------
# reactions and extraction


def reaction_measure(
    A: CoefficientField,
    mu: HoleDirichlet,
    mesh: Mesh,
    params: SolverParams | None = None,
    load: Load | None = None,
    boundary_value: float = 0.0,
) -> NodalField:
    """Nodal reactions on the holes for ``-div(A Dw) + nu = f`` (``f = 1`` by default).

    ``info['w']`` carries the solution. Reactions on the outer boundary are
    dropped: they pair with the boundary trace, not with the hole measure.
    """
    if not isinstance(mu, HoleDirichlet):
        raise TypeError("reaction_measure needs a HoleDirichlet measure")
    system = fem.assemble(mesh, A, mu, load or Load(f=1.0))
    system.values = np.where(mesh.boundary_mask, boundary_value, 0.0)
    w = fem.solve(system, params)
    r = fem.reaction_forces(system, w)
    nu = np.where(mesh.hole_mask, r.values, 0.0)
    return NodalField(mesh, nu, info={"w": w, "total": float(nu.sum())})


@dataclass(eq=False)
class StrangeTermEstimate:
    eps: float
    window: float
    mu_hat: GridDensity
    total_mass: float
    reference_w: NodalField
    window_density: np.ndarray  # NaN where saturated
    window_nu: np.ndarray
    window_w: np.ndarray
    window_volume: np.ndarray
    saturated: np.ndarray
    interior: np.ndarray

    @property
    def interior_values(self) -> np.ndarray:
        vals = self.window_density[self.interior & ~self.saturated]
        return vals

    @property
    def interior_mean(self) -> float:
        v = self.interior_values
        return float(v.mean()) if v.size else math.nan

    @property
    def interior_std(self) -> float:
        v = self.interior_values
        return float(v.std()) if v.size else math.nan


def _axis_window_weights(coords: np.ndarray, origin: float, window: float, n_windows: int, h: float):
    """Split each node's lumped support ``[x - h/2, x + h/2]`` among 1D windows."""
    P = np.zeros((coords.size, n_windows))
    lo = coords - 0.5 * h
    hi = coords + 0.5 * h
    for k in range(n_windows):
        a = origin + k * window
        b = a + window
        P[:, k] = np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None) / h
    return P


def window_sums(mesh: Mesh, values: np.ndarray, origin, window: float):
    """Sums of ``values`` over a tensor grid of windows (fractional node split).

    Returns the window sums and the window lower corners per axis.
    """
    lower, upper = np.asarray(mesh.domain.lower), np.asarray(mesh.domain.upper)
    origin = np.asarray(origin, dtype=float)
    mats, starts = [], []
    for d, ax in enumerate(mesh.axes):
        nw = int(math.ceil((upper[d] - origin[d]) / window - 1e-9))
        P = _axis_window_weights(ax, origin[d], window, nw, mesh.h)
        # drop windows that do not meet the box
        keep = P.sum(axis=0) > 0
        mats.append(P[:, keep])
        starts.append(origin[d] + window * np.arange(nw)[keep])
    t = values.reshape(mesh.shape)
    for d, P in enumerate(mats):
        t = np.moveaxis(np.tensordot(t, P, axes=([d], [0])), -1, d)
    return t, starts


def extract_strange_term(
    nu: NodalField,
    w: NodalField,
    window: float,
    floor: float,
    origin: Sequence[float] | None = None,
) -> StrangeTermEstimate:
    """Coarse-grained ``mu_hat = (sum of nu in window) / (volume * max(mean w, floor))``.

    Windows whose mean ``w`` falls below ``floor`` are saturated (density
    NaN in ``window_density``, 0 in ``mu_hat``). ``origin`` defaults to the box
    corner shifted by half a window, so that windows of size eps are centred
    on lattice points.
    """
    mesh = nu.mesh
    if not mesh.same_grid(w.mesh):
        raise ValueError("nu and w live on different meshes")
    if floor <= 0:
        raise ValueError("floor must be positive")
    eps = mesh.lattice.eps if mesh.lattice is not None else None
    if eps is not None and window < eps * (1 - 1e-12):
        raise ValueError(f"window {window} is smaller than one lattice cell ({eps})")
    lower = np.asarray(mesh.domain.lower)
    upper = np.asarray(mesh.domain.upper)
    if origin is None:
        origin = lower - 0.5 * window
    lumped = mesh.lumped_mass()
    S_nu, starts = window_sums(mesh, nu.values, origin, window)
    S_vol, _ = window_sums(mesh, lumped, origin, window)
    S_w, _ = window_sums(mesh, w.values * lumped, origin, window)
    wbar = S_w / S_vol
    saturated = wbar < floor
    density = np.where(saturated, np.nan, S_nu / (S_vol * np.maximum(wbar, floor)))
    tol = 1e-9 * window
    interior = np.ones(density.shape, dtype=bool)
    for d, st in enumerate(starts):
        ok = (st > lower[d] + tol) & (st + window < upper[d] - tol)
        shp = [1] * len(starts)
        shp[d] = len(st)
        interior &= ok.reshape(shp)
    # back to nodes: each node takes its (dominant) window's density
    idx = []
    for d, ax in enumerate(mesh.axes):
        k = np.floor((ax - starts[d][0]) / window + 1e-9).astype(int)
        idx.append(np.clip(k, 0, len(starts[d]) - 1))
    dens0 = np.nan_to_num(density, nan=0.0)
    nodal = dens0[np.ix_(*idx)].ravel()
    field_ = NodalField(mesh, nodal)
    return StrangeTermEstimate(
        eps=eps if eps is not None else math.nan,
        window=window,
        mu_hat=GridDensity(field=field_),
        total_mass=float(np.sum(nodal * lumped)),
        reference_w=w,
        window_density=density,
        window_nu=S_nu,
        window_w=wbar,
        window_volume=S_vol,
        saturated=saturated,
        interior=interior,
    )


# --------------------------------------------------------------------------
# checks and probes


@dataclass
class ComparisonReport:
    passed: bool
    cell_pass: np.ndarray
    min_ratio: float
    max_ratio: float
    band: tuple

    @property
    def pass_fraction(self) -> float:
        return float(np.mean(self.cell_pass))


def comparison_bounds_check(mu1, mu2, alpha: float, beta: float, tol: float = 0.0) -> ComparisonReport:
    """Cellwise ``(alpha/beta)^2 mu2 <= mu1 <= (beta/alpha)^2 mu2`` with slack ``1 + tol``."""
    m1 = np.atleast_1d(np.asarray(getattr(mu1, "values", mu1), dtype=float))
    m2 = np.atleast_1d(np.asarray(getattr(mu2, "values", mu2), dtype=float))
    m1, m2 = np.broadcast_arrays(m1, m2)
    k = (alpha / beta) ** 2
    lo = k * m2 / (1.0 + tol)
    hi = m2 / k * (1.0 + tol)
    ok = (m1 >= lo) & (m1 <= hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(m2 > 0, m1 / m2, np.where(m1 > 0, np.inf, 1.0))
    return ComparisonReport(
        passed=bool(ok.all()),
        cell_pass=ok,
        min_ratio=float(ratio.min()),
        max_ratio=float(ratio.max()),
        band=(k, 1.0 / k),
    )


@dataclass
class ProbeRow:
    eps: float
    l2_gap: float
    flux_gap: float
    flux_components: tuple


def h_convergence_probe(
    A_seq: Sequence[tuple],
    A0: CoefficientField,
    load: Load,
    mesh_rule: Callable[[float], Mesh],
    params: SolverParams | None = None,
    phi: Callable | None = None,
) -> list[ProbeRow]:
    """Weak-convergence surrogates for each ``(eps, A_eps)``.

    ``l2_gap = ||u_eps - u0||``; ``flux_gap = |int (A_eps Du_eps - A0 Du0) . D phi|``
    for a fixed smooth ``phi`` that does not vanish on the boundary (a test
    function in H^1_0 would make the pairing identically ``<f, phi>`` on both
    sides). ``flux_components`` are the averages of the flux difference.
    """
    if phi is None:
        phi = lambda x: x[..., 0] * (1.0 + x[..., 1])  # noqa: E731
    rows = []
    for eps, A_eps in A_seq:
        mesh = mesh_rule(eps)
        u = solve_relaxed(A_eps, Zero(), load, mesh, params)
        u0 = solve_relaxed(A0, Zero(), load, mesh, params)
        ph = NodalField.interpolate(mesh, phi)
        flux_gap = abs(fem.energy_seminorm(u, A_eps, ph) - fem.energy_seminorm(u0, A0, ph))
        centers = mesh.cell_centers()
        fe = np.einsum("...ik,...k->...i", np.asarray(A_eps.matrices(centers)), fem.cell_gradients(u))
        f0 = np.einsum("...ik,...k->...i", np.asarray(A0.matrices(centers)), fem.cell_gradients(u0))
        comps = tuple(float(np.mean(fe[..., k] - f0[..., k])) for k in range(mesh.dim))
        rows.append(ProbeRow(eps=eps, l2_gap=fem.l2_norm(u - u0), flux_gap=flux_gap, flux_components=comps))
    return rows
