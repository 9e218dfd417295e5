"""Closed forms for the two-phase perforated lattice (n >= 3).

Each hole ``C_i`` (radius ``eps**(n/(n-2))``) sits inside a ball ``B_i``
(radius ``eps**gamma``) where the coefficient is ``b I``. The harmonic shell
profile that is 0 on ``C_i`` and 1 on ``B_i`` is

    omega_i(x) = c - c eps**n |x - x_i|**(2-n),   c = c_eps(eps, n, gamma),

and its normal derivative on ``dB_i`` is constant, which turns the surface
measure on the outer spheres into a lattice sum that converges to
``b (n-2) S_{n-1}`` times Lebesgue measure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .fem import Mesh, NodalField
from .problem_model import (
    Domain,
    PerforationLattice,
    _check_gamma,
    c_eps,
    lattice_centers,
    sphere_area,
)

_EDGE_RTOL = 1e-12


@dataclass(frozen=True)
class RadialCell:
    eps: float
    n: int
    gamma: float
    center: tuple = None

    def __post_init__(self):
        PerforationLattice(self.eps, self.gamma, self.n)  # validates
        center = (0.0,) * self.n if self.center is None else tuple(map(float, self.center))
        if len(center) != self.n:
            raise ValueError("center has the wrong dimension")
        object.__setattr__(self, "center", center)

    @property
    def c(self) -> float:
        return c_eps(self.eps, self.n, self.gamma)

    @property
    def r_hole(self) -> float:
        return self.eps ** (self.n / (self.n - 2))

    @property
    def r_outer(self) -> float:
        return self.eps**self.gamma


def _profile(r, eps, n, c):
    return c - c * eps**n * np.power(r, 2.0 - n)


def omega_radial_eval(cell: RadialCell, x) -> np.ndarray:
    """Shell profile at points ``x`` (must lie in the closed shell)."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x - np.asarray(cell.center), axis=-1)
    lo, hi = cell.r_hole, cell.r_outer
    if np.any(r < lo * (1 - 1e-9)) or np.any(r > hi * (1 + 1e-9)):
        raise ValueError("point outside the shell B_i \\ C_i")
    val = _profile(np.clip(r, lo, hi), cell.eps, cell.n, cell.c)
    val = np.where(np.abs(r - lo) <= _EDGE_RTOL * lo, 0.0, val)
    val = np.where(r >= hi * (1 - _EDGE_RTOL), 1.0, val)
    return val


def omega_field_assemble(lattice: PerforationLattice, mesh: Mesh) -> NodalField:
    """Glued test function: 0 on the holes, shell profile on the shells, 1 elsewhere."""
    if lattice.dim < 3:
        raise ValueError("the shell construction needs n >= 3")
    n, eps = lattice.dim, lattice.eps
    c = c_eps(eps, n, lattice.gamma)
    _, r = lattice.nearest_center(mesh.coords().reshape(-1, n))
    lo, hi = lattice.r_hole, lattice.r_outer
    vals = np.ones_like(r)
    shell = (r > lo) & (r < hi)
    vals[shell] = _profile(r[shell], eps, n, c)
    vals[r <= lo * (1 + _EDGE_RTOL)] = 0.0
    if mesh.lattice == lattice:
        vals[mesh.hole_mask] = 0.0
    under = lo < mesh.h
    return NodalField(mesh, np.clip(vals, 0.0, 1.0), info={"under_resolved": under})


def cell_energy_closed_form(eps: float, n: int, gamma: float) -> float:
    """``int_{B_i \\ C_i} |D omega_i|^2 = (n-2) S_{n-1} c eps**n``."""
    return (n - 2) * sphere_area(n) * c_eps(eps, n, gamma) * eps**n


def shell_flux(r_in: float, r_out: float, n: int, a: float = 1.0) -> float:
    """Total flux of the harmonic shell potential (0 at ``r_in``, 1 at ``r_out``)."""
    if r_out <= r_in:
        raise ValueError("need r_out > r_in")
    return a * (n - 2) * sphere_area(n) / (r_in ** (2 - n) - r_out ** (2 - n))


def cell_energy_quadrature(
    cell: RadialCell, radial_points: int = 256, r_min: float | None = None, r_max: float | None = None
) -> float:
    """Gauss-Legendre quadrature of ``S_{n-1} r^{n-1} |omega'(r)|^2`` over a radial interval."""
    if radial_points < 1:
        raise ValueError("radial_points must be positive")
    lo = cell.r_hole if r_min is None else r_min
    hi = cell.r_outer if r_max is None else r_max
    if hi <= lo:
        return 0.0
    n = cell.n
    x, w = np.polynomial.legendre.leggauss(radial_points)
    r = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    dprof = cell.c * cell.eps**n * (n - 2) * r ** (1.0 - n)
    integrand = sphere_area(n) * r ** (n - 1) * dprof**2
    return float(0.5 * (hi - lo) * np.dot(w, integrand))


def fibonacci_sphere(npoints: int) -> np.ndarray:
    """Quasi-uniform points on the unit sphere S^2 (equal weights)."""
    k = np.arange(npoints, dtype=float) + 0.5
    polar = np.arccos(1.0 - 2.0 * k / npoints)
    azim = 2.0 * math.pi * k / ((1.0 + math.sqrt(5.0)) / 2.0)
    return np.column_stack(
        (np.cos(azim) * np.sin(polar), np.sin(azim) * np.sin(polar), np.cos(polar))
    )


def _clip_fractions(domain: Domain, centers, radius, npoints):
    """Fraction of each sphere ``|x - center| = radius`` lying in the closed box."""
    dirs = fibonacci_sphere(npoints)
    inside = np.array([domain.contains(c + radius * dirs).mean() for c in centers])
    return inside


def energy_bound_check(
    lattice: PerforationLattice, domain: Domain, mesh: Mesh | None = None
) -> tuple[float, float]:
    """Return ``(lhs, rhs)`` of ``int |D omega|^2 <= (n-2) S c N eps^n``.

    Without a mesh the left side is the per-cell closed form weighted by the
    fraction of each shell inside the box (solid angle, Fibonacci points); with
    a mesh it is the finite element energy of ``omega_field_assemble``.
    """
    from .fem import energy_seminorm
    from .problem_model import Constant

    n, eps = lattice.dim, lattice.eps
    centers = lattice_centers(lattice, domain)
    rhs = cell_energy_closed_form(eps, n, lattice.gamma) * len(centers)
    if mesh is None:
        frac = _clip_fractions(domain, centers, lattice.r_outer, 2000)
        lhs = cell_energy_closed_form(eps, n, lattice.gamma) * float(frac.sum())
    else:
        omega = omega_field_assemble(lattice, mesh)
        lhs = energy_seminorm(omega, Constant.isotropic(1.0, n))
    return lhs, rhs


def _as_callable(phi):
    if isinstance(phi, NodalField):
        mesh = phi.mesh
        interp = RegularGridInterpolator(mesh.axes, phi.grid, bounds_error=False, fill_value=0.0)
        return lambda x: interp(x.reshape(-1, x.shape[-1])).reshape(x.shape[:-1])
    if callable(phi):
        return phi
    value = float(phi)
    return lambda x: np.full(np.asarray(x).shape[:-1], value)


def lambda_pairing(
    lattice: PerforationLattice,
    domain: Domain,
    phi,
    b: float,
    sphere_points: int = 200,
    clip: bool = True,
) -> float:
    """``int phi d lambda_eps`` by Fibonacci quadrature on every outer sphere.

    With ``clip`` sphere points outside the box are dropped; otherwise only
    spheres lying entirely inside the box are summed, in full.
    """
    n, eps, gamma = lattice.dim, lattice.eps, lattice.gamma
    if n != 3:
        raise ValueError("sphere quadrature is implemented for n = 3 only")
    if sphere_points < 50:
        raise ValueError("need at least 50 points per sphere")
    _check_gamma(n, gamma)
    f = _as_callable(phi)
    R = lattice.r_outer
    centers = lattice_centers(lattice, domain)
    if not clip:
        full = np.all(
            (centers - R >= np.asarray(domain.lower)) & (centers + R <= np.asarray(domain.upper)),
            axis=1,
        )
        centers = centers[full]
    dirs = fibonacci_sphere(sphere_points)
    pts = centers[:, None, :] + R * dirs[None, :, :]
    vals = np.asarray(f(pts), dtype=float)
    if clip:
        vals = np.where(domain.contains(pts), vals, 0.0)
    # per-sphere means, then a pairwise (numpy) sum over spheres
    sphere_sums = vals.mean(axis=1) * sphere_area(n) * R ** (n - 1)
    density = b * (n - 2) * c_eps(eps, n, gamma) * eps ** (n - gamma * (n - 1))
    return float(density * np.sum(sphere_sums))
