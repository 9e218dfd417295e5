"""Problem data: domains, coefficient fields, perforation lattices, measures, loads.

Also hosts the closed-form constants of the two-phase perforated example
(``c_eps``, ``mu0_prediction``) since they depend on nothing but the lattice
parameters.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``prod_k (lower[k], upper[k])``."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if len(lower) != len(upper) or len(lower) not in (2, 3):
            raise ValueError("lower/upper must both have length 2 or 3")
        if any(u <= l for l, u in zip(lower, upper)):
            raise ValueError(f"degenerate box: lower={lower}, upper={upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def unit(cls, dim: int) -> "Domain":
        return cls((0.0,) * dim, (1.0,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lengths(self) -> np.ndarray:
        return np.subtract(self.upper, self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def distance(self, points) -> np.ndarray:
        """Euclidean distance from each point to the closed box (0 inside)."""
        p = np.asarray(points, dtype=float)
        below = np.maximum(np.asarray(self.lower) - p, 0.0)
        above = np.maximum(p - np.asarray(self.upper), 0.0)
        return np.sqrt(np.sum(below**2 + above**2, axis=-1))

    def contains(self, points, closed: bool = True) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        if closed:
            return np.all((p >= lo) & (p <= hi), axis=-1)
        return np.all((p > lo) & (p < hi), axis=-1)


def _check_gamma(n: int, gamma: float) -> None:
    if n < 3:
        raise ValueError(f"perforation lattice needs n >= 3, got n={n}")
    upper = n / (n - 2)
    if not (1.0 < gamma < upper):
        raise ValueError(f"gamma must satisfy 1 < gamma < {upper:g}, got {gamma}")


@dataclass(frozen=True)
class PerforationLattice:
    """Periodic array of holes of radius eps**(n/(n-2)) inside balls of radius eps**gamma.

    Centers sit at ``eps * i`` for integer vectors ``i``.
    """

    eps: float
    gamma: float
    dim: int = 3

    def __post_init__(self):
        if not (0.0 < self.eps < 1.0):
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        _check_gamma(self.dim, self.gamma)

    @property
    def r_outer(self) -> float:
        return self.eps**self.gamma

    @property
    def r_hole(self) -> float:
        return self.eps ** (self.dim / (self.dim - 2))

    @property
    def balls_disjoint(self) -> bool:
        return self.eps < 2.0 ** (1.0 / (1.0 - self.gamma))

    def nearest_center(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Nearest lattice point and the distance to it, for each point.

        Outer balls have radius below eps/2 in the admissible range, so the
        nearest lattice point is the only center whose ball can contain a point.
        """
        p = np.asarray(points, dtype=float)
        c = np.rint(p / self.eps) * self.eps
        return c, np.sqrt(np.sum((p - c) ** 2, axis=-1))


def lattice_centers(lattice: PerforationLattice, domain: Domain) -> np.ndarray:
    """Centers ``eps*i`` whose distance to the box is less than eps.

    Returns an ``(N, n)`` array ordered lexicographically in ``i``.
    """
    if domain.dim != lattice.dim:
        raise ValueError("lattice and domain dimensions differ")
    eps = lattice.eps
    ranges = [
        range(math.floor(lo / eps) - 1, math.ceil(hi / eps) + 2)
        for lo, hi in zip(domain.lower, domain.upper)
    ]
    idx = np.array(list(itertools.product(*ranges)), dtype=float)
    pts = idx * eps
    # strict inequality; the relative guard keeps exact ties (e.g. -eps) out
    keep = domain.distance(pts) < eps * (1.0 - 1e-12)
    return pts[keep]


def c_eps(eps: float, n: int, gamma: float) -> float:
    """Normalising constant of the radial shell profile, ``1/(1 - eps**(n - gamma(n-2)))``."""
    _check_gamma(n, gamma)
    if not (0.0 < eps < 1.0):
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    return 1.0 / (1.0 - eps ** (n - gamma * (n - 2)))


def mu0_prediction(b: float, n: int) -> float:
    """Limit density ``b (n-2) S_{n-1}`` of the strange term."""
    if b <= 0 or n < 3:
        raise ValueError("need b > 0 and n >= 3")
    return b * (n - 2) * sphere_area(n)


# --------------------------------------------------------------------------
# coefficient fields


@dataclass(frozen=True)
class CoefficientField:
    """Base class; subclasses implement ``scalar_values`` or ``matrices``.

    ``alpha``/``beta`` are the coercivity and boundedness bounds: every
    pointwise matrix ``M`` must satisfy ``M >= alpha I`` and ``M^{-1} >= I/beta``.
    """

    alpha: float
    beta: float

    def _check_bounds(self):
        if not (0 < self.alpha <= self.beta):
            raise ValueError(f"need 0 < alpha <= beta, got {self.alpha}, {self.beta}")

    @property
    def dim(self) -> int | None:
        return None

    def scalar_values(self, points) -> np.ndarray | None:
        """Per-point scalar ``s`` when the field is ``s(x) I``, else ``None``."""
        return None

    def matrices(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        s = self.scalar_values(p)
        n = p.shape[-1]
        return s[..., None, None] * np.eye(n)

    def __call__(self, x) -> np.ndarray:
        return self.matrices(x)


def _symmetric_bounds_ok(m: np.ndarray, alpha: float, beta: float, rtol=1e-12) -> bool:
    eig = np.linalg.eigvalsh(m)
    return eig.min() >= alpha * (1 - rtol) and eig.max() <= beta * (1 + rtol)


@dataclass(frozen=True, eq=False)
class Constant(CoefficientField):
    matrix: np.ndarray = field(default=None)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or not np.allclose(m, m.T):
            raise ValueError("Constant coefficient must be a symmetric square matrix")
        self._check_bounds()
        if not _symmetric_bounds_ok(m, self.alpha, self.beta):
            raise ValueError("matrix eigenvalues outside [alpha, beta]")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def isotropic(cls, value: float, dim: int, alpha=None, beta=None) -> "Constant":
        return cls(
            alpha=value if alpha is None else alpha,
            beta=value if beta is None else beta,
            matrix=value * np.eye(dim),
        )

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def is_isotropic(self) -> bool:
        d = self.matrix[0, 0]
        return bool(np.allclose(self.matrix, d * np.eye(self.dim)))

    def scalar_values(self, points):
        if not self.is_isotropic:
            return None
        p = np.asarray(points, dtype=float)
        return np.full(p.shape[:-1], self.matrix[0, 0])

    def matrices(self, points):
        p = np.asarray(points, dtype=float)
        return np.broadcast_to(self.matrix, p.shape[:-1] + self.matrix.shape)


@dataclass(frozen=True)
class TwoPhasePerforation(CoefficientField):
    """``b I`` inside the outer balls of the lattice, ``a I`` elsewhere."""

    a: float = 1.0
    b: float = 1.0
    lattice: PerforationLattice = None

    def __post_init__(self):
        self._check_bounds()
        for v in (self.a, self.b):
            if not (self.alpha <= v <= self.beta):
                raise ValueError(f"a, b must lie in [alpha, beta]; got {v}")
        if self.lattice is None:
            raise ValueError("TwoPhasePerforation needs a lattice")

    @property
    def dim(self):
        return self.lattice.dim

    def in_outer_ball(self, points) -> np.ndarray:
        _, d = self.lattice.nearest_center(points)
        return d < self.lattice.r_outer

    def scalar_values(self, points):
        return np.where(self.in_outer_ball(points), self.b, self.a)


@dataclass(frozen=True)
class Laminate(CoefficientField):
    """Layered isotropic medium varying along ``axis`` with the given period.

    ``profile`` is a sequence of ``(fraction, value)`` pairs covering one
    period in order; fractions must sum to one.
    """

    axis: int = 0
    period: float = 1.0
    profile: tuple = ((0.5, 1.0), (0.5, 4.0))

    def __post_init__(self):
        self._check_bounds()
        prof = tuple((float(f), float(v)) for f, v in self.profile)
        if not prof or abs(sum(f for f, _ in prof) - 1.0) > 1e-12:
            raise ValueError("laminate fractions must sum to 1")
        if any(f <= 0 for f, _ in prof):
            raise ValueError("laminate fractions must be positive")
        if any(not (self.alpha <= v <= self.beta) for _, v in prof):
            raise ValueError("laminate values must lie in [alpha, beta]")
        if self.period <= 0:
            raise ValueError("period must be positive")
        object.__setattr__(self, "profile", prof)

    @property
    def harmonic_mean(self) -> float:
        return 1.0 / sum(f / v for f, v in self.profile)

    @property
    def arithmetic_mean(self) -> float:
        return sum(f * v for f, v in self.profile)

    def homogenized(self, dim: int) -> Constant:
        """Closed-form H-limit: harmonic mean across layers, arithmetic along them."""
        diag = np.full(dim, self.arithmetic_mean)
        diag[self.axis] = self.harmonic_mean
        return Constant(alpha=self.alpha, beta=self.beta, matrix=np.diag(diag))

    def scalar_values(self, points):
        p = np.asarray(points, dtype=float)
        t = np.mod(p[..., self.axis] / self.period, 1.0)
        edges = np.cumsum([f for f, _ in self.profile])[:-1]
        values = np.array([v for _, v in self.profile])
        return values[np.searchsorted(edges, t, side="right")]


def with_outside(field_: CoefficientField, domain: Domain, value: float) -> "Extended":
    """Wrap ``field_`` so that it equals ``value * I`` outside ``domain``."""
    return Extended(alpha=field_.alpha, beta=field_.beta, inner=field_, domain=domain, value=value)


@dataclass(frozen=True)
class Extended(CoefficientField):
    inner: CoefficientField = None
    domain: Domain = None
    value: float = 1.0

    @property
    def dim(self):
        return self.domain.dim

    def scalar_values(self, points):
        s = self.inner.scalar_values(points)
        if s is None:
            return None
        return np.where(self.domain.contains(points, closed=False), s, self.value)

    def matrices(self, points):
        p = np.asarray(points, dtype=float)
        m = np.array(self.inner.matrices(p), dtype=float)
        outside = ~self.domain.contains(p, closed=False)
        m[outside] = self.value * np.eye(p.shape[-1])
        return m


# --------------------------------------------------------------------------
# measures and loads


@dataclass(frozen=True)
class MeasureSpec:
    """Representable nonnegative measures. Use the subclasses."""

    @property
    def lattice(self) -> PerforationLattice | None:
        return None


@dataclass(frozen=True)
class Zero(MeasureSpec):
    pass


@dataclass(frozen=True)
class ConstantDensity(MeasureSpec):
    m: float = 0.0

    def __post_init__(self):
        if not (self.m >= 0 and math.isfinite(self.m)):
            raise ValueError(f"density must be finite and nonnegative, got {self.m}")


@dataclass(frozen=True, eq=False)
class GridDensity(MeasureSpec):
    """Density given by nodal values (piecewise multilinear interpolant)."""

    field: object = None  # fem.NodalField

    def __post_init__(self):
        vals = np.asarray(self.field.values)
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise ValueError("GridDensity values must be finite and nonnegative")


@dataclass(frozen=True)
class HoleDirichlet(MeasureSpec):
    """Zero on the perforated domain, +infinity on the holes (u = 0 there)."""

    holes: PerforationLattice = None

    @property
    def lattice(self):
        return self.holes


@dataclass(frozen=True)
class Penalized(MeasureSpec):
    """``k`` times Lebesgue measure restricted to the holes."""

    holes: PerforationLattice = None
    k: float = 1.0

    def __post_init__(self):
        if not (0 < self.k < math.inf):
            raise ValueError(f"penalty k must be finite and positive, got {self.k}")

    @property
    def lattice(self):
        return self.holes


Source = Union[float, Callable, object]


@dataclass(frozen=True)
class Load:
    """Right-hand side ``L(y) = <f, y> + int g y dmu``.

    ``f`` and ``g`` may be scalars, callables of an ``(..., n)`` point array,
    or nodal fields on the mesh used for assembly.
    """

    f: Source = 0.0
    g: Source | None = None


def unit_load() -> Load:
    return Load(f=1.0)


def coefficient_samples_ok(field_: CoefficientField, points: Sequence) -> bool:
    """Check the alpha/beta bounds at sample points."""
    m = np.asarray(field_.matrices(np.asarray(points, dtype=float)))
    return _symmetric_bounds_ok(m.reshape(-1, *m.shape[-2:]), field_.alpha, field_.beta)
