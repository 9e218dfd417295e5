"""Structured-grid finite elements for ``-div(A Du) + mu u = f``.

Elements are P1 triangles on the right-diagonal split of the square grid in
2D and trilinear hexahedra in 3D. Both are handled through per-cell local
matrices acting on the ``2**n`` cell corners, so assembly is a loop over
corner pairs with whole-grid array slices. The coefficient is sampled once
per cell (midpoint) and the mass matrix is lumped.

Constraints are not eliminated from the matrix: ``SparseSystem.matrix`` is
always the unconstrained operator and ``solve`` works on the free dofs by
masking. This keeps reaction forces a single residual evaluation.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp

from .problem_model import (
    CoefficientField,
    ConstantDensity,
    Domain,
    GridDensity,
    HoleDirichlet,
    Load,
    MeasureSpec,
    Penalized,
    PerforationLattice,
    Zero,
)

log = logging.getLogger(__name__)

INTERIOR = 0
OUTER_BOUNDARY = 1
HOLE_INTERIOR = 2
HOLE_BOUNDARY = 3


class ConvergenceError(RuntimeError):
    """CG stopped before reaching the requested tolerance."""

    def __init__(self, message, iterations, residual):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class IndefiniteSystemError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# mesh and fields


@dataclass(frozen=True, eq=False)
class Mesh:
    domain: Domain
    h: float
    shape: tuple
    node_class: np.ndarray
    lattice: PerforationLattice | None = None
    under_resolved: bool = False

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_shape(self) -> tuple:
        return tuple(s - 1 for s in self.shape)

    @property
    def axes(self) -> list[np.ndarray]:
        return [lo + self.h * np.arange(s) for lo, s in zip(self.domain.lower, self.shape)]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(*shape, n)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def cell_centers(self) -> np.ndarray:
        mids = [a[:-1] + 0.5 * self.h for a in self.axes]
        return np.stack(np.meshgrid(*mids, indexing="ij"), axis=-1)

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.node_class == OUTER_BOUNDARY

    @property
    def hole_mask(self) -> np.ndarray:
        return self.node_class == HOLE_INTERIOR

    @property
    def is_classified(self) -> bool:
        return self.lattice is not None

    def lumped_mass(self) -> np.ndarray:
        """Row sums of the consistent mass matrix, i.e. ``int phi_i dx``."""
        return _scatter_corners(self, _corner_weights(self.dim, self.h), np.ones(self.cell_shape)).ravel()

    def same_grid(self, other: "Mesh") -> bool:
        return (
            self is other
            or (self.shape == other.shape and self.h == other.h and self.domain == other.domain)
        )


@dataclass(eq=False)
class NodalField:
    mesh: Mesh
    values: np.ndarray
    info: dict | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.size != self.mesh.n_nodes:
            raise ValueError(f"expected {self.mesh.n_nodes} values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("nodal values must be finite")
        self.values = v

    @classmethod
    def interpolate(cls, mesh: Mesh, fn) -> "NodalField":
        if callable(fn):
            return cls(mesh, np.asarray(fn(mesh.coords()), dtype=float))
        return cls(mesh, np.full(mesh.n_nodes, float(fn)))

    @property
    def grid(self) -> np.ndarray:
        return self.values.reshape(self.mesh.shape)

    def _other(self, other):
        if isinstance(other, NodalField):
            if not self.mesh.same_grid(other.mesh):
                raise ValueError("fields live on different meshes")
            return other.values
        return other

    def __add__(self, other):
        return NodalField(self.mesh, self.values + self._other(other))

    def __sub__(self, other):
        return NodalField(self.mesh, self.values - self._other(other))

    def __mul__(self, other):
        return NodalField(self.mesh, self.values * self._other(other))

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return NodalField(self.mesh, -self.values)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


def build_mesh(domain: Domain, h: float) -> Mesh:
    if h <= 0:
        raise ValueError("h must be positive")
    shape = []
    for length in domain.lengths:
        if h > length:
            raise ValueError(f"h={h} exceeds box edge {length}")
        cells = length / h
        k = int(round(cells))
        if abs(cells - k) > 1e-8 * max(1.0, cells):
            raise ValueError(f"h={h} does not divide edge length {length}")
        if k + 1 < 3:
            raise ValueError("need at least 3 nodes per axis")
        shape.append(k + 1)
    shape = tuple(shape)
    cls = np.zeros(shape, dtype=np.int8)
    for d in range(len(shape)):
        idx = [slice(None)] * len(shape)
        idx[d] = 0
        cls[tuple(idx)] = OUTER_BOUNDARY
        idx[d] = -1
        cls[tuple(idx)] = OUTER_BOUNDARY
    return Mesh(domain=domain, h=float(h), shape=shape, node_class=cls.ravel())


def classify_holes(mesh: Mesh, lattice: PerforationLattice) -> Mesh:
    """Tag nodes inside the closed holes; boundary nodes keep their tag.

    Free nodes sharing a cell with a hole node become ``HOLE_BOUNDARY``.
    """
    if lattice.dim != mesh.dim:
        raise ValueError("lattice and mesh dimensions differ")
    cls = np.where(mesh.node_class == OUTER_BOUNDARY, OUTER_BOUNDARY, INTERIOR).astype(np.int8)
    cls = cls.reshape(mesh.shape)
    # one axis-slab at a time keeps the coordinate temporaries small
    axes = mesh.axes
    r = lattice.r_hole * (1.0 + 1e-12)
    inside = np.zeros(mesh.shape, dtype=bool)
    for i0, x0 in enumerate(axes[0]):
        pts = np.stack(np.meshgrid(np.array([x0]), *axes[1:], indexing="ij"), axis=-1)[0]
        _, d = lattice.nearest_center(pts)
        inside[i0] = d <= r
    hole = inside & (cls != OUTER_BOUNDARY)
    cls[hole] = HOLE_INTERIOR
    near = ndi.binary_dilation(hole, structure=np.ones((3,) * mesh.dim, dtype=bool))
    cls[near & (cls == INTERIOR)] = HOLE_BOUNDARY
    under = lattice.r_hole < mesh.h
    if under:
        log.warning("holes under-resolved: r_hole=%.3g < h=%.3g", lattice.r_hole, mesh.h)
    return replace(mesh, node_class=cls.ravel(), lattice=lattice, under_resolved=under)


# --------------------------------------------------------------------------
# reference cell matrices


@lru_cache(maxsize=None)
def _corners(n: int) -> tuple:
    return tuple(itertools.product((0, 1), repeat=n))


@lru_cache(maxsize=None)
def _offsets(n: int) -> tuple:
    return tuple(itertools.product((-1, 0, 1), repeat=n))


def _offset_index(off) -> int:
    k = 0
    for o in off:
        k = 3 * k + (o + 1)
    return k


@lru_cache(maxsize=None)
def _triangles() -> tuple:
    # corner indices in _corners(2) order: 0=(0,0) 1=(0,1) 2=(1,0) 3=(1,1)
    return ((0, 2, 3), (0, 3, 1))


@lru_cache(maxsize=None)
def _gradient_tensor(n: int) -> np.ndarray:
    """``G[k, l, p, q] = int_cell d_k phi_p d_l phi_q`` on the unit cell."""
    corners = np.array(_corners(n), dtype=float)
    G = np.zeros((n, n, 2**n, 2**n))
    if n == 2:
        for tri in _triangles():
            X = corners[list(tri)]
            T = np.column_stack([X[1] - X[0], X[2] - X[0]])
            area = abs(np.linalg.det(T)) / 2.0
            # barycentric gradients
            grads = np.zeros((3, 2))
            grads[1:] = np.linalg.inv(T)
            grads[0] = -grads[1] - grads[2]
            for a, p in enumerate(tri):
                for b, q in enumerate(tri):
                    G[:, :, p, q] += area * np.outer(grads[a], grads[b])
        return G
    S = np.array([[1.0, -1.0], [-1.0, 1.0]])
    M = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    C = np.array([[-0.5, -0.5], [0.5, 0.5]])  # C[p, q] = int phi_p' phi_q
    cidx = _corners(n)
    for k in range(n):
        for l in range(n):
            for P, p in enumerate(cidx):
                for Q, q in enumerate(cidx):
                    val = 1.0
                    for d in range(n):
                        if d == k == l:
                            val *= S[p[d], q[d]]
                        elif d == k:
                            val *= C[p[d], q[d]]
                        elif d == l:
                            val *= C[q[d], p[d]]
                        else:
                            val *= M[p[d], q[d]]
                    G[k, l, P, Q] = val
    return G


@lru_cache(maxsize=None)
def _mass_tensor(n: int) -> np.ndarray:
    """Consistent mass matrix on the unit cell."""
    if n == 2:
        Mc = np.zeros((4, 4))
        local = (np.ones((3, 3)) + np.eye(3)) / 24.0  # area 1/2 triangle
        for tri in _triangles():
            for a, p in enumerate(tri):
                for b, q in enumerate(tri):
                    Mc[p, q] += local[a, b]
        return Mc
    M1 = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    out = np.ones((2**n, 2**n))
    for P, p in enumerate(_corners(n)):
        for Q, q in enumerate(_corners(n)):
            out[P, Q] = np.prod([M1[p[d], q[d]] for d in range(n)])
    return out


def _corner_weights(n: int, h: float) -> np.ndarray:
    return _mass_tensor(n).sum(axis=1) * h**n


def _corner_slice(mesh: Mesh, p) -> tuple:
    return tuple(slice(pd, pd + c) for pd, c in zip(p, mesh.cell_shape))


def _scatter_corners(mesh: Mesh, weights, cell_values) -> np.ndarray:
    out = np.zeros(mesh.shape)
    for P, p in enumerate(_corners(mesh.dim)):
        out[_corner_slice(mesh, p)] += weights[P] * cell_values
    return out


def _gather(u: np.ndarray, mesh: Mesh, p) -> np.ndarray:
    return u.reshape(mesh.shape)[_corner_slice(mesh, p)]


# --------------------------------------------------------------------------
# assembly


@dataclass
class SolverParams:
    rel_tol: float = 1e-8
    max_iter: int = 20000
    preconditioner: str = "jacobi"

    def __post_init__(self):
        if not (0 < self.rel_tol < 1):
            raise ValueError("rel_tol must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.preconditioner not in ("none", "jacobi"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass(eq=False)
class SparseSystem:
    mesh: Mesh
    matrix: sp.csr_matrix
    rhs: np.ndarray
    constrained: np.ndarray
    values: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.values is None:
            self.values = np.zeros(self.rhs.shape)

    @property
    def free(self) -> np.ndarray:
        return ~self.constrained


def _cell_coefficients(mesh: Mesh, A: CoefficientField):
    centers = mesh.cell_centers()
    s = A.scalar_values(centers)
    if s is not None:
        return np.asarray(s, dtype=float), None
    return None, np.asarray(A.matrices(centers), dtype=float)


def _stencil(mesh: Mesh, A: CoefficientField) -> np.ndarray:
    """Stiffness in stencil form, shape ``(*shape, 3**n)``."""
    n = mesh.dim
    G = _gradient_tensor(n) * mesh.h ** (n - 2)
    scalar, mats = _cell_coefficients(mesh, A)
    data = np.zeros(mesh.shape + (3**n,))
    corners = _corners(n)
    if scalar is not None:
        L = np.einsum("kkpq->pq", G)
    for P, p in enumerate(corners):
        rows = _corner_slice(mesh, p)
        for Q, q in enumerate(corners):
            o = _offset_index(tuple(qd - pd for pd, qd in zip(p, q)))
            if scalar is not None:
                if L[P, Q] == 0.0:
                    continue
                data[rows + (o,)] += L[P, Q] * scalar
            else:
                g = G[:, :, P, Q]
                acc = None
                for k in range(n):
                    for l in range(n):
                        if g[k, l] == 0.0:
                            continue
                        term = g[k, l] * mats[..., k, l]
                        acc = term if acc is None else acc + term
                if acc is not None:
                    data[rows + (o,)] += acc
    return data


def _stencil_to_csr(mesh: Mesh, data: np.ndarray) -> sp.csr_matrix:
    n, N = mesh.dim, mesh.n_nodes
    offs = _offsets(n)
    strides = np.array([int(np.prod(mesh.shape[d + 1:])) for d in range(n)])
    flat_off = np.array([int(np.dot(o, strides)) for o in offs], dtype=np.int64)
    valid = np.ones(mesh.shape + (len(offs),), dtype=bool)
    for d in range(n):
        ar = np.arange(mesh.shape[d])
        bshape = [1] * (n + 1)
        bshape[d] = mesh.shape[d]
        for j, o in enumerate(offs):
            ok = ((ar + o[d]) >= 0) & ((ar + o[d]) < mesh.shape[d])
            if not ok.all():
                valid[..., j] &= ok.reshape(bshape[:-1])
    valid = valid.reshape(N, -1)
    idx_dtype = np.int32 if N * 27 < 2**31 else np.int64
    cols = np.arange(N, dtype=idx_dtype)[:, None] + flat_off.astype(idx_dtype)[None, :]
    indices = cols[valid]
    del cols
    vals = data.reshape(N, -1)[valid]
    indptr = np.zeros(N + 1, dtype=idx_dtype)
    np.cumsum(valid.sum(axis=1), out=indptr[1:])
    mat = sp.csr_matrix((vals, indices, indptr), shape=(N, N), copy=False)
    mat.has_sorted_indices = True
    return mat


def stiffness_matrix(mesh: Mesh, A: CoefficientField) -> sp.csr_matrix:
    return _stencil_to_csr(mesh, _stencil(mesh, A))


def _source_values(mesh: Mesh, src) -> np.ndarray:
    if src is None:
        return np.zeros(mesh.n_nodes)
    if hasattr(src, "values") and hasattr(src, "mesh"):
        if not mesh.same_grid(src.mesh):
            raise ValueError("load field lives on a different mesh")
        return np.asarray(src.values, dtype=float)
    if callable(src):
        v = np.asarray(src(mesh.coords()), dtype=float)
        return np.broadcast_to(v, mesh.shape).ravel().astype(float)
    return np.full(mesh.n_nodes, float(src))


def measure_weights(mesh: Mesh, mu: MeasureSpec) -> np.ndarray | None:
    """Lumped nodal weights of ``mu`` (``None`` for HoleDirichlet)."""
    if isinstance(mu, Zero):
        return np.zeros(mesh.n_nodes)
    if isinstance(mu, ConstantDensity):
        return mu.m * mesh.lumped_mass()
    if isinstance(mu, GridDensity):
        if not mesh.same_grid(mu.field.mesh):
            raise ValueError("GridDensity lives on a different mesh")
        dens = np.asarray(mu.field.values)
        if np.any(dens < 0):
            raise ValueError("negative density")
        return dens * mesh.lumped_mass()
    if isinstance(mu, Penalized):
        _require_classified(mesh, mu.holes)
        return mu.k * mesh.lumped_mass() * mesh.hole_mask
    if isinstance(mu, HoleDirichlet):
        return None
    raise TypeError(f"unsupported measure {mu!r}")


def _require_classified(mesh: Mesh, lattice: PerforationLattice):
    if mesh.lattice is None:
        raise ValueError("mesh must be classified against the lattice first")
    if mesh.lattice != lattice:
        raise ValueError("mesh was classified against a different lattice")


def assemble(mesh: Mesh, A: CoefficientField, mu: MeasureSpec, load: Load) -> SparseSystem:
    """Discrete ``int A Du.Dy + int u y dmu = <f, y> + int g y dmu``."""
    data = _stencil(mesh, A)
    lumped = mesh.lumped_mass()
    rhs = _source_values(mesh, load.f) * lumped
    constrained = mesh.boundary_mask.copy()
    w = measure_weights(mesh, mu)
    if w is None:
        _require_classified(mesh, mu.holes)
        constrained |= mesh.hole_mask
    else:
        center = _offset_index((0,) * mesh.dim)
        data.reshape(mesh.n_nodes, -1)[:, center] += w
        if load.g is not None:
            rhs = rhs + _source_values(mesh, load.g) * w
    return SparseSystem(mesh=mesh, matrix=_stencil_to_csr(mesh, data), rhs=rhs, constrained=constrained)


# --------------------------------------------------------------------------
# solver


def pcg(matvec: Callable, b: np.ndarray, inv_diag, rel_tol: float, max_iter: int):
    """Preconditioned CG; returns ``(x, iterations, relative residual)``."""
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0, 0.0
    r = b.copy()
    z = r * inv_diag if inv_diag is not None else r.copy()
    p = z.copy()
    rz = float(r @ z)
    tol = rel_tol * bnorm
    for it in range(1, max_iter + 1):
        Ap = matvec(p)
        pAp = float(p @ Ap)
        if not pAp > 0.0:
            raise IndefiniteSystemError(f"non-positive curvature p.Ap={pAp:.3e} at iteration {it}")
        step = rz / pAp
        x += step * p
        r -= step * Ap
        res = np.linalg.norm(r)
        if res <= tol:
            return x, it, res / bnorm
        z = r * inv_diag if inv_diag is not None else r
        rz_new = float(r @ z)
        p *= rz_new / rz
        p += z
        rz = rz_new
    raise ConvergenceError(
        f"CG did not converge in {max_iter} iterations (relative residual {res / bnorm:.3e})",
        max_iter,
        res / bnorm,
    )


def solve(system: SparseSystem, params: SolverParams | None = None) -> NodalField:
    params = params or SolverParams()
    K = system.matrix
    free = system.free
    x0 = np.where(system.constrained, system.values, 0.0)
    b = np.where(free, system.rhs - K @ x0, 0.0)
    inv_diag = None
    if params.preconditioner == "jacobi":
        d = K.diagonal()
        if np.any(d[free] <= 0):
            raise IndefiniteSystemError("non-positive diagonal on a free dof")
        inv_diag = np.where(free, 1.0 / np.where(free, d, 1.0), 0.0)

    def matvec(v):
        out = K @ v
        out[~free] = 0.0
        return out

    x, its, res = pcg(matvec, b, inv_diag, params.rel_tol, params.max_iter)
    log.debug("CG: %d iterations, relative residual %.2e", its, res)
    return NodalField(system.mesh, x + x0, info={"iterations": its, "residual": res})


# --------------------------------------------------------------------------
# functionals


def _cell_quadratic(mesh: Mesh, u, v, ref: np.ndarray, weight) -> float:
    """``sum_cells weight_c * u_c^T ref v_c`` over cell corner vectors."""
    corners = _corners(mesh.dim)
    total = 0.0
    ug = [_gather(u, mesh, p) for p in corners]
    vg = ug if v is u else [_gather(v, mesh, p) for p in corners]
    for P in range(len(corners)):
        acc = np.zeros(mesh.cell_shape)
        for Q in range(len(corners)):
            if ref[P, Q] != 0.0:
                acc += ref[P, Q] * vg[Q]
        total += float(np.sum(weight * ug[P] * acc))
    return total


def energy_seminorm(
    u: NodalField, A: CoefficientField, v: NodalField | None = None, region: np.ndarray | None = None
) -> float:
    """``int A Du.Du dx`` (or the bilinear pairing with ``v``).

    ``region`` is an optional per-cell weight (e.g. a 0/1 sub-box indicator).
    """
    mesh = u.mesh
    n = mesh.dim
    G = _gradient_tensor(n) * mesh.h ** (n - 2)
    scalar, mats = _cell_coefficients(mesh, A)
    uu = u.values
    vv = uu if v is None else v.values
    cw = 1.0 if region is None else np.asarray(region, dtype=float)
    if scalar is not None:
        return _cell_quadratic(mesh, uu, vv, np.einsum("kkpq->pq", G), scalar * cw)
    total = 0.0
    for k in range(n):
        for l in range(n):
            w = mats[..., k, l] * cw
            if np.any(w != 0):
                total += _cell_quadratic(mesh, uu, vv, G[k, l], w)
    return total


def l2_inner(u: NodalField, v: NodalField, region: np.ndarray | None = None) -> float:
    """Consistent-mass ``int u v dx``; ``region`` is an optional per-cell weight."""
    mesh = u.mesh
    weight = 1.0 if region is None else region
    return _cell_quadratic(mesh, u.values, v.values, _mass_tensor(mesh.dim) * mesh.h**mesh.dim, weight)


def l2_norm(u: NodalField, region=None) -> float:
    return math.sqrt(max(l2_inner(u, u, region), 0.0))


def weighted_mass(u: NodalField, v: NodalField, mu: MeasureSpec) -> float:
    """Lumped ``int u v dmu``."""
    if isinstance(mu, HoleDirichlet):
        raise ValueError("HoleDirichlet is a constraint, not an integrable measure")
    if not u.mesh.same_grid(v.mesh):
        raise ValueError("fields live on different meshes")
    w = measure_weights(u.mesh, mu)
    return float(np.sum(w * u.values * v.values))


def apply_stiffness(u: NodalField, A: CoefficientField) -> np.ndarray:
    """``K u`` without forming ``K``."""
    mesh = u.mesh
    n = mesh.dim
    G = _gradient_tensor(n) * mesh.h ** (n - 2)
    scalar, mats = _cell_coefficients(mesh, A)
    out = np.zeros(mesh.shape)
    corners = _corners(n)
    ug = [_gather(u.values, mesh, p) for p in corners]
    for P, p in enumerate(corners):
        acc = np.zeros(mesh.cell_shape)
        for Q in range(len(corners)):
            if scalar is not None:
                g = np.einsum("kk->", G[:, :, P, Q])
                if g != 0.0:
                    acc += g * scalar * ug[Q]
            else:
                for k in range(n):
                    for l in range(n):
                        if G[k, l, P, Q] != 0.0:
                            acc += G[k, l, P, Q] * mats[..., k, l] * ug[Q]
        out[_corner_slice(mesh, p)] += acc
    return out.ravel()


def reaction_forces(system: SparseSystem, u: NodalField, check_tol: float = 1e-5) -> NodalField:
    """Residual ``rhs - K u`` of the unconstrained equations."""
    r = system.rhs - system.matrix @ u.values
    free = system.free
    # boundary data alone can drive the solve, so it counts toward the scale
    lifted = system.matrix @ np.where(free, 0.0, u.values)
    scale = max(np.linalg.norm(system.rhs[free]), np.linalg.norm(lifted[free]), np.finfo(float).tiny)
    if np.linalg.norm(r[free]) > check_tol * scale:
        raise ValueError(
            f"u does not solve the system: free residual {np.linalg.norm(r[free]) / scale:.2e}"
        )
    return NodalField(system.mesh, r)


def cell_gradients(u: NodalField) -> np.ndarray:
    """Cell-averaged gradients, shape ``(*cell_shape, n)``."""
    mesh = u.mesh
    n = mesh.dim
    g = np.zeros(mesh.cell_shape + (n,))
    corners = _corners(n)
    for p in corners:
        up = _gather(u.values, mesh, p)
        for d in range(n):
            sign = 1.0 if p[d] else -1.0
            g[..., d] += sign * up
    return g / (2 ** (n - 1) * mesh.h)


def nodal_gradients(u: NodalField) -> list[NodalField]:
    """Cell-averaged gradients averaged onto nodes (one field per axis)."""
    mesh = u.mesh
    g = cell_gradients(u)
    counts = _scatter_corners(mesh, np.ones(2**mesh.dim), np.ones(mesh.cell_shape))
    out = []
    for d in range(mesh.dim):
        s = _scatter_corners(mesh, np.ones(2**mesh.dim), g[..., d])
        out.append(NodalField(mesh, (s / counts).ravel()))
    return out


# --------------------------------------------------------------------------
# error norms


_DUNAVANT4 = (
    (0.223381589678011, (0.445948490915965, 0.445948490915965, 0.108103018168070)),
    (0.109951743655322, (0.091576213509771, 0.091576213509771, 0.816847572980459)),
)


def _quadrature_rule(n: int):
    """Points in unit-cell coordinates with weights summing to 1, plus owning triangle (2D)."""
    if n == 2:
        pts, wts, tri = [], [], []
        unit = np.array(_corners(2), dtype=float)
        for t, tri_nodes in enumerate(_triangles()):
            X = unit[list(tri_nodes)]
            for w, bary in _DUNAVANT4:
                for perm in set(itertools.permutations(bary)):
                    pts.append(np.dot(perm, X))
                    wts.append(0.5 * w)
                    tri.append(t)
        wts = np.array(wts)
        return np.array(pts), wts / wts.sum(), np.array(tri)
    g, w = np.polynomial.legendre.leggauss(3)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    pts = np.array(list(itertools.product(g, repeat=n)))
    wts = np.array([np.prod(c) for c in itertools.product(w, repeat=n)])
    return pts, wts, None


def _shape_values(n: int, xi: np.ndarray, tri: int | None):
    """Values and reference gradients of the corner basis at one point."""
    corners = _corners(n)
    if n == 2:
        # barycentric on the owning triangle
        unit = np.array(corners, dtype=float)
        nodes = _triangles()[tri]
        X = unit[list(nodes)]
        T = np.column_stack([X[1] - X[0], X[2] - X[0]])
        lam12 = np.linalg.solve(T, xi - X[0])
        lam = np.array([1 - lam12.sum(), *lam12])
        Tinv = np.linalg.inv(T)
        grads_b = np.vstack([-Tinv.sum(axis=0), Tinv])
        vals = np.zeros(4)
        grads = np.zeros((4, 2))
        for a, p in enumerate(nodes):
            vals[p] = lam[a]
            grads[p] = grads_b[a]
        return vals, grads
    vals = np.zeros(len(corners))
    grads = np.zeros((len(corners), n))
    for P, p in enumerate(corners):
        f = [xi[d] if p[d] else 1 - xi[d] for d in range(n)]
        df = [1.0 if p[d] else -1.0 for d in range(n)]
        vals[P] = np.prod(f)
        for d in range(n):
            grads[P, d] = df[d] * np.prod([f[e] for e in range(n) if e != d])
    return vals, grads


def h1_l2_errors(u: NodalField, exact: Callable, exact_grad: Callable) -> tuple[float, float]:
    """``(|u - exact|_{H^1}, ||u - exact||_{L^2})`` by per-cell quadrature.

    ``exact(x)`` maps ``(..., n)`` points to values, ``exact_grad(x)`` to
    ``(..., n)`` gradients.
    """
    mesh = u.mesh
    n, h = mesh.dim, mesh.h
    base = np.stack(np.meshgrid(*[a[:-1] for a in mesh.axes], indexing="ij"), axis=-1)
    ug = [_gather(u.values, mesh, p) for p in _corners(n)]
    pts, wts, tris = _quadrature_rule(n)
    e_h1 = e_l2 = 0.0
    for k, xi in enumerate(pts):
        vals, grads = _shape_values(n, xi, None if tris is None else tris[k])
        uh = sum(vals[P] * ug[P] for P in range(len(ug)))
        duh = np.stack([sum(grads[P, d] * ug[P] for P in range(len(ug))) for d in range(n)], axis=-1) / h
        x = base + h * xi
        diff = uh - np.asarray(exact(x), dtype=float)
        gdiff = duh - np.asarray(exact_grad(x), dtype=float)
        e_l2 += wts[k] * float(np.sum(diff**2))
        e_h1 += wts[k] * float(np.sum(gdiff**2))
    vol = h**n
    return math.sqrt(e_h1 * vol), math.sqrt(e_l2 * vol)
