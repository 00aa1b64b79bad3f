"""Decay-graded quadrature grids, grid functions and weighted sup-norms.

The radial grid carries Gauss-Legendre nodes ``t_k`` on (0, 1) pushed to the
half line by ``r = L t / (1 - t)``. A grid function stores nodal values
together with a declared decay exponent ``q``; interpolation and
differentiation act on the bounded profile ``f <r>^q`` viewed as a polynomial
in ``t``, which keeps relative accuracy far out in the tail.

Radial grid functions may carry a harmonic ``sector`` ``l``: the stored
profile ``f(r)`` then represents ``f(|x|) Y(x/|x|)`` for a degree-``l``
spherical harmonic ``Y``. Sector 1 uses ``Y(w) = w_j``, which is how the
translation modes ``Z_j`` and ``H_j`` are represented.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Union

import numpy as np
from scipy.special import roots_jacobi

from .bubble import BubbleParams, sphere_area

__all__ = [
    "FullGrid",
    "GridFunction",
    "RadialGrid",
    "SphereRule",
    "barycentric_matrix",
    "build_full_grid",
    "build_radial_grid",
    "build_sphere_rule",
    "inner_radial",
    "integrate_full",
    "integrate_radial",
    "minus_laplacian",
    "norm_weight",
    "sector_profile",
    "weighted_sup_norm",
    "weighted_sup_norm_points",
]

MapKind = Literal["rational"]


def barycentric_matrix(nodes: np.ndarray, bary: np.ndarray, at: np.ndarray) -> np.ndarray:
    """Matrix mapping nodal values to the interpolant evaluated at ``at``."""
    at = np.asarray(at, dtype=float)
    diff = at[:, None] - nodes[None, :]
    hit = diff == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        c = bary[None, :] / diff
    rows = np.any(hit, axis=1)
    if np.any(rows):
        c[rows] = hit[rows].astype(float)
    return c / np.sum(c, axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Mapped Gauss-Legendre grid on the half line."""

    n: int
    map_kind: MapKind = "rational"
    scale: float = 1.0
    t: np.ndarray = field(init=False, repr=False)
    tw: np.ndarray = field(init=False, repr=False)
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 8:
            raise ValueError(f"radial grid needs at least 8 nodes, got {self.n}")
        if self.map_kind != "rational":
            raise ValueError(f"unknown radial map {self.map_kind!r}")
        if not (self.scale > 0.0 and math.isfinite(self.scale)):
            raise ValueError(f"map scale must be positive, got {self.scale}")
        x, w = np.polynomial.legendre.leggauss(int(self.n))
        t = 0.5 * (x + 1.0)
        tw = 0.5 * w
        for name, val in (("t", t), ("tw", tw), ("nodes", self.r_of_t(t)), ("weights", tw * self.dr_dt(t))):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        bary = (-1.0) ** np.arange(self.n) * np.sqrt((1.0 - x * x) * w)
        bary.setflags(write=False)
        object.__setattr__(self, "_bary", bary)

    def r_of_t(self, t):
        t = np.asarray(t, dtype=float)
        return self.scale * t / (1.0 - t)

    def t_of_r(self, r):
        r = np.asarray(r, dtype=float)
        return r / (r + self.scale)

    def dr_dt(self, t):
        t = np.asarray(t, dtype=float)
        return self.scale / (1.0 - t) ** 2

    @property
    def bary(self) -> np.ndarray:
        return self._bary  # type: ignore[attr-defined]

    @cached_property
    def hash(self) -> bytes:
        """32-byte digest identifying the grid."""
        h = hashlib.sha256()
        h.update(f"radial|{self.map_kind}|{self.n}|{self.scale!r}|".encode())
        h.update(np.ascontiguousarray(self.nodes, dtype="<f8").tobytes())
        return h.digest()

    def interp_matrix(self, r) -> np.ndarray:
        """Polynomial-in-``t`` interpolation from nodes to the radii ``r``."""
        return barycentric_matrix(self.t, self.bary, self.t_of_r(r))

    @cached_property
    def diff_t(self) -> np.ndarray:
        """Spectral differentiation matrix with respect to ``t``."""
        t, b = self.t, self.bary
        d = t[:, None] - t[None, :]
        np.fill_diagonal(d, 1.0)
        D = (b[None, :] / b[:, None]) / d
        np.fill_diagonal(D, 0.0)
        np.fill_diagonal(D, -D.sum(axis=1))
        D.setflags(write=False)
        return D

    def __eq__(self, other) -> bool:
        return isinstance(other, RadialGrid) and self.hash == other.hash

    def __hash__(self) -> int:
        return hash(self.hash)


def build_radial_grid(n: int = 256, map_kind: MapKind = "rational", scale: float = 1.0) -> RadialGrid:
    """Gauss-Legendre nodes on (0,1) pushed through ``r = scale * t/(1-t)``."""
    return RadialGrid(int(n), map_kind, float(scale))


@dataclass(frozen=True, eq=False)
class SphereRule:
    """Product rule on the unit sphere in R^N with weights summing to ``N omega_N``."""

    N: int
    degree: int
    directions: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def m(self) -> int:
        return len(self.weights)

    @cached_property
    def hash(self) -> bytes:
        h = hashlib.sha256()
        h.update(f"sphere|{self.N}|{self.degree}|".encode())
        h.update(np.ascontiguousarray(self.directions, dtype="<f8").tobytes())
        return h.digest()


def build_sphere_rule(N: int, degree: int) -> SphereRule:
    """Exact on polynomials of degree ``<= degree`` restricted to the sphere.

    The polar angles use Gauss-Jacobi rules in ``cos(theta)`` matching the
    ``sin^k`` measure factors; the azimuth uses equispaced points, which is
    the exact rule for trigonometric polynomials.
    """
    if N < 3:
        raise ValueError("sphere rules are built for N >= 3")
    if degree < 1:
        raise ValueError("sphere rule degree must be at least 1")
    npol = degree // 2 + 1
    nphi = 2 * (degree // 2 + 1)  # even, so the rule is symmetric under every reflection
    phi = 2.0 * np.pi * (np.arange(nphi) + 0.5) / nphi
    dirs = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    wts = np.full(nphi, 2.0 * np.pi / nphi)
    # build up from S^1 to S^{N-1}; the polar angle added at level d carries the measure sin^{d-2}
    for d in range(3, N + 1):
        a = (d - 3) / 2.0
        c, w = roots_jacobi(npol, a, a)
        s = np.sqrt(1.0 - c * c)
        new_dirs = np.concatenate(
            [np.broadcast_to(c[:, None, None], (npol, len(wts), 1)), s[:, None, None] * dirs[None, :, :]],
            axis=-1,
        ).reshape(-1, d)
        wts = (w[:, None] * wts[None, :]).reshape(-1)
        dirs = new_dirs
    return SphereRule(N, int(degree), dirs, wts)


@dataclass(frozen=True, eq=False)
class FullGrid:
    """Tensor product of a radial grid and a sphere rule."""

    radial: RadialGrid
    sphere: SphereRule

    @property
    def N(self) -> int:
        return self.sphere.N

    @cached_property
    def points(self) -> np.ndarray:
        return self.radial.nodes[:, None, None] * self.sphere.directions[None, :, :]

    @cached_property
    def weights(self) -> np.ndarray:
        r = self.radial.nodes
        return (self.radial.weights * r ** (self.N - 1))[:, None] * self.sphere.weights[None, :]

    @cached_property
    def hash(self) -> bytes:
        return hashlib.sha256(b"full|" + self.radial.hash + self.sphere.hash).digest()

    @property
    def shape(self) -> tuple[int, int]:
        return (self.radial.n, self.sphere.m)


def build_full_grid(n: int, degree: int, N: int, scale: float = 1.0) -> FullGrid:
    return FullGrid(build_radial_grid(n, scale=scale), build_sphere_rule(N, degree))


Grid = Union[RadialGrid, FullGrid]


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Nodal values of a field with a declared decay exponent.

    ``values`` has shape ``(n,)`` on a radial grid and ``(n, m)`` on a full
    grid. ``decay`` is the exponent ``q`` in ``|f| <~ <x>^{-q}``.
    """

    grid: Grid
    values: np.ndarray
    decay: float
    sector: int = 0

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        expected = (self.grid.n,) if isinstance(self.grid, RadialGrid) else self.grid.shape
        if v.shape != expected:
            raise ValueError(f"values have shape {v.shape}, grid expects {expected}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function values must be finite")
        if self.sector < 0 or (self.sector and not isinstance(self.grid, RadialGrid)):
            raise ValueError("harmonic sectors are defined for radial grids only")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "decay", float(self.decay))
        self._soft_decay_check()

    def _soft_decay_check(self) -> None:
        """Warn when ``|f| <x>^q`` grows over the last nodes.

        Comparing with the weighted profile on the interior keeps the check
        invariant under dilations of the field.
        """
        if not isinstance(self.grid, RadialGrid):
            return
        r = self.grid.nodes
        with np.errstate(over="ignore"):
            weighted = np.abs(self.values) * (1.0 + r * r) ** (self.decay / 2.0)
        inner = float(np.max(weighted[:-3]))
        if inner == 0.0:
            return
        if np.max(weighted[-3:]) > 4.0 * inner:
            warnings.warn(
                f"tail values exceed the declared decay <x>^-{self.decay:g}",
                RuntimeWarning,
                stacklevel=3,
            )

    @property
    def radial(self) -> bool:
        return isinstance(self.grid, RadialGrid)

    def like(self, values, decay: float | None = None, sector: int | None = None) -> GridFunction:
        return GridFunction(
            self.grid,
            values,
            self.decay if decay is None else decay,
            self.sector if sector is None else sector,
        )

    def __add__(self, other: GridFunction) -> GridFunction:
        _same(self, other)
        return self.like(self.values + other.values, min(self.decay, other.decay))

    def __sub__(self, other: GridFunction) -> GridFunction:
        _same(self, other)
        return self.like(self.values - other.values, min(self.decay, other.decay))

    def __mul__(self, c: float) -> GridFunction:
        return self.like(float(c) * self.values)

    __rmul__ = __mul__

    def __neg__(self) -> GridFunction:
        return self.like(-self.values)

    def evaluate(self, r) -> np.ndarray:
        """Interpolated radial profile at radii ``r``."""
        if not self.radial:
            raise TypeError("evaluate() is defined for radial grid functions")
        g = self.grid
        q = self.decay
        prof = self.values * (1.0 + g.nodes**2) ** (q / 2.0)
        r = np.asarray(r, dtype=float)
        return (g.interp_matrix(r.ravel()) @ prof).reshape(r.shape) * (1.0 + r * r) ** (-q / 2.0)


def _same(a: GridFunction, b: GridFunction) -> None:
    if a.grid is not b.grid and a.grid.hash != b.grid.hash:
        raise ValueError("grid functions live on different grids")
    if a.sector != b.sector:
        raise ValueError("grid functions live in different harmonic sectors")


# ---------------------------------------------------------------------------
# integration


def _sector_factor(N: int, sector: int) -> float:
    """``int_{S^{N-1}} Y^2`` for the sector convention (1 for l=0 means area)."""
    if sector == 0:
        return sphere_area(N)
    if sector == 1:
        return sphere_area(N) / N
    raise ValueError("only sectors 0 and 1 carry an inner product")


def integrate_radial(f: GridFunction, N: int) -> float:
    """``int_{R^N} f`` for a radial field as ``N omega_N int f r^{N-1} dr``."""
    if not f.radial or f.sector != 0:
        raise ValueError("integrate_radial needs a radial sector-0 field")
    if f.decay <= N and np.any(f.values != 0.0):
        raise ValueError(f"decay exponent {f.decay} <= N: the integral diverges")
    g = f.grid
    return sphere_area(N) * float(np.dot(g.weights * g.nodes ** (N - 1), f.values))


def inner_radial(f: GridFunction, h: GridFunction, N: int) -> float:
    """``int_{R^N} f h`` for two fields of the same harmonic sector."""
    _same(f, h)
    if f.decay + h.decay <= N and np.any(f.values * h.values != 0.0):
        raise ValueError("product does not decay fast enough to be integrable")
    g = f.grid
    return _sector_factor(N, f.sector) * float(np.dot(g.weights * g.nodes ** (N - 1), f.values * h.values))


def integrate_full(f: GridFunction) -> float:
    """Tensor quadrature ``sum_r sum_w w_r w_w f(r w) r^{N-1}``."""
    if f.radial:
        raise ValueError("integrate_full needs a field on a radial x sphere grid")
    if f.decay <= f.grid.N and np.any(f.values != 0.0):
        raise ValueError(f"decay exponent {f.decay} <= N: the integral diverges")
    return float(np.sum(f.grid.weights * f.values))


# ---------------------------------------------------------------------------
# weighted norms


def norm_weight(N: int, b: BubbleParams, kind: Literal["X", "Y"], x) -> np.ndarray:
    """Weight of the X or Y norm centred at ``b``.

    X: ``mu^{(N-2)/2} <(x-xi)/mu>^{N-2}``; Y: ``mu^{(N+2)/2} <(x-xi)/mu>^{N+2}``.
    """
    x = np.asarray(x, dtype=float)
    y = (x - b.xi_array) / b.mu
    s = 1.0 + np.sum(y * y, axis=-1)
    if kind == "X":
        e = N - 2.0
    elif kind == "Y":
        e = N + 2.0
    else:
        raise ValueError(f"unknown norm kind {kind!r}")
    return b.mu ** (e / 2.0) * s ** (e / 2.0)


def weighted_sup_norm_points(values, x, b: BubbleParams, kind: Literal["X", "Y"]) -> float:
    """Weighted sup over an explicit point set."""
    x = np.asarray(x, dtype=float)
    return float(np.max(norm_weight(x.shape[-1], b, kind, x) * np.abs(values)))


def weighted_sup_norm(f: GridFunction, b: BubbleParams, kind: Literal["X", "Y"]) -> float:
    """Discrete ``||f||_{X_{mu,xi}}`` or ``||f||_{Y_{mu,xi}}`` over the grid nodes."""
    if f.radial:
        if not b.centred:
            raise ValueError("radial fields are centred at the origin; use a full grid for xi != 0")
        N = len(b.xi)
        pts = np.zeros((f.grid.n, N))
        pts[:, 0] = f.grid.nodes
        return weighted_sup_norm_points(f.values, pts, b, kind)
    return weighted_sup_norm_points(f.values, f.grid.points, b, kind)


# ---------------------------------------------------------------------------
# differentiation


def minus_laplacian(f: GridFunction, N: int) -> GridFunction:
    """``-Delta`` of a radial (sector) field by spectral differentiation in ``t``.

    The bounded profile ``v = f <r>^q`` is differentiated; the decay factor is
    differentiated analytically.
    """
    if not f.radial:
        raise ValueError("minus_laplacian acts on radial grid functions")
    g = f.grid
    r, t, L = g.nodes, g.t, g.scale
    q = f.decay
    s = 1.0 + r * r
    w0 = s ** (-q / 2.0)
    w1 = -q * r * s ** (-q / 2.0 - 1.0)
    w2 = -q * s ** (-q / 2.0 - 1.0) + q * (q + 2.0) * r * r * s ** (-q / 2.0 - 2.0)
    v = f.values / w0
    vt = g.diff_t @ v
    vtt = g.diff_t @ vt
    dt = (1.0 - t) ** 2 / L
    d2t = -2.0 * (1.0 - t) ** 3 / L**2
    v1 = dt * vt
    v2 = dt * dt * vtt + d2t * vt
    f1 = w1 * v + w0 * v1
    f2 = w2 * v + 2.0 * w1 * v1 + w0 * v2
    ell = f.sector
    lap = f2 + (N - 1.0) / r * f1 - ell * (ell + N - 2.0) / (r * r) * f.values
    return f.like(-lap, decay=q + 2.0)


# ---------------------------------------------------------------------------
# harmonic-sector profiles of closed-form fields


def sector_profile(fn, grid: RadialGrid, N: int, sector: int = 0, axis: int = 1, degree: int = 8) -> np.ndarray:
    """Radial profile of the sector-``l`` component of ``fn`` on ``grid``.

    ``fn`` maps points of shape ``(..., N)`` to values. Sector 0 returns the
    spherical mean; sector 1 returns ``f`` with ``fn ~ f(r) x_axis / r``,
    i.e. ``N`` times the mean of ``fn * w_axis``. Exact when ``fn`` restricted
    to each sphere is a polynomial of degree ``<= degree - sector``.
    """
    rule = build_sphere_rule(N, degree)
    pts = grid.nodes[:, None, None] * rule.directions[None, :, :]
    vals = np.asarray(fn(pts), dtype=float)
    area = sphere_area(N)
    if sector == 0:
        return vals @ rule.weights / area
    if sector == 1:
        if not 1 <= axis <= N:
            raise ValueError(f"axis must lie in 1..{N}")
        return N * (vals * rule.directions[None, :, axis - 1]) @ rule.weights / area
    raise ValueError("only sectors 0 and 1 are supported")
