"""Riesz and Newton potentials of radial (harmonic-sector) fields.

A radial field ``f(|x|) Y(x/|x|)`` with ``Y`` a degree-``l`` harmonic has
potential ``I_lam[f Y](r e) = Y(e) int_0^inf K^l_lam(r, s) f(s) s^{N-1} ds``
with the angular kernel

    K^l_lam(r, s) = |S^{N-2}| int_0^pi (r^2 + s^2 - 2rs cos t)^(-lam/2) P_l(cos t) sin^(N-2) t dt,

``P_l`` the Gegenbauer polynomial normalised by ``P_l(1) = 1``. For
``lam = N - 2`` the kernel is elementary.

The radial integral is discretised by product integration: the bounded
profile ``f <s>^q0`` is interpolated as a polynomial in the mapped variable
and the ``s``-integral is taken with a composite rule that is split and
geometrically graded at ``s = r``. The resulting matrix acts on nodal values
and stays accurate when the kernel has a kink or a log singularity on the
diagonal.
"""

from __future__ import annotations

import hashlib
import threading
import time
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import fileformats
from ._backend import kernels
from .bubble import ProblemParams, sphere_area
from .grid import FullGrid, GridFunction, RadialGrid

__all__ = [
    "KernelError",
    "RadialKernel",
    "assemble_radial_kernel",
    "clear_kernel_memo",
    "newton_potential",
    "radial_kernel_entry",
    "riesz_full",
    "riesz_full_matrix",
    "riesz_radial",
]

ALGORITHM_TAG = "product-integration/v1"
FULL_MAX_RADIAL = 32
FULL_MAX_DIRECTIONS = 50

# composite s-rule
_FAR_ORDER = 6
_NEAR_ORDER = 8
_GRADE_Q = 0.2
_GRADE_LEVELS = 12


class KernelError(RuntimeError):
    """Raised when a kernel value cannot be computed reliably."""


def _closed_kernel(N: int, ell: int, r, s):
    nu = 0.5 * (N - 2)
    lo = np.minimum(r, s)
    hi = np.maximum(r, s)
    return sphere_area(N) * nu / (ell + nu) * lo**ell / hi ** (ell + N - 2)


def radial_kernel_entry(lam: float, N: int, r, s, sector: int = 0):
    """Angular kernel ``K^l_lam(r, s)``; arrays broadcast.

    Exact for ``lam = N - 2``; otherwise a geometrically graded Gauss rule in
    the angle. On the diagonal the kernel is infinite for ``lam >= N - 1``.
    """
    if not (0.0 < lam < N):
        raise ValueError(f"Riesz exponent must lie in (0, N), got {lam}")
    r, s = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(s, dtype=float))
    if np.any(r <= 0.0) or np.any(s <= 0.0):
        raise ValueError("radii must be positive")
    if lam == N - 2:
        return _closed_kernel(N, sector, r, s)
    if lam >= N - 1 and np.any(r == s):
        raise KernelError("kernel is singular on the diagonal for lam >= N - 1")
    out = kernels.angular_kernel(r, s, float(lam), int(N), int(sector), sphere_area(N - 1))
    if not np.all(np.isfinite(out)):
        raise KernelError("angular quadrature produced non-finite values")
    return out.reshape(r.shape)


# ---------------------------------------------------------------------------
# composite rule in the mapped variable


_GL = {k: np.polynomial.legendre.leggauss(k) for k in (_FAR_ORDER, _NEAR_ORDER)}


def _gauss(lo, hi, order):
    x, w = _GL[order]
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    half = 0.5 * (hi - lo)
    pts = (0.5 * (hi + lo))[:, None] + half[:, None] * x[None, :]
    return pts.ravel(), (half[:, None] * w[None, :]).ravel()


def _graded(a: float, b: float, toward_a: bool):
    """Panels on [a, b] shrinking geometrically toward one endpoint."""
    length = b - a
    k = np.arange(_GRADE_LEVELS + 1)
    d = length * _GRADE_Q**k  # distances from the accumulation point
    far, near = d[:-1], d[1:]
    if toward_a:
        lo = np.concatenate([a + near, [a]])
        hi = np.concatenate([a + far, [a + d[-1]]])
    else:
        lo = np.concatenate([b - far, [b - d[-1]]])
        hi = np.concatenate([b - near, [b]])
    return _gauss(lo, hi, _NEAR_ORDER)


def _row_rule(grid: RadialGrid, i: int):
    """Points and weights in ``t`` for the product rule of row ``i``."""
    n = grid.n
    t = grid.t
    tau = np.concatenate([[0.0], 0.5 * (t[1:] + t[:-1]), [1.0]])
    c0, c1 = max(i - 1, 0), min(i + 2, n)
    pts, wts = [], []
    far = [c for c in range(n) if not (c0 <= c < c1) and c != n - 1]
    if far:
        p, w = _gauss(tau[far], tau[np.asarray(far) + 1], _FAR_ORDER)
        pts.append(p)
        wts.append(w)
    if c1 < n:
        p, w = _graded(tau[n - 1], 1.0, toward_a=False)
        pts.append(p)
        wts.append(w)
    ti = t[i]
    if tau[c0] < ti:
        p, w = _graded(tau[c0], ti, toward_a=False)
        pts.append(p)
        wts.append(w)
    hi = tau[c1]
    if hi < 1.0:
        p, w = _graded(ti, hi, toward_a=True)
        pts.append(p)
        wts.append(w)
    else:
        mid = 0.5 * (ti + 1.0)
        for a, b, tw in ((ti, mid, True), (mid, 1.0, False)):
            p, w = _graded(a, b, toward_a=tw)
            pts.append(p)
            wts.append(w)
    return np.concatenate(pts), np.concatenate(wts)


# ---------------------------------------------------------------------------
# assembled kernels


@dataclass(frozen=True, eq=False)
class RadialKernel:
    """Discrete Riesz operator on a radial grid.

    ``matrix[i, j]`` is the effective kernel: ``(I f)(r_i) = sum_j
    matrix[i, j] f(r_j) r_j^{N-1} w_j``. Away from the diagonal it agrees
    with ``K(r_i, r_j)`` up to the interpolation correction of the product
    rule. ``q0`` is the decay exponent used to normalise interpolated sources.
    """

    N: int
    lam: float
    grid: RadialGrid
    sector: int
    q0: float
    matrix: np.ndarray = field(repr=False)
    key: bytes = field(repr=False)
    source: str = "assembled"

    @cached_property
    def operator(self) -> np.ndarray:
        g = self.grid
        op = self.matrix * (g.nodes ** (self.N - 1) * g.weights)[None, :]
        op.setflags(write=False)
        return op

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.operator @ values


def kernel_key(N: int, lam: float, grid: RadialGrid, sector: int, q0: float) -> bytes:
    h = hashlib.sha256()
    h.update(f"{ALGORITHM_TAG}|{N}|{lam!r}|{sector}|{q0!r}|".encode())
    h.update(grid.hash)
    return h.digest()


def _cache_path(cache_dir, N: int, lam: float, key: bytes) -> Path:
    return Path(cache_dir) / f"rkrn_N{N}_lam{lam:.6g}_{key.hex()[:24]}.bin"


def _assemble(N: int, lam: float, grid: RadialGrid, sector: int, q0: float) -> np.ndarray:
    n = grid.n
    R = np.empty((n, n))
    scale_nodes = (1.0 + grid.nodes**2) ** (q0 / 2.0)
    s_area = sphere_area(N - 1)
    closed = lam == N - 2
    for i in range(n):
        tq, wq = _row_rule(grid, i)
        sq = grid.r_of_t(tq)
        ri = np.full_like(sq, grid.nodes[i])
        if closed:
            kv = _closed_kernel(N, sector, ri, sq)
        else:
            kv = kernels.angular_kernel(ri, sq, float(lam), int(N), int(sector), s_area)
        u = wq * grid.dr_dt(tq) * sq ** (N - 1) * kv * (1.0 + sq * sq) ** (-q0 / 2.0)
        R[i] = (u @ grid.interp_matrix(sq)) * scale_nodes
    if not np.all(np.isfinite(R)):
        raise KernelError("kernel assembly produced non-finite entries")
    return R / (grid.nodes ** (N - 1) * grid.weights)[None, :]


_MEMO: dict[bytes, RadialKernel] = {}
_MEMO_LOCK = threading.Lock()


def clear_kernel_memo() -> None:
    with _MEMO_LOCK:
        _MEMO.clear()


def assemble_radial_kernel(
    N: int,
    lam: float,
    grid: RadialGrid,
    sector: int = 0,
    q0: float | None = None,
    cache_dir=None,
    memo: bool = True,
) -> RadialKernel:
    """Assemble (or load) the discrete operator ``I_lam`` for one harmonic sector.

    The default source normalisation is ``q0 = 2N - lam``, the decay of
    ``U^p``. With ``cache_dir`` the matrix is stored in the kernel cache
    format and reused across processes.
    """
    lam = float(lam)
    if not (0.0 < lam < N):
        raise ValueError(f"Riesz exponent must lie in (0, N), got {lam}")
    q0 = float(2 * N - lam if q0 is None else q0)
    if q0 <= N - lam:
        raise ValueError("source normalisation must decay faster than <x>^-(N-lam)")
    key = kernel_key(N, lam, grid, sector, q0)
    if memo:
        with _MEMO_LOCK:
            hit = _MEMO.get(key)
        if hit is not None:
            return hit
    mat = None
    source = "assembled"
    if cache_dir is not None:
        path = _cache_path(cache_dir, N, lam, key)
        if path.exists():
            try:
                head, m = fileformats.read_kernel(path)
                if head.key == key and head.N == N and head.lam == lam and head.n == grid.n:
                    mat, source = m, "cache"
            except fileformats.FormatError:
                mat = None
    if mat is None:
        mat = _assemble(N, lam, grid, sector, q0)
        if cache_dir is not None:
            fileformats.write_kernel(_cache_path(cache_dir, N, lam, key), N, lam, key, mat)
    mat.setflags(write=False)
    ker = RadialKernel(N, lam, grid, sector, q0, mat, key, source)
    if memo:
        with _MEMO_LOCK:
            _MEMO[key] = ker
    return ker


def _source_q0(f: GridFunction, N: int, lam: float) -> float:
    if f.decay <= N - lam:
        raise ValueError(
            f"source decays like <x>^-{f.decay:g}; the potential needs decay faster than <x>^-{N - lam:g}"
        )
    return min(f.decay, 2.0 * N - lam)


def riesz_radial(f: GridFunction, lam: float, N: int, cache_dir=None) -> GridFunction:
    """``I_lam[f]`` at the grid nodes for a radial (sector) field."""
    if not f.radial:
        raise ValueError("riesz_radial needs a radial grid function")
    q0 = _source_q0(f, N, lam)
    ker = assemble_radial_kernel(N, lam, f.grid, f.sector, q0, cache_dir=cache_dir)
    decay = min(lam + f.sector, f.decay + lam - N)
    return f.like(ker.apply(f.values), decay=decay)


def newton_potential(g: GridFunction, N: int, cache_dir=None) -> GridFunction:
    """``(1/(N(N-2) omega_N)) int g(y) |x-y|^(2-N) dy`` for a radial (sector) field."""
    if not g.radial:
        raise ValueError("newton_potential needs a radial grid function")
    if g.decay <= 2.0:
        raise ValueError("source must decay faster than <x>^-2")
    lam = N - 2.0
    q0 = min(g.decay, N + 2.0)
    ker = assemble_radial_kernel(N, lam, g.grid, g.sector, q0, cache_dir=cache_dir)
    decay = min(N - 2.0 + g.sector, g.decay - 2.0)
    return g.like(ker.apply(g.values) / ((N - 2.0) * sphere_area(N)), decay=decay)


# ---------------------------------------------------------------------------
# direct summation on radial x sphere grids


def _check_full(grid: FullGrid) -> None:
    if grid.radial.n > FULL_MAX_RADIAL or grid.sphere.m > FULL_MAX_DIRECTIONS:
        raise ValueError(
            f"direct summation is limited to {FULL_MAX_RADIAL} radial nodes x "
            f"{FULL_MAX_DIRECTIONS} directions (got {grid.radial.n} x {grid.sphere.m}); "
            "use the radial or harmonic-sector potentials for larger problems"
        )


def _comparison(N: int, lam: float, x, first_order: bool):
    """Comparison fields with closed-form potentials.

    ``psi = <y>^-q`` with ``q = 2N - lam`` has potential ``A <x>^-lam``, and
    ``y_j <y>^-(q+2) = -d_j psi / q`` has potential ``(A lam / q) x_j <x>^-(lam+2)``.
    Returns the fields, their potentials and their gradients, stacked on the last axis.
    """
    x = np.asarray(x, dtype=float)
    q = 2.0 * N - lam
    A = ProblemParams(N, lam).A
    s = 1.0 + np.sum(x * x, axis=-1)
    psi = s ** (-q / 2.0)
    vals = [psi[..., None]]
    pots = [(A * s ** (-lam / 2.0))[..., None]]
    grads = [(-q * x * s[..., None] ** (-q / 2.0 - 1.0))[..., None]]
    if first_order:
        sp = s[..., None] ** (-(q + 2.0) / 2.0)
        vals.append(x * sp)
        pots.append((A * lam / q) * x * s[..., None] ** (-(lam + 2.0) / 2.0))
        eye = np.eye(N)
        # d_k (y_j s^-(q+2)/2) = delta_jk s^-(q+2)/2 - (q+2) y_j y_k s^-(q+4)/2
        g = eye * sp[..., None] - (q + 2.0) * x[..., :, None] * x[..., None, :] * s[..., None, None] ** (-(q + 4.0) / 2.0)
        grads.append(g)
    return np.concatenate(vals, -1), np.concatenate(pots, -1), np.concatenate(grads, -1)


def riesz_full_matrix(grid: FullGrid, lam: float) -> np.ndarray:
    """Nystrom matrix of ``I_lam`` on a small radial x sphere grid (flattened node order)."""
    _check_full(grid)
    pts = grid.points.reshape(-1, grid.N)
    basis, pots, _ = _comparison(grid.N, lam, pts, first_order=False)
    return kernels.riesz_direct_matrix(pts, grid.weights.ravel(), basis[:, 0], float(lam), pots[:, 0])


def riesz_full(f: GridFunction, lam: float, probes=None, probe_values=None, probe_gradients=None) -> np.ndarray:
    """``I_lam[f]`` by direct double summation on a small radial x sphere grid.

    Before summing, a comparison field with a closed-form potential is
    subtracted so that the integrand vanishes at the probe. When gradients of
    ``f`` at the probes are supplied, the subtraction also matches the
    gradient, which removes the leading quadrature error near the probe.
    Probes default to the grid nodes; other probes need the values of ``f``
    there. Cost is ``O(P n m)`` for ``P`` probes on an ``n x m`` grid.
    """
    if f.radial:
        raise ValueError("riesz_full needs a field on a radial x sphere grid")
    grid = f.grid
    _check_full(grid)
    N = grid.N
    pts = grid.points.reshape(-1, N)
    if probes is None:
        probes = pts
        probe_values = f.values.ravel()
    elif probe_values is None:
        raise ValueError("probe values of f are needed at off-grid probes")
    probes = np.asarray(probes, dtype=float).reshape(-1, N)
    probe_values = np.asarray(probe_values, dtype=float).ravel()
    first = probe_gradients is not None
    basis, _, _ = _comparison(N, lam, pts, first)
    bp, ip, gp = _comparison(N, lam, probes, first)
    if first:
        grads = np.asarray(probe_gradients, dtype=float).reshape(-1, N)
        mats = np.concatenate([bp[:, None, :], gp], axis=1)
        rhs = np.concatenate([probe_values[:, None], grads], axis=1)
        coef = np.linalg.solve(mats, rhs[..., None])[..., 0]
    else:
        coef = (probe_values / bp[:, 0])[:, None]
    return kernels.riesz_direct_probe(pts, grid.weights.ravel(), f.values.ravel(), basis, probes, coef, ip, float(lam))


def time_assembly(N: int, lam: float, grid: RadialGrid, cache_dir=None) -> tuple[float, str]:
    """Wall time of one (memo-bypassing) kernel assembly or cache load."""
    t0 = time.perf_counter()
    ker = assemble_radial_kernel(N, lam, grid, cache_dir=cache_dir, memo=False)
    return time.perf_counter() - t0, ker.source

