"""Pure NumPy implementation of the hot kernels.

Used when the compiled extension is unavailable and as the reference the
compiled version is tested against. Both versions implement the same
algorithm, so results agree to rounding.
"""

from __future__ import annotations

import math

import numpy as np

# angular panels: geometric breakpoints pi * Q**k toward theta = 0
ANG_Q = 0.25
ANG_ORDER = 16
ANG_LMAX = 48
_ANG_X, _ANG_W = np.polynomial.legendre.leggauss(ANG_ORDER)


def angular_levels(sigma: np.ndarray) -> np.ndarray:
    """Number of geometric panels needed to resolve the angular scale ``sigma``."""
    with np.errstate(divide="ignore"):
        lev = np.ceil(np.log(sigma / (5.0 * math.pi)) / math.log(ANG_Q))
    lev = np.where(np.isfinite(lev), lev, ANG_LMAX)
    return np.clip(lev, 1, ANG_LMAX).astype(np.int64)


def gegenbauer_normalized(ell: int, nu: float, t):
    """``C_l^nu(t) / C_l^nu(1)`` by the three-term recurrence."""
    t = np.asarray(t, dtype=float)
    if ell == 0:
        return np.ones_like(t)
    c0, c1 = np.ones_like(t), 2.0 * nu * t
    e0, e1 = 1.0, 2.0 * nu
    for k in range(1, ell):
        c0, c1 = c1, (2.0 * t * (k + nu) * c1 - (k + 2.0 * nu - 1.0) * c0) / (k + 1.0)
        e0, e1 = e1, (2.0 * (k + nu) * e1 - (k + 2.0 * nu - 1.0) * e0) / (k + 1.0)
    return c1 / e1


def _panel(a, rs, lo, hi, lam, N, ell):
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    th = mid[:, None] + half[:, None] * _ANG_X[None, :]
    sh = np.sin(0.5 * th)
    base = a[:, None] + 4.0 * rs[:, None] * sh * sh
    val = base ** (-0.5 * lam) * np.sin(th) ** (N - 2)
    if ell:
        val = val * gegenbauer_normalized(ell, 0.5 * (N - 2), np.cos(th))
    return half * (val @ _ANG_W)


def angular_kernel(r, s, lam: float, N: int, ell: int, s_area: float) -> np.ndarray:
    """``s_area * int_0^pi (r^2+s^2-2rs cos t)^(-lam/2) P_l(cos t) sin^(N-2) t dt``.

    ``s_area`` is the area of the unit sphere in R^(N-1). Pairs are passed as
    two equally shaped arrays.
    """
    r = np.ascontiguousarray(r, dtype=float).ravel()
    s = np.ascontiguousarray(s, dtype=float).ravel()
    a = (r - s) ** 2
    rs = r * s
    lev = angular_levels(np.abs(r - s) / np.sqrt(rs))
    out = np.zeros_like(r)
    for k in range(int(lev.max())):
        m = k < lev
        hi = math.pi * ANG_Q**k
        lo = hi * ANG_Q
        out[m] += _panel(a[m], rs[m], np.full(m.sum(), lo), np.full(m.sum(), hi), lam, N, ell)
    hi = math.pi * ANG_Q ** lev.astype(float)
    out += _panel(a, rs, np.zeros_like(hi), hi, lam, N, ell)
    return s_area * out


def riesz_direct_matrix(points, weights, psi, lam: float, ipsi) -> np.ndarray:
    """Dense Nystrom matrix of ``I_lam`` on scattered nodes with singularity subtraction.

    Off the diagonal the entry is ``w_q |x_p - x_q|^-lam``. The diagonal makes
    the rule exact on the comparison field ``psi`` whose potential ``ipsi`` is
    known in closed form.
    """
    x = np.ascontiguousarray(points, dtype=float)
    d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, 1.0)
    M = weights[None, :] * d2 ** (-0.5 * lam)
    np.fill_diagonal(M, 0.0)
    diag = -(M @ psi) / psi + ipsi / psi
    M[np.diag_indices_from(M)] = diag
    return M


def riesz_direct_probe(points, weights, f, basis, probes, coef, ibasis_probe, lam: float):
    """Singularity-subtracted direct sum of ``I_lam[f]`` at arbitrary probes.

    ``basis`` holds comparison fields at the nodes (shape ``(M, K)``) whose
    potentials at the probes are ``ibasis_probe`` (shape ``(P, K)``). At probe
    ``p`` the combination ``basis @ coef[p]`` is subtracted from ``f`` before
    summing and its exact potential is added back.
    """
    x = np.ascontiguousarray(points, dtype=float)
    y = np.ascontiguousarray(probes, dtype=float)
    d2 = np.sum((y[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    scale = 1e-28 * (1.0 + np.sum(y * y, axis=-1))
    far = d2 > scale[:, None]
    kern = np.where(far, weights[None, :] * np.where(far, d2, 1.0) ** (-0.5 * lam), 0.0)
    return kern @ f - np.sum(coef * (kern @ basis), axis=1) + np.sum(coef * ibasis_probe, axis=1)
