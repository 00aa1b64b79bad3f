"""Finite-dimensional reduction: energies, the reduced function and its zeros.

The reduced function is ``Upsilon(mu, xi) = ((N-2)/(2N)) int k U_{mu,xi}^{2N/(N-2)}``.
Every bump of a ``PotentialSpec`` is radial about its own centre, so after
the substitution ``x = mu y + xi`` each bump contribution is an integral of
two functions that are radial about two different points. That integral is
taken in the bump frame with a product rule in ``(rho, cos theta)``, which
is accurate to rounding in any dimension.

The production solve is radial (radial ``k``, ``xi = 0``): the zero of
``mu -> c_0(mu)`` is found by Newton with a finite-difference slope.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bubble import BubbleParams, ProblemParams, gamma, sphere_area
from .grid import GridFunction, RadialGrid, build_radial_grid, integrate_radial
from .kcheck import Bump, PotentialSpec
from .linop import ProjectedSystem, build_system
from .nonlinear import (
    ContractionError,
    PerturbedSolution,
    _riesz0,
    contraction_solve,
    pow_minus_one,
    pow_second_remainder,
    residual_check,
)

__all__ = [
    "DegreeError",
    "DegreeResult",
    "ReducedPoint",
    "SolveFailure",
    "bubble_mass",
    "classify",
    "degree",
    "degree_mu_line",
    "energy",
    "energy_direct",
    "energy_increment",
    "expansion_remainder",
    "find_critical_points",
    "find_mu_critical",
    "grad_upsilon",
    "hessian_upsilon",
    "j0_bar",
    "reduced_energy",
    "scan_upsilon",
    "solve_full",
    "upsilon",
]


class DegreeError(RuntimeError):
    """The degree is undefined: degenerate zero or a near-zero on the boundary."""


class SolveFailure(RuntimeError):
    """Newton on the reduced equations did not converge."""


# ---------------------------------------------------------------------------
# closed forms


def bubble_mass(N: int) -> float:
    """``int U^{2N/(N-2)} = |S^{N-1}| B(N/2, N/2) / 2``."""
    return sphere_area(N) * 0.5 * gamma(N / 2.0) ** 2 / gamma(float(N))


def j0_bar(params: ProblemParams) -> float:
    """Energy of the unperturbed bubble, ``N(N-2)(1/2 - 1/(2p)) int U^{2N/(N-2)}``."""
    N = params.N
    return N * (N - 2.0) * (0.5 - 0.5 / params.p) * bubble_mass(N)


def _c_N(N: int) -> float:
    return (N - 2.0) / (2.0 * N)


# ---------------------------------------------------------------------------
# energies


def _integral(grid: RadialGrid, v: np.ndarray, N: int, decay: float | None = None) -> float:
    return integrate_radial(GridFunction(grid, v, 2.0 * N if decay is None else decay), N)


def energy_increment(sol: PerturbedSolution) -> float:
    """``j_eps - j0_bar`` at ``w = U + phi`` without cancellation.

    With ``delta = w^p - U^p`` and ``D = delta - p U^{p-1} phi``:

        1/2 int phi (-Delta phi) - (alpha A / p) int U^{lam/(N-2)} D
        - (alpha / 2p) int I[delta] delta - c_N eps int k w^{2N/(N-2)},

    where ``-Delta phi`` is the bracket of the integral representation.
    """
    sys = sol.system
    P = sys.params
    N = P.N
    u = sys.modes.U
    s = sol.phi.values / u
    up = u**P.p
    delta = up * pow_minus_one(s, P.p)
    D = up * pow_second_remainder(s, P.p)
    lap_phi = _minus_lap_phi(sol)

    def integral(v):
        return _integral(sys.grid, v, N)

    grad_term = 0.5 * integral(sol.phi.values * lap_phi)
    local = P.alpha * P.A / P.p * integral(u ** (P.lam / (N - 2.0)) * D)
    nonlocal_ = P.alpha / (2.0 * P.p) * integral(_riesz0(sys, delta) * delta)
    pert = 0.0
    if sol.eps:
        w = np.maximum(u + sol.phi.values, 0.0)
        pert = _c_N(N) * sol.eps * integral(sol.kvals * w**P.sobolev)
    return grad_term - local - nonlocal_ - pert


def _minus_lap_phi(sol: PerturbedSolution) -> np.ndarray:
    from .nonlinear import _rhs

    sys = sol.system
    g = _rhs(sys, sol.phi, sol.eps, sol.kvals)
    ctot = sol.c[0] + sol.multiplier
    return sys.apply_V(sol.phi.values) + g.values - ctot * sys.modes.H.values


def energy(sol: PerturbedSolution) -> float:
    """``J_eps(U + phi)``."""
    return j0_bar(sol.system.params) + energy_increment(sol)


def expansion_remainder(sol: PerturbedSolution) -> float:
    """``j_eps - j0_bar + eps Upsilon_h`` with ``Upsilon_h`` the grid value of ``Upsilon``.

    The perturbation term is rewritten with ``(1+s)^{2N/(N-2)} - 1`` so the
    ``O(eps)`` parts cancel analytically.
    """
    sys = sol.system
    P = sys.params
    N = P.N
    u = sys.modes.U
    s = sol.phi.values / u
    up = u**P.p
    delta = up * pow_minus_one(s, P.p)
    D = up * pow_second_remainder(s, P.p)

    def integral(v):
        return _integral(sys.grid, v, N)

    out = 0.5 * integral(sol.phi.values * _minus_lap_phi(sol))
    out -= P.alpha * P.A / P.p * integral(u ** (P.lam / (N - 2.0)) * D)
    out -= P.alpha / (2.0 * P.p) * integral(_riesz0(sys, delta) * delta)
    if sol.eps:
        out -= _c_N(N) * sol.eps * integral(sol.kvals * u**P.sobolev * pow_minus_one(s, P.sobolev))
    return out


def energy_direct(params: ProblemParams, grid: RadialGrid, u: np.ndarray, eps: float = 0.0, kvals=None) -> float:
    """``J_eps(u)`` for radial nodal data, with the Dirichlet term from spectral differentiation.

    Independent of the integral representation; used as a cross-check.
    """
    N = params.N
    u = np.asarray(u, dtype=float)
    if not np.any(u):
        return 0.0
    up = np.maximum(u, 0.0)
    r = grid.nodes
    weight = (1.0 + r * r) ** ((N - 2) / 2.0)
    v = u * weight
    dv = (grid.diff_t @ v) / grid.dr_dt(grid.t)
    du = (dv - u * (N - 2.0) * r * (1.0 + r * r) ** ((N - 2) / 2.0 - 1.0)) / weight
    upp = up**params.p
    dirichlet = _integral(grid, du * du, N, 2.0 * (N - 1.0))
    conv = params.alpha / (2.0 * params.p) * _integral(grid, _riesz_plain(params, grid, upp) * upp, N)
    pert = 0.0
    if eps:
        pert = _c_N(N) * eps * _integral(grid, np.asarray(kvals) * up**params.sobolev, N)
    return 0.5 * dirichlet - conv - pert


def _riesz_plain(params: ProblemParams, grid: RadialGrid, v: np.ndarray) -> np.ndarray:
    from .riesz import assemble_radial_kernel

    return assemble_radial_kernel(params.N, params.lam, grid, 0).operator @ v


# ---------------------------------------------------------------------------
# the reduced function


_QUAD_CACHE: dict = {}


def _rho_rule(nodes: int = 24):
    return np.polynomial.legendre.leggauss(nodes)


def _angle_rule(N: int, dn: float, nodes: int = 16):
    """Composite rule in ``theta`` on ``[0, pi]`` for the weight ``sin^{N-2}``.

    Panels are graded geometrically toward ``theta = pi``, where the bubble
    sits as seen from a bump at distance ``dn``; the peak there has angular
    width about ``1/dn``.
    """
    key = (N, round(dn, 12), nodes)
    if key in _QUAD_CACHE:
        return _QUAD_CACHE[key]
    edges = [0.0, 0.5 * math.pi]
    gap = 0.5 * math.pi
    floor = 0.02 / max(dn, 1.0)
    while gap > floor:
        gap *= 0.25
        edges.append(math.pi - gap)
    edges.append(math.pi)
    x, w = np.polynomial.legendre.leggauss(nodes)
    th, wt = [], []
    for a, c in zip(edges[:-1], edges[1:]):
        th.append(0.5 * (c - a) * x + 0.5 * (c + a))
        wt.append(0.5 * (c - a) * w)
    th = np.concatenate(th)
    wt = np.concatenate(wt) * np.sin(th) ** (N - 2)
    _QUAD_CACHE[key] = (np.cos(th), wt)
    return _QUAD_CACHE[key]


def _profile(bmp: Bump, rho: np.ndarray) -> np.ndarray:
    """Bump value as a function of the distance to its centre."""
    s2 = bmp.width**2
    if bmp.kind == "gaussian":
        return bmp.amplitude * np.exp(-rho * rho / s2)
    if bmp.kind == "rational":
        return bmp.amplitude * (1.0 + rho * rho / s2) ** (-bmp.power)
    d = rho - bmp.radius
    return bmp.amplitude * np.exp(-d * d / s2)


def _features(bmp: Bump) -> list[float]:
    w = bmp.width
    if bmp.kind == "ring":
        return [max(bmp.radius + f * w, 0.0) for f in (-6, -3, -1, 0, 1, 3, 6)]
    return [f * w for f in (1, 3, 6)]


def _profile_slope(bmp: Bump, rho: np.ndarray) -> np.ndarray:
    s2 = bmp.width**2
    if bmp.kind == "gaussian":
        return -2.0 * rho / s2 * bmp.amplitude * np.exp(-rho * rho / s2)
    if bmp.kind == "rational":
        return -2.0 * bmp.power * rho / s2 * bmp.amplitude * (1.0 + rho * rho / s2) ** (-bmp.power - 1.0)
    d = rho - bmp.radius
    return -2.0 * d / s2 * bmp.amplitude * np.exp(-d * d / s2)


def _bump_frame(P: ProblemParams, bmp: Bump, b: BubbleParams, want_hess: bool):
    """One bump's share of ``int U^{2N/(N-2)} g``, of the gradient and of the Hessian.

    ``g(y) = bump(mu y + xi)`` is radial about ``d = (c - xi)/mu``; with
    ``y = z + d`` the integrand is averaged over the directions of ``z``
    perpendicular to ``d`` in closed form.
    """
    N = P.N
    mu = b.mu
    d = (np.asarray(bmp.center) - b.xi_array) / mu
    dn = float(np.linalg.norm(d))
    dhat = d / dn if dn > 0.0 else np.zeros(N)
    bps = {0.0}
    for f in _features(bmp):
        bps.add(f / mu)
    for f in (-16.0, -4.0, -1.5, -0.5, 0.0, 0.5, 1.5, 4.0, 16.0):
        bps.add(max(dn + f, 0.0))
    bps = sorted(bps)
    R = bps[-1] + 4.0
    bps.append(R)
    x, w = _rho_rule()
    rho_l, wr_l = [], []
    for lo, hi in zip(bps[:-1], bps[1:]):
        if hi - lo <= 1e-14:
            continue
        rho_l.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        wr_l.append(0.5 * (hi - lo) * w)
    v = 0.5 * (x + 1.0)  # tail rho = R / v
    rho_l.append(R / v)
    wr_l.append(0.5 * w * R / v**2)
    rho = np.concatenate(rho_l)
    wr = np.concatenate(wr_l)
    t, wt = _angle_rule(N, dn)
    RR, T = np.meshgrid(rho, t, indexing="ij")
    W = np.outer(wr * rho ** (N - 1), wt) * sphere_area(N - 1)
    y2 = RR * RR + dn * dn + 2.0 * RR * dn * T
    s = 1.0 + y2
    g = _profile(bmp, mu * RR)
    ucrit = s ** (-(N + 2) / 2.0)
    z0 = 0.5 * (N - 2) * (y2 - 1.0) * s ** (-N / 2.0)
    zrad = (N - 2) * s ** (-N / 2.0)
    ydot = RR * T + dn  # average of y . dhat
    val = float(np.sum(W * g * s ** (-float(N))))
    grad = np.empty(N + 1)
    grad[0] = np.sum(W * g * ucrit * z0)
    grad[1:] = np.sum(W * g * ucrit * zrad * ydot) * dhat
    if not want_hess:
        return val, grad, None
    g1 = _profile_slope(bmp, mu * RR)
    zy = RR + dn * T  # zhat . y
    c0 = W * g1 * ucrit * z0
    c1 = W * g1 * ucrit * zrad
    A = np.empty((N + 1, N + 1))
    A[0, 0] = np.sum(c0 * zy)
    A[0, 1:] = np.sum(c0 * T) * dhat
    A[1:, 0] = np.sum(c1 * zy * ydot) * dhat
    par = np.sum(c1 * (RR * T * T + dn * T))
    perp = np.sum(c1 * RR * (1.0 - T * T)) / (N - 1.0)
    P_par = np.outer(dhat, dhat)
    A[1:, 1:] = par * P_par + perp * (np.eye(N) - P_par)
    return val, grad, A


def _upsilon_parts(params: ProblemParams, b: BubbleParams, k: PotentialSpec, want_hess: bool = False):
    """``(Upsilon, grad Upsilon, Hess Upsilon or None)``."""
    _check_k(params, b, k)
    n = params.N + 1
    val = k.a0 * bubble_mass(params.N)
    G = np.zeros(n)
    A = np.zeros((n, n))
    for bmp in k.bumps:
        if bmp.amplitude:
            v, gr, a = _bump_frame(params, bmp, b, want_hess)
            val += v
            G += gr
            if want_hess:
                A += a
    mu = b.mu
    G /= mu
    H = None
    if want_hess:
        # d_b G_a = A_ab / mu - delta_b0 G_a / mu, rows indexed by a
        H = A / mu
        H[:, 0] -= G / mu
        H = 0.5 * (H + H.T)
    return _c_N(params.N) * val, G, H


def upsilon(params: ProblemParams, b: BubbleParams, k: PotentialSpec) -> float:
    """``((N-2)/(2N)) int k U_{mu,xi}^{2N/(N-2)}``."""
    return _upsilon_parts(params, b, k)[0]


def grad_upsilon(params: ProblemParams, b: BubbleParams, k: PotentialSpec) -> np.ndarray:
    """``(d_mu, d_xi_1..d_xi_N) Upsilon = (1/mu) int k(mu y + xi) U^crit Z_j dy``."""
    return _upsilon_parts(params, b, k)[1]


def hessian_upsilon(params: ProblemParams, b: BubbleParams, k: PotentialSpec) -> np.ndarray:
    """Hessian of ``Upsilon`` from ``grad k`` under the integral (symmetrised)."""
    return _upsilon_parts(params, b, k, True)[2]


def _check_k(params: ProblemParams, b: BubbleParams, k: PotentialSpec) -> None:
    if k.N != params.N or len(b.xi) != params.N:
        raise ValueError("dimension mismatch between problem, bubble and potential")
    if k.inf_bound() <= 0.0:
        raise ValueError("k must be bounded below by a positive constant")


def classify(eigs, tol: float = 1e-8) -> str:
    eigs = np.asarray(eigs)
    if np.any(np.abs(eigs) <= tol):
        return "degenerate"
    if np.all(eigs < 0):
        return "max"
    if np.all(eigs > 0):
        return "min"
    return "saddle"


# ---------------------------------------------------------------------------
# reduced points


@dataclass
class ReducedPoint:
    b: BubbleParams
    upsilon: float
    grad: np.ndarray
    hessian_eigs: np.ndarray
    classification: str
    j_eps: float | None = None
    eps: float = 0.0
    c: np.ndarray | None = None
    phi_norm: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def index(self) -> int:
        """Sign of the Hessian determinant; 0 when degenerate."""
        if self.classification == "degenerate":
            return 0
        return int(np.prod(np.sign(self.hessian_eigs)))

    def as_record(self) -> dict:
        rec = {
            "mu": self.b.mu,
            "xi": list(self.b.xi),
            "upsilon": self.upsilon,
            "grad_upsilon": [float(v) for v in self.grad],
            "hessian_eigs": [float(v) for v in self.hessian_eigs],
            "class": self.classification,
            "index": self.index,
            "eps": self.eps,
        }
        if self.j_eps is not None:
            rec["j_eps"] = self.j_eps
        if self.c is not None:
            rec["c"] = [float(v) for v in self.c]
        if self.phi_norm is not None:
            rec["phi_norm"] = self.phi_norm
        rec.update(self.extra)
        return rec

    def to_json(self) -> str:
        return json.dumps(self.as_record(), sort_keys=True)


def _point(params: ProblemParams, b: BubbleParams, k: PotentialSpec, radial: bool = False) -> ReducedPoint:
    g = grad_upsilon(params, b, k)
    if radial:
        eigs = np.array([_d2mu(params, b, k)])
    else:
        eigs = np.linalg.eigvalsh(hessian_upsilon(params, b, k))
    return ReducedPoint(b, upsilon(params, b, k), g, eigs, classify(eigs))


def _d2mu(params: ProblemParams, b: BubbleParams, k: PotentialSpec) -> float:
    return float(hessian_upsilon(params, b, k)[0, 0])


def reduced_energy(sys: ProjectedSystem, eps: float, k: PotentialSpec, tol: float = 1e-12, **solve_kw) -> ReducedPoint:
    """Contraction solve at the system's bubble followed by the energy."""
    sol = contraction_solve(sys, eps, k, tol=tol, **solve_kw)
    pt = _point(sys.params, sys.b, k, radial=True)
    pt.j_eps = energy(sol)
    pt.eps = eps
    pt.c = sol.c
    pt.phi_norm = sol.phi_norm
    pt.extra["expansion_remainder"] = expansion_remainder(sol)
    return pt


# ---------------------------------------------------------------------------
# zeros of the gradient


def find_mu_critical(params: ProblemParams, k: PotentialSpec, mu_range=(0.05, 20.0), samples: int = 200, tol: float = 1e-13) -> list[ReducedPoint]:
    """Zeros of ``mu -> d_mu Upsilon(mu, 0)`` by a log-spaced scan and safeguarded Newton."""
    if not k.radial:
        raise ValueError("the mu-line reduction needs a radial k")
    xi = (0.0,) * params.N
    mus = np.geomspace(mu_range[0], mu_range[1], samples)
    f = np.array([grad_upsilon(params, BubbleParams(m, xi), k)[0] for m in mus])
    out = []
    for i in np.nonzero(np.sign(f[:-1]) * np.sign(f[1:]) < 0)[0]:
        lo, hi = mus[i], mus[i + 1]
        flo = f[i]
        m = 0.5 * (lo + hi)
        for _ in range(100):
            fm = grad_upsilon(params, BubbleParams(m, xi), k)[0]
            if abs(fm) <= tol:
                break
            if np.sign(fm) == np.sign(flo):
                lo, flo = m, fm
            else:
                hi = m
            d = _d2mu(params, BubbleParams(m, xi), k)
            nxt = m - fm / d if d != 0.0 else 0.5 * (lo + hi)
            m = nxt if lo < nxt < hi else 0.5 * (lo + hi)
            if hi - lo <= 1e-15 * m:
                break
        out.append(_point(params, BubbleParams(m, xi), k, radial=True))
    return out


@dataclass
class DegreeResult:
    degree: int
    zeros: list[ReducedPoint]
    boundary_inf: float
    boundary_samples: int

    def as_record(self) -> dict:
        return {
            "degree": self.degree,
            "zeros": [z.as_record() for z in self.zeros],
            "boundary_inf_grad": self.boundary_inf,
            "boundary_samples": self.boundary_samples,
        }


def degree_mu_line(params: ProblemParams, k: PotentialSpec, lo: float, hi: float, floor: float = 1e-10) -> DegreeResult:
    """Degree of ``d_mu Upsilon`` on ``(lo, hi)`` along ``xi = 0``."""
    if not 0.0 < lo < hi:
        raise ValueError("need 0 < lo < hi")
    xi = (0.0,) * params.N
    ends = [abs(grad_upsilon(params, BubbleParams(m, xi), k)[0]) for m in (lo, hi)]
    binf = min(ends)
    if binf <= floor:
        raise DegreeError(f"d_mu Upsilon nearly vanishes on the boundary ({binf:.3g})")
    zeros = [z for z in find_mu_critical(params, k, (lo, hi), samples=400) if lo < z.b.mu < hi]
    if any(z.classification == "degenerate" for z in zeros):
        raise DegreeError("degenerate zero inside the interval")
    return DegreeResult(sum(z.index for z in zeros), zeros, binf, 2)


def _box_arrays(box):
    lo = np.array([float(a) for a, _ in box])
    hi = np.array([float(c) for _, c in box])
    if lo.size < 2 or np.any(hi <= lo) or lo[0] <= 0.0:
        raise ValueError("box must be [(mu_lo, mu_hi), (xi_lo, xi_hi), ...] with mu_lo > 0")
    return lo, hi


def _newton_zero(params, k, v0, lo, hi, max_iter: int = 40, tol: float = 1e-11):
    """Newton on ``grad Upsilon`` with the analytic Hessian.

    Each step is capped at a quarter of the box in every coordinate and at
    half of the current ``mu``. Returns ``(v, grad, converged)``.
    """
    v = np.array(v0, dtype=float)
    span = hi - lo
    g = None
    for _ in range(max_iter):
        _, g, H = _upsilon_parts(params, BubbleParams.from_vector(v), k, True)
        if np.linalg.norm(g) <= tol:
            return v, g, True
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return v, g, False
        cap = np.full(v.size, 0.25) * span
        cap[0] = min(cap[0], 0.5 * v[0])
        scale = max(1.0, float(np.max(np.abs(step) / cap)))
        v = v + step / scale
        if np.any(v < lo - 0.5 * span) or np.any(v > hi + 0.5 * span):
            return v, g, False
    return v, g, False


def _lattice(lo: np.ndarray, hi: np.ndarray, per_axis: int) -> list[np.ndarray]:
    axes = [np.geomspace(lo[0], hi[0], per_axis)]
    axes += [np.linspace(lo[i], hi[i], per_axis) for i in range(1, lo.size)]
    return axes


def _sign_change_cells(params, k, lo, hi, per_axis: int) -> list[np.ndarray]:
    """Centres of lattice cells on whose corners every gradient component changes sign."""
    axes = _lattice(lo, hi, per_axis)
    n = lo.size
    shape = (per_axis,) * n
    signs = np.empty(shape + (n,))
    for idx in np.ndindex(*shape):
        v = np.array([axes[i][idx[i]] for i in range(n)])
        signs[idx] = np.sign(grad_upsilon(params, BubbleParams.from_vector(v), k))
    out = []
    corners = list(np.ndindex(*(2,) * n))
    for idx in np.ndindex(*(per_axis - 1,) * n):
        block = np.array([signs[tuple(i + c for i, c in zip(idx, cn))] for cn in corners])
        if np.all(block.min(axis=0) < block.max(axis=0)):
            lo_c = np.array([axes[i][idx[i]] for i in range(n)])
            hi_c = np.array([axes[i][idx[i] + 1] for i in range(n)])
            centre = 0.5 * (lo_c + hi_c)
            centre[0] = math.sqrt(lo_c[0] * hi_c[0])
            out.append(centre)
    return out


def find_critical_points(
    params: ProblemParams,
    k: PotentialSpec,
    box,
    starts: int = 16,
    seed: int = 0,
    dedup: float = 1e-6,
    per_axis: int = 5,
) -> list[ReducedPoint]:
    """Zeros of ``grad Upsilon`` inside ``box`` by multistart Newton.

    Starts are the centres of lattice cells (``per_axis`` points per axis,
    ``mu`` log-spaced) on which every gradient component changes sign, plus
    ``starts`` random points drawn with ``seed``. Zeros outside the box or on
    its boundary are dropped; the rest are sorted by coordinates.
    """
    lo, hi = _box_arrays(box)
    if lo.size != params.N + 1:
        raise ValueError("box must have N + 1 intervals")
    rng = np.random.default_rng(seed)
    seeds = _sign_change_cells(params, k, lo, hi, per_axis) if per_axis >= 2 else []
    for _ in range(starts):
        v0 = lo + (hi - lo) * rng.random(lo.size)
        v0[0] = math.exp(math.log(lo[0]) + (math.log(hi[0]) - math.log(lo[0])) * rng.random())
        seeds.append(v0)
    found: list[np.ndarray] = []
    margin = 1e-9 * (hi - lo)
    for v0 in seeds:
        v, g, ok = _newton_zero(params, k, v0, lo, hi)
        if not ok or np.any(v <= lo + margin) or np.any(v >= hi - margin):
            continue
        if any(np.linalg.norm(v - f) <= dedup for f in found):
            continue
        found.append(v)
    found.sort(key=lambda a: tuple(np.round(a, 8)))
    return [_point(params, BubbleParams.from_vector(v), k) for v in found]


def _boundary_samples(lo: np.ndarray, hi: np.ndarray, per_axis: int) -> np.ndarray:
    n = lo.size
    axes = [np.linspace(lo[i], hi[i], per_axis) for i in range(n)]
    pts = []
    for i in range(n):
        for side in (lo[i], hi[i]):
            grids = np.meshgrid(*[axes[j] if j != i else np.array([side]) for j in range(n)], indexing="ij")
            pts.append(np.stack([g.ravel() for g in grids], axis=1))
    return np.unique(np.concatenate(pts), axis=0)


def degree(
    params: ProblemParams,
    k: PotentialSpec,
    box,
    starts: int = 16,
    seed: int = 0,
    per_axis: int = 5,
    floor: float = 1e-10,
) -> DegreeResult:
    """Sum of Hessian-determinant signs over the zeros of ``grad Upsilon`` in ``box``.

    The boundary is sampled on a ``per_axis`` lattice; its smallest gradient
    norm is attached as the certificate. Zeros come from lattice-seeded
    Newton, so the lattice spacing has to resolve each basin: growing the
    box at fixed ``per_axis`` can lose zeros.
    """
    if k.is_constant:
        raise DegreeError("constant k: grad Upsilon vanishes identically")
    lo, hi = _box_arrays(box)
    pts = _boundary_samples(lo, hi, per_axis)
    binf = min(float(np.linalg.norm(grad_upsilon(params, BubbleParams.from_vector(v), k))) for v in pts)
    if binf <= floor:
        raise DegreeError(f"grad Upsilon nearly vanishes on the boundary ({binf:.3g})")
    zeros = find_critical_points(params, k, box, starts=starts, seed=seed, per_axis=per_axis)
    if any(z.classification == "degenerate" for z in zeros):
        raise DegreeError("degenerate zero in the box")
    return DegreeResult(sum(z.index for z in zeros), zeros, binf, len(pts))


def scan_upsilon(params: ProblemParams, k: PotentialSpec, box, per_axis: int = 9) -> list[dict]:
    """``Upsilon`` and its gradient on a lattice, in lexicographic order."""
    lo, hi = _box_arrays(box)
    axes = [np.linspace(lo[i], hi[i], per_axis) for i in range(lo.size)]
    grids = np.meshgrid(*axes, indexing="ij")
    rows = []
    for v in np.stack([g.ravel() for g in grids], axis=1):
        b = BubbleParams.from_vector(v)
        rows.append({"b": b, "upsilon": upsilon(params, b, k), "grad": grad_upsilon(params, b, k)})
    return rows


# ---------------------------------------------------------------------------
# the final solve


def solve_full(
    params: ProblemParams,
    eps: float,
    k: PotentialSpec,
    seed: ReducedPoint,
    grid: RadialGrid | None = None,
    tol: float = 1e-10,
    max_iter: int = 30,
    cache_dir=None,
    contraction_tol: float = 1e-13,
    eps_max: float = 0.1,
) -> tuple[BubbleParams, PerturbedSolution, dict]:
    """Zero of ``mu -> c_0(mu)`` along ``xi = 0`` by Newton with a central-difference slope.

    ``c_j`` for ``j >= 1`` vanish by symmetry, so the radial line carries the
    whole system. Steps are capped at half of the current ``mu``.

    Returns the bubble parameters, the solution there and a report with
    ``||phi/U||_inf``, the residual check and the Newton history.
    """
    if not k.radial or not seed.b.centred:
        raise ValueError("the certified solve is radial: radial k and xi = 0")
    if seed.classification == "degenerate":
        raise ValueError("seed must be a nondegenerate critical point")
    grid = build_radial_grid() if grid is None else grid
    xi = (0.0,) * params.N

    def c0(mu):
        sys = build_system(params, grid, BubbleParams(mu, xi), cache_dir=cache_dir)
        try:
            sol = contraction_solve(sys, eps, k, tol=contraction_tol, eps_max=eps_max)
        except ContractionError as exc:
            raise SolveFailure(f"contraction failed at mu = {mu}: {exc}") from exc
        return sol.c[0], sol

    mu = seed.b.mu
    hist = []
    slope = float("nan")
    val, sol = c0(mu)
    for _ in range(max_iter):
        hist.append((mu, float(val)))
        # aim two digits below tol; stop once a step no longer helps
        if abs(val) <= 1e-2 * tol or (len(hist) > 1 and abs(val) <= tol and abs(val) >= abs(hist[-2][1])):
            break
        h = 1e-5 * mu
        slope = (c0(mu + h)[0] - c0(mu - h)[0]) / (2.0 * h)
        if slope == 0.0 or not math.isfinite(slope):
            raise SolveFailure(f"c-Jacobian singular at mu = {mu}")
        step = -val / slope
        step = max(min(step, 0.5 * mu), -0.5 * mu)
        mu += step
        val, sol = c0(mu)
    if abs(val) > tol:
        raise SolveFailure(f"no convergence in {max_iter} Newton steps; last |c| = {abs(val):.3g}")
    report = {
        "newton": hist,
        "c_norm": float(np.max(np.abs(sol.c))),
        "c_jacobian": float(slope),
        "phi_over_U_inf": float(np.max(np.abs(sol.phi.values / sol.system.modes.U))),
        "residual": residual_check(sol),
    }
    return sol.b, sol, report
