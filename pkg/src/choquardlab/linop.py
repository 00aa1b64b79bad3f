"""Linearised operator at a bubble and the projected linear solver.

At ``b = (mu, 0)`` the linearisation reads

    L phi = -Delta phi - V phi,
    V phi = alpha p U^{p-1} I_lam[U^{p-1} phi] + alpha (p-1) A U^{lam/(N-2)+p-2} phi,

using ``I_lam[U^p] = A U^{lam/(N-2)}``. The solver never discretises the
Laplacian. It works with the second-kind integral form

    phi = Acal phi + Ncal (g~ - c H),    Acal = Ncal V,

where ``Ncal`` is the Newton potential, ``g~`` is ``g`` with its components
along ``H_j`` removed (oblique projection with ``Z_j`` weights), and the
multiplier ``c`` enforces ``int phi H = 0``. Fields live in one harmonic
sector: sector 0 carries the dilation mode, sector 1 a translation mode.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from .bubble import (
    BubbleParams,
    ProblemParams,
    bubble_value,
    h_mode,
    htilde_mode,
    laplacian_z,
    mode_pairing,
    sphere_area,
    z_mode,
    zbar_mode,
)
from .grid import (
    GridFunction,
    RadialGrid,
    build_radial_grid,
    inner_radial,
    minus_laplacian,
    sector_profile,
    weighted_sup_norm,
)
from .riesz import assemble_radial_kernel

__all__ = [
    "DegeneracyError",
    "KernelReport",
    "ProjectedSystem",
    "SolveDiagnostics",
    "apply_L",
    "build_system",
    "closed_field",
    "full_kernel_demo",
    "kernel_diagnostic",
    "minus_laplacian_z",
    "mode_fields",
    "scaling_transport",
    "solve_projected",
    "solver_derivative",
]


class DegeneracyError(RuntimeError):
    """The bordered system is numerically singular."""


def _check_radial_base(b: BubbleParams) -> None:
    if not b.centred:
        raise ValueError("radial-sector computations need a bubble centred at the origin")


def closed_field(params: ProblemParams, grid: RadialGrid, fn, decay: float, sector: int = 0, axis: int = 1):
    """Sector profile of a closed-form field as a grid function."""
    vals = sector_profile(fn, grid, params.N, sector, axis)
    return GridFunction(grid, vals, decay, sector)


def _sector_of_mode(j: int) -> int:
    return 0 if j == 0 else 1


@dataclass(frozen=True)
class ModeFields:
    """Nodal profiles of the bubble and of the mode pair ``(Z_j, H_j)`` at ``b``."""

    U: np.ndarray
    Z: GridFunction
    H: GridFunction
    pairing: float


def mode_fields(params: ProblemParams, grid: RadialGrid, b: BubbleParams, j: int = 0) -> ModeFields:
    _check_radial_base(b)
    N = params.N
    s = _sector_of_mode(j)
    u = bubble_value(params, b, np.stack([grid.nodes] + [np.zeros(grid.n)] * (N - 1), axis=-1))
    zdec = N - 2.0 + s
    Z = closed_field(params, grid, lambda x: z_mode(params, j, b, x), zdec, s, max(j, 1))
    H = closed_field(params, grid, lambda x: h_mode(params, j, b, x), zdec + 4.0, s, max(j, 1))
    return ModeFields(u, Z, H, mode_pairing(params, j))


# ---------------------------------------------------------------------------
# the assembled system


@dataclass(frozen=True, eq=False)
class ProjectedSystem:
    """Bordered discretisation of the projected linear problem at ``b``.

    ``mode`` is the constrained mode: 0 (dilation, sector 0) or ``j >= 1``
    (translation along ``x_j``, sector 1). ``potential_factor`` multiplies
    ``U`` inside the potential ``V``; values other than 1 are only used to
    show that the kernel of ``I - Acal`` is a property of the true bubble.
    """

    params: ProblemParams
    grid: RadialGrid
    b: BubbleParams
    mode: int = 0
    potential_factor: np.ndarray | None = field(default=None, repr=False)
    cache_dir: object = field(default=None, repr=False)

    def __post_init__(self) -> None:
        _check_radial_base(self.b)
        if not 0 <= self.mode <= self.params.N:
            raise ValueError("mode index out of range")

    @property
    def sector(self) -> int:
        return _sector_of_mode(self.mode)

    @cached_property
    def modes(self) -> ModeFields:
        return mode_fields(self.params, self.grid, self.b, self.mode)

    @cached_property
    def _u(self) -> np.ndarray:
        u = self.modes.U
        return u if self.potential_factor is None else u * self.potential_factor

    @cached_property
    def riesz_op(self) -> np.ndarray:
        P = self.params
        return assemble_radial_kernel(P.N, P.lam, self.grid, self.sector, cache_dir=self.cache_dir).operator

    @cached_property
    def newton_op(self) -> np.ndarray:
        N = self.params.N
        k = assemble_radial_kernel(N, N - 2.0, self.grid, self.sector, q0=N + 2.0, cache_dir=self.cache_dir)
        return k.operator / ((N - 2.0) * sphere_area(N))

    @cached_property
    def potential(self) -> tuple[np.ndarray, np.ndarray]:
        """``(U^{p-1}, alpha (p-1) A U^{lam/(N-2)+p-2})`` at the nodes."""
        P = self.params
        u = self._u
        return u ** (P.p - 1.0), P.alpha * (P.p - 1.0) * P.A * u ** (P.lam / (P.N - 2.0) + P.p - 2.0)

    def apply_V(self, v: np.ndarray) -> np.ndarray:
        P = self.params
        w, loc = self.potential
        return P.alpha * P.p * w * (self.riesz_op @ (w * v)) + loc * v

    @cached_property
    def V_matrix(self) -> np.ndarray:
        P = self.params
        w, loc = self.potential
        return P.alpha * P.p * w[:, None] * self.riesz_op * w[None, :] + np.diag(loc)

    @cached_property
    def A_matrix(self) -> np.ndarray:
        """Discrete compact part ``Acal = Ncal V``."""
        return self.newton_op @ self.V_matrix

    @cached_property
    def inner_weights(self) -> np.ndarray:
        g = self.grid
        fac = sphere_area(self.params.N) / (1.0 if self.sector == 0 else self.params.N)
        return fac * g.weights * g.nodes ** (self.params.N - 1)

    @cached_property
    def border_scale(self) -> tuple[float, float]:
        """Row and column scalings that balance the border against ``I - Acal``."""
        col = self.newton_op @ self.modes.H.values
        row = self.inner_weights * self.modes.H.values
        return 1.0 / np.max(np.abs(row)), 1.0 / np.max(np.abs(col))

    @cached_property
    def matrix(self) -> np.ndarray:
        n = self.grid.n
        rs, cs = self.border_scale
        K = np.zeros((n + 1, n + 1))
        K[:n, :n] = np.eye(n) - self.A_matrix
        K[:n, n] = cs * (self.newton_op @ self.modes.H.values)
        K[n, :n] = rs * self.inner_weights * self.modes.H.values
        return K

    @cached_property
    def factorization(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            try:
                lu = scipy.linalg.lu_factor(self.matrix, check_finite=True)
            except (scipy.linalg.LinAlgWarning, ValueError) as exc:
                raise DegeneracyError(f"bordered system is singular: {exc}") from exc
        if np.min(np.abs(np.diag(lu[0]))) < 1e-14 * np.max(np.abs(np.diag(lu[0]))):
            raise DegeneracyError("bordered system is numerically singular")
        return lu

    @cached_property
    def x_weight(self) -> np.ndarray:
        """Nodal X-norm weight ``1/U``; conjugating by it makes the SVD norm-aware."""
        return 1.0 / self.modes.U

    @cached_property
    def singular_values(self) -> np.ndarray:
        w = np.concatenate([self.x_weight, [1.0]])
        return scipy.linalg.svdvals(w[:, None] * self.matrix / w[None, :])

    def project(self, g: GridFunction) -> tuple[GridFunction, float]:
        """``g - (int g Z / int H Z) H`` and the removed coefficient."""
        coef = inner_radial(g, self.modes.Z, self.params.N) / self.modes.pairing
        return g.like(g.values - coef * self.modes.H.values, decay=min(g.decay, self.modes.H.decay)), coef

    def solve_values(self, rhs: np.ndarray) -> tuple[np.ndarray, float]:
        """Solve the bordered system for the Newton-image right-hand side ``rhs``."""
        n = self.grid.n
        sol = scipy.linalg.lu_solve(self.factorization, np.concatenate([rhs, [0.0]]))
        return sol[:n], sol[n] * self.border_scale[1]


def build_system(params: ProblemParams, grid: RadialGrid | None = None, b: BubbleParams | None = None, mode: int = 0, cache_dir=None) -> ProjectedSystem:
    grid = build_radial_grid() if grid is None else grid
    b = BubbleParams.origin(params.N) if b is None else b
    return ProjectedSystem(params, grid, b, mode, cache_dir=cache_dir)


# ---------------------------------------------------------------------------
# operations


def apply_L(sys: ProjectedSystem, phi: GridFunction, minus_lap: GridFunction | None = None) -> GridFunction:
    """``L phi`` at the system's bubble.

    ``minus_lap`` supplies ``-Delta phi`` when it is known analytically;
    otherwise it is obtained by spectral differentiation of the nodal data.
    """
    if not phi.radial or phi.sector != sys.sector:
        raise ValueError(f"apply_L needs a radial field in sector {sys.sector}")
    if phi.decay < sys.params.N - 2.0:
        raise ValueError("phi must decay at least like <x>^-(N-2)")
    lap = minus_laplacian(phi, sys.params.N) if minus_lap is None else minus_lap
    # V phi decays faster than -Delta phi, so the Laplacian term sets the tail
    return phi.like(lap.values - sys.apply_V(phi.values), decay=lap.decay)


def minus_laplacian_z(params: ProblemParams, grid: RadialGrid, b: BubbleParams, j: int) -> GridFunction:
    """Closed-form ``-Delta Z_{j;mu,0}`` as a sector grid function."""
    mu = b.mu
    N = params.N
    s = _sector_of_mode(j)

    def fn(x):
        return -mu ** (-(N + 2) / 2.0) * laplacian_z(params, j, x / mu)

    return closed_field(params, grid, fn, N + 2.0 + s, s, max(j, 1))


@dataclass(frozen=True)
class SolveDiagnostics:
    mu: float
    xi: tuple[float, ...]
    multiplier: float
    projection_coefficient: float
    sigma_min: float
    sigma_max: float
    c0_ratio: float

    def as_record(self) -> dict:
        return {
            "mu": self.mu,
            "xi": list(self.xi),
            "sigma_min": self.sigma_min,
            "sigma_ratio": self.sigma_min / self.sigma_max,
            "c0_ratio": self.c0_ratio,
            "multiplier": self.multiplier,
            "projection_coefficient": self.projection_coefficient,
        }


def solve_projected(sys: ProjectedSystem, g: GridFunction, spectrum: bool = False) -> tuple[GridFunction, SolveDiagnostics]:
    """Solve ``L phi = g - sum_j (int g Z_j / int H_j Z_j) H_j`` with ``int phi H = 0``.

    Returns ``phi`` and diagnostics including the stability ratio
    ``||phi||_X / ||g||_Y``. With ``spectrum`` the extreme singular values
    of the bordered matrix are reported as well (an SVD per call).
    """
    N = sys.params.N
    if not g.radial or g.sector != sys.sector:
        raise ValueError(f"right-hand side must be a radial field in sector {sys.sector}")
    if g.decay <= N and np.any(g.values != 0.0):
        raise ValueError(f"right-hand side must decay faster than <x>^-{N}")
    gt, coef = sys.project(g)
    vals, mult = sys.solve_values(sys.newton_op @ gt.values)
    phi = g.like(vals, decay=N - 2.0 + sys.sector)
    gn = weighted_sup_norm(g, sys.b, "Y")
    ratio = weighted_sup_norm(phi, sys.b, "X") / gn if gn > 0 else 0.0
    if spectrum:
        sv = sys.singular_values
        smin, smax = float(sv[-1]), float(sv[0])
    else:
        smin = smax = float("nan")
    return phi, SolveDiagnostics(sys.b.mu, sys.b.xi, mult, coef, smin, smax, ratio)


def scaling_transport(
    f: GridFunction, src: BubbleParams, dst: BubbleParams, kind: str = "X", grid: RadialGrid | None = None
) -> GridFunction:
    """Carry a field attached to ``src`` to the field attached to ``dst``.

    ``X`` fields map by ``(mu_s/mu_d)^{(N-2)/2} f(xi_s + mu_s (x - xi_d)/mu_d)``
    and ``Y`` fields with the exponent ``(N+2)/2``. Values off the grid come
    from the decay-normalised spectral interpolant.
    """
    if not f.radial:
        raise ValueError("scaling_transport acts on radial fields")
    _check_radial_base(src)
    _check_radial_base(dst)
    N = len(src.xi)
    e = {"X": (N - 2) / 2.0, "Y": (N + 2) / 2.0}.get(kind)
    if e is None:
        raise ValueError(f"unknown field kind {kind!r}")
    target = f.grid if grid is None else grid
    ratio = src.mu / dst.mu
    r = target.nodes * ratio
    if r[-1] > f.grid.nodes[-1] or r[0] < f.grid.nodes[0]:
        lost = np.mean((r > f.grid.nodes[-1]) | (r < f.grid.nodes[0]))
        if lost > 0.02:
            warnings.warn(f"{lost:.0%} of the target nodes fall outside the source grid", RuntimeWarning, stacklevel=2)
    vals = ratio**e * f.evaluate(r)
    return GridFunction(target, vals, f.decay, f.sector)


# ---------------------------------------------------------------------------
# kernel diagnostic


@dataclass(frozen=True)
class KernelReport:
    singular_values: np.ndarray = field(repr=False)
    near_null_count: int
    kernel_cosine: float
    constrained_ratio: float
    threshold: float

    def as_record(self) -> dict:
        return {
            "near_null_count": self.near_null_count,
            "kernel_angle_cos": self.kernel_cosine,
            "sigma_min": float(self.singular_values[-1]),
            "sigma_max": float(self.singular_values[0]),
            "constrained_ratio": self.constrained_ratio,
        }


def _subspace_cosine(V: np.ndarray, Z: np.ndarray) -> float:
    """Smallest cosine of the principal angles between ``span V`` and ``span Z``."""
    qv, _ = np.linalg.qr(V)
    qz, _ = np.linalg.qr(Z)
    s = np.linalg.svd(qv.T @ qz, compute_uv=False)
    return float(np.min(s)) if s.size else 0.0


def kernel_diagnostic(sys: ProjectedSystem, rel_threshold: float = 1e-4) -> KernelReport:
    """Singular spectrum of ``I - Acal`` and of the bordered system.

    Both are taken in X-weighted nodal coordinates; plain nodal values
    give spurious small singular values from the far tail once ``N >= 5``.
    The near-null count is the number of singular values below
    ``rel_threshold * sigma_max``; the reported cosine compares the
    corresponding right singular vectors with the nodal mode ``Z``.
    """
    w = sys.x_weight
    M = w[:, None] * (np.eye(sys.grid.n) - sys.A_matrix) / w[None, :]
    _, s, vt = np.linalg.svd(M)
    small = s < rel_threshold * s[0]
    count = int(np.sum(small))
    cos = _subspace_cosine(vt[small].T, (w * sys.modes.Z.values)[:, None]) if count else 0.0
    sv = sys.singular_values
    return KernelReport(s, count, cos, float(sv[-1] / sv[0]), rel_threshold)


def full_kernel_demo(params: ProblemParams, n: int = 24, degree: int = 7, rel_threshold: float = 1e-2) -> KernelReport:
    """Unconstrained kernel of ``I - Acal`` on a small radial x sphere grid.

    Demonstration resolution only: all ``N + 1`` modes ``Z_0..Z_N`` should
    show up as near-null directions.
    """
    from .grid import build_full_grid
    from .riesz import riesz_full_matrix

    N = params.N
    G = build_full_grid(n, degree, N)
    pts = G.points.reshape(-1, N)
    b = BubbleParams.origin(N)
    u = bubble_value(params, b, pts)
    R = riesz_full_matrix(G, params.lam)
    Nw = riesz_full_matrix(G, N - 2.0) / ((N - 2.0) * sphere_area(N))
    w = u ** (params.p - 1.0)
    V = params.alpha * params.p * w[:, None] * R * w[None, :] + np.diag(
        params.alpha * (params.p - 1.0) * params.A * u ** (params.lam / (N - 2.0) + params.p - 2.0)
    )
    M = np.eye(len(u)) - Nw @ V
    _, s, vt = np.linalg.svd(M)
    small = s < rel_threshold * s[0]
    Z = np.stack([z_mode(params, j, b, pts) for j in range(N + 1)], axis=1)
    count = int(np.sum(small))
    cos = _subspace_cosine(vt[small].T, Z) if count else 0.0
    return KernelReport(s, count, cos, float("nan"), rel_threshold)


# ---------------------------------------------------------------------------
# parameter derivative of the projected solve


def _riesz(sys: ProjectedSystem, v: np.ndarray, sector: int) -> np.ndarray:
    P = sys.params
    return assemble_radial_kernel(P.N, P.lam, sys.grid, sector, cache_dir=sys.cache_dir).operator @ v


def solver_derivative(base: ProjectedSystem, g: GridFunction, m: int = 0, deriv_system: ProjectedSystem | None = None):
    """Derivative ``psi_m`` of ``phi = T[mu, xi] g`` along parameter ``m`` at fixed ``g``.

    ``base`` is the sector-0 system at ``(mu0, 0)`` and ``g`` a radial field.
    For ``m = 0`` (dilation) the derivative is radial. For ``m >= 1`` it lies
    in sector 1 and is solved with the sector-1 system for mode ``m``
    (``deriv_system``, built on demand). The returned profile represents
    ``psi_m(x)`` as ``f(|x|)`` for ``m = 0`` and ``f(|x|) x_m/|x|`` otherwise.
    """
    P = base.params
    N, p, alpha = P.N, P.p, P.alpha
    mu0 = base.b.mu
    if base.mode != 0:
        raise ValueError("the base system must be the sector-0 (dilation) system")
    if not 0 <= m <= N:
        raise ValueError("parameter index out of range")
    phi, _ = solve_projected(base, g)
    b = base.b
    s = _sector_of_mode(m)
    ax = max(m, 1)
    dsys = base if m == 0 else (deriv_system or ProjectedSystem(P, base.grid, b, m, cache_dir=base.cache_dir))
    if dsys.mode != m:
        raise ValueError("derivative system is built for a different mode")

    u = base.modes.U
    zm = dsys.modes.Z.values
    ph = phi.values
    Ip = P.A * u ** (P.lam / (N - 2.0))  # I[U^p]
    # the four Riesz-coupled terms of the differentiated linearisation
    t1 = alpha * p * (p - 1.0) * _riesz(base, u ** (p - 1.0) * ph, 0) * u ** (p - 2.0) * zm
    t2 = alpha * p * (p - 1.0) * _riesz(base, u ** (p - 2.0) * zm * ph, s) * u ** (p - 1.0)
    t3 = alpha * p * (p - 1.0) * _riesz(base, u ** (p - 1.0) * zm, s) * u ** (p - 2.0) * ph
    t4 = alpha * (p - 1.0) * (p - 2.0) * Ip * u ** (p - 3.0) * zm * ph
    lm = t1 + t2 + t3 + t4

    grid = base.grid
    # r_m: only the dilation coefficient of a radial g survives
    c0 = inner_radial(g, base.modes.Z, N) / base.modes.pairing
    ht0m = sector_profile(lambda x: htilde_mode(P, 0, m, x, b), grid, N, s, ax)
    rm = c0 * ht0m
    # t_m: pairing of g with Zbar_{j,m}; for radial g only j = m survives
    zb = sector_profile(lambda x: zbar_mode(P, m, m, x, b), grid, N, 0)
    dj = mode_pairing(P, m)
    coef_t = inner_radial(g, g.like(zb, decay=N - 2.0), N) / dj
    tm = -coef_t * dsys.modes.H.values

    rhs = GridFunction(grid, (lm - rm + tm) / mu0, N + 2.0 + s, s)
    psi_t, _ = solve_projected(dsys, rhs)
    # correction along Z_m from differentiating the orthogonality constraint
    htmm = sector_profile(lambda x: htilde_mode(P, m, m, x, b), grid, N, 0)
    corr = inner_radial(phi, phi.like(htmm, decay=N + 2.0), N) / dj
    vals = psi_t.values - corr / mu0 * zm
    return psi_t.like(vals, decay=N - 2.0 + s)
