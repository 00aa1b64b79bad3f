"""Perturbation potentials ``k`` and a verifier for the standing hypotheses.

A potential is a positive baseline plus a finite sum of bumps::

    gaussian   b exp(-|x-c|^2 / s^2)
    rational   b (1 + |x-c|^2 / s^2)^(-q)         (q > N/2)
    ring       b exp(-(|x-c| - r0)^2 / s^2)

Values, gradients, Hessians and Laplacians are closed form. The verifier
returns a verdict and evidence under five keys:

* ``k0``: bounded above and away from zero,
* ``k1``: twice differentiable,
* ``k2``: finitely many nondegenerate critical points, with an index sum
  different from ``(-1)^N``,
* ``k3``: ``x . grad k < 0`` outside some ball,
* ``k4``: ``x . grad k`` integrable with negative integral.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from .bubble import gamma, sphere_area

__all__ = [
    "AssumptionReport",
    "Bump",
    "CriticalPoint",
    "EnlargeBoxError",
    "PotentialSpec",
    "check_assumptions",
    "eval_k",
    "find_critical_points_k",
]

Kind = Literal["gaussian", "rational", "ring"]
Verdict = Literal["pass", "fail", "inconclusive"]


class EnlargeBoxError(ValueError):
    """A critical point sits on the search-box boundary."""


@dataclass(frozen=True)
class Bump:
    kind: Kind
    amplitude: float
    center: tuple[float, ...]
    width: float = 1.0
    power: float = 0.0
    radius: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian", "rational", "ring"):
            raise ValueError(f"unknown bump kind {self.kind!r}")
        vals = [self.amplitude, self.width, self.power, self.radius, *self.center]
        if not all(math.isfinite(float(v)) for v in vals):
            raise ValueError("bump parameters must be finite")
        if not self.width > 0.0:
            raise ValueError("bump width must be positive")
        if self.kind == "rational" and not self.power > len(self.center) / 2.0:
            raise ValueError("rational bumps need power q > N/2")
        if self.kind == "ring" and self.radius < 0.0:
            raise ValueError("ring radius must be non-negative")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def smooth(self) -> bool:
        """False for rings of positive radius, which have a conical point at the centre."""
        return not (self.kind == "ring" and self.radius > 0.0)


@dataclass(frozen=True)
class PotentialSpec:
    """Baseline ``a0 > 0`` plus bumps, all in dimension ``N``."""

    N: int
    a0: float
    bumps: tuple[Bump, ...] = ()

    def __post_init__(self) -> None:
        if not (self.a0 > 0.0 and math.isfinite(self.a0)):
            raise ValueError("baseline must be positive and finite")
        for bmp in self.bumps:
            if len(bmp.center) != self.N:
                raise ValueError(f"bump centre {bmp.center} is not in R^{self.N}")
        object.__setattr__(self, "bumps", tuple(self.bumps))

    @classmethod
    def constant(cls, N: int, a0: float = 1.0) -> PotentialSpec:
        return cls(N, a0)

    @classmethod
    def gaussian(cls, N: int, a0: float, b: float, center=None, width: float = 1.0) -> PotentialSpec:
        c = (0.0,) * N if center is None else tuple(center)
        return cls(N, a0, (Bump("gaussian", b, c, width),))

    @classmethod
    def ring(cls, N: int, a0: float, b: float, radius: float, width: float = 1.0) -> PotentialSpec:
        return cls(N, a0, (Bump("ring", b, (0.0,) * N, width, radius=radius),))

    @classmethod
    def two_bump(cls, N: int, a0: float, b: float, offset: float, width: float = 1.0) -> PotentialSpec:
        c = np.zeros(N)
        c[0] = offset
        return cls(N, a0, (Bump("gaussian", b, tuple(c), width), Bump("gaussian", b, tuple(-c), width)))

    @property
    def is_constant(self) -> bool:
        return all(b.amplitude == 0.0 for b in self.bumps)

    @property
    def radial(self) -> bool:
        """True when ``k`` depends on ``|x|`` only."""
        return all(b.amplitude == 0.0 or not any(b.center) for b in self.bumps)

    def sup_bound(self) -> float:
        """Analytic upper bound for ``k``."""
        return self.a0 + sum(max(b.amplitude, 0.0) for b in self.bumps)

    def inf_bound(self) -> float:
        """Analytic lower bound for ``k``."""
        return self.a0 + sum(min(b.amplitude, 0.0) for b in self.bumps)

    def to_dict(self) -> dict:
        return {"N": self.N, "a0": self.a0, "bumps": [asdict(b) for b in self.bumps]}

    @classmethod
    def from_dict(cls, d: dict) -> PotentialSpec:
        bumps = tuple(Bump(**{**b, "center": tuple(b["center"])}) for b in d.get("bumps", ()))
        return cls(int(d["N"]), float(d["a0"]), bumps)

    def value(self, x) -> np.ndarray:
        return eval_k(self, x)[0]


def _bump_terms(bmp: Bump, x: np.ndarray, want_hess: bool):
    y = x - np.asarray(bmp.center)
    s2 = bmp.width**2
    r2 = np.sum(y * y, axis=-1)
    N = x.shape[-1]
    eye = np.eye(N)
    b = bmp.amplitude
    if bmp.kind == "gaussian":
        e = np.exp(-r2 / s2)
        val = b * e
        grad = (-2.0 * b / s2) * (e[..., None] * y)
        lap = b * e * (4.0 * r2 / s2**2 - 2.0 * N / s2)
        hess = None
        if want_hess:
            hess = b * e[..., None, None] * (4.0 / s2**2 * y[..., :, None] * y[..., None, :] - 2.0 / s2 * eye)
        return val, grad, hess, lap
    if bmp.kind == "rational":
        q = bmp.power
        u = 1.0 + r2 / s2
        val = b * u**-q
        grad = (-2.0 * b * q / s2) * (u ** (-q - 1.0))[..., None] * y
        c1 = -2.0 * b * q / s2 * u ** (-q - 1.0)
        c2 = 4.0 * b * q * (q + 1.0) / s2**2 * u ** (-q - 2.0)
        lap = N * c1 + c2 * r2
        hess = None
        if want_hess:
            hess = c1[..., None, None] * eye + c2[..., None, None] * y[..., :, None] * y[..., None, :]
        return val, grad, hess, lap
    # ring
    rho = np.sqrt(r2)
    d = rho - bmp.radius
    g = b * np.exp(-d * d / s2)
    g1 = -2.0 * d / s2 * g
    g2 = (4.0 * d * d / s2**2 - 2.0 / s2) * g
    with np.errstate(divide="ignore", invalid="ignore"):
        yhat = np.where(rho[..., None] > 0.0, y / np.where(rho > 0.0, rho, 1.0)[..., None], 0.0)
        g1r = np.where(rho > 0.0, g1 / np.where(rho > 0.0, rho, 1.0), np.where(bmp.radius > 0.0, np.nan, g2))
    grad = g1[..., None] * yhat
    lap = g2 + (N - 1.0) * g1r
    hess = None
    if want_hess:
        yy = yhat[..., :, None] * yhat[..., None, :]
        hess = g2[..., None, None] * yy + g1r[..., None, None] * (eye - yy)
        hess = np.where((rho == 0.0)[..., None, None] & (bmp.radius == 0.0), g2[..., None, None] * eye, hess)
    return g, grad, hess, lap


def eval_k(spec: PotentialSpec, x, hessian: bool = True):
    """``(k, grad k, Hess k, Delta k)`` at points ``x`` of shape ``(..., N)``.

    At the centre of a ring of positive radius ``k`` is not differentiable;
    the gradient is reported as 0 there and the Hessian and Laplacian as NaN.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != spec.N:
        raise ValueError(f"points must have a trailing axis of length {spec.N}")
    lead = x.shape[:-1]
    val = np.full(lead, spec.a0)
    grad = np.zeros(lead + (spec.N,))
    hess = np.zeros(lead + (spec.N, spec.N)) if hessian else None
    lap = np.zeros(lead)
    for bmp in spec.bumps:
        v, g, h, lp = _bump_terms(bmp, x, hessian)
        val = val + v
        grad = grad + g
        lap = lap + lp
        if hessian:
            hess = hess + h
    return val, grad, hess, lap


# ---------------------------------------------------------------------------
# critical points


@dataclass(frozen=True)
class CriticalPoint:
    location: tuple[float, ...]
    value: float
    grad_norm: float
    hessian_eigenvalues: tuple[float, ...]
    laplacian: float
    index: int
    degenerate: bool
    included: bool

    def as_record(self) -> dict:
        return asdict(self) | {"location": list(self.location), "hessian_eigenvalues": list(self.hessian_eigenvalues)}


def _newton_critical(spec: PotentialSpec, x0: np.ndarray, lo, hi, max_iter: int = 80):
    x = x0.copy()
    for _ in range(max_iter):
        _, g, H, _ = eval_k(spec, x)
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(H))):
            return None
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return None
        # trust region of one width unit keeps Newton from jumping across bumps
        scale = max(np.linalg.norm(step), 1e-300)
        if scale > 0.5:
            step *= 0.5 / scale
        x = x - step
        if np.any(x < lo - 1e-9) or np.any(x > hi + 1e-9):
            return None
        if np.linalg.norm(step) <= 1e-13 * (1.0 + np.linalg.norm(x)):
            _, g, _, _ = eval_k(spec, x)
            return x if np.linalg.norm(g) <= 1e-10 else None
    return None


def find_critical_points_k(spec: PotentialSpec, box, seeds_per_axis: int = 9, dedup: float = 1e-6):
    """Multistart Newton on ``grad k`` inside ``box = (lo, hi)``.

    Seeds form a tensor grid plus the bump centres. Returns points sorted by
    location. Raises ``EnlargeBoxError`` when a point lies on the boundary.
    """
    lo = np.asarray(box[0], dtype=float)
    hi = np.asarray(box[1], dtype=float)
    N = spec.N
    axes = [np.linspace(lo[i], hi[i], seeds_per_axis) for i in range(N)]
    seeds = [np.array(p) for p in itertools.product(*axes)]
    seeds += [np.asarray(b.center) for b in spec.bumps]
    found: list[np.ndarray] = []
    for s in seeds:
        x = _newton_critical(spec, s, lo, hi)
        if x is None:
            continue
        if any(np.linalg.norm(x - y) <= dedup for y in found):
            continue
        found.append(x)
    found.sort(key=lambda v: tuple(np.round(v, 9)))
    out = []
    span = np.max(hi - lo)
    for x in found:
        if np.any(np.abs(x - lo) < 1e-6 * span) or np.any(np.abs(x - hi) < 1e-6 * span):
            raise EnlargeBoxError(f"critical point {x} lies on the search-box boundary")
        v, g, H, lap = eval_k(spec, x)
        ev = np.linalg.eigvalsh(0.5 * (H + H.T))
        det = float(np.prod(ev))
        degenerate = abs(det) < 1e-10 or abs(lap) < 1e-12
        idx = 0 if degenerate else int(np.sign(det))
        out.append(
            CriticalPoint(
                tuple(float(t) for t in x),
                float(v),
                float(np.linalg.norm(g)),
                tuple(float(e) for e in ev),
                float(lap),
                idx,
                degenerate,
                bool(lap < 0.0),
            )
        )
    return out


# ---------------------------------------------------------------------------
# the report


@dataclass
class AssumptionReport:
    verdicts: dict[str, Verdict]
    evidence: dict[str, dict] = field(default_factory=dict)

    @property
    def all_pass(self) -> bool:
        return all(v == "pass" for v in self.verdicts.values())

    def as_record(self) -> dict:
        return {"verdicts": dict(self.verdicts), "evidence": self.evidence}


def _dense_samples(spec: PotentialSpec, lo, hi, per_axis: int) -> np.ndarray:
    axes = [np.linspace(lo[i], hi[i], per_axis) for i in range(spec.N)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.N)


def _sphere_points(N: int, count: int, seed: int = 7) -> np.ndarray:
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(count, N))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    axes = np.concatenate([np.eye(N), -np.eye(N)])
    return np.concatenate([axes, d])


def _bump_mass(bmp: Bump, N: int) -> float:
    """``int bump`` over R^N (closed form except for rings)."""
    s = bmp.width
    if bmp.kind == "gaussian":
        return bmp.amplitude * (math.sqrt(math.pi) * s) ** N
    if bmp.kind == "rational":
        q = bmp.power
        return bmp.amplitude * s**N * math.pi ** (N / 2.0) * gamma(q - N / 2.0) / gamma(q)
    t, w = np.polynomial.legendre.leggauss(200)
    a = max(bmp.radius - 12.0 * s, 0.0)
    b = bmp.radius + 12.0 * s
    r = 0.5 * (b - a) * (t + 1.0) + a
    prof = np.exp(-((r - bmp.radius) ** 2) / s**2) * r ** (N - 1)
    return bmp.amplitude * sphere_area(N) * 0.5 * (b - a) * float(w @ prof)


def _tail_radius(spec: PotentialSpec) -> float | None:
    """Radius beyond which ``x . grad k < 0`` is guaranteed analytically, if known."""
    if any(b.amplitude < 0.0 for b in spec.bumps):
        return None
    r = 0.0
    for b in spec.bumps:
        if b.amplitude == 0.0:
            continue
        c = float(np.linalg.norm(b.center))
        # for a positive radial bump about c, x . grad < 0 once x.(x-c) > 0 (plus the ring radius)
        r = max(r, c + (b.radius if b.kind == "ring" else 0.0))
    return r


def _x_grad_integral_numeric(spec: PotentialSpec, n: int = 96, degree: int = 15) -> float:
    from .grid import build_full_grid

    G = build_full_grid(n, degree, spec.N)
    x = G.points
    _, g, _, _ = eval_k(spec, x, hessian=False)
    xg = np.sum(x * g, axis=-1)
    return float(np.sum(G.weights * xg))


def check_assumptions(spec: PotentialSpec, box=None, tail_radii=None, samples_per_axis: int | None = None) -> AssumptionReport:
    """Verdicts ``k0`` to ``k4`` for ``spec`` inside ``box``, with analytic tails."""
    N = spec.N
    if box is None:
        reach = max([np.max(np.abs(b.center)) + b.radius + 3.0 * b.width for b in spec.bumps] + [3.0])
        box = (-reach * np.ones(N), reach * np.ones(N))
    lo, hi = np.asarray(box[0], float), np.asarray(box[1], float)
    for b in spec.bumps:
        if np.any(np.asarray(b.center) <= lo) or np.any(np.asarray(b.center) >= hi):
            raise EnlargeBoxError(f"bump centre {b.center} is not inside the search box")
    verdicts: dict[str, Verdict] = {}
    ev: dict[str, dict] = {}

    # k0
    per_axis = samples_per_axis or (41 if N <= 3 else 15)
    pts = _dense_samples(spec, lo, hi, per_axis)
    vals = spec.value(pts)
    inf_est = float(min(vals.min(), spec.a0))
    sup_est = float(max(vals.max(), spec.a0))
    verdicts["k0"] = "pass" if inf_est > 0.0 and spec.inf_bound() > 0.0 else ("fail" if inf_est <= 0.0 else "inconclusive")
    ev["k0"] = {
        "inf_sampled": inf_est,
        "sup_sampled": sup_est,
        "tail_limit": spec.a0,
        "inf_bound": spec.inf_bound(),
        "sup_bound": spec.sup_bound(),
    }

    # k1
    kinks = [list(b.center) for b in spec.bumps if not b.smooth and b.amplitude != 0.0]
    verdicts["k1"] = "fail" if kinks else "pass"
    ev["k1"] = {"basis": "closed-form smooth families", "conical_points": kinks}

    # k2
    target = (-1) ** N
    if spec.is_constant:
        verdicts["k2"] = "fail"
        ev["k2"] = {"reason": "k is constant: every point is critical", "critical_points": [], "index_sum": None, "target": target}
    elif any(b.kind == "ring" and b.radius > 0.0 and b.amplitude != 0.0 for b in spec.bumps):
        verdicts["k2"] = "fail"
        ev["k2"] = {"reason": "a ring bump has a whole sphere of critical points", "critical_points": [], "index_sum": None, "target": target}
    else:
        cps = find_critical_points_k(spec, (lo, hi))
        degenerate = [c for c in cps if c.degenerate]
        total = sum(c.index for c in cps if c.included and not c.degenerate)
        if degenerate:
            verdicts["k2"] = "inconclusive"
        else:
            verdicts["k2"] = "pass" if total != target else "fail"
        ev["k2"] = {
            "critical_points": [c.as_record() for c in cps],
            "index_sum": total,
            "target": target,
            "degenerate_count": len(degenerate),
        }

    # k3
    dirs = _sphere_points(N, 400)
    radii = np.asarray(tail_radii, float) if tail_radii is not None else np.geomspace(0.25, 4.0 * float(np.max(np.abs(np.concatenate([lo, hi])))), 48)
    worst = []
    for R in radii:
        x = R * dirs
        _, g, _, _ = eval_k(spec, x, hessian=False)
        worst.append(float(np.max(np.sum(x * g, axis=-1))))
    worst = np.asarray(worst)
    neg = worst < -1e-12
    rho_num = None
    for i in range(len(radii)):
        if np.all(neg[i:]):
            rho_num = float(radii[i])
            break
    rho_an = _tail_radius(spec)
    if spec.is_constant:
        verdicts["k3"] = "fail"
    elif rho_an is not None:
        # past the analytic radius the sign is exact even where sampled values underflow
        ok_before = np.all(neg[(radii > rho_an) & (np.abs(worst) > 1e-12)]) if np.any(radii > rho_an) else True
        verdicts["k3"] = "pass" if ok_before else "fail"
    else:
        verdicts["k3"] = "pass" if rho_num is not None and rho_num < radii[-1] else "inconclusive"
    ev["k3"] = {"rho_sampled": rho_num, "rho_analytic": rho_an, "max_radius": float(radii[-1])}

    # k4: int x.grad k = -N int (k - a0)
    analytic = -N * sum(_bump_mass(b, N) for b in spec.bumps)
    numeric = _x_grad_integral_numeric(spec)
    verdicts["k4"] = "pass" if analytic < 0.0 else "fail"
    ev["k4"] = {"integral_analytic": analytic, "integral_quadrature": numeric, "integrable": True}
    return AssumptionReport(verdicts, ev)
