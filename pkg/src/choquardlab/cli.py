"""Command-line entry point.

Every subcommand reads a flat ``key = value`` config, writes JSON lines
(sorted keys, no wall-clock data) under ``--out`` and exits with

* 0: everything passed,
* 1: an identity, hypothesis or order check failed (also: degree undefined),
* 2: a solver failed for at least one task,
* 3: the config or the command line is invalid.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bubble import (
    BubbleParams,
    ProblemParams,
    bubble_value,
    gamma,
    h_mode,
    htilde_mode,
    mode_pairing,
    sphere_area,
    z_mode,
    zbar_mode,
)
from .grid import (
    GridFunction,
    build_full_grid,
    build_radial_grid,
    minus_laplacian,
    weighted_sup_norm,
)
from .kcheck import Bump, PotentialSpec, check_assumptions
from .linop import build_system, closed_field, mode_fields
from .nonlinear import ContractionError, contraction_solve, phi_parameter_derivative
from .reduction import (
    DegreeError,
    SolveFailure,
    _point,
    degree,
    degree_mu_line,
    energy,
    expansion_remainder,
    find_critical_points,
    find_mu_critical,
    grad_upsilon,
    j0_bar,
    scan_upsilon,
    solve_full,
    upsilon,
)
from .riesz import newton_potential, riesz_radial

EXIT_OK, EXIT_CHECK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def _floats(text: str, count: int | None = None) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None
    if count is not None and len(vals) != count:
        raise ConfigError(f"expected {count} numbers, got {text!r}")
    if not all(math.isfinite(v) for v in vals):
        raise ConfigError(f"non-finite number in {text!r}")
    return vals


def _int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}") from None


def _float(text: str) -> float:
    return _floats(text, 1)[0]


def _choice(*opts):
    def parse(text: str) -> str:
        if text not in opts:
            raise ConfigError(f"expected one of {', '.join(opts)}, got {text!r}")
        return text

    return parse


def _pairs(text: str) -> tuple[tuple[int, float], ...]:
    out = []
    for item in text.replace(" ", "").split(","):
        n, _, lam = item.partition(":")
        if not lam:
            raise ConfigError(f"expected N:lambda pairs, got {item!r}")
        out.append((_int(n), _float(lam)))
    return tuple(out)


# key -> (parser, default text)
KEYS: dict[str, tuple] = {
    "problem.N": (_int, "3"),
    "problem.lambda": (_float, "1"),
    "grid.n": (_int, "256"),
    "grid.map": (_choice("rational"), "rational"),
    "grid.scale": (_float, "1"),
    "sphere.degree": (_int, "7"),
    "k.preset": (_choice("ring", "two_bump", "gaussian", "constant", "custom"), "ring"),
    "k.a0": (_float, "1"),
    "k.b": (_float, "1"),
    "k.radius": (_float, "2"),
    "k.width": (_float, "1"),
    "k.offset": (_float, "2"),
    "eps.list": (_floats, "1e-3,2e-3,5e-3,1e-2"),
    "box.mu": (lambda t: _floats(t, 2), "0.25,4.5"),
    "box.xi": (lambda t: _floats(t, 2), "-3,3"),
    "box.radial": (_choice("auto", "true", "false"), "auto"),
    "tol.contraction": (_float, "1e-13"),
    "tol.c": (_float, "1e-10"),
    "solver.eps_max": (_float, "0.1"),
    "solver.max_iter": (_int, "30"),
    "search.starts": (_int, "16"),
    "search.per_axis": (_int, "5"),
    "scan.per_axis": (_int, "9"),
    "scan.mu_samples": (_int, "64"),
    "expansion.mu": (_float, "1"),
    "identities.pairs": (_pairs, ""),
    "debug.alpha_scale": (_float, "1"),
}
BUMP_PREFIX = "k.bump."


def _parse_bump(name: str, text: str, N: int) -> Bump:
    kind, *rest = text.split()
    opts = {}
    for item in rest:
        key, eq, val = item.partition("=")
        if not eq or key not in ("amplitude", "center", "width", "power", "radius"):
            raise ConfigError(f"bump {name}: bad field {item!r}")
        opts[key] = val
    if "amplitude" not in opts:
        raise ConfigError(f"bump {name}: amplitude is required")
    center = _floats(opts["center"], N) if "center" in opts else (0.0,) * N
    try:
        return Bump(
            kind,
            _float(opts["amplitude"]),
            center,
            _float(opts.get("width", "1")),
            _float(opts.get("power", "0")),
            _float(opts.get("radius", "0")),
        )
    except ValueError as exc:
        raise ConfigError(f"bump {name}: {exc}") from None


@dataclass
class RunConfig:
    values: dict
    bumps: dict = field(default_factory=dict)
    text: str = ""

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def params(self) -> ProblemParams:
        return ProblemParams(self["problem.N"], self["problem.lambda"])

    def grid(self):
        return build_radial_grid(self["grid.n"], self["grid.map"], self["grid.scale"])

    def potential(self) -> PotentialSpec:
        N, a0 = self["problem.N"], self["k.a0"]
        preset = self["k.preset"]
        if preset == "custom":
            return PotentialSpec(N, a0, tuple(self.bumps[n] for n in sorted(self.bumps)))
        if preset == "constant":
            return PotentialSpec.constant(N, a0)
        if preset == "gaussian":
            return PotentialSpec.gaussian(N, a0, self["k.b"], width=self["k.width"])
        if preset == "two_bump":
            return PotentialSpec.two_bump(N, a0, self["k.b"], self["k.offset"], self["k.width"])
        return PotentialSpec.ring(N, a0, self["k.b"], self["k.radius"], self["k.width"])

    def box(self) -> list[tuple[float, float]]:
        return [self["box.mu"]] + [self["box.xi"]] * self["problem.N"]

    def radial_mode(self, k: PotentialSpec) -> bool:
        flag = self["box.radial"]
        if flag == "true" and not k.radial:
            raise ConfigError("box.radial = true needs a radial potential")
        return k.radial if flag == "auto" else flag == "true"

    def as_record(self) -> dict:
        rec = {key: (list(v) if isinstance(v, tuple) else v) for key, v in sorted(self.values.items())}
        rec["k"] = self.potential().to_dict()
        return rec


def parse_config(text: str) -> RunConfig:
    raw: dict[str, str] = {}
    bump_text: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not eq or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key.startswith(BUMP_PREFIX) and len(key) > len(BUMP_PREFIX):
            bump_text[key[len(BUMP_PREFIX):]] = val
        elif key in KEYS:
            raw[key] = val
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    values = {}
    for key, (parse, default) in KEYS.items():
        text_val = raw.get(key, default)
        values[key] = parse(text_val) if text_val != "" else ()
    N = values["problem.N"]
    if N < 3:
        raise ConfigError("problem.N must be at least 3")
    if not 0.0 < values["problem.lambda"] < N:
        raise ConfigError("problem.lambda must lie in (0, N)")
    if values["grid.n"] < 16:
        raise ConfigError("grid.n must be at least 16")
    if values["sphere.degree"] < 1:
        raise ConfigError("sphere.degree must be positive")
    if any(e < 0.0 for e in values["eps.list"]):
        raise ConfigError("eps.list entries must be non-negative")
    for key in ("box.mu", "box.xi"):
        lo, hi = values[key]
        if not lo < hi:
            raise ConfigError(f"{key} needs lo < hi")
    if values["box.mu"][0] <= 0.0:
        raise ConfigError("box.mu must be positive")
    for key in ("search.starts", "search.per_axis", "scan.per_axis", "scan.mu_samples", "solver.max_iter"):
        if values[key] < 1:
            raise ConfigError(f"{key} must be positive")
    if values["expansion.mu"] <= 0.0:
        raise ConfigError("expansion.mu must be positive")
    bumps = {name: _parse_bump(name, t, N) for name, t in bump_text.items()}
    if bumps and values["k.preset"] != "custom":
        raise ConfigError("k.bump.* entries need k.preset = custom")
    cfg = RunConfig(values, bumps, text)
    try:
        cfg.potential()
    except ValueError as exc:
        raise ConfigError(f"potential: {exc}") from None
    return cfg


def load_config(path) -> RunConfig:
    if path is None:
        return parse_config("")
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)


# ---------------------------------------------------------------------------
# output helpers


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def _dumps(rec: dict) -> str:
    return json.dumps(_plain(rec), sort_keys=True)


def write_jsonl(path: Path, records: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(_dumps(rec) + "\n")


def slope_fit(x, y) -> float | None:
    """Least-squares slope of ``log y`` against ``log x``; None without two positive points."""
    pts = [(a, b) for a, b in zip(x, y) if a > 0.0 and b is not None and b > 0.0]
    if len(pts) < 2:
        return None
    lx = np.log([a for a, _ in pts])
    ly = np.log([b for _, b in pts])
    return float(np.polyfit(lx, ly, 1)[0])


def _slope_record(anchor: str, x, y, target: float, tol: float, at_least: bool = False) -> dict:
    s = slope_fit(x, y)
    if s is None:
        ok = None
    elif at_least:
        ok = s >= target
    else:
        ok = abs(s - target) <= tol
    return {"anchor": anchor, "slope": s, "target": target, "tol": tol, "at_least": at_least, "pass": ok}


# ---------------------------------------------------------------------------
# verify-identities


def _beta(a: float, b: float) -> float:
    return gamma(a) * gamma(b) / gamma(a + b)


def _half_line_moment(a: float, b: float) -> float:
    """``int_0^inf r^a (1+r^2)^-b dr``."""
    return 0.5 * _beta((a + 1.0) / 2.0, b - (a + 1.0) / 2.0)


def pairing_beta(N: int, j: int) -> float:
    """``int Z_j H_j`` from Beta integrals."""
    area = sphere_area(N)
    b = N + 2.0
    if j == 0:
        rad = sum(c * _half_line_moment(N - 1.0 + e, b) for c, e in ((1.0, 4.0), (-2.0, 2.0), (1.0, 0.0)))
        return 0.25 * (N - 2.0) ** 2 * area * rad
    return (N - 2.0) ** 2 / N * area * _half_line_moment(N + 1.0, b)


def _rel(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def _check(anchor: str, N: int, lam: float, err: float, tol: float, **extra) -> dict:
    return {"anchor": anchor, "N": N, "lambda": lam, "error": err, "tol": tol, "pass": bool(err <= tol), **extra}


def identity_suite(N: int, lam: float, cfg: RunConfig, cache_dir=None) -> list[dict]:
    P = ProblemParams(N, lam)
    grid = cfg.grid()
    recs = []
    flag = {"singular_regime": P.singular_regime, "out_of_theorem": P.out_of_theorem}

    alpha = P.alpha * cfg["debug.alpha_scale"]
    recs.append(_check("alpha_A", N, lam, abs(alpha * P.A / (N * (N - 2.0)) - 1.0), 1e-12, **flag))

    origin = BubbleParams.origin(N)
    x_axis = np.zeros((grid.n, N))
    x_axis[:, 0] = grid.nodes
    u = bubble_value(P, origin, x_axis)
    up = GridFunction(grid, u**P.p, (N - 2.0) * P.p)
    got = riesz_radial(up, lam, N, cache_dir=cache_dir).values
    want = P.A * u ** (lam / (N - 2.0))
    tol = 1e-4 if P.singular_regime else 1e-6
    recs.append(_check("riesz_bubble", N, lam, float(np.max(np.abs(got / want - 1.0))), tol, **flag))

    for j in (0, 1):
        mf = mode_fields(P, grid, origin, j)
        lap = minus_laplacian(mf.Z, N).values
        recs.append(_check("mode_laplacian", N, lam, _rel(lap, N * (N + 2.0) * mf.H.values), 1e-5, mode=j, method="spectral"))

    rng = np.random.default_rng(20240601)
    pts = rng.normal(size=(100, N)) * rng.uniform(0.1, 3.0, size=(100, 1))
    h = 1e-3
    for j in range(N + 1):
        lap = sum(
            (z_mode(P, j, None, pts + h * e) - 2.0 * z_mode(P, j, None, pts) + z_mode(P, j, None, pts - h * e)) / h**2
            for e in np.eye(N)
        )
        recs.append(_check("mode_laplacian", N, lam, _rel(-lap, N * (N + 2.0) * h_mode(P, j, None, pts)), 1e-5, mode=j, method="finite_difference"))

    fg = build_full_grid(min(grid.n, 160), max(cfg["sphere.degree"], 6), N)
    w, x = fg.weights, fg.points
    b = BubbleParams(0.8, (0.0,) * N)
    Z = [z_mode(P, j, b, x) for j in range(N + 1)]
    H = [h_mode(P, j, b, x) for j in range(N + 1)]
    diag = [float(np.sum(w * Z[j] * H[j])) for j in range(N + 1)]
    for j in range(N + 1):
        beta = pairing_beta(N, min(j, 1))
        recs.append(_check("mode_pairing", N, lam, abs(diag[j] / beta - 1.0), 1e-8, mode=j, method="full_grid"))
        recs.append(_check("mode_pairing", N, lam, abs(mode_pairing(P, j) / beta - 1.0), 1e-8, mode=j, method="closed_form"))
    cross = max(abs(float(np.sum(w * Z[j] * H[m]))) / abs(diag[j]) for j in range(N + 1) for m in range(N + 1) if j != m)
    recs.append(_check("mode_orthogonality", N, lam, cross, 1e-10))

    H0 = closed_field(P, grid, lambda y: h_mode(P, 0, None, y), N + 2.0)
    Z0 = closed_field(P, grid, lambda y: z_mode(P, 0, None, y), N - 2.0)
    pot = newton_potential(H0.like(N * (N + 2.0) * H0.values), N, cache_dir=cache_dir)
    recs.append(_check("newton_mode", N, lam, _rel(pot.values, Z0.values), 1e-5))

    worst = 0.0
    for m in range(N + 1):
        zm = z_mode(P, m, b, x)
        hm = h_mode(P, m, b, x)
        scale = float(np.sum(w * np.abs(hm * zm)))
        for j in range(N + 1):
            lhs = float(np.sum(w * htilde_mode(P, m, j, x, b) * zm))
            rhs = -float(np.sum(w * hm * zbar_mode(P, m, j, x, b)))
            worst = max(worst, abs(lhs - rhs) / scale)
    recs.append(_check("htilde_zbar", N, lam, worst, 1e-6))

    hh = 1e-4
    fd_worst = 0.0
    for j in range(N + 1):
        e = np.zeros(N + 1)
        e[j] = hh
        v = origin.as_vector()
        fd = (bubble_value(P, BubbleParams.from_vector(v + e), pts) - bubble_value(P, BubbleParams.from_vector(v - e), pts)) / (2 * hh)
        fd_worst = max(fd_worst, float(np.max(np.abs(fd - z_mode(P, j, origin, pts)))))
    recs.append(_check("z_derivative", N, lam, fd_worst, 1e-6))

    xs = np.linspace(0.05, 29.95, 600)
    gerr = max(abs(gamma(float(t)) / math.gamma(float(t)) - 1.0) for t in xs)
    recs.append(_check("gamma_lanczos", N, lam, gerr, 1e-13))
    return recs


def cmd_verify_identities(cfg: RunConfig, args) -> int:
    pairs = cfg["identities.pairs"] or ((cfg["problem.N"], cfg["problem.lambda"]),)
    recs = []
    for N, lam in pairs:
        try:
            recs.extend(identity_suite(N, lam, cfg, args.cache))
        except ValueError as exc:
            raise ConfigError(f"pair ({N}, {lam}): {exc}") from None
    ok = all(r["pass"] for r in recs)
    recs.append({"anchor": "identities_summary", "pass": ok, "failed": [r["anchor"] for r in recs if not r["pass"]]})
    write_jsonl(args.out / "identities.jsonl", recs)
    _say(args, f"identities: {sum(r['pass'] for r in recs[:-1])}/{len(recs) - 1} pass")
    return EXIT_OK if ok else EXIT_CHECK


# ---------------------------------------------------------------------------
# check-k


def cmd_check_k(cfg: RunConfig, args) -> int:
    rep = check_assumptions(cfg.potential())
    rec = {"anchor": "k_hypotheses", "k": cfg.potential().to_dict(), **rep.as_record()}
    write_jsonl(args.out / "check_k.jsonl", [rec])
    _say(args, "hypotheses: " + ("all pass" if rep.all_pass else "failure"))
    return EXIT_OK if rep.all_pass else EXIT_CHECK


# ---------------------------------------------------------------------------
# upsilon-scan


def _scan_rows_radial(P, k, cfg):
    lo, hi = cfg["box.mu"]
    xi = (0.0,) * P.N
    rows = []
    for mu in np.geomspace(lo, hi, cfg["scan.mu_samples"]):
        b = BubbleParams(float(mu), xi)
        rows.append({"b": b, "upsilon": upsilon(P, b, k), "grad": grad_upsilon(P, b, k)})
    return rows


def _write_scan(path: Path, rows, N: int) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    head = ["mu"] + [f"xi{i + 1}" for i in range(N)] + ["upsilon"] + [f"grad{i}" for i in range(N + 1)]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(head)
        for r in rows:
            b = r["b"]
            wr.writerow([repr(float(v)) for v in (b.mu, *b.xi, r["upsilon"], *r["grad"])])


def cmd_upsilon_scan(cfg: RunConfig, args) -> int:
    P, k = cfg.params, cfg.potential()
    radial = cfg.radial_mode(k)
    rows = _scan_rows_radial(P, k, cfg) if radial else scan_upsilon(P, k, cfg.box(), cfg["scan.per_axis"])
    _write_scan(args.out / "upsilon_scan.csv", rows, P.N)
    recs = []
    code = EXIT_OK
    lo, hi = cfg["box.mu"]
    mode = "mu_line" if radial else "box"
    zeros = []
    try:
        if k.is_constant:
            raise DegreeError("constant k: grad Upsilon vanishes identically")
        if radial:
            zeros = [z for z in find_mu_critical(P, k, (lo, hi), samples=400) if lo < z.b.mu < hi]
            res = degree_mu_line(P, k, lo, hi)
            big = degree_mu_line(P, k, lo / 1.5, hi * 1.5)
            deg = {"anchor": "degree", "mode": mode, **res.as_record(), "enlarged_degree": big.degree, "box": [lo, hi]}
        else:
            res = degree(P, k, cfg.box(), cfg["search.starts"], args.seed, cfg["search.per_axis"])
            zeros = res.zeros
            deg = {"anchor": "degree", "mode": mode, **res.as_record(), "box": cfg.box()}
        _say(args, f"degree = {res.degree} ({len(zeros)} critical points)")
    except DegreeError as exc:
        if not radial and not k.is_constant:
            zeros = find_critical_points(P, k, cfg.box(), cfg["search.starts"], args.seed, per_axis=cfg["search.per_axis"])
        deg = {"anchor": "degree", "mode": mode, "degree": None, "error": str(exc)}
        _say(args, f"degree undefined: {exc}")
        code = EXIT_CHECK
    recs = [{"anchor": "upsilon_critical", **z.as_record()} for z in zeros] + [deg]
    write_jsonl(args.out / "upsilon_critical.jsonl", recs)
    return code


# ---------------------------------------------------------------------------
# solve and expansion-study (parallel over eps)


def _seed_point(P, k, cfg):
    if not cfg.radial_mode(k):
        raise ConfigError("solve needs a radial potential (set box.radial = auto or true)")
    lo, hi = cfg["box.mu"]
    zeros = [z for z in find_mu_critical(P, k, (lo, hi), samples=400) if z.classification != "degenerate"]
    return zeros[0] if zeros else None


def _solve_task(task):
    cfg_text, eps, seed_mu, cache, out = task
    cfg = parse_config(cfg_text)
    P, k, grid = cfg.params, cfg.potential(), cfg.grid()
    xi = (0.0,) * P.N
    rec = {"anchor": "solve_eps", "eps": eps, "seed_mu": seed_mu}
    if eps == 0.0:
        b = BubbleParams(seed_mu, xi)
        rec.update(status="ok", mu=seed_mu, xi=list(xi), c=[0.0] * (P.N + 1), c_norm=0.0, phi_norm=0.0,
                   phi_over_U_inf=0.0, j_eps=j0_bar(P), upsilon=upsilon(P, b, k), exact_bubble=True)
        return rec
    seed = _point(P, BubbleParams(seed_mu, xi), k, radial=True)
    try:
        if eps > cfg["solver.eps_max"]:
            raise SolveFailure(f"eps = {eps} exceeds solver.eps_max = {cfg['solver.eps_max']}")
        b, sol, rep = solve_full(P, eps, k, seed, grid, tol=cfg["tol.c"], max_iter=cfg["solver.max_iter"],
                                 cache_dir=cache, contraction_tol=cfg["tol.contraction"], eps_max=cfg["solver.eps_max"])
    except (SolveFailure, ContractionError) as exc:
        rec.update(status="failed", error=str(exc))
        return rec
    hmu = 1e-4 * b.mu

    def j_at(mu):
        sys_mu = build_system(P, grid, BubbleParams(mu, xi), cache_dir=cache)
        s = contraction_solve(sys_mu, eps, k, tol=cfg["tol.contraction"], eps_max=cfg["solver.eps_max"])
        return energy(s)

    pj = (j_at(b.mu + hmu) - j_at(b.mu - hmu)) / (2.0 * hmu)
    ups = upsilon(P, b, k)
    dmu_ups = float(grad_upsilon(P, b, k)[0])
    rec.update(
        status="ok",
        mu=b.mu,
        xi=list(b.xi),
        c=sol.c,
        c_norm=rep["c_norm"],
        c_jacobian=rep["c_jacobian"],
        newton=rep["newton"],
        phi_norm=sol.phi_norm,
        phi_over_U_inf=rep["phi_over_U_inf"],
        residual=rep["residual"],
        j_eps=energy(sol),
        upsilon=ups,
        expand_j_remainder=expansion_remainder(sol),
        expand_pjmu_remainder=abs(pj + eps * dmu_ups),
        iterations=sol.iterations,
        step_ratios=sol.step_ratios(),
        grid_hash=grid.hash.hex(),
    )
    if out is not None:
        name = f"phi_{_eps_tag(eps)}.brfd"
        sol.dump_field(Path(out) / name)
        rec["field_dump"] = name
    return rec


def _expansion_task(task):
    cfg_text, eps, cache = task
    cfg = parse_config(cfg_text)
    P, k, grid = cfg.params, cfg.potential(), cfg.grid()
    mu = cfg["expansion.mu"]
    xi = (0.0,) * P.N
    b = BubbleParams(mu, xi)
    rec = {"anchor": "expansion_eps", "eps": eps, "mu": mu}

    def build(m):
        return build_system(P, grid, BubbleParams(m, xi), cache_dir=cache)

    kw = {"tol": cfg["tol.contraction"], "eps_max": cfg["solver.eps_max"]}
    try:
        sol = contraction_solve(build(mu), eps, k, **kw)
        h = 1e-4 * mu
        sp = contraction_solve(build(mu + h), eps, k, **kw)
        sm = contraction_solve(build(mu - h), eps, k, **kw)
        dphi = phi_parameter_derivative(build, eps, k, mu, **kw) if eps > 0.0 else None
    except ContractionError as exc:
        rec.update(status="failed", error=str(exc))
        return rec
    pj = (energy(sp) - energy(sm)) / (2.0 * h)
    rec.update(
        status="ok",
        j_eps=energy(sol),
        j0_bar=j0_bar(P),
        upsilon=upsilon(P, b, k),
        expand_j_remainder=expansion_remainder(sol),
        expand_j_direct=abs(energy(sol) - j0_bar(P) + eps * upsilon(P, b, k)),
        expand_pjmu_remainder=abs(pj + eps * float(grad_upsilon(P, b, k)[0])),
        phi_norm=sol.phi_norm,
        dphi_dmu_norm=None if dphi is None else weighted_sup_norm(dphi, b, "X"),
        step_ratios=sol.step_ratios(),
        omega_minus_half_U_rel_min=float(np.min((sol.omega - 0.5 * sol.system.modes.U) / sol.system.modes.U)),
    )
    return rec


def _eps_tag(eps: float) -> str:
    return f"{eps:.6e}".replace("+", "").replace(".", "p")


def _run_pool(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def cmd_solve(cfg: RunConfig, args) -> int:
    P, k = cfg.params, cfg.potential()
    seed = _seed_point(P, k, cfg)
    if seed is None:
        write_jsonl(args.out / "solve.jsonl", [{"anchor": "solve_seed", "status": "failed", "error": "no critical point of Upsilon in box.mu"}])
        _say(args, "no seed critical point")
        return EXIT_SOLVER
    eps_list = sorted(cfg["eps.list"])
    cache = None if args.cache is None else str(args.cache)
    tasks = [(cfg.text, e, seed.b.mu, cache, str(args.out)) for e in eps_list]
    args.out.mkdir(parents=True, exist_ok=True)
    recs = _run_pool(_solve_task, tasks, args.jobs)
    good = [r for r in recs if r["status"] == "ok" and r["eps"] > 0.0]
    eps = [r["eps"] for r in good]
    summary = [
        _slope_record("phi_bd_slope", eps, [r["phi_norm"] for r in good], 1.0, 0.05),
        _slope_record("expand_j_slope", eps, [r["expand_j_remainder"] for r in good], 2.0, 0.15),
        _slope_record("expand_pjmu_slope", eps, [r["expand_pjmu_remainder"] for r in good], 2.0, 0.2),
        _slope_record("mu_shift_slope", eps, [abs(r["mu"] - seed.b.mu) for r in good], 0.8, 0.0, at_least=True),
        _slope_record("phi_over_U_slope", eps, [r["phi_over_U_inf"] for r in good], 1.0, 0.1),
    ]
    failed = [r["eps"] for r in recs if r["status"] != "ok"]
    head = {"anchor": "solve_seed", "status": "ok", "config": cfg.as_record(), **seed.as_record()}
    tail = {"anchor": "solve_summary", "failed_eps": failed, "slopes": summary}
    write_jsonl(args.out / "solve.jsonl", [head, *recs, tail])
    _say(args, f"solve: {len(recs) - len(failed)}/{len(recs)} eps converged")
    if failed:
        return EXIT_SOLVER
    return EXIT_CHECK if any(s["pass"] is False for s in summary) else EXIT_OK


def cmd_expansion_study(cfg: RunConfig, args) -> int:
    P, k = cfg.params, cfg.potential()
    if not k.radial:
        raise ConfigError("expansion-study runs on the radial line and needs a radial potential")
    eps_list = sorted(cfg["eps.list"])
    cache = None if args.cache is None else str(args.cache)
    recs = _run_pool(_expansion_task, [(cfg.text, e, cache) for e in eps_list], args.jobs)
    good = [r for r in recs if r["status"] == "ok" and r["eps"] > 0.0]
    eps = [r["eps"] for r in good]
    summary = [
        _slope_record("phi_bd_slope", eps, [r["phi_norm"] for r in good], 1.0, 0.05),
        _slope_record("pd_phi_bd_slope", eps, [r["dphi_dmu_norm"] for r in good], 1.0, 0.1),
        _slope_record("expand_j_slope", eps, [r["expand_j_remainder"] for r in good], 2.0, 0.15),
        _slope_record("expand_pjmu_slope", eps, [r["expand_pjmu_remainder"] for r in good], 2.0, 0.2),
    ]
    failed = [r["eps"] for r in recs if r["status"] != "ok"]
    tail = {"anchor": "expansion_summary", "failed_eps": failed, "slopes": summary, "j0_bar": j0_bar(P)}
    write_jsonl(args.out / "expansion.jsonl", [*recs, tail])
    _say(args, f"expansion: {len(recs) - len(failed)}/{len(recs)} eps solved")
    if failed:
        return EXIT_SOLVER
    return EXIT_CHECK if any(s["pass"] is False for s in summary) else EXIT_OK


# ---------------------------------------------------------------------------
# entry point

COMMANDS = {
    "verify-identities": cmd_verify_identities,
    "check-k": cmd_check_k,
    "upsilon-scan": cmd_upsilon_scan,
    "solve": cmd_solve,
    "expansion-study": cmd_expansion_study,
}


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="choquardlab", description="Bubble-perturbation solver and checks for the critical Choquard equation.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, default=None, help="flat key = value config file")
    ap.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    ap.add_argument("--cache", type=Path, default=None, help="Riesz kernel cache directory")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for eps sweeps")
    ap.add_argument("--seed", type=int, default=0, help="multistart RNG seed")
    ap.add_argument("--quiet", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("--jobs must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
