"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the lines are repeated in the
terminal summary) or directly with ``python3 tests/test_acceptance.py``.
"""

import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent))

import oracles  # noqa: E402
from choquardlab.bubble import (  # noqa: E402
    BubbleParams,
    ProblemParams,
    bubble_value,
    h_mode,
    htilde_mode,
    z_mode,
    zbar_mode,
)
from choquardlab.cli import pairing_beta  # noqa: E402
from choquardlab.grid import (  # noqa: E402
    GridFunction,
    build_full_grid,
    build_radial_grid,
    inner_radial,
    weighted_sup_norm,
    weighted_sup_norm_points,
)
from choquardlab.kcheck import PotentialSpec, check_assumptions  # noqa: E402
from choquardlab.linop import (  # noqa: E402
    ProjectedSystem,
    apply_L,
    build_system,
    kernel_diagnostic,
    scaling_transport,
    solve_projected,
    solver_derivative,
)
from choquardlab.nonlinear import contraction_solve, phi_parameter_derivative  # noqa: E402
from choquardlab.reduction import (  # noqa: E402
    degree_mu_line,
    energy,
    expansion_remainder,
    find_mu_critical,
    grad_upsilon,
    j0_bar,
    solve_full,
)
from choquardlab.riesz import clear_kernel_memo, riesz_radial, time_assembly  # noqa: E402

PAIRS = [(3, 1.0), (3, 2.0), (4, 2.0), (5, 3.0), (5, 4.0)]
EPS_SWEEP = (1e-3, 3e-3, 1e-2, 3e-2)
EPS_PIPELINE = (1e-3, 2e-3, 5e-3, 1e-2)
MUS = (0.5, 1.0, 2.0)

RESULTS: dict[int, str] = {}
P3 = ProblemParams(3, 1.0)
RING = PotentialSpec.ring(3, 1.0, 1.0, 2.0)


def _report(n: int, checks: dict[str, tuple[float, bool]]) -> None:
    ok = all(passed for _, passed in checks.values())
    detail = "; ".join(f"{k}={v:.3g}{'' if p else ' (!)'}" for k, (v, p) in checks.items())
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def _le(value, bound):
    return float(value), bool(value <= bound)


def _ge(value, bound):
    return float(value), bool(value >= bound)


def _near(value, target, tol):
    return float(value), bool(abs(value - target) <= tol)


def _axis(grid, N):
    x = np.zeros((grid.n, N))
    x[:, 0] = grid.nodes
    return x


def _rel_x(a, ref, bub):
    # normed from raw nodal values: a roundoff-sized difference has no decay rate to declare
    x = _axis(a.grid, len(bub.xi))
    return weighted_sup_norm_points(a.values - ref, x, bub, "X") / weighted_sup_norm_points(ref, x, bub, "X")


def _sources(grid, count=8, seed=0):
    rng = np.random.default_rng(seed)
    r = grid.nodes
    out = []
    for _ in range(count):
        a = rng.uniform(0.2, 3.0)
        vals = rng.normal() * np.exp(-a * r * r) + rng.normal() * (1 + r * r) ** -rng.uniform(2.6, 4.0)
        out.append(GridFunction(grid, vals, 5.2))
    return out


# ---------------------------------------------------------------------------


def test_criterion_1_constant_identity():
    t0 = time.perf_counter()
    worst = max(abs(P.alpha * P.A / (P.N * (P.N - 2.0)) - 1.0) for P in (ProblemParams(N, lam) for N, lam in PAIRS))
    dt = time.perf_counter() - t0
    _report(1, {"max_rel_err": _le(worst, 1e-12), "seconds": _le(dt, 1e-3)})


def test_criterion_2_closed_form_riesz():
    g = build_radial_grid(256)
    errs = {}
    for lam in (1.0, 2.0):
        P = ProblemParams(3, lam)
        u = bubble_value(P, BubbleParams.origin(3), _axis(g, 3))
        got = riesz_radial(GridFunction(g, u**P.p, P.p), lam, 3).values
        errs[lam] = float(np.max(np.abs(got / (P.A * u**lam) - 1.0)))
    with tempfile.TemporaryDirectory() as tmp:
        clear_kernel_memo()
        cold, src_cold = time_assembly(3, 1.0, g, cache_dir=tmp)
        clear_kernel_memo()
        warm, src_warm = time_assembly(3, 1.0, g, cache_dir=tmp)
    _report(
        2,
        {
            "rel_err_lambda1": _le(errs[1.0], 1e-6),
            "rel_err_lambda2": _le(errs[2.0], 1e-4),
            "cold_s": (cold, cold <= 30.0 and src_cold == "assembled"),
            "cached_s": (warm, warm <= 0.1 and src_warm == "cache"),
        },
    )


def test_criterion_3_mode_identities():
    N = 3
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(200, N)) * rng.uniform(0.1, 3.0, size=(200, 1))
    h = 1e-3
    fd = 0.0
    for j in range(N + 1):
        lap = sum((z_mode(P3, j, None, pts + h * e) - 2 * z_mode(P3, j, None, pts) + z_mode(P3, j, None, pts - h * e)) / h**2 for e in np.eye(N))
        ref = N * (N + 2.0) * h_mode(P3, j, None, pts)
        fd = max(fd, float(np.max(np.abs(-lap - ref)) / np.max(np.abs(ref))))

    fg = build_full_grid(160, 7, N)
    w, x = fg.weights, fg.points
    b = BubbleParams(0.8, (0.0,) * N)
    Z = [z_mode(P3, j, b, x) for j in range(N + 1)]
    H = [h_mode(P3, j, b, x) for j in range(N + 1)]
    target = math.pi**2 / 64
    pair0 = float(np.sum(w * Z[0] * H[0]))
    pair1 = float(np.sum(w * Z[1] * H[1]))
    beta_err = max(abs(pairing_beta(N, j) / target - 1.0) for j in (0, 1))
    diag = [float(np.sum(w * Z[j] * H[j])) for j in range(N + 1)]
    cross = max(abs(float(np.sum(w * Z[j] * H[m]))) / abs(diag[j]) for j in range(N + 1) for m in range(N + 1) if j != m)
    worst = 0.0
    for m in range(N + 1):
        scale = float(np.sum(w * np.abs(H[m] * Z[m])))
        for j in range(N + 1):
            lhs = float(np.sum(w * htilde_mode(P3, m, j, x, b) * Z[m]))
            rhs = -float(np.sum(w * H[m] * zbar_mode(P3, m, j, x, b)))
            worst = max(worst, abs(lhs - rhs) / scale)
    _report(
        3,
        {
            "fd_laplacian": _le(fd, 1e-5),
            "pair0_rel": _le(abs(pair0 / target - 1.0), 1e-8),
            "pair1_rel": _le(abs(pair1 / target - 1.0), 1e-8),
            "beta_oracle_rel": _le(beta_err, 1e-8),
            "orthogonality": _le(cross, 1e-10),
            "htilde_zbar": _le(worst, 1e-6),
        },
    )


def test_criterion_4_projected_solver():
    g = build_radial_grid(256)
    systems = {mu: build_system(P3, g, BubbleParams.origin(3, mu)) for mu in MUS}
    manufactured = 0.0
    for mu, S in systems.items():
        r = g.nodes / mu
        f = (1 + r * r) ** -1.0
        lap = (6.0 * (1 + r * r) ** -2 - 8.0 * r * r * (1 + r * r) ** -3) / mu**2
        fz = GridFunction(g, f, 2.0)
        rhs = apply_L(S, fz, GridFunction(g, lap, 4.0))
        c = inner_radial(fz, S.modes.H, 3) / inner_radial(S.modes.Z, S.modes.H, 3)
        exact = f - c * S.modes.Z.values
        phi, _ = solve_projected(S, rhs)
        err = _rel_x(phi, exact, S.b)
        manufactured = max(manufactured, err)

    o = BubbleParams.origin(3)
    src = _sources(g, 1)[0]
    phi1, d1 = solve_projected(systems[1.0], src)
    two_path = 0.0
    c0 = [d1.c0_ratio]
    for mu in (0.5, 2.0):
        b = BubbleParams.origin(3, mu)
        direct, dm = solve_projected(systems[mu], scaling_transport(src, o, b, "Y"))
        moved = scaling_transport(phi1, o, b, "X")
        two_path = max(two_path, _rel_x(direct, moved.values, b))
        c0.append(dm.c0_ratio)
    drift = (max(c0) - min(c0)) / min(c0)

    reps = [kernel_diagnostic(S) for S in systems.values()]
    count_ok = all(rp.near_null_count == 1 for rp in reps)
    cos = min(abs(rp.kernel_cosine) for rp in reps)
    ratio = min(rp.constrained_ratio for rp in reps)

    with tempfile.TemporaryDirectory() as tmp:
        build_system(P3, g, BubbleParams.origin(3, 1.3), cache_dir=tmp)
        t0 = time.perf_counter()
        S = build_system(P3, g, BubbleParams.origin(3, 1.3), cache_dir=tmp)
        solve_projected(S, src)
        dt = time.perf_counter() - t0
    _report(
        4,
        {
            "manufactured_rel_X": _le(manufactured, 1e-4),
            "two_path_X": _le(two_path, 1e-6),
            "near_null_is_one": (float(reps[0].near_null_count), count_ok),
            "kernel_cos": _ge(cos, 0.999),
            "constrained_ratio": _ge(ratio, 1e-6),
            "c0_drift": _le(drift, 0.05),
            "solve_s": _le(dt, 5.0),
        },
    )


def test_criterion_5_parameter_derivative():
    g = build_radial_grid(256)
    o = BubbleParams.origin(3)
    srcs = _sources(g)
    fd_err = 0.0
    consts = []
    for mu in MUS:
        b = BubbleParams.origin(3, mu)
        S = build_system(P3, g, b)
        h = 1e-4 * mu
        sp = build_system(P3, g, BubbleParams.origin(3, mu + h))
        sm = build_system(P3, g, BubbleParams.origin(3, mu - h))
        psi = solver_derivative(S, srcs[0], 0)
        fd = (solve_projected(sp, srcs[0])[0].values - solve_projected(sm, srcs[0])[0].values) / (2 * h)
        fd_err = max(fd_err, _rel_x(psi, fd, b))
        # the bound is a supremum over sources, so the same source family is moved to each mu
        S1 = ProjectedSystem(P3, g, b, 1)
        best = 0.0
        for s in srcs:
            gm = scaling_transport(s, o, b, "Y")
            gy = weighted_sup_norm(gm, b, "Y")
            for m in (0, 1):
                psi_m = solver_derivative(S, gm, m, S1 if m else None)
                best = max(best, mu * weighted_sup_norm(psi_m, b, "X") / gy)
        consts.append(best)
    spread = (max(consts) - min(consts)) / min(consts)

    # a fixed analytic source: for some random ones the first-order change nearly
    # cancels and the quadratic term dominates these step sizes
    r = g.nodes
    fixed = GridFunction(g, np.exp(-r * r) * (1 - r) + 0.3 * (1 + r * r) ** -3, 6.0)
    base = solve_projected(build_system(P3, g, o), fixed)[0]
    ds = np.array([0.2, 0.1, 0.05, 0.025])
    diffs = []
    for d in ds:
        phi = solve_projected(build_system(P3, g, BubbleParams.origin(3, 1.0 + d)), fixed)[0]
        diffs.append(weighted_sup_norm_points(phi.values - base.values, _axis(g, 3), o, "X"))
    slope = oracles.loglog_slope(ds, diffs)
    _report(
        5,
        {
            "fd_rel_X": _le(fd_err, 1e-4),
            "C_spread": _le(spread, 0.2),
            "C": (max(consts), True),
            "continuity_slope": _near(slope, 1.0, 0.1),
        },
    )


MU_STAR = 1.716219401494994


def test_criterion_6_contraction():
    g = build_radial_grid(256)
    t0 = time.perf_counter()
    S = build_system(P3, g, BubbleParams.origin(3, MU_STAR))
    sols = [contraction_solve(S, e, RING, tol=1e-13) for e in EPS_SWEEP]

    def build(m):
        return build_system(P3, g, BubbleParams.origin(3, m))

    dnorm = [weighted_sup_norm(phi_parameter_derivative(build, e, RING, MU_STAR, tol=1e-13), S.b, "X") for e in EPS_SWEEP]
    dt = time.perf_counter() - t0
    ratio = max(max(s.step_ratios()) for s in sols)
    omega = min(float(np.min(s.omega / (0.5 * S.modes.U))) for s in sols)
    _report(
        6,
        {
            "step_ratio": _le(ratio, 0.5),
            "phi_slope": _near(oracles.loglog_slope(EPS_SWEEP, [s.phi_norm for s in sols]), 1.0, 0.05),
            "dphi_slope": _near(oracles.loglog_slope(EPS_SWEEP, dnorm), 1.0, 0.1),
            "min_omega_over_half_U": _ge(omega, 1.0),
            "sweep_s": _le(dt, 180.0),
        },
    )


def test_criterion_7_energy_expansion():
    g = build_radial_grid(256)
    mu = 1.3
    b = BubbleParams.origin(3, mu)
    h = 1e-4 * mu
    systems = {m: build_system(P3, g, BubbleParams.origin(3, m)) for m in (mu - h, mu, mu + h)}
    dmu_ups = float(grad_upsilon(P3, b, RING)[0])
    rem, drem = [], []
    for e in EPS_SWEEP:
        sol = contraction_solve(systems[mu], e, RING, tol=1e-13)
        rem.append(expansion_remainder(sol))
        jp = energy(contraction_solve(systems[mu + h], e, RING, tol=1e-13))
        jm = energy(contraction_solve(systems[mu - h], e, RING, tol=1e-13))
        drem.append(abs((jp - jm) / (2 * h) + e * dmu_ups))
    _report(
        7,
        {
            "j_slope": _near(oracles.loglog_slope(EPS_SWEEP, rem), 2.0, 0.15),
            "dmu_j_slope": _near(oracles.loglog_slope(EPS_SWEEP, drem), 2.0, 0.2),
            "j0_bar_rel": _le(abs(j0_bar(P3) / (3 * math.pi**2 / 10) - 1.0), 1e-8),
        },
    )


def test_criterion_8_hypothesis_checker():
    t0 = time.perf_counter()
    single = check_assumptions(PotentialSpec.gaussian(3, 1.0, 1.0))
    pair = check_assumptions(PotentialSpec.two_bump(3, 1.0, 1.0, 2.0))
    const = check_assumptions(PotentialSpec.constant(3))
    dt = time.perf_counter() - t0
    sign = (-1) ** 3
    _report(
        8,
        {
            "single_index_sum": (single.evidence["k2"]["index_sum"], single.verdicts["k2"] == "fail" and single.evidence["k2"]["index_sum"] == sign),
            "two_bump_index_sum": (pair.evidence["k2"]["index_sum"], pair.verdicts["k2"] == "pass" and pair.evidence["k2"]["index_sum"] == 2 * sign),
            "constant_fails": (0.0, const.verdicts["k2"] == "fail" and "constant" in const.evidence["k2"]["reason"]),
            "seconds": _le(dt, 10.0),
        },
    )


def test_criterion_9_pipeline():
    t0 = time.perf_counter()
    g = build_radial_grid(256)
    seed = find_mu_critical(P3, RING, (0.25, 4.5))[0]
    runs = [solve_full(P3, e, RING, seed, g) for e in EPS_PIPELINE]
    c_norm = max(rep["c_norm"] for _, _, rep in runs)
    resid = max(rep["residual"]["residual_Y"] for _, _, rep in runs)
    omega_pos = all(bool(np.all(sol.omega > 0)) for _, sol, _ in runs)
    shift = oracles.loglog_slope(EPS_PIPELINE, [abs(b.mu - seed.b.mu) for b, _, _ in runs])
    ratio = [rep["phi_over_U_inf"] for _, _, rep in runs]
    deg = degree_mu_line(P3, RING, 0.25, 4.5).degree
    big = degree_mu_line(P3, RING, 0.25 / 1.5, 4.5 * 1.5).degree
    dt = time.perf_counter() - t0
    _report(
        9,
        {
            "c_norm": _le(c_norm, 1e-10),
            "residual_Y": _le(resid, 1e-5),
            "omega_positive": (1.0, omega_pos),
            "mu_shift_slope": _ge(shift, 0.8),
            "phi_over_U_slope": _near(oracles.loglog_slope(EPS_PIPELINE, ratio), 1.0, 0.1),
            "phi_over_U_decreasing": (ratio[-1], bool(np.all(np.diff(ratio[::-1]) < 0))),
            "degree": (float(deg), abs(deg) == 1 and big == deg),
            "seconds": _le(dt, 600.0),
        },
    )


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted((k, v) for k, v in globals().items() if k.startswith("test_criterion_")):
        try:
            fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
