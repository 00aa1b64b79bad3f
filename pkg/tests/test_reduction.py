import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from choquardlab.bubble import BubbleParams, ProblemParams
from choquardlab.grid import build_radial_grid
from choquardlab.kcheck import PotentialSpec
from choquardlab.linop import build_system
from choquardlab.nonlinear import contraction_solve
from choquardlab.reduction import (
    DegreeError,
    ReducedPoint,
    classify,
    degree,
    degree_mu_line,
    energy,
    energy_direct,
    expansion_remainder,
    find_critical_points,
    find_mu_critical,
    grad_upsilon,
    hessian_upsilon,
    j0_bar,
    reduced_energy,
    scan_upsilon,
    solve_full,
    upsilon,
)

MU_STAR = 1.716219401494994
TWO_BUMP_BOX = [(0.3, 4.0), (-2.5, 2.5), (-2.5, 2.5), (-2.5, 2.5)]
BUMPS = [(1.0, (2.0, 0.0, 0.0), 1.0), (1.0, (-2.0, 0.0, 0.0), 1.0)]


def _grad(P, k):
    return lambda v: grad_upsilon(P, BubbleParams.from_vector(v), k)


# ---------------------------------------------------------------------------
# bubble energy


@pytest.mark.parametrize("N,lam", [(3, 1.0), (3, 2.0), (4, 2.0), (5, 3.0)])
def test_j0_bar_closed_form(N, lam):
    assert j0_bar(ProblemParams(N, lam)) == pytest.approx(oracles.j0_bar(N, lam), rel=1e-13)


def test_j0_bar_n3_value(P3):
    assert j0_bar(P3) == pytest.approx(3 * math.pi**2 / 10, rel=1e-14)


@pytest.mark.parametrize("mu", [0.5, 1.0, 2.0])
def test_energy_of_bubble_by_direct_quadrature(P3, grid256, mu):
    S = build_system(P3, grid256, BubbleParams.origin(3, mu))
    assert energy_direct(P3, grid256, S.modes.U) == pytest.approx(j0_bar(P3), rel=1e-6)
    assert energy_direct(P3, grid256, np.zeros(grid256.n)) == 0.0


def test_energy_of_perturbed_solution_two_routes(P3, grid256, ring):
    S = build_system(P3, grid256, BubbleParams.origin(3, MU_STAR))
    sol = contraction_solve(S, 1e-2, ring, tol=1e-13)
    direct = energy_direct(P3, grid256, sol.omega, 1e-2, sol.kvals)
    assert energy(sol) == pytest.approx(direct, rel=1e-6)
    assert energy(contraction_solve(S, 0.0, ring)) == pytest.approx(j0_bar(P3), rel=1e-12)


# ---------------------------------------------------------------------------
# the reduced function


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("v", [(1.3, 0.4, -0.2, 0.3), (0.6, 1.5, 0.0, 0.0), (2.5, -0.7, 1.1, -0.4)])
def test_gradient_against_bubble_frame_quadrature(P3, two_bump, v):
    got = grad_upsilon(P3, BubbleParams.from_vector(v), two_bump)
    ref = oracles.upsilon_grad_n3(np.array(v), BUMPS)
    assert np.max(np.abs(got - ref)) <= 1e-9 * np.max(np.abs(ref))


@given(st.floats(0.4, 3.0), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_gradient_and_hessian_are_derivatives(mu, a, b, c):
    P = ProblemParams(3, 1.0)
    k = PotentialSpec.two_bump(3, 1.0, 1.0, 2.0)
    v = np.array([mu, a, b, c])
    g = grad_upsilon(P, BubbleParams.from_vector(v), k)
    fd = oracles.fd_gradient(lambda w: upsilon(P, BubbleParams.from_vector(w), k), v, 1e-4)
    assert np.max(np.abs(g - fd)) <= 1e-7 * max(1.0, np.max(np.abs(g)))
    H = hessian_upsilon(P, BubbleParams.from_vector(v), k)
    fH = np.stack([oracles.fd_gradient(lambda w, i=i: _grad(P, k)(w)[i], v, 1e-4) for i in range(4)])
    assert np.max(np.abs(H - fH)) <= 1e-6 * max(1.0, np.max(np.abs(H)))
    assert np.allclose(H, H.T, atol=1e-12)


@given(st.floats(0.3, 4.0), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_two_bump_reflection_symmetry(mu, a, b, c):
    P = ProblemParams(3, 1.0)
    k = PotentialSpec.two_bump(3, 1.0, 1.0, 2.0)
    u1 = upsilon(P, BubbleParams(mu, (a, b, c)), k)
    for xi in ((-a, b, c), (a, -b, c), (a, c, b)):
        assert upsilon(P, BubbleParams(mu, xi), k) == pytest.approx(u1, rel=1e-11, abs=1e-14)


def test_constant_k_gives_constant_upsilon(P3):
    k = PotentialSpec.constant(3, 2.0)
    vals = [upsilon(P3, BubbleParams(m, (x, 0.0, 0.0)), k) for m, x in ((0.5, 0.0), (1.0, 1.0), (3.0, -2.0))]
    assert np.ptp(vals) <= 1e-12 * abs(vals[0])
    assert np.max(np.abs(grad_upsilon(P3, BubbleParams(1.3, (0.2, 0.1, 0.0)), k))) <= 1e-12


def test_upsilon_validation(P3):
    with pytest.raises(ValueError):
        upsilon(P3, BubbleParams.origin(3), PotentialSpec.constant(4))
    with pytest.raises(ValueError):
        upsilon(P3, BubbleParams.origin(3), PotentialSpec.gaussian(3, 1.0, -2.0))


def test_classify():
    assert classify([-1.0, -2.0]) == "max"
    assert classify([1.0, 2.0]) == "min"
    assert classify([1.0, -2.0]) == "saddle"
    assert classify([1e-12, 1.0]) == "degenerate"


# ---------------------------------------------------------------------------
# critical points and degree


def test_ring_mu_line_critical_point(P3, ring):
    pts = find_mu_critical(P3, ring)
    assert len(pts) == 1
    z = pts[0]
    assert z.b.mu == pytest.approx(MU_STAR, rel=1e-10)
    assert z.classification == "max" and z.index == -1
    assert abs(z.grad[0]) <= 1e-13
    assert z.upsilon == pytest.approx(0.62216, abs=5e-6)
    assert degree_mu_line(P3, ring, 0.25, 4.5).degree == -1
    assert degree_mu_line(P3, ring, 0.25 / 1.5, 4.5 * 1.5).degree == -1
    with pytest.raises(DegreeError):
        degree_mu_line(P3, ring, 0.25, MU_STAR)


def test_mu_line_needs_radial_k(P3, two_bump):
    with pytest.raises(ValueError):
        find_mu_critical(P3, two_bump)


@pytest.fixture(scope="module")
def two_bump_degree(P3, two_bump):
    return degree(P3, two_bump, TWO_BUMP_BOX, per_axis=5, starts=8)


def test_two_bump_single_saddle(two_bump_degree):
    res = two_bump_degree
    assert res.degree == -1
    assert len(res.zeros) == 1
    z = res.zeros[0]
    assert z.b.mu == pytest.approx(1.29926, abs=1e-5)
    assert np.max(np.abs(z.b.xi)) <= 1e-9
    assert z.classification == "saddle"
    assert res.boundary_inf > 1e-6


def test_degree_against_independent_lattice_oracle(P3, two_bump, two_bump_degree):
    # different lattice (linear in mu, even point count), FD Jacobians
    lo = [a for a, _ in TWO_BUMP_BOX]
    hi = [b for _, b in TWO_BUMP_BOX]
    deg, zeros = oracles.sign_change_degree(_grad(P3, two_bump), lo, hi, per_axis=6)
    assert deg == two_bump_degree.degree
    assert len(zeros) == len(two_bump_degree.zeros)
    assert np.allclose(zeros[0][0], two_bump_degree.zeros[0].b.as_vector(), atol=1e-7)


def test_degree_is_invariant_under_box_enlargement(P3, two_bump, two_bump_degree):
    # mu range widened by 1.5 each way; the xi lattice keeps a comparable cell size
    big = [(0.3 / 1.5, 4.0 * 1.5), (-3.0, 3.0), (-3.0, 3.0), (-3.0, 3.0)]
    res = degree(P3, two_bump, big, per_axis=5, starts=8)
    assert res.degree == two_bump_degree.degree
    assert len(res.zeros) == 1


def test_degree_refuses_constant_k_and_bad_boxes(P3, two_bump):
    with pytest.raises(DegreeError):
        degree(P3, PotentialSpec.constant(3), TWO_BUMP_BOX)
    with pytest.raises(ValueError):
        degree(P3, two_bump, [(0.0, 1.0), (-1, 1), (-1, 1), (-1, 1)])
    with pytest.raises(ValueError):
        find_critical_points(P3, two_bump, [(0.5, 1.0), (-1, 1)])


def test_reduced_point_records(two_bump_degree):
    rec = two_bump_degree.as_record()
    assert rec["degree"] == -1 and rec["zeros"][0]["class"] == "saddle"
    assert isinstance(two_bump_degree.zeros[0], ReducedPoint)
    assert '"index": -1' in two_bump_degree.zeros[0].to_json()


def test_scan_is_lexicographic(P3, ring):
    rows = scan_upsilon(P3, ring, [(0.5, 2.0), (-1, 1), (-1, 1), (-1, 1)], per_axis=3)
    assert len(rows) == 81
    keys = [tuple(r["b"].as_vector()) for r in rows]
    assert keys == sorted(keys)


# ---------------------------------------------------------------------------
# energy expansion along the bubble manifold


@pytest.fixture(scope="module")
def expansion_data(P3, grid256, ring):
    out = {}
    for e in (1e-3, 2e-3, 5e-3, 1e-2):
        S = build_system(P3, grid256, BubbleParams.origin(3, 1.0))
        sol = contraction_solve(S, e, ring, tol=1e-13)
        h = 1e-4
        jp = energy(contraction_solve(build_system(P3, grid256, BubbleParams.origin(3, 1 + h)), e, ring, tol=1e-13))
        jm = energy(contraction_solve(build_system(P3, grid256, BubbleParams.origin(3, 1 - h)), e, ring, tol=1e-13))
        out[e] = (sol, (jp - jm) / (2 * h))
    return out


def test_energy_expansion_is_second_order(P3, ring, expansion_data):
    eps = sorted(expansion_data)
    b = BubbleParams.origin(3, 1.0)
    ups = upsilon(P3, b, ring)
    rem = [abs(expansion_remainder(expansion_data[e][0])) for e in eps]
    direct = [abs(energy(expansion_data[e][0]) - j0_bar(P3) + e * ups) for e in eps]
    assert oracles.loglog_slope(eps, rem) == pytest.approx(2.0, abs=0.15)
    assert oracles.loglog_slope(eps, direct) == pytest.approx(2.0, abs=0.15)
    assert np.allclose(rem, direct, rtol=1e-3)


def test_mu_derivative_expansion_is_second_order(P3, ring, expansion_data):
    eps = sorted(expansion_data)
    d = grad_upsilon(P3, BubbleParams.origin(3, 1.0), ring)[0]
    rem = [abs(expansion_data[e][1] + e * d) for e in eps]
    assert oracles.loglog_slope(eps, rem) == pytest.approx(2.0, abs=0.2)


def test_reduced_energy_record(P3, grid256, ring):
    pt = reduced_energy(build_system(P3, grid256, BubbleParams.origin(3, MU_STAR)), 1e-3, ring)
    assert pt.j_eps == pytest.approx(j0_bar(P3) - 1e-3 * pt.upsilon, abs=1e-5)
    assert pt.classification == "max"
    assert abs(pt.extra["expansion_remainder"]) <= 1e-5


# ---------------------------------------------------------------------------
# the full solve


@pytest.fixture(scope="module")
def ring_solves(P3, grid256, ring):
    seed = find_mu_critical(P3, ring)[0]
    return {e: solve_full(P3, e, ring, seed, grid256) for e in (1e-3, 2e-3, 5e-3, 1e-2)}


def test_full_solve_zeroes_all_coefficients(ring_solves):
    for e, (b, sol, rep) in ring_solves.items():
        assert rep["c_norm"] <= 1e-10
        assert rep["residual"]["residual_Y"] <= 1e-12
        assert rep["phi_over_U_inf"] <= 0.5
        assert b.centred


def test_full_solve_rates(ring_solves):
    eps = sorted(ring_solves)
    shift = [abs(ring_solves[e][0].mu - MU_STAR) for e in eps]
    phi = [ring_solves[e][2]["phi_over_U_inf"] for e in eps]
    assert oracles.loglog_slope(eps, phi) == pytest.approx(1.0, abs=0.05)
    assert oracles.loglog_slope(eps, shift) >= 0.8


def test_full_solve_validation(P3, grid128, ring, two_bump):
    seed = find_mu_critical(P3, ring)[0]
    with pytest.raises(ValueError):
        solve_full(P3, 1e-3, two_bump, seed, grid128)
    off = ReducedPoint(BubbleParams(1.0, (0.5, 0.0, 0.0)), 0.0, np.zeros(4), np.ones(4), "min")
    with pytest.raises(ValueError):
        solve_full(P3, 1e-3, ring, off, grid128)


def test_full_solve_other_pair():
    P = ProblemParams(4, 2.0)
    k = PotentialSpec.ring(4, 1.0, 1.0, 2.0)
    g = build_radial_grid(192)
    seed = [z for z in find_mu_critical(P, k) if z.classification != "degenerate"][0]
    b, sol, rep = solve_full(P, 5e-3, k, seed, g)
    assert rep["c_norm"] <= 1e-10 and rep["residual"]["residual_Y"] <= 1e-11
