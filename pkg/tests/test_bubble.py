import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from choquardlab.bubble import (
    BubbleParams,
    ProblemParams,
    bubble_expansion_error,
    bubble_value,
    gamma,
    h_mode,
    htilde_mode,
    laplacian_z,
    mode_pairing,
    mode_pairing_cross,
    riesz_closed_form,
    riesz_closed_form_mode,
    sphere_area,
    z_mode,
    zbar_mode,
)

PAIRS = [(3, 1.0), (3, 2.0), (4, 2.0), (5, 3.0), (5, 4.0)]


# ---------------------------------------------------------------------------
# gamma


def test_gamma_matches_math_gamma_on_open_interval():
    xs = np.concatenate([np.linspace(1e-3, 30.0 - 1e-3, 4001), [0.5, 1.0, 1.5, 2.0, 2.5, 29.9]])
    err = max(abs(gamma(float(x)) / math.gamma(float(x)) - 1.0) for x in xs)
    assert err <= 1e-13


@given(st.floats(min_value=1e-4, max_value=29.99))
def test_gamma_against_mpmath(x):
    ref = float(mpmath.gamma(mpmath.mpf(x)))
    assert gamma(x) == pytest.approx(ref, rel=1e-13)


def test_gamma_recurrence_and_poles():
    for x in (0.3, 1.7, 7.25):
        assert gamma(x + 1.0) == pytest.approx(x * gamma(x), rel=1e-14)
    with pytest.raises(ValueError):
        gamma(0.0)


# ---------------------------------------------------------------------------
# constants


@pytest.mark.parametrize("N,lam", PAIRS)
def test_alpha_A_identity_each_pair(N, lam):
    P = ProblemParams(N, lam)
    assert P.alpha * P.A == pytest.approx(N * (N - 2.0), rel=1e-12)
    alpha, A = oracles.alpha_A(N, lam)
    assert P.alpha == pytest.approx(alpha, rel=1e-12)
    assert P.A == pytest.approx(A, rel=1e-12)
    assert P.p == (2.0 * N - lam) / (N - 2.0)


@given(st.integers(3, 9), st.floats(0.01, 0.99))
def test_alpha_A_identity_property(N, frac):
    P = ProblemParams(N, frac * N)
    assert abs(P.alpha * P.A / (N * (N - 2.0)) - 1.0) <= 1e-12


def test_params_validation_and_flags():
    with pytest.raises(ValueError):
        ProblemParams(2, 1.0)
    with pytest.raises(ValueError):
        ProblemParams(3, 3.0)
    with pytest.raises(ValueError):
        ProblemParams(3, 0.0)
    assert not ProblemParams(5, 4.0).out_of_theorem
    assert ProblemParams(6, 4.5).out_of_theorem
    assert ProblemParams(3, 2.0).singular_regime
    assert not ProblemParams(3, 1.0).singular_regime


def test_sphere_area_matches_scipy():
    for N in range(2, 9):
        assert sphere_area(N) == pytest.approx(oracles.sphere_area(N), rel=1e-13)


def test_bubble_params_validation():
    with pytest.raises(ValueError):
        BubbleParams(0.0, (0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        BubbleParams(1.0, (float("nan"), 0.0, 0.0))
    b = BubbleParams(2.0, (0.1, -0.2, 0.3))
    assert BubbleParams.from_vector(b.as_vector()) == b


# ---------------------------------------------------------------------------
# bubble and modes: worked values


def test_bubble_values(P3):
    o = BubbleParams.origin(3)
    assert bubble_value(P3, o, [0.0, 0.0, 0.0]) == pytest.approx(1.0)
    assert bubble_value(P3, BubbleParams.origin(3, 4.0), [0.0, 0.0, 0.0]) == pytest.approx(0.5)
    assert bubble_value(P3, o, [1.0, 0.0, 0.0]) == pytest.approx(2**-0.5)


def test_mode_values(P3):
    x0 = np.zeros(3)
    assert z_mode(P3, 0, None, x0) == pytest.approx(-0.5)
    assert z_mode(P3, 1, None, x0) == 0.0
    assert z_mode(P3, 0, None, [0.0, 1.0, 0.0]) == pytest.approx(0.0, abs=1e-15)
    assert h_mode(P3, 0, None, x0) == pytest.approx(-0.5)
    assert h_mode(P3, 2, None, x0) == 0.0
    assert laplacian_z(P3, 0, x0) == pytest.approx(7.5)


def test_zbar_closed_form_at_origin(P3):
    # the closed form gives (3/4) - (1/2) = 0.25 at x = 0; a finite difference
    # of Z_{0;mu} in mu confirms the sign and the value
    assert zbar_mode(P3, 0, 0, np.zeros(3)) == pytest.approx(0.25)
    h = 1e-5
    fd = (z_mode(P3, 0, BubbleParams.origin(3, 1 + h), np.zeros(3)) - z_mode(P3, 0, BubbleParams.origin(3, 1 - h), np.zeros(3))) / (2 * h)
    assert fd == pytest.approx(0.25, abs=1e-9)
    for m, j in ((0, 1), (1, 2), (2, 0)):
        assert zbar_mode(P3, m, j, np.zeros(3)) == pytest.approx(0.0, abs=1e-15)


def test_riesz_closed_form_values(P3):
    o = BubbleParams.origin(3)
    assert riesz_closed_form(P3, o, np.zeros(3)) == pytest.approx(4 * math.pi / 3, rel=1e-13)
    assert riesz_closed_form(ProblemParams(3, 2.0), o, np.zeros(3)) == pytest.approx(math.pi**2, rel=1e-13)


@pytest.mark.parametrize("lam", [1.0, 2.0])
def test_riesz_closed_form_against_quadrature(lam):
    P = ProblemParams(3, lam)
    o = BubbleParams.origin(3)

    def f(s):
        return (1.0 + s * s) ** (-P.p / 2.0)

    for r in (0.3, 1.0, 4.0, 25.0):
        assert riesz_closed_form(P, o, [r, 0.0, 0.0]) == pytest.approx(oracles.riesz_radial_n3(f, lam, r), rel=1e-9)


def test_riesz_closed_form_mode_is_parameter_derivative(P3):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(20, 3))
    b = BubbleParams(1.3, (0.2, -0.1, 0.4))
    h = 1e-5
    v = b.as_vector()
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        fd = (riesz_closed_form(P3, BubbleParams.from_vector(v + e), x) - riesz_closed_form(P3, BubbleParams.from_vector(v - e), x)) / (2 * h)
        # d/dparam I[U^p] = p I[U^{p-1} dU] with dU = Z_j / mu
        got = P3.p * riesz_closed_form_mode(P3, j, b, x) / b.mu
        assert np.max(np.abs(got - fd)) <= 1e-7 * np.max(np.abs(fd)) + 1e-12


# ---------------------------------------------------------------------------
# derivative modes against finite differences


@given(st.integers(0, 3), st.lists(st.floats(-4, 4), min_size=3, max_size=3))
def test_z_is_bubble_parameter_derivative(j, x):
    P = ProblemParams(3, 1.0)
    h = 1e-4
    v = BubbleParams.origin(3).as_vector()
    e = np.zeros(4)
    e[j] = h
    fd = (bubble_value(P, BubbleParams.from_vector(v + e), x) - bubble_value(P, BubbleParams.from_vector(v - e), x)) / (2 * h)
    assert abs(fd - z_mode(P, j, None, x)) <= 1e-6


@pytest.mark.parametrize("N", [3, 4, 5])
def test_laplacian_z_finite_difference(N):
    P = ProblemParams(N, 1.0)
    rng = np.random.default_rng(N)
    x = rng.normal(size=(100, N)) * rng.uniform(0.1, 3.0, size=(100, 1))
    h = 1e-3
    for j in range(N + 1):
        lap = sum((z_mode(P, j, None, x + h * e) - 2 * z_mode(P, j, None, x) + z_mode(P, j, None, x - h * e)) / h**2 for e in np.eye(N))
        ref = laplacian_z(P, j, x)
        tol = 1e-5 * max(1.0, float(np.max(np.abs(ref))))
        assert np.max(np.abs(lap - ref)) <= tol


@pytest.mark.parametrize("N", [3, 4])
def test_zbar_and_htilde_are_scaled_parameter_derivatives(N):
    P = ProblemParams(N, 1.0)
    rng = np.random.default_rng(11)
    x = rng.normal(size=(40, N))
    b = BubbleParams(1.0, (0.0,) * N)
    v = b.as_vector()
    h = 1e-4
    for m in range(N + 1):
        for j in range(N + 1):
            e = np.zeros(N + 1)
            e[j] = h
            bp, bm = BubbleParams.from_vector(v + e), BubbleParams.from_vector(v - e)
            fz = (z_mode(P, m, bp, x) - z_mode(P, m, bm, x)) / (2 * h)
            fh = (h_mode(P, m, bp, x) - h_mode(P, m, bm, x)) / (2 * h)
            assert np.max(np.abs(zbar_mode(P, m, j, x, b) - fz)) <= 1e-6
            assert np.max(np.abs(htilde_mode(P, m, j, x, b) - fh)) <= 1e-6


# ---------------------------------------------------------------------------
# pairings


@pytest.mark.parametrize("N", [3, 4, 5, 6])
def test_mode_pairing_against_beta(N):
    P = ProblemParams(N, 1.0)
    for j in range(N + 1):
        assert mode_pairing(P, j) == pytest.approx(oracles.pairing(N, min(j, 1)), rel=1e-10)


def test_mode_pairing_n3_values(P3):
    assert mode_pairing(P3, 0) == pytest.approx(math.pi**2 / 64, rel=1e-8)
    assert mode_pairing(P3, 1) == pytest.approx(math.pi**2 / 64, rel=1e-8)
    assert mode_pairing_cross(P3, 0, 2) == 0.0
    assert mode_pairing_cross(P3, 1, 1) == mode_pairing(P3, 1)


# ---------------------------------------------------------------------------
# first-order expansions


@pytest.mark.parametrize("which,j", [("U", 0), ("Z", 0), ("Z", 2), ("H", 0), ("H", 1)])
def test_expansion_error_is_second_order(P3, which, j):
    b0 = BubbleParams(1.0, (0.2, 0.0, -0.1))
    direction = np.array([0.6, 0.3, -0.5, 0.4])
    deltas = np.array([1e-1, 3e-2, 1e-2, 3e-3, 1e-3])
    errs = [bubble_expansion_error(P3, b0, BubbleParams.from_vector(b0.as_vector() + d * direction), which, j) for d in deltas]
    assert oracles.loglog_slope(deltas, errs) == pytest.approx(2.0, abs=0.1)
    assert bubble_expansion_error(P3, b0, b0, which, j) == 0.0
