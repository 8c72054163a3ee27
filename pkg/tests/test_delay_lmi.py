import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import lambertw

from tdaqm.delay_lmi import (
    DiscretizationError, LkParams, Verdict, analysis_feasible, autonomous, build_gamma,
    check_analysis, constraint_matrix, max_stable_delay, null_space_basis, oracle_delay_margin,
    rightmost_root,
)
from tdaqm.synthesis import REF_K_SF

SCALAR = autonomous([[0.0]], [[-1.0]])


def _spd(rng, n):
    m = rng.normal(size=(n, n))
    return m @ m.T + n * np.eye(n)


def test_gamma_size_and_symmetry(rng):
    lk = LkParams(_spd(rng, 2), _spd(rng, 2), _spd(rng, 2), 0.5, 1)
    g = build_gamma(lk, 2)
    assert g.shape == (6, 6)
    assert np.array_equal(g, g.T)


def test_gamma_r2_hand_expansion():
    # P = 2, R = 3, Q = [[5, 1], [1, 4]], h = 0.5, r = 2; expanded by hand
    lk = LkParams(np.array([[2.0]]), np.array([[5.0, 1.0], [1.0, 4.0]]), np.array([[3.0]]), 0.5, 2)
    expected = np.array([
        [0.75, 2.0, 0.0, 0.0],
        [2.0, -7.0, 13.0, 0.0],
        [0.0, 13.0, -13.0, -1.0],
        [0.0, 0.0, -1.0, -4.0],
    ])
    np.testing.assert_allclose(build_gamma(lk, 1), expected, rtol=0, atol=1e-14)


@pytest.mark.parametrize("r", [1, 2, 3])
def test_gamma_matches_functional_derivative(rng, r):
    """xi' Gamma xi equals the derivative bound written term by term."""
    n, h = 2, 0.7
    p, rm, q = _spd(rng, n), _spd(rng, n), _spd(rng, r * n)
    g = build_gamma(LkParams(p, q, rm, h, r), n)
    for _ in range(5):
        xi = rng.normal(size=(r + 2) * n)
        blocks = xi.reshape(r + 2, n)
        xdot, x0, x1 = blocks[0], blocks[1], blocks[2]
        z_now = blocks[1:r + 1].ravel()
        z_lag = blocks[2:r + 2].ravel()
        v = (h / r) * xdot @ rm @ xdot + 2 * xdot @ p @ x0 \
            - (r / h) * (x0 - x1) @ rm @ (x0 - x1) + z_now @ q @ z_now - z_lag @ q @ z_lag
        assert xi @ g @ xi == pytest.approx(v, rel=1e-12, abs=1e-12)


coef = st.floats(-3, 3, allow_nan=False)


@given(st.integers(1, 3), st.integers(1, 3), st.floats(0.1, 2.0), coef, coef, st.integers(0, 2**31))
def test_gamma_is_linear(n, r, h, alpha, beta, seed):
    rng = np.random.default_rng(seed)

    def sym(k):
        m = rng.normal(size=(k, k))
        return m + m.T

    a_lk = LkParams(sym(n), sym(r * n), sym(n), h, r)
    b_lk = LkParams(sym(n), sym(r * n), sym(n), h, r)
    mix = LkParams(alpha * a_lk.p + beta * b_lk.p, alpha * a_lk.q + beta * b_lk.q,
                   alpha * a_lk.r_mat + beta * b_lk.r_mat, h, r)
    np.testing.assert_allclose(
        build_gamma(mix, n), alpha * build_gamma(a_lk, n) + beta * build_gamma(b_lk, n),
        atol=1e-12 * (1 + abs(alpha) + abs(beta)) * 50,
    )


def test_constraint_matrix_forms(tcp_sys):
    s0 = constraint_matrix(tcp_sys, 2)
    assert s0.shape == (2, 8)
    assert np.array_equal(s0[:, -2:], tcp_sys.a_d)
    assert np.array_equal(s0[:, :2], -np.eye(2))
    assert np.array_equal(s0[:, 4:6], np.zeros((2, 2)))
    assert np.array_equal(constraint_matrix(tcp_sys, 2, np.zeros((1, 2))), s0)


def test_constraint_matrix_reference_gain(tcp_sys):
    s = constraint_matrix(tcp_sys, 1, REF_K_SF.k)
    # -0.263 + (-481.8)(-2.372e-4)
    assert s[0, -2] == pytest.approx(-0.149, abs=1e-3)


def test_null_space_scalar_hand():
    a, b = 0.7, -1.3
    sp = null_space_basis(np.array([[-1.0, a, b]]))
    np.testing.assert_array_equal(sp, [[a, b], [1.0, 0.0], [0.0, 1.0]])


@given(st.integers(1, 3), st.integers(1, 4), st.integers(0, 2**31))
def test_null_space_exact(n, r, seed):
    rng = np.random.default_rng(seed)
    sys = autonomous(rng.normal(size=(n, n)) * 100, rng.normal(size=(n, n)))
    s = constraint_matrix(sys, r)
    sp = null_space_basis(s)
    assert sp.shape == ((r + 2) * n, (r + 1) * n)
    assert np.abs(s @ sp).max() < 1e-14
    assert np.linalg.matrix_rank(sp) == (r + 1) * n


def test_null_space_rejects_noncanonical():
    with pytest.raises(ValueError):
        null_space_basis(np.array([[1.0, 0.5, 0.2]]))


def test_scalar_feasible_at_one():
    cert = analysis_feasible(SCALAR, 1.0, 1)
    assert cert.verdict is Verdict.FEASIBLE
    assert cert.margin < 0
    assert cert.lk.is_positive_definite()
    assert check_analysis(SCALAR.a, SCALAR.a_d, cert.lk) == pytest.approx(cert.margin)


@pytest.mark.parametrize("r", [1, 2, 3])
def test_scalar_not_certified_beyond_pi_half(r):
    assert analysis_feasible(SCALAR, 1.6, r).verdict is not Verdict.FEASIBLE


def test_reference_sf_loop_certified(tcp_sys, op):
    sys = autonomous(tcp_sys.a, tcp_sys.closed_loop_delayed(REF_K_SF.k))
    cert = analysis_feasible(sys, op.r0, 1)
    assert cert.feasible
    assert rightmost_root(sys.a, sys.a_d, op.r0).real < 0


def test_margin_scalar_monotone_and_sound():
    vals = [max_stable_delay(SCALAR, r, 1e-4).h_max for r in (1, 2, 3)]
    assert all(v <= math.pi / 2 for v in vals)
    assert vals[0] <= vals[1] <= vals[2]
    # r = 1 reduces to a Jensen bound whose scalar limit is sqrt(2)
    assert vals[0] == pytest.approx(math.sqrt(2), abs=2e-4)


def test_margin_delay_independent_hits_cap():
    sys = autonomous([[-2.0, 0.0], [1.0, -1.0]], np.zeros((2, 2)))
    res = max_stable_delay(sys, 1, h_cap=4.0)
    assert res.capped and res.h_max == 4.0


def test_margin_unstable_at_zero_delay():
    res = max_stable_delay(autonomous([[0.5]], [[0.2]]), 1)
    assert res.h_max == 0.0 and res.lower == res.upper == 0.0
    assert "not Hurwitz" in res.diagnostic


def test_rightmost_no_delay_is_eig():
    a = np.array([[-1.0, 2.0], [-3.0, -0.5]])
    root = rightmost_root(a, np.zeros((2, 2)), 0.3)
    ev = np.linalg.eigvals(a)
    assert root == pytest.approx(ev[np.argmax(ev.imag)])


def test_rightmost_scalar_unit_delay():
    root = rightmost_root([[0.0]], [[-1.0]], 1.0)
    assert root.real == pytest.approx(-0.3181, abs=1e-4)
    assert root.imag == pytest.approx(1.3372, abs=1e-4)
    # principal Lambert W branch: s = W0(-1)
    assert abs(root - complex(lambertw(-1.0))) < 1e-8


def test_rightmost_marginal_at_pi_half():
    root = rightmost_root([[0.0]], [[-1.0]], math.pi / 2)
    assert abs(root - 1j) < 1e-8


@given(st.floats(-2.0, 1.0), st.floats(-3.0, 3.0).filter(lambda b: abs(b) > 0.05), st.floats(0.05, 3.0))
def test_rightmost_scalar_lambert(a, b, h):
    # s - a = b e^{-sh}  =>  s = a + W0(b h e^{-a h}) / h
    expected = a + complex(lambertw(b * h * math.exp(-a * h))) / h
    root = rightmost_root([[a]], [[b]], h)
    assert root.real == pytest.approx(expected.real, abs=1e-7)
    assert abs(root.imag) == pytest.approx(abs(expected.imag), abs=1e-7)


def test_oracle_margin_scalar():
    assert oracle_delay_margin([[0.0]], [[-1.0]], h_cap=3.0) == pytest.approx(math.pi / 2, abs=1e-5)


def test_unconverged_discretization_reported():
    with pytest.raises(DiscretizationError):
        rightmost_root([[0.0]], [[-40.0]], 5.0, n_cheb=3, max_doublings=1)


def test_lkparams_validation(rng):
    with pytest.raises(ValueError):
        LkParams(np.eye(2), np.eye(2), np.eye(2), 1.0, 2)
    with pytest.raises(ValueError):
        LkParams(np.eye(2), np.eye(2), np.eye(2), 0.0, 1)
