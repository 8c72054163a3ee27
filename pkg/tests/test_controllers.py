import math

import pytest
from hypothesis import given, strategies as st

from tdaqm.controllers import (
    REF_PI_A, REF_PI_B, AqmConfig, AqmKind, AqmState, Controller, estimate_window,
    pi_update, red_probability, sf_probability, sfi_probability,
)
from tdaqm.synthesis import REF_K_SF, REF_K_SFI

P0 = 0.008415
SF = REF_K_SF.as_tuple()
SFI = REF_K_SFI.as_tuple()
finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_sf_equilibrium_and_hand_value():
    assert sf_probability(0.0, 0.0, SF, P0) == P0
    assert sf_probability(1.0, 0.0, SF, P0) == pytest.approx(0.008178, abs=5e-7)
    assert sf_probability(0.0, -1e9, (0.0, 1e-3), P0) == 0.0


def test_sfi_quiet_history_holds_p0():
    state = AqmState()
    for _ in range(100):
        p, state = sfi_probability(0.0, 0.0, state, SFI, P0, 0.01)
        assert p == P0
    assert state.integral_acc == 0.0


def test_sfi_integral_matches_closed_form():
    e, dt, steps = 3.0, 0.01, 500
    state = AqmState()
    for _ in range(steps):
        p, state = sfi_probability(0.0, e, state, (0.0, 0.0, 1e-5), P0, dt)
    # first call has dt = 0.01 too, so the accumulator holds e * steps * dt
    assert state.integral_acc == pytest.approx(e * steps * dt, rel=1e-12)
    assert p == pytest.approx(P0 + 1e-5 * e * steps * dt, rel=1e-12)


def test_sfi_trapezoid_on_ramp():
    state, dt = AqmState(), 0.1
    for i in range(11):
        _, state = sfi_probability(0.0, float(i), state, (0.0, 0.0, 0.0), P0, 0.0 if i == 0 else dt)
    # exact integral of dq = 10 t over [0, 1]
    assert state.integral_acc == pytest.approx(5.0, rel=1e-12)


def test_pi_constant_error_slope():
    state = AqmState(prev_p=P0)
    ps = []
    for _ in range(20):
        p, state = pi_update(100.0, state, REF_PI_A, REF_PI_B, 1 / 160)
        ps.append(p)
    steps = [b - a for a, b in zip(ps, ps[1:])]
    assert all(s == pytest.approx(6e-6, rel=1e-6) for s in steps)


def test_pi_zero_error_holds():
    state = AqmState(prev_p=0.3)
    for _ in range(50):
        p, state = pi_update(0.0, state, REF_PI_A, REF_PI_B, 1 / 160)
    assert p == 0.3


@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=40))
def test_pi_telescopes_when_a_equals_b(dqs):
    a = 1e-4
    state = AqmState(prev_p=0.5, prev_dq=dqs[0])
    for dq in dqs:
        p, state = pi_update(dq, state, a, a, 1 / 160)
    assert p == pytest.approx(0.5 + a * (dqs[-1] - dqs[0]), abs=1e-12)


def test_red_ramp():
    cfg = AqmConfig(kind=AqmKind.RED, ewma_weight=1.0)
    assert red_probability(100.0, AqmState(), cfg)[0] == 0.0
    assert red_probability(175.0, AqmState(), cfg)[0] == pytest.approx(cfg.p_max / 2)
    assert red_probability(250.0, AqmState(), cfg)[0] == 1.0


def test_red_ewma_geometric():
    cfg = AqmConfig(kind=AqmKind.RED, ewma_weight=0.01)
    state = AqmState(ewma_q=0.0)
    target = 180.0
    for k in range(1, 200):
        _, state = red_probability(target, state, cfg)
        assert state.ewma_q == pytest.approx(target * (1 - (1 - 0.01) ** k), rel=1e-10)


def test_estimate_window_cases(net, op):
    rate = net.n_flows * op.w0 / op.r0
    assert estimate_window(rate, op.r0, net.n_flows) == pytest.approx(op.w0, rel=1e-14)
    assert estimate_window(0.0, op.r0, net.n_flows) == 0.0


@given(finite, finite, finite, st.floats(0, 1))
def test_sf_and_sfi_in_unit_interval(dw, dq, acc, p0):
    assert 0.0 <= sf_probability(dw, dq, SF, p0) <= 1.0
    p, _ = sfi_probability(dw, dq, AqmState(integral_acc=acc), SFI, p0, 0.01)
    assert 0.0 <= p <= 1.0


@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=30), st.floats(0, 1))
def test_sf_equals_sfi_without_integral(seq, p0):
    state = AqmState()
    gains = SF + (0.0,)
    for dw, dq in seq:
        p, state = sfi_probability(dw, dq, state, gains, p0, 0.01)
        assert p == sf_probability(dw, dq, SF, p0)


@given(st.floats(1e3, 1e6), st.integers(1, 30))
def test_sfi_anti_windup(dq, n):
    # a huge positive error drives p above 1: the accumulator must not move
    state = AqmState(integral_acc=2.0)
    for _ in range(n):
        p, state = sfi_probability(0.0, dq, state, (0.0, 1.0, 1.0), 0.5, 0.01)
        assert p == 1.0
        assert state.integral_acc == 2.0


@pytest.mark.parametrize("kind", list(AqmKind))
def test_controller_deterministic_and_bounded(kind, net, op):
    gains = {AqmKind.SF: SF, AqmKind.SFI_CWND: SFI, AqmKind.SFI_AGGFLOW: SFI}.get(kind, ())
    cfg = AqmConfig(kind=kind, gains=gains)

    def run():
        ctl = Controller(cfg, net, op)
        out = []
        for i in range(400):
            t = i * 1e-3
            q = 175 + 80 * math.sin(7 * t)
            out.append(ctl.update(t, op.w0 + 3 * math.cos(5 * t), q, op.w0))
        return out

    a, b = run(), run()
    assert a == b
    assert all(0.0 <= p <= 1.0 for p in a)


def test_controller_pi_runs_on_own_clock(net, op):
    ctl = Controller(AqmConfig(kind=AqmKind.PI), net, op)
    values = [ctl.update(i * 1e-3, op.w0, 275.0, op.w0) for i in range(1000)]
    # 1 s at 160 Hz: p changes at most 160 times (plus the first tick)
    changes = sum(1 for a, b in zip(values, values[1:]) if a != b)
    assert 155 <= changes <= 161


def test_config_validation():
    with pytest.raises(ValueError):
        AqmConfig(kind=AqmKind.SF, gains=(1.0, 2.0, 3.0))
    with pytest.raises(ValueError):
        AqmConfig(kind=AqmKind.RED, min_th=200, max_th=150)
    with pytest.raises(ValueError):
        AqmConfig(kind=AqmKind.RED, p_max=1.5)
    with pytest.raises(ValueError):
        AqmConfig(kind=AqmKind.RED, max_th=900).check_buffer(800)
