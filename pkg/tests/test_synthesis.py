import math

import numpy as np
import pytest

from tdaqm.delay_lmi import Verdict, analysis_feasible, autonomous, rightmost_root
from tdaqm.model import TdsSystem
from tdaqm.synthesis import (
    REF_K_SF, REF_K_SFI, Gains, SynthesisOptions, certificate_from_dict, certificate_to_dict,
    certify_gain, check_synthesis, dump_certificate, load_certificate, synthesize_gain,
    verify_closed_loop,
)

FAST = SynthesisOptions(restarts=2, rounds=60)


def _scalar_input_delay(h=0.1):
    return TdsSystem(a=np.array([[1.0]]), a_d=np.zeros((1, 1)), b=np.array([[1.0]]),
                     b_d=np.zeros((1, 1)), delay=h)


@pytest.fixture(scope="module")
def plain_cert(request):
    net_sys = request.getfixturevalue("tcp_sys")
    op = request.getfixturevalue("op")
    return synthesize_gain(net_sys, op.r0, 1, SynthesisOptions(restarts=3))


def test_scalar_unstable_plant_gets_strong_gain():
    cert = synthesize_gain(_scalar_input_delay(), 0.1, 1, FAST)
    assert cert.feasible
    assert cert.gains.k[0, 0] < -1
    assert cert.margin < 0
    assert cert.oracle_root.real < 0


def test_scalar_reference_gain_root():
    # s - 1 + 2 e^{-0.1 s} = 0 has its rightmost root in the open left half-plane
    root = rightmost_root([[1.0]], [[-2.0]], 0.1)
    assert root.real < 0
    assert abs(root - 1 + 2 * np.exp(-0.1 * root)) < 1e-9
    assert certify_gain(_scalar_input_delay(), Gains([[-2.0]]), 0.1).feasible


def test_tcp_plain_synthesis(plain_cert):
    assert plain_cert.feasible
    assert plain_cert.gains.flavor == "plain"
    assert 1e-5 <= np.abs(plain_cert.gains.k).max() <= 1e-2
    assert plain_cert.oracle_root.real < 0


def test_hurwitz_open_loop_certifies_zero_gain():
    sys = TdsSystem(a=np.array([[-1.0, 0.5], [0.0, -2.0]]), a_d=np.zeros((2, 2)),
                    b=np.array([[1.0], [0.3]]), b_d=np.zeros((2, 1)), delay=0.5)
    cert = certify_gain(sys, Gains([[0.0, 0.0]]), 0.5)
    assert cert.feasible and cert.margin < 0


def test_reference_gains_verified(tcp_sys, aug_sys, op):
    sf = verify_closed_loop(tcp_sys, REF_K_SF, op.r0)
    sfi = verify_closed_loop(aug_sys, REF_K_SFI, op.r0)
    assert sf.feasible and sf.oracle_root.real < 0
    assert sfi.feasible and sfi.oracle_root.real < 0


def test_zero_gain_on_unstable_loop_not_certified():
    sys = TdsSystem(a=np.array([[0.3]]), a_d=np.array([[0.1]]), b=np.array([[1.0]]),
                    b_d=np.zeros((1, 1)), delay=0.2)
    cert = verify_closed_loop(sys, Gains([[0.0]]), 0.2)
    assert not cert.feasible
    assert cert.oracle_root.real > 0


def test_gain_shape_checked(tcp_sys):
    with pytest.raises(ValueError):
        verify_closed_loop(tcp_sys, REF_K_SFI, 0.2)


def test_margin_reassembles(plain_cert):
    again = check_synthesis(plain_cert.system, plain_cert.lk, plain_cert.slack, plain_cert.gains.k)
    assert again == pytest.approx(plain_cert.margin, abs=1e-10)


def test_synthesis_implies_analysis(plain_cert):
    sys = plain_cert.system
    closed = autonomous(sys.a, sys.closed_loop_delayed(plain_cert.gains.k))
    assert analysis_feasible(closed, plain_cert.h_m, plain_cert.r).feasible


def test_integral_synthesis_round_trip(aug_sys, op):
    cert = synthesize_gain(aug_sys, op.r0, 1, SynthesisOptions(restarts=2))
    assert cert.feasible and cert.gains.flavor == "integral"
    closed = autonomous(aug_sys.a, aug_sys.closed_loop_delayed(cert.gains.k))
    assert analysis_feasible(closed, op.r0, 1).feasible


def test_seeded_synthesis_is_bitwise_reproducible():
    sys = _scalar_input_delay()
    a = synthesize_gain(sys, 0.1, 1, SynthesisOptions(restarts=3, seed=7))
    b = synthesize_gain(sys, 0.1, 1, SynthesisOptions(restarts=3, seed=7))
    assert certificate_to_dict(a) == certificate_to_dict(b)


def test_certificate_file_round_trip(plain_cert, tmp_path):
    path = tmp_path / "cert.toml"
    dump_certificate(plain_cert, path)
    back = load_certificate(path)
    assert certificate_to_dict(back) == certificate_to_dict(plain_cert)
    assert back.gains == plain_cert.gains
    assert np.array_equal(back.slack, plain_cert.slack)
    assert check_synthesis(back.system, back.lk, back.slack, back.gains.k) == plain_cert.margin


def test_certificate_document_kind_checked():
    with pytest.raises(ValueError):
        certificate_from_dict({"kind": "something-else"})


def test_decay_rate_option(tcp_sys, op):
    cert = synthesize_gain(tcp_sys, op.r0, 1, SynthesisOptions(restarts=2, decay_rate=0.5))
    assert cert.verdict is Verdict.FEASIBLE
    root = rightmost_root(tcp_sys.a, tcp_sys.closed_loop_delayed(cert.gains.k), op.r0)
    assert root.real < -0.5
    assert cert.notes["decay_rate"] == 0.5


def test_gains_validation():
    with pytest.raises(ValueError):
        Gains([[math.nan, 1.0]])
    assert Gains([[1.0, 2.0]]).flavor == "plain"
    assert Gains([[1.0, 2.0, 3.0]]).flavor == "integral"
    assert Gains([[1.0]]).flavor == "generic"
    assert hash(Gains([[1.0, 2.0]])) == hash(Gains(np.array([1.0, 2.0])))
