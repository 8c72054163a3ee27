"""State-feedback design for x'(t) = A x(t) + Ad x(t-h) + B u(t-h), u = K x.

The closed-loop LK condition is relaxed with slack variables X:
Gamma + X S(K) + S(K)' X' < 0 with S(K) = [-I, A, 0, Ad + B K]. The
condition is bilinear in (X, K); it is solved by alternating two convex
subproblems, each a smoothed largest-eigenvalue minimization.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import block_diag, solve_continuous_are

from tdaqm import _eigopt
from tdaqm.delay_lmi import (
    EPS_MARGIN, LkParams, StabilityCertificate, Verdict, _lk_bases, _transform_lk,
    analysis_feasible, autonomous, build_gamma, constraint_matrix, rightmost_root, state_scaling,
)
from tdaqm.model import TdsSystem

log = logging.getLogger(__name__)

try:  # Python >= 3.11
    import tomllib as _toml_reader
except ModuleNotFoundError:  # pragma: no cover
    import tomli as _toml_reader
import tomli_w


@dataclass(frozen=True)
class Gains:
    k: np.ndarray

    def __post_init__(self):
        k = np.atleast_2d(np.asarray(self.k, dtype=float))
        if not np.all(np.isfinite(k)):
            raise ValueError("gains must be finite")
        if k.ndim != 2 or k.size == 0:
            raise ValueError(f"gain must be a non-empty matrix, got shape {k.shape}")
        object.__setattr__(self, "k", k)

    @property
    def flavor(self) -> str:
        # TCP layouts: (dW, dq) or (dW, dq, int dq); anything else is generic
        if self.k.shape[0] == 1:
            return {2: "plain", 3: "integral"}.get(self.k.shape[1], "generic")
        return "generic"

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(float(v) for v in self.k.ravel())

    def __eq__(self, other):
        return isinstance(other, Gains) and np.array_equal(self.k, other.k)

    def __hash__(self):
        return hash(self.as_tuple())


REF_K_SF = Gains(1e-3 * np.array([[-0.2372, 0.0429]]))
REF_K_SFI = Gains(1e-4 * np.array([[0.9385, 0.5717, 0.3559]]))


@dataclass
class SynthesisOptions:
    restarts: int = 8
    rounds: int = 200
    seed: int = 0
    gain_penalty: float = 1e-3
    decay_rate: float = 0.0
    max_seconds: float = 240.0
    stall_rounds: int = 3
    maxiter: int = 300


@dataclass
class SynthesisCertificate:
    system: TdsSystem
    gains: Gains
    lk: LkParams | None
    slack: np.ndarray | None
    margin: float
    verdict: Verdict
    oracle_root: complex | None = None
    notes: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.verdict is Verdict.FEASIBLE

    @property
    def h_m(self) -> float:
        return self.lk.h_m

    @property
    def r(self) -> int:
        return self.lk.r


def slack_form(sys: TdsSystem, lk: LkParams, slack: np.ndarray, k) -> np.ndarray:
    s_mat = constraint_matrix(sys, lk.r, k)
    xs = slack @ s_mat
    return build_gamma(lk, sys.dim) + xs + xs.T


def check_synthesis(sys: TdsSystem, lk: LkParams, slack: np.ndarray, k) -> float:
    """Largest eigenvalue of Gamma + X S + S' X' (+inf if P, Q or R is not
    positive definite)."""
    if not lk.is_positive_definite():
        return math.inf
    return _eigopt.lambda_max(slack_form(sys, lk, slack, k))


def _scaled(sys: TdsSystem, s: np.ndarray, su: float):
    ti = 1.0 / s
    a = sys.a * ti[:, None] * s[None, :]
    a_d = sys.a_d * ti[:, None] * s[None, :]
    b = sys.b * ti[:, None] * su
    return a, a_d, b


class _Problem:
    """Both convex half-steps, in balanced coordinates."""

    def __init__(self, a, a_d, b, h_m, r, penalty):
        self.a, self.a_d, self.b = a, a_d, b
        self.n, self.m = a.shape[0], b.shape[1]
        self.h_m, self.r = h_m, r
        self.penalty = penalty
        bn, bq = _lk_bases(self.n, r)
        self.bn, self.bq = bn, bq
        self.n_lk = 2 * len(bn) + len(bq)
        self.xdim = ((r + 2) * self.n, self.n)

    def s_mat(self, k):
        n, r = self.n, self.r
        return np.hstack([-np.eye(n), self.a, np.zeros((n, (r - 1) * n)), self.a_d + self.b @ k])

    def lk_of(self, v) -> LkParams:
        k1, k2 = len(self.bn), len(self.bq)
        return LkParams(
            p=np.tensordot(v[:k1], self.bn, axes=1),
            q=np.tensordot(v[k1:k1 + k2], self.bq, axes=1),
            r_mat=np.tensordot(v[k1 + k2:], self.bn, axes=1),
            h_m=self.h_m, r=self.r,
        )

    def full(self, lk, x, k):
        xs = x @ self.s_mat(k)
        return block_diag(build_gamma(lk, self.n) + xs + xs.T, -lk.p, -lk.q, -lk.r_mat)

    def xstep(self, v, x, k, maxiter):
        """Minimize over (P, Q, R, X) with K fixed; trace(P + Q + R) = 1."""
        n, r = self.n, self.r
        s_mat = self.s_mat(k)
        zn, zq = np.zeros((n, n)), np.zeros((r * n, r * n))
        mats, tr = [], []
        for e in self.bn:
            mats.append(block_diag(build_gamma(LkParams(e, zq, zn, self.h_m, r), n), -e, zq, zn))
            tr.append(np.trace(e))
        for e in self.bq:
            mats.append(block_diag(build_gamma(LkParams(zn, e, zn, self.h_m, r), n), zn, -e, zn))
            tr.append(np.trace(e))
        for e in self.bn:
            mats.append(block_diag(build_gamma(LkParams(zn, zq, e, self.h_m, r), n), zn, zq, -e))
            tr.append(np.trace(e))
        size = mats[0].shape[0]
        rows = self.xdim[0]
        for i in range(rows):
            for j in range(n):
                xs = np.zeros((rows, rows))
                xs[i, :] = s_mat[j, :]
                m = np.zeros((size, size))
                m[:rows, :rows] = xs + xs.T
                mats.append(m)
                tr.append(0.0)
        basis = np.array(mats)
        weights = np.array(tr)
        from scipy.linalg import null_space
        nsp = null_space(weights[None, :])
        xc = weights / (weights @ weights)
        offset = np.tensordot(xc, basis, axes=1)
        red = np.tensordot(nsp.T, basis, axes=1)
        full0 = np.concatenate([v, x.ravel()])
        z0 = nsp.T @ (full0 - xc)
        z, val = _eigopt.minimize_max_eig(offset, red, z0, maxiter=maxiter)
        full = xc + nsp @ z
        return full[:self.n_lk], full[self.n_lk:].reshape(self.xdim), val

    def kstep(self, lk, x, k, maxiter):
        """Minimize over K with (P, Q, R, X) fixed, plus the gain penalty."""
        n, m = self.n, self.m
        rows = self.xdim[0]
        offset = self.full(lk, x, np.zeros_like(k))
        size = offset.shape[0]
        mats = []
        for i in range(m):
            for j in range(n):
                e = np.zeros((m, n))
                e[i, j] = 1.0
                blk = np.zeros((rows, rows))
                blk[:, (rows - n):] = x @ (self.b @ e)
                mm = np.zeros((size, size))
                mm[:rows, :rows] = blk + blk.T
                mats.append(mm)
        basis = np.array(mats)
        pen = np.full(m * n, self.penalty)
        kk, _ = _eigopt.minimize_max_eig(offset, basis, k.ravel(), penalty=pen, maxiter=maxiter)
        kk = kk.reshape(m, n)
        val = _eigopt.lambda_max(self.full(lk, x, kk))
        return kk, val


def _lqr_seed(a, a_d, b):
    n, m = a.shape[0], b.shape[1]
    try:
        p = solve_continuous_are(a + a_d, b, np.eye(n), np.eye(m))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ValueError(f"(A + Ad, B) is not stabilizable: {exc}") from exc
    return -b.T @ p


def _shifted(sys: TdsSystem, alpha: float, h: float) -> TdsSystem:
    """Substitution x = e^{-alpha t} y: y stable => x decays at rate alpha."""
    if alpha == 0.0:
        return sys
    g = math.exp(alpha * h)
    return TdsSystem(a=sys.a + alpha * np.eye(sys.dim), a_d=g * sys.a_d, b=g * sys.b,
                     b_d=sys.b_d, delay=sys.delay)


def _validate(sys, lk, x, k, h_m):
    margin = check_synthesis(sys, lk, x, k)
    tol = EPS_MARGIN * np.linalg.norm(build_gamma(lk, sys.dim), 2)
    root = None
    ok = margin < -tol
    if ok:
        a_cl = sys.closed_loop_delayed(k)
        root = rightmost_root(sys.a, a_cl, h_m)
        ok = root.real < 0 and rightmost_root(sys.a, a_cl, 0.5 * h_m).real < 0
    return ok, margin, root


def synthesize_gain(sys: TdsSystem, h_m: float, r: int = 1,
                    opts: SynthesisOptions | None = None) -> SynthesisCertificate:
    """Search a gain K making u = K x stabilizing for every delay up to h_m.

    Returns a certificate whose feasible verdict has been re-checked on the
    assembled slack inequality and on the closed-loop characteristic roots.
    With ``opts.decay_rate`` > 0 the search runs on the exponentially
    shifted system, then the final certificate is recomputed on ``sys``.
    """
    opts = opts or SynthesisOptions()
    target = _shifted(sys, opts.decay_rate, h_m)
    a0, ad0, b0 = target.a, target.a_d, target.b
    s = state_scaling(a0, ad0)
    ti = 1.0 / s
    b_bal = b0 * ti[:, None]
    su = 1.0 / max(np.abs(b_bal).max(), 1e-300)
    a, a_d, b = _scaled(target, s, su)
    k_seed = _lqr_seed(a, a_d, b)
    if np.max(np.linalg.eigvals(a + a_d + b @ k_seed).real) >= 0:
        raise ValueError("no zero-delay stabilizing seed gain found")

    prob = _Problem(a, a_d, b, h_m, r, opts.gain_penalty)
    seeds = np.random.SeedSequence(opts.seed).spawn(max(opts.restarts, 1))
    start = time.monotonic()
    best = None  # (objective, restart, k_bal)
    for i, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        k = k_seed.copy() if i == 0 else k_seed * rng.uniform(0.05, 1.0) + \
            0.1 * np.abs(k_seed).max() * rng.normal(size=k_seed.shape)
        v = np.zeros(prob.n_lk)
        x = np.zeros(prob.xdim)
        last, stall = math.inf, 0
        for rnd in range(opts.rounds):
            v, x, val = prob.xstep(v, x, k, opts.maxiter)
            k, val = prob.kstep(prob.lk_of(v), x, k, opts.maxiter)
            obj = val + 0.5 * opts.gain_penalty * float(np.sum(k * k))
            log.debug("restart %d round %d lambda=%.4e obj=%.4e", i, rnd, val, obj)
            if obj > last - 1e-6 * max(1.0, abs(last)):
                stall += 1
            else:
                stall = 0
            last = min(last, obj)
            if val < 0 and (best is None or obj < best[0]):
                best = (obj, i, k.copy())
            if stall >= opts.stall_rounds or time.monotonic() - start > opts.max_seconds:
                break
        if time.monotonic() - start > opts.max_seconds:
            log.info("synthesis budget exhausted after restart %d", i)
            break

    if best is None:
        k_orig = su * k_seed * ti[None, :]
        return SynthesisCertificate(system=sys, gains=Gains(k_orig), lk=None, slack=None,
                                    margin=math.inf, verdict=Verdict.UNDECIDED,
                                    notes={"reason": "no restart reached a negative margin"})
    k_orig = su * best[2] * ti[None, :]
    return certify_gain(sys, Gains(k_orig), h_m, r, maxiter=opts.maxiter,
                        notes={"restart": best[1], "decay_rate": opts.decay_rate})


def certify_gain(sys: TdsSystem, gains: Gains, h_m: float, r: int = 1, *, maxiter: int = 300,
                 notes: dict | None = None) -> SynthesisCertificate:
    """Find (P, Q, R, X) for a fixed gain and validate the slack inequality."""
    k = gains.k
    s = state_scaling(sys.a, sys.closed_loop_delayed(k))
    ti = 1.0 / s
    a, a_d, _ = _scaled(sys, s, 1.0)
    b = sys.b * ti[:, None]
    k_bal = k * s[None, :]
    prob = _Problem(a, a_d, b, h_m, r, 0.0)
    v, x_bal, _ = prob.xstep(np.zeros(prob.n_lk), np.zeros(prob.xdim), k_bal, maxiter)
    lk = _transform_lk(prob.lk_of(v), s)
    # X maps through xi = D xi~ with D = diag(T, ..., T): X = D^{-T} X~ T^{-1}
    d_inv = np.tile(ti, lk.r + 2)
    x = d_inv[:, None] * x_bal * ti[None, :]
    ok, margin, root = _validate(sys, lk, x, k, h_m)
    return SynthesisCertificate(system=sys, gains=gains, lk=lk, slack=x, margin=margin,
                                verdict=Verdict.FEASIBLE if ok else Verdict.UNDECIDED,
                                oracle_root=root, notes=dict(notes or {}))


def verify_closed_loop(sys: TdsSystem, gains: Gains, h_m: float, r: int = 1,
                       **search) -> StabilityCertificate:
    if gains.k.shape != (sys.n_inputs, sys.dim):
        raise ValueError(f"gain shape {gains.k.shape} does not fit a {sys.dim}-state system")
    a_cl = sys.closed_loop_delayed(gains.k)
    cert = analysis_feasible(autonomous(sys.a, a_cl), h_m, r, **search)
    cert.oracle_root = rightmost_root(sys.a, a_cl, h_m)
    return cert


# -- serialization ----------------------------------------------------------

def _mat(m):
    return [[float(v) for v in row] for row in np.atleast_2d(m)]


def certificate_to_dict(cert: SynthesisCertificate) -> dict:
    sys = cert.system
    doc = {
        "schema": 1,
        "kind": "synthesis-certificate",
        "verdict": cert.verdict.value,
        "margin": float(cert.margin),
        "gains": {"flavor": cert.gains.flavor, "k": _mat(cert.gains.k)},
        "system": {"a": _mat(sys.a), "a_d": _mat(sys.a_d), "b": _mat(sys.b),
                   "b_d": _mat(sys.b_d), "delay": float(sys.delay)},
        "notes": {k: v for k, v in cert.notes.items()},
    }
    if cert.lk is not None:
        doc["lk"] = {"h_m": float(cert.lk.h_m), "r": int(cert.lk.r), "p": _mat(cert.lk.p),
                     "q": _mat(cert.lk.q), "r_mat": _mat(cert.lk.r_mat)}
    if cert.slack is not None:
        doc["slack"] = {"x": _mat(cert.slack)}
    if cert.oracle_root is not None:
        doc["oracle_root"] = {"re": float(cert.oracle_root.real), "im": float(cert.oracle_root.imag)}
    return doc


def certificate_from_dict(doc: dict) -> SynthesisCertificate:
    if doc.get("kind") != "synthesis-certificate":
        raise ValueError("not a synthesis certificate document")
    sd = doc["system"]
    sys = TdsSystem(a=np.array(sd["a"]), a_d=np.array(sd["a_d"]), b=np.array(sd["b"]),
                    b_d=np.array(sd["b_d"]), delay=sd["delay"])
    lk = None
    if "lk" in doc:
        ld = doc["lk"]
        lk = LkParams(p=np.array(ld["p"]), q=np.array(ld["q"]), r_mat=np.array(ld["r_mat"]),
                      h_m=ld["h_m"], r=ld["r"])
    root = None
    if "oracle_root" in doc:
        root = complex(doc["oracle_root"]["re"], doc["oracle_root"]["im"])
    return SynthesisCertificate(
        system=sys, gains=Gains(np.array(doc["gains"]["k"])), lk=lk,
        slack=np.array(doc["slack"]["x"]) if "slack" in doc else None,
        margin=doc["margin"], verdict=Verdict(doc["verdict"]), oracle_root=root,
        notes=dict(doc.get("notes", {})),
    )


def dump_certificate(cert: SynthesisCertificate, path) -> None:
    Path(path).write_text(tomli_w.dumps(certificate_to_dict(cert)))


def load_certificate(path) -> SynthesisCertificate:
    return certificate_from_dict(_toml_reader.loads(Path(path).read_text()))
