"""Delay-dependent stability of x'(t) = A x(t) + Ad x(t-h) through a
discretized Lyapunov-Krasovskii functional, plus a characteristic-root oracle.

The extended vector is xi = (x'(t), x(t), x(t-h/r), ..., x(t-h)). The
functional's derivative is xi' Gamma xi, and the system constrains xi to the
kernel of S = [-I, A, 0, ..., 0, Ad].
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import block_diag, matrix_balance

from tdaqm import _eigopt
from tdaqm.model import TdsSystem

log = logging.getLogger(__name__)

EPS_PD = 1e-8
EPS_MARGIN = 1e-9


class Verdict(str, Enum):
    FEASIBLE = "feasible"
    # the matrix inequality has no solution at this (h_m, r); says nothing
    # about instability of the delay system itself
    INFEASIBLE = "infeasible"
    UNDECIDED = "undecided"


class DiscretizationError(ArithmeticError):
    pass


@dataclass
class LkParams:
    p: np.ndarray
    q: np.ndarray
    r_mat: np.ndarray
    h_m: float
    r: int

    def __post_init__(self):
        n = self.p.shape[0]
        if self.r < 1:
            raise ValueError(f"discretization step r must be >= 1, got {self.r}")
        if not self.h_m > 0:
            raise ValueError(f"h_m must be > 0, got {self.h_m}")
        if self.p.shape != (n, n) or self.r_mat.shape != (n, n):
            raise ValueError("P and R must be n x n")
        if self.q.shape != (self.r * n, self.r * n):
            raise ValueError(f"Q must be {self.r * n} x {self.r * n}, got {self.q.shape}")

    @property
    def n(self) -> int:
        return self.p.shape[0]

    def min_eig(self) -> float:
        return min(float(np.linalg.eigvalsh(m)[0]) for m in (self.p, self.q, self.r_mat))

    def is_positive_definite(self) -> bool:
        scale = max(np.abs(m).max() for m in (self.p, self.q, self.r_mat))
        return scale > 0 and self.min_eig() > EPS_PD * scale


@dataclass
class StabilityCertificate:
    lk: LkParams | None
    margin: float
    verdict: Verdict
    oracle_root: complex | None = None

    @property
    def feasible(self) -> bool:
        return self.verdict is Verdict.FEASIBLE


@dataclass(frozen=True)
class MarginResult:
    h_max: float
    lower: float
    upper: float
    capped: bool = False
    diagnostic: str = ""


def autonomous(a, a_d, delay: float = 1.0) -> TdsSystem:
    """Wrap (A, Ad) as an input-free TdsSystem."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    a_d = np.atleast_2d(np.asarray(a_d, dtype=float))
    n = a.shape[0]
    return TdsSystem(a=a, a_d=a_d, b=np.zeros((n, 1)), b_d=np.zeros((n, 1)), delay=delay)


def build_gamma(lk: LkParams, n: int) -> np.ndarray:
    if lk.n != n:
        raise ValueError(f"LkParams built for n={lk.n}, asked for n={n}")
    r, h = lk.r, lk.h_m
    size = (r + 2) * n
    g = np.zeros((size, size))

    def blk(i):
        return slice(i * n, (i + 1) * n)

    g[blk(0), blk(0)] += (h / r) * lk.r_mat
    g[blk(0), blk(1)] += lk.p
    g[blk(1), blk(0)] += lk.p
    g[blk(1), blk(1)] -= (r / h) * lk.r_mat
    g[blk(1), blk(2)] += (r / h) * lk.r_mat
    g[blk(2), blk(1)] += (r / h) * lk.r_mat
    g[blk(2), blk(2)] -= (r / h) * lk.r_mat
    g[n:(r + 1) * n, n:(r + 1) * n] += lk.q
    g[2 * n:, 2 * n:] -= lk.q
    return g


def constraint_matrix(sys: TdsSystem, r: int, gain=None) -> np.ndarray:
    n = sys.dim
    last = sys.a_d if gain is None else sys.closed_loop_delayed(gain)
    return np.hstack([-np.eye(n), sys.a, np.zeros((n, (r - 1) * n)), last])


def null_space_basis(s_mat: np.ndarray) -> np.ndarray:
    """Kernel basis [M; I] of S = [-I, M]."""
    n = s_mat.shape[0]
    if s_mat.shape[1] % n or not np.array_equal(s_mat[:, :n], -np.eye(n)):
        raise ValueError("constraint matrix must start with a -I block")
    m = s_mat[:, n:]
    return np.vstack([m, np.eye(m.shape[1])])


def projected_form(lk: LkParams, s_mat: np.ndarray) -> np.ndarray:
    sp = null_space_basis(s_mat)
    return sp.T @ build_gamma(lk, lk.n) @ sp


def state_scaling(a, a_d, extra=None) -> np.ndarray:
    """Diagonal coordinate scaling (powers of two) balancing |A| + |Ad|."""
    mag = np.abs(a) + np.abs(a_d)
    if extra is not None:
        mag = mag + np.abs(extra)
    if mag.shape[0] == 1:
        return np.ones(1)
    _, (s, _) = matrix_balance(mag, permute=False, separate=True)
    return np.asarray(s, dtype=float)


def _lk_bases(n: int, r: int):
    bn = _eigopt.sym_basis(n)
    bq = _eigopt.sym_basis(r * n)
    return bn, bq


def _unpack_lk(x, n, r, h_m):
    bn, bq = _lk_bases(n, r)
    k1, k2 = len(bn), len(bq)
    p = np.tensordot(x[:k1], bn, axes=1)
    q = np.tensordot(x[k1:k1 + k2], bq, axes=1)
    rm = np.tensordot(x[k1 + k2:k1 + k2 + k1], bn, axes=1)
    return LkParams(p=p, q=q, r_mat=rm, h_m=h_m, r=r)


def _lk_family(n, r, h_m, lmi_block):
    """Symmetric-matrix family diag(L(P,Q,R), -P, -Q, -R) over the LK basis.

    ``lmi_block(lk)`` maps LK matrices to the (linear) inequality block.
    Returns (basis, trace_weights).
    """
    bn, bq = _lk_bases(n, r)
    zn, zq = np.zeros((n, n)), np.zeros((r * n, r * n))
    mats, tr = [], []
    for e in bn:
        lk = LkParams(e, zq, zn, h_m, r)
        mats.append(block_diag(lmi_block(lk), -e, zq, zn))
        tr.append(np.trace(e))
    for e in bq:
        lk = LkParams(zn, e, zn, h_m, r)
        mats.append(block_diag(lmi_block(lk), zn, -e, zn))
        tr.append(np.trace(e))
    for e in bn:
        lk = LkParams(zn, zq, e, h_m, r)
        mats.append(block_diag(lmi_block(lk), zn, zq, -e))
        tr.append(np.trace(e))
    return np.array(mats), np.array(tr)


def _normalized(basis, weights):
    """Reparametrize x = xc + N z so that weights . x = 1 for all z."""
    from scipy.linalg import null_space

    nsp = null_space(weights[None, :])
    xc = weights / (weights @ weights)
    offset = np.tensordot(xc, basis, axes=1)
    red = np.tensordot(nsp.T, basis, axes=1)
    return offset, red, xc, nsp


def _transform_lk(lk: LkParams, s: np.ndarray) -> LkParams:
    """Map an LK certificate found in coordinates x~ = diag(1/s) x back to x."""
    ti = np.diag(1.0 / s)
    tq = np.kron(np.eye(lk.r), ti)
    return LkParams(p=ti @ lk.p @ ti, q=tq @ lk.q @ tq, r_mat=ti @ lk.r_mat @ ti, h_m=lk.h_m, r=lk.r)


def _margin_tolerance(g: np.ndarray) -> float:
    return EPS_MARGIN * max(np.linalg.norm(g, 2), 1e-300)


def check_analysis(sys_a, sys_ad, lk: LkParams) -> float:
    """Exact recheck: largest eigenvalue of S_perp' Gamma S_perp, or +inf when
    the LK matrices are not positive definite."""
    n = sys_a.shape[0]
    s_mat = np.hstack([-np.eye(n), sys_a, np.zeros((n, (lk.r - 1) * n)), sys_ad])
    if not lk.is_positive_definite():
        return math.inf
    return _eigopt.lambda_max(projected_form(lk, s_mat))


def analysis_feasible(sys: TdsSystem, h_m: float, r: int, *, restarts: int = 3, seed: int = 0,
                      maxiter: int = 400) -> StabilityCertificate:
    """Search for P, Q, R > 0 with S_perp' Gamma S_perp < 0 at delay bound h_m.

    The search runs in balanced coordinates on a trace-normalized convex
    family; any candidate is re-verified on the original matrices. A
    certificate proves stability for every delay up to h_m.
    """
    n = sys.dim
    s = state_scaling(sys.a, sys.a_d)
    a_b = sys.a * (1.0 / s)[:, None] * s[None, :]
    ad_b = sys.a_d * (1.0 / s)[:, None] * s[None, :]
    s_bal = np.hstack([-np.eye(n), a_b, np.zeros((n, (r - 1) * n)), ad_b])
    sp = null_space_basis(s_bal)

    basis, weights = _lk_family(n, r, h_m, lambda lk: sp.T @ build_gamma(lk, n) @ sp)
    offset, red, xc, nsp = _normalized(basis, weights)

    seeds = np.random.SeedSequence(seed).spawn(max(restarts, 1))
    best = None
    for i, ss in enumerate(seeds):
        z0 = np.zeros(red.shape[0])
        if i > 0:
            z0 = np.random.default_rng(ss).normal(scale=0.3 / max(len(z0), 1) ** 0.5, size=len(z0))
        z, val = _eigopt.minimize_max_eig(offset, red, z0, maxiter=maxiter)
        log.debug("analysis h_m=%g r=%d restart=%d objective=%.3e", h_m, r, i, val)
        if best is None or val < best[1]:
            best = (z, val)
        if val < 0:
            break
    z, val = best
    lk = _transform_lk(_unpack_lk(xc + nsp @ z, n, r, h_m), s)
    margin = check_analysis(sys.a, sys.a_d, lk)
    g_norm = _margin_tolerance(build_gamma(lk, n))
    if val < 0 and margin < -g_norm:
        verdict = Verdict.FEASIBLE
    elif val > 1e-6 * max(1.0, np.abs(offset).max()):
        verdict = Verdict.INFEASIBLE
    else:
        verdict = Verdict.UNDECIDED
    return StabilityCertificate(lk=lk, margin=margin, verdict=verdict)


def is_delay_free_stable(a, a_d) -> bool:
    return bool(np.max(np.linalg.eigvals(np.asarray(a) + np.asarray(a_d)).real) < 0)


def max_stable_delay(sys: TdsSystem, r: int, tol: float = 1e-4, *, h_cap: float = 100.0,
                     h_start: float | None = None, **search) -> MarginResult:
    """Largest delay bound certified by the LK condition, by bisection."""
    if not is_delay_free_stable(sys.a, sys.a_d):
        return MarginResult(0.0, 0.0, 0.0, diagnostic="A + Ad is not Hurwitz: unstable at zero delay")

    def ok(h):
        return analysis_feasible(sys, h, r, **search).feasible

    if h_start is None:
        rate = max(np.abs(np.linalg.eigvals(sys.a + sys.a_d)).max(), np.abs(sys.a_d).max(), 1e-12)
        h_start = min(1e-2 / rate, h_cap)
    if not ok(h_start):
        return MarginResult(0.0, 0.0, 0.0,
                            diagnostic=f"no certificate even at h_m={h_start:.3g}; try a larger r")
    lo, hi = h_start, None
    h = h_start
    while hi is None:
        h = min(2.0 * h, h_cap)
        if ok(h):
            lo = h
            if h >= h_cap:
                return MarginResult(float(h_cap), float(h_cap), math.inf, capped=True,
                                    diagnostic="certified up to the search cap")
        else:
            hi = h
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return MarginResult(float(lo), float(lo), float(hi))


# -- characteristic-root oracle --------------------------------------------

def cheb(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Chebyshev points cos(j pi / n) and the differentiation matrix on them."""
    x = np.cos(np.pi * np.arange(n + 1) / n)
    c = np.hstack([2.0, np.ones(n - 1), 2.0]) * (-1.0) ** np.arange(n + 1)
    dx = x[:, None] - x[None, :]
    d = np.outer(c, 1.0 / c) / (dx + np.eye(n + 1))
    d -= np.diag(d.sum(axis=1))
    return x, d


def _generator(a, a_d, h, n_cheb):
    n = a.shape[0]
    _, d = cheb(n_cheb)
    d = d * (2.0 / h)  # nodes mapped to theta = h (x - 1) / 2 in [-h, 0]
    big = np.zeros((n * (n_cheb + 1), n * (n_cheb + 1)))
    big[:n, :n] = a
    big[:n, -n:] += a_d
    big[n:, :] = np.kron(d[1:, :], np.eye(n))
    return big


def _newton(a, a_d, h, s, iters=60):
    n = a.shape[0]
    eye = np.eye(n)
    for _ in range(iters):
        e = np.exp(-s * h)
        m = s * eye - a - a_d * e
        dm = eye + h * a_d * e
        try:
            step = 1.0 / np.trace(np.linalg.solve(m, dm))
        except np.linalg.LinAlgError:
            return s
        s = s - step
        if abs(step) < 1e-14 * max(1.0, abs(s)):
            break
    return s


def _rightmost(vals):
    vals = vals[np.isfinite(vals)]
    top = vals.real.max()
    cands = vals[vals.real >= top - 1e-9 * max(1.0, abs(top))]
    return complex(cands[np.argmax(cands.imag)])


def rightmost_root(a, a_d, h: float, n_cheb: int = 24, max_doublings: int = 4) -> complex:
    """Rightmost root of det(sI - A - Ad e^{-sh}) = 0.

    Spectral (Chebyshev collocation) discretization of the solution operator's
    generator gives candidates; the rightmost is polished by Newton on the
    characteristic function. The node count doubles until the refined root
    moves by at most 1e-6.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    a_d = np.atleast_2d(np.asarray(a_d, dtype=float))
    if not h > 0:
        raise ValueError(f"delay must be > 0, got {h}")
    if not np.any(a_d):
        return _rightmost(np.linalg.eigvals(a))

    def refined(nc):
        cand = _rightmost(np.linalg.eigvals(_generator(a, a_d, h, nc)))
        s = _newton(a, a_d, h, cand)
        if not np.isfinite(s) or abs(s - cand) > 1e-2 * max(1.0, abs(cand)):
            return cand
        return complex(s.real, abs(s.imag)) if abs(s.imag) > 1e-12 else complex(s.real, 0.0)

    prev = refined(n_cheb)
    nc, move = n_cheb, math.inf
    for _ in range(max_doublings):
        nc *= 2
        cur = refined(nc)
        move = abs(cur - prev)
        if move <= 1e-6:
            return cur
        prev = cur
    raise DiscretizationError(
        f"rightmost root not converged at {nc} Chebyshev nodes (last move {move:.2e})"
    )


def oracle_delay_margin(a, a_d, h_cap: float = 10.0, tol: float = 1e-6, grid: int = 200) -> float:
    """First delay at which the rightmost root reaches the imaginary axis.

    0.0 if unstable without delay, inf if no crossing up to h_cap.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    a_d = np.atleast_2d(np.asarray(a_d, dtype=float))
    if not is_delay_free_stable(a, a_d):
        return 0.0
    prev = 0.0
    for h in np.linspace(h_cap / grid, h_cap, grid):
        if rightmost_root(a, a_d, h).real >= 0:
            lo, hi = prev, float(h)
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                if mid > 0 and rightmost_root(a, a_d, mid).real >= 0:
                    hi = mid
                else:
                    lo = mid
            return 0.5 * (lo + hi)
        prev = float(h)
    return math.inf
