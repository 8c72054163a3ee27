"""Fluid-flow TCP/AQM model: equilibrium, time-delay linearization, integral
augmentation and the disturbance-to-queue transfer function."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NetworkParams:
    """Single-bottleneck network. Units are packets and seconds."""

    n_flows: int
    capacity: float
    prop_delay: float
    q_target: float
    buffer_size: float = 800.0

    def __post_init__(self):
        if self.n_flows < 1:
            raise ValueError(f"n_flows must be >= 1, got {self.n_flows}")
        if not self.capacity > 0:
            raise ValueError(f"capacity must be > 0, got {self.capacity}")
        if self.prop_delay < 0:
            raise ValueError(f"prop_delay must be >= 0, got {self.prop_delay}")
        if not 0 <= self.q_target <= self.buffer_size:
            raise ValueError(
                f"need 0 <= q_target <= buffer_size, got q_target={self.q_target}, "
                f"buffer_size={self.buffer_size}"
            )


@dataclass(frozen=True)
class OperatingPoint:
    w0: float
    p0: float
    r0: float


@dataclass(frozen=True)
class TdsSystem:
    """x'(t) = A x(t) + Ad x(t-h) + B u(t-h) + Bd d(t)."""

    a: np.ndarray
    a_d: np.ndarray
    b: np.ndarray
    b_d: np.ndarray
    delay: float

    def __post_init__(self):
        n = self.a.shape[0]
        if self.a.shape != (n, n) or self.a_d.shape != (n, n):
            raise ValueError("A and Ad must be square of equal size")
        if self.b.ndim != 2 or self.b.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got shape {self.b.shape}")
        if self.b_d.shape != (n, 1):
            raise ValueError(f"Bd must be {n}x1, got shape {self.b_d.shape}")
        if not self.delay > 0:
            raise ValueError(f"delay must be > 0, got {self.delay}")

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.b.shape[1]

    def closed_loop_delayed(self, k) -> np.ndarray:
        """Ad + B K, the delayed-state matrix once u = K x is applied."""
        k = np.atleast_2d(np.asarray(k, dtype=float))
        return self.a_d + self.b @ k


@dataclass(frozen=True)
class DisturbanceGain:
    value: complex
    a_s: complex = field(repr=False)
    b_s: complex = field(repr=False)


class NearPoleError(ArithmeticError):
    pass


def reference_network() -> NetworkParams:
    """The single-bottleneck scenario used throughout the experiments
    (15 Mb/s link, 500 B packets, 60 flows)."""
    return NetworkParams(n_flows=60, capacity=3750.0, prop_delay=0.2, q_target=175.0, buffer_size=800.0)


def operating_point(params: NetworkParams) -> OperatingPoint:
    r0 = params.q_target / params.capacity + params.prop_delay
    w0 = r0 * params.capacity / params.n_flows
    if w0 < 1.0:
        raise ValueError(
            f"equilibrium window W0={w0:.4g} < 1 packet: R0*C/N with R0={r0:.4g} s, "
            f"C={params.capacity:g} pkt/s, N={params.n_flows} is too small a per-flow share"
        )
    p0 = 2.0 / (w0 * w0)
    if p0 > 1.0:
        raise ValueError(
            f"equilibrium drop probability p0={p0:.4g} > 1 (W0={w0:.4g}); "
            f"N={params.n_flows} flows overload C={params.capacity:g} pkt/s"
        )
    return OperatingPoint(w0=w0, p0=p0, r0=r0)


def linearize(params: NetworkParams, op: OperatingPoint) -> TdsSystem:
    n, c, r0 = params.n_flows, params.capacity, op.r0
    a = np.array([
        [-n / (r0**2 * c), -1.0 / (c * r0**2)],
        [n / r0, -1.0 / r0],
    ])
    a_d = np.array([
        [-n / (r0**2 * c), 1.0 / (r0**2 * c)],
        [0.0, 0.0],
    ])
    b = np.array([[-(c**2) * r0 / (2.0 * n**2)], [0.0]])
    b_d = np.array([[0.0], [1.0]])
    return TdsSystem(a=a, a_d=a_d, b=b, b_d=b_d, delay=r0)


def augment(sys: TdsSystem) -> TdsSystem:
    """Append the queue integrator; state order becomes (dW, dq, int dq)."""
    if sys.dim != 2:
        raise ValueError(f"augment expects the 2-state TCP system, got dim={sys.dim}")
    a = np.zeros((3, 3))
    a[:2, :2] = sys.a
    a[2, 1] = 1.0
    a_d = np.zeros((3, 3))
    a_d[:2, :2] = sys.a_d
    b = np.vstack([sys.b, np.zeros((1, sys.n_inputs))])
    b_d = np.vstack([sys.b_d, [[0.0]]])
    return TdsSystem(a=a, a_d=a_d, b=b, b_d=b_d, delay=sys.delay)


def _split_gains(gains) -> tuple[float, float, float]:
    k = np.asarray(getattr(gains, "k", gains), dtype=float).ravel()
    if k.size == 2:
        return float(k[0]), float(k[1]), 0.0
    if k.size == 3:
        return float(k[0]), float(k[1]), float(k[2])
    raise ValueError(f"expected 2 or 3 gains, got {k.size}")


def disturbance_transfer(params: NetworkParams, op: OperatingPoint, gains, h: float,
                         s: complex) -> DisturbanceGain:
    """Queue response to cross traffic, Delta Q(s) / D(s), under
    p = p0 + k1 dW + k2 dq + k3 int dq applied with input delay h.

    The feedback enters with the sign of the control law above, so relative
    to a(s) = -(R0 C^2 / 2 N^2) e^{-hs} the gain terms carry a minus sign.
    """
    k1, k2, k3 = _split_gains(gains)
    n, c, r0 = params.n_flows, params.capacity, op.r0
    s = complex(s)
    e = cmath.exp(-h * s)
    a_s = -(r0 * c**2) / (2.0 * n**2) * e
    b_s = s + n / (r0**2 * c) * (1.0 + e) - a_s * k1
    terms = (
        (s + 1.0 / r0) * s * b_s,
        n / r0 * s / (r0**2 * c) * (1.0 - e),
        -n / r0 * a_s * s * k2,
        -n / r0 * a_s * k3,
    )
    den = sum(terms)
    num = b_s * s
    scale = max(abs(t) for t in terms + (num,))
    if scale == 0.0 or abs(den) < 1e-12 * scale:
        raise NearPoleError(f"T(s) evaluated at or near a pole: s={s}, |den|={abs(den):.3g}")
    return DisturbanceGain(value=num / den, a_s=a_s, b_s=b_s)


def dc_gain(params: NetworkParams, op: OperatingPoint, gains, h: float,
            s0: float = 1e-4, levels: int = 5) -> float:
    """Limit of T(s) as s -> 0+ along the real axis, by Richardson
    extrapolation on s0, s0/2, ..., assuming T is analytic at 0."""
    vals = [disturbance_transfer(params, op, gains, h, s0 / 2**i).value.real for i in range(levels)]
    # Neville table in powers of s; step ratio 2.
    table = list(vals)
    for j in range(1, levels):
        f = 2.0**j
        table = [(f * table[i + 1] - table[i]) / (f - 1.0) for i in range(len(table) - 1)]
    out = table[0]
    return 0.0 if math.isclose(out, 0.0, abs_tol=1e-15) else out


def fluid_rhs(params: NetworkParams, w: float, q: float, w_lag: float, q_lag: float,
              p_lag: float, d: float = 0.0) -> tuple[float, float]:
    """Right-hand side of the nonlinear window/queue dynamics.

    Lagged values are taken at t - R(t); R = q/C + Tp at both ends.
    """
    r = q / params.capacity + params.prop_delay
    r_lag = q_lag / params.capacity + params.prop_delay
    dw = 1.0 / r - w * w_lag / (2.0 * r_lag) * p_lag
    dq = params.n_flows * w / r - params.capacity + d
    return dw, dq
