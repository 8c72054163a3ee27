"""AQM control laws: static and integral state feedback, discrete PI, RED,
and the window estimate recovered from the aggregate arrival rate."""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

from tdaqm.model import NetworkParams, OperatingPoint


class AqmKind(str, Enum):
    SF = "SF"
    SFI_CWND = "SFI_cwnd"
    SFI_AGGFLOW = "SFI_aggflow"
    PI = "PI"
    RED = "RED"
    FIXED = "FIXED"


REF_PI_A = 1.822e-5
REF_PI_B = 1.816e-5
REF_PI_FREQ = 160.0


@dataclass(frozen=True)
class AqmConfig:
    kind: AqmKind = AqmKind.SFI_CWND
    gains: tuple[float, ...] = ()
    pi_a: float = REF_PI_A
    pi_b: float = REF_PI_B
    pi_freq: float = REF_PI_FREQ
    min_th: float = 150.0
    max_th: float = 200.0
    p_max: float = 0.1
    ewma_weight: float = 0.002
    fixed_p: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", AqmKind(self.kind))
        object.__setattr__(self, "gains", tuple(float(g) for g in self.gains))
        if not 0 <= self.p_max <= 1:
            raise ValueError(f"p_max must be a probability, got {self.p_max}")
        if not self.min_th < self.max_th:
            raise ValueError(f"need min_th < max_th, got {self.min_th}, {self.max_th}")
        if not 0 < self.ewma_weight <= 1:
            raise ValueError(f"ewma_weight must be in (0, 1], got {self.ewma_weight}")
        if self.pi_freq <= 0:
            raise ValueError("pi_freq must be positive")
        if self.fixed_p is not None and not 0 <= self.fixed_p <= 1:
            raise ValueError(f"fixed_p must be a probability, got {self.fixed_p}")
        want = {AqmKind.SF: 2, AqmKind.SFI_CWND: 3, AqmKind.SFI_AGGFLOW: 3}.get(self.kind)
        if want is not None and len(self.gains) != want:
            raise ValueError(f"{self.kind.value} needs {want} gains, got {len(self.gains)}")

    def check_buffer(self, buffer_size: float) -> None:
        if self.kind is AqmKind.RED and self.max_th > buffer_size:
            raise ValueError(f"max_th={self.max_th} exceeds buffer_size={buffer_size}")


@dataclass(frozen=True)
class AqmState:
    integral_acc: float = 0.0
    prev_dq: float | None = None
    prev_p: float = 0.0
    ewma_q: float = 0.0
    last_update: float = float("-inf")


def clamp01(p: float) -> float:
    return 0.0 if p < 0.0 else 1.0 if p > 1.0 else p


def sf_probability(dW: float, dq: float, gains, p0: float) -> float:
    k1, k2 = gains
    return clamp01(p0 + k1 * dW + k2 * dq)


def sfi_probability(dW: float, dq: float, state: AqmState, gains, p0: float,
                    dt: float) -> tuple[float, AqmState]:
    """Integral state feedback; trapezoidal accumulator with conditional
    anti-windup (the accumulator holds while the output saturates)."""
    k1, k2, k3 = gains
    prev = dq if state.prev_dq is None else state.prev_dq
    acc = state.integral_acc + 0.5 * (prev + dq) * dt
    raw = p0 + k1 * dW + k2 * dq + k3 * acc
    if raw < 0.0 or raw > 1.0:
        acc = state.integral_acc
        raw = p0 + k1 * dW + k2 * dq + k3 * acc
    p = clamp01(raw)
    return p, replace(state, integral_acc=acc, prev_dq=dq, prev_p=p)


def pi_update(dq_now: float, state: AqmState, pi_a: float, pi_b: float,
              period: float) -> tuple[float, AqmState]:
    """p_k = p_{k-1} + a dq_k - b dq_{k-1}; the caller owns the sampling clock."""
    prev = dq_now if state.prev_dq is None else state.prev_dq
    p = clamp01(state.prev_p + pi_a * dq_now - pi_b * prev)
    return p, replace(state, prev_dq=dq_now, prev_p=p,
                      last_update=state.last_update + period)


def red_probability(q_inst: float, state: AqmState, cfg: AqmConfig,
                    dt: float | None = None) -> tuple[float, AqmState]:
    avg = (1.0 - cfg.ewma_weight) * state.ewma_q + cfg.ewma_weight * q_inst
    if avg < cfg.min_th:
        p = 0.0
    elif avg < cfg.max_th:
        p = cfg.p_max * (avg - cfg.min_th) / (cfg.max_th - cfg.min_th)
    else:
        p = 1.0
    return p, replace(state, ewma_q=avg, prev_p=p)


def estimate_window(agg_rate: float, rtt: float, n_flows: int) -> float:
    """Per-flow window from the aggregate arrival rate N W / R."""
    return agg_rate * rtt / n_flows


class Controller:
    """Stateful wrapper advanced once per simulation step."""

    def __init__(self, cfg: AqmConfig, params: NetworkParams, op: OperatingPoint,
                 q_init: float | None = None):
        cfg.check_buffer(params.buffer_size)
        self.cfg = cfg
        self.params = params
        self.op = op
        q_init = params.q_target if q_init is None else q_init
        self.period = 1.0 / cfg.pi_freq
        self.state = AqmState(prev_p=op.p0, ewma_q=q_init)
        self.p = op.p0 if cfg.fixed_p is None else cfg.fixed_p
        self._t_prev = None

    def update(self, t: float, w: float, q: float, w_hat: float) -> float:
        cfg, op = self.cfg, self.op
        kind = cfg.kind
        dq = q - self.params.q_target
        if kind is AqmKind.FIXED:
            pass
        elif kind is AqmKind.SF:
            self.p = sf_probability(w - op.w0, dq, cfg.gains, op.p0)
        elif kind in (AqmKind.SFI_CWND, AqmKind.SFI_AGGFLOW):
            dw = (w if kind is AqmKind.SFI_CWND else w_hat) - op.w0
            dt = 0.0 if self._t_prev is None else t - self._t_prev
            self.p, self.state = sfi_probability(dw, dq, self.state, cfg.gains, op.p0, dt)
        elif kind is AqmKind.PI:
            if self._t_prev is None:
                self.state = replace(self.state, last_update=t - self.period)
            # small slack keeps float drift from skipping a tick
            while t >= self.state.last_update + self.period - 1e-9:
                self.p, self.state = pi_update(dq, self.state, cfg.pi_a, cfg.pi_b, self.period)
        elif kind is AqmKind.RED:
            self.p, self.state = red_probability(q, self.state, cfg)
        self._t_prev = t
        return self.p
