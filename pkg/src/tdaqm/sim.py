"""Fixed-step delay-differential integration of the fluid TCP/AQM model,
cross-traffic injection, and before/during/after queue statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tdaqm.controllers import AqmConfig, Controller, estimate_window
from tdaqm.model import fluid_rhs, linearize, operating_point

W_FLOOR = 0.1
TRACE_COLUMNS = ("t", "W", "q", "p", "d", "rtt", "w_hat", "agg_rate")


class SimulationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Segment:
    t_start: float
    t_end: float
    rate: float

    def __post_init__(self):
        for name in ("t_start", "t_end", "rate"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.t_end > self.t_start:
            raise ValueError(f"segment must have t_end > t_start, got [{self.t_start}, {self.t_end})")


@dataclass(frozen=True)
class Scenario:
    network: NetworkParams
    aqm: AqmConfig
    duration: float = 140.0
    dt: float = 1e-3
    disturbance: tuple[Segment, ...] = ()
    initial: tuple[float, float, float] | None = None  # constant (W, q, p) history
    model: str = "nonlinear"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "disturbance",
                           tuple(sorted(self.disturbance, key=lambda s: s.t_start)))
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not self.duration > 0:
            raise ValueError(f"duration must be > 0, got {self.duration}")
        if self.model not in ("nonlinear", "linear"):
            raise ValueError(f"model must be 'nonlinear' or 'linear', got {self.model!r}")
        segs = self.disturbance
        for seg in segs:
            if seg.t_start < 0 or seg.t_end > self.duration:
                raise ValueError(f"segment {seg} outside [0, {self.duration}]")
        for a, b in zip(segs, segs[1:]):
            if b.t_start < a.t_end:
                raise ValueError(f"disturbance segments overlap: {a} and {b}")


def disturbance_signal(schedule, t: float) -> float:
    return sum(seg.rate for seg in schedule if seg.t_start <= t < seg.t_end)


@dataclass
class Trace:
    t: np.ndarray
    W: np.ndarray
    q: np.ndarray
    p: np.ndarray
    d: np.ndarray
    rtt: np.ndarray
    w_hat: np.ndarray
    agg_rate: np.ndarray
    clamps: dict = field(default_factory=dict)

    def columns(self) -> np.ndarray:
        return np.column_stack([getattr(self, c) for c in TRACE_COLUMNS])

    def to_csv(self, path, stride: int = 1) -> None:
        if stride < 1:
            raise ValueError("stride must be >= 1")
        rows = self.columns()[::stride]
        lines = [",".join(TRACE_COLUMNS)]
        lines += [",".join(f"{v:.9g}" for v in row) for row in rows]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Trace":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header {header}")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(*(data[:, i] for i in range(len(TRACE_COLUMNS))))


def _check_initial(initial) -> None:
    if initial is not None and not all(math.isfinite(v) for v in initial):
        raise SimulationError(f"non-finite state at t=0 s (initial history {tuple(initial)})")


def _check_step(dt: float, delay: float) -> None:
    if dt > delay / 10.0:
        raise ValueError(f"dt={dt} too coarse for delay {delay} s (need dt <= delay/10)")


class _History:
    """Uniformly sampled past of one signal with a constant pre-history."""

    __slots__ = ("vals", "pre", "inv_dt")

    def __init__(self, pre: float, dt: float, n: int):
        self.vals = [pre] * (n + 1)
        self.pre = pre
        self.inv_dt = 1.0 / dt

    def at(self, t: float, k: int) -> float:
        """Linear interpolation at time t, given samples known up to index k."""
        x = t * self.inv_dt
        if x <= 0.0:
            return self.pre if x < -1e-12 else self.vals[0]
        i = int(x)
        if i >= k:
            return self.vals[k]
        f = x - i
        v = self.vals
        return v[i] + f * (v[i + 1] - v[i])


def simulate(scn: Scenario) -> Trace:
    """Integrate the nonlinear fluid model with RK4 and state-dependent delay
    R(t) = q(t)/C + Tp."""
    if scn.model == "linear":
        return simulate_linear(scn)
    net = scn.network
    op = operating_point(net)
    _check_step(scn.dt, net.prop_delay)
    _check_initial(scn.initial)
    n_f, cap, tp, buf = net.n_flows, net.capacity, net.prop_delay, net.buffer_size
    dt = scn.dt
    steps = int(round(scn.duration / dt))
    w_init, q_init, p_init = scn.initial if scn.initial is not None else (op.w0, net.q_target, op.p0)
    hw = _History(w_init, dt, steps)
    hq = _History(q_init, dt, steps)
    hp = _History(p_init, dt, steps)
    ctrl = Controller(scn.aqm, net, op, q_init=q_init)
    segs = scn.disturbance

    def dist(t):
        return disturbance_signal(segs, t) if segs else 0.0

    def rhs(t, w, q, k):
        q = 0.0 if q < 0.0 else buf if q > buf else q
        tl = t - (q / cap + tp)
        dw, dq = fluid_rhs(net, w, q, hw.at(tl, k), hq.at(tl, k), hp.at(tl, k), dist(t))
        if (q <= 0.0 and dq < 0.0) or (q >= buf and dq > 0.0):
            dq = 0.0
        return dw, dq

    cols = {c: np.empty(steps + 1) for c in TRACE_COLUMNS}
    clamps = {"q_low": 0, "q_high": 0, "w_floor": 0}
    w, q = w_init, q_init
    half = 0.5 * dt
    for k in range(steps + 1):
        t = k * dt
        rtt = q / cap + tp
        agg = n_f * w / rtt
        w_hat = estimate_window(agg, rtt, n_f)
        p = ctrl.update(t, w, q, w_hat)
        hw.vals[k], hq.vals[k], hp.vals[k] = w, q, p
        for name, v in zip(TRACE_COLUMNS, (t, w, q, p, dist(t), rtt, w_hat, agg)):
            cols[name][k] = v
        if k == steps:
            break
        k1w, k1q = rhs(t, w, q, k)
        k2w, k2q = rhs(t + half, w + half * k1w, q + half * k1q, k)
        k3w, k3q = rhs(t + half, w + half * k2w, q + half * k2q, k)
        k4w, k4q = rhs(t + dt, w + dt * k3w, q + dt * k3q, k)
        w = w + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
        q = q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        if not (math.isfinite(w) and math.isfinite(q)):
            raise SimulationError(f"non-finite state at t={t + dt:.6g} s (W={w}, q={q})")
        if w < W_FLOOR:
            w = W_FLOOR
            clamps["w_floor"] += 1
        if q < 0.0:
            q = 0.0
            clamps["q_low"] += 1
        elif q > buf:
            q = buf
            clamps["q_high"] += 1
    return Trace(**cols, clamps=clamps)


def simulate_linear(scn: Scenario) -> Trace:
    """Integrate the linearized model in deviation coordinates with the delay
    frozen at R0; the trace reports absolute values."""
    net = scn.network
    op = operating_point(net)
    sys = linearize(net, op)
    h = sys.delay
    _check_step(scn.dt, h)
    _check_initial(scn.initial)
    (a11, a12), (a21, a22) = sys.a
    (d11, d12), _ = sys.a_d
    b1 = float(sys.b[0, 0])
    w0, q0, p0 = op.w0, net.q_target, op.p0
    dt = scn.dt
    steps = int(round(scn.duration / dt))
    w_init, q_init, p_init = scn.initial if scn.initial is not None else (w0, q0, p0)
    hw = _History(w_init - w0, dt, steps)
    hq = _History(q_init - q0, dt, steps)
    hu = _History(p_init - p0, dt, steps)
    ctrl = Controller(scn.aqm, net, op, q_init=q_init)
    segs = scn.disturbance
    n_f = net.n_flows

    def rhs(t, x1, x2, k):
        tl = t - h
        y1, y2, ul = hw.at(tl, k), hq.at(tl, k), hu.at(tl, k)
        dx1 = a11 * x1 + a12 * x2 + d11 * y1 + d12 * y2 + b1 * ul
        dx2 = a21 * x1 + a22 * x2 + disturbance_signal(segs, t)
        return dx1, dx2

    cols = {c: np.empty(steps + 1) for c in TRACE_COLUMNS}
    x1, x2 = w_init - w0, q_init - q0
    half = 0.5 * dt
    for k in range(steps + 1):
        t = k * dt
        w, q = w0 + x1, q0 + x2
        rtt = q / net.capacity + net.prop_delay
        agg = n_f * w / rtt
        w_hat = estimate_window(agg, rtt, n_f)
        p = ctrl.update(t, w, q, w_hat)
        hw.vals[k], hq.vals[k], hu.vals[k] = x1, x2, p - p0
        for name, v in zip(TRACE_COLUMNS, (t, w, q, p, disturbance_signal(segs, t), rtt, w_hat, agg)):
            cols[name][k] = v
        if k == steps:
            break
        k1 = rhs(t, x1, x2, k)
        k2 = rhs(t + half, x1 + half * k1[0], x2 + half * k1[1], k)
        k3 = rhs(t + half, x1 + half * k2[0], x2 + half * k2[1], k)
        k4 = rhs(t + dt, x1 + dt * k3[0], x2 + dt * k3[1], k)
        x1 += dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        x2 += dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        if not (math.isfinite(x1) and math.isfinite(x2)):
            raise SimulationError(f"non-finite state at t={t + dt:.6g} s")
    return Trace(**cols)


# -- statistics ---------------------------------------------------------------

PERIODS = ("B", "D", "A")


@dataclass(frozen=True)
class PeriodStats:
    mean: float
    std: float
    cv2: float
    samples: int


@dataclass(frozen=True)
class StatsReport:
    before: PeriodStats | None
    during: PeriodStats | None
    after: PeriodStats | None

    def period(self, name: str) -> PeriodStats | None:
        return {"B": self.before, "D": self.during, "A": self.after}[name]


def window_stats(values: np.ndarray) -> PeriodStats | None:
    if values.size == 0:
        return None
    mean = float(np.mean(values))
    std = float(np.std(values))
    cv2 = (std / mean) ** 2 if mean != 0 else math.nan
    return PeriodStats(mean=mean, std=std, cv2=cv2, samples=int(values.size))


def periodic_stats(trace: Trace, schedule, settle_margin: float = 5.0) -> StatsReport:
    """Population mean/std/CV2 of the queue before, during and after the
    cross traffic, skipping ``settle_margin`` seconds at each window start."""
    if schedule:
        t1 = min(s.t_start for s in schedule)
        t2 = max(s.t_end for s in schedule)
        windows = [(0.0, t1), (t1, t2), (t2, math.inf)]
    else:
        windows = [(0.0, math.inf), None, None]
    out = []
    for win in windows:
        if win is None:
            out.append(None)
            continue
        lo, hi = win[0] + settle_margin, win[1]
        mask = (trace.t >= lo - 1e-9) & (trace.t < hi - 1e-9)
        out.append(window_stats(trace.q[mask]))
    return StatsReport(*out)


def stats_rows(reports: dict) -> list[tuple[str, str, list[float | None]]]:
    """(metric, period, [value per AQM]) rows in the B/D/A x Mean/Std/CV2 layout."""
    rows = []
    for per in PERIODS:
        for metric, attr in (("Mean", "mean"), ("Std", "std"), ("CV2", "cv2")):
            vals = []
            for rep in reports.values():
                ps = rep.period(per)
                vals.append(None if ps is None else getattr(ps, attr))
            rows.append((metric, per, vals))
    return rows


def format_stats_table(reports: dict) -> str:
    names = list(reports)
    width = max(8, *(len(n) + 2 for n in names))
    head = "AQMs".ljust(6) + "".join(n.rjust(width) for n in names) + "  period"
    lines = [head, "-" * len(head)]
    prev = None
    for metric, per, vals in stats_rows(reports):
        if prev is not None and per != prev:
            lines.append("-" * len(head))
        prev = per
        fmt = "{:.3f}" if metric == "CV2" else "{:.2f}"
        cells = ["-" if v is None or math.isnan(v) else fmt.format(v) for v in vals]
        lines.append(metric.ljust(6) + "".join(c.rjust(width) for c in cells) + f"  {per}")
    return "\n".join(lines)


def stats_csv(reports: dict) -> str:
    names = list(reports)
    lines = ["metric,period," + ",".join(names)]
    for metric, per, vals in stats_rows(reports):
        cells = ["" if v is None else repr(float(v)) for v in vals]
        lines.append(f"{metric},{per}," + ",".join(cells))
    return "\n".join(lines) + "\n"
