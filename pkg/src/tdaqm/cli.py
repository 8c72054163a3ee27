"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 undecided / no certificate,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from tdaqm.config import ConfigError, ExperimentConfig, load_config
from tdaqm.controllers import AqmKind
from tdaqm.delay_lmi import (
    DiscretizationError, analysis_feasible, autonomous, max_stable_delay, oracle_delay_margin,
)
from tdaqm.model import augment, linearize, operating_point
from tdaqm.sim import (
    SimulationError, Trace, format_stats_table, periodic_stats, simulate, stats_csv,
)
from tdaqm.synthesis import (
    Gains, check_synthesis, dump_certificate, load_certificate, synthesize_gain, verify_closed_loop,
)

log = logging.getLogger("tdaqm")

EXIT_OK, EXIT_CONFIG, EXIT_UNDECIDED, EXIT_NUMERIC = 0, 1, 2, 3


def _setup_logging():
    level = os.environ.get("TDAQM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _h_m(cfg: ExperimentConfig) -> float:
    if cfg.solver.h_m > 0:
        return cfg.solver.h_m
    return operating_point(cfg.require_network()).r0


def _flavor_system(cfg: ExperimentConfig, flavor: str):
    net = cfg.require_network()
    sys_ = linearize(net, operating_point(net))
    if flavor == "integral":
        return augment(sys_)
    if flavor != "plain":
        raise ConfigError(f"[solver] flavor must be 'plain' or 'integral', got {flavor!r}")
    return sys_


def _closed_loop(cfg: ExperimentConfig):
    """(A, Ad_cl, label) for the configured system: explicit [system]
    matrices, else the linearized network under the [aqm] gains."""
    if cfg.system is not None:
        return np.array(cfg.system.a, dtype=float), np.array(cfg.system.a_d, dtype=float), "system"
    kind = AqmKind(cfg.aqm.kind)
    net = cfg.require_network()
    sys_ = linearize(net, operating_point(net))
    if kind is AqmKind.SF:
        k = cfg.aqm_config(kind.value).gains
        return sys_.a, sys_.closed_loop_delayed(k), "SF closed loop"
    if kind in (AqmKind.SFI_CWND, AqmKind.SFI_AGGFLOW):
        aug = augment(sys_)
        k = cfg.aqm_config(kind.value).gains
        return aug.a, aug.closed_loop_delayed(k), "SFI closed loop"
    return sys_.a, sys_.a_d, "open loop"


def cmd_synthesize(cfg: ExperimentConfig, out: Path, args) -> int:
    sys_ = _flavor_system(cfg, cfg.solver.flavor)
    h_m = _h_m(cfg)
    cert = synthesize_gain(sys_, h_m, cfg.solver.r, cfg.synthesis_options())
    path = out / f"certificate_{cfg.solver.flavor}.toml"
    dump_certificate(cert, path)
    gains = ", ".join(f"k{i + 1}={v:.6e}" for i, v in enumerate(cert.gains.as_tuple()))
    print(f"flavor={cfg.solver.flavor} h_m={h_m:.6g} r={cfg.solver.r} verdict={cert.verdict.value}")
    print(f"gains: {gains}")
    print(f"margin={cert.margin:.6e} oracle_root={cert.oracle_root}")
    print(f"certificate written to {path}")
    return EXIT_OK if cert.feasible else EXIT_UNDECIDED


def cmd_analyze(cfg: ExperimentConfig, out: Path, args) -> int:
    r = cfg.solver.r
    if cfg.aqm.certificate and cfg.system is None:
        cert = load_certificate(Path(cfg.base_dir) / cfg.aqm.certificate)
        lam = check_synthesis(cert.system, cert.lk, cert.slack, cert.gains.k) if cert.lk is not None else math.inf
        print(f"certificate recheck: lambda_max={lam:.6e} stored margin={cert.margin:.6e}")
    if cfg.system is not None:
        if cfg.solver.h_m <= 0:
            raise ConfigError("[solver] h_m must be set when analyzing an explicit [system]")
        a, a_d, label = _closed_loop(cfg)
        res = analysis_feasible(autonomous(a, a_d), cfg.solver.h_m, r, seed=cfg.seed)
        h_m = cfg.solver.h_m
    else:
        kind = AqmKind(cfg.aqm.kind)
        if kind not in (AqmKind.SF, AqmKind.SFI_CWND, AqmKind.SFI_AGGFLOW):
            raise ConfigError(f"analyze needs a state-feedback [aqm] kind, got {kind.value}")
        flavor = "plain" if kind is AqmKind.SF else "integral"
        sys_ = _flavor_system(cfg, flavor)
        h_m = _h_m(cfg)
        label = f"{kind.value} closed loop"
        res = verify_closed_loop(sys_, Gains(np.array([cfg.aqm_config().gains])), h_m, r, seed=cfg.seed)
    print(f"{label}: h_m={h_m:.6g} r={r} verdict={res.verdict.value} margin={res.margin:.6e}"
          + (f" oracle_root={res.oracle_root}" if res.oracle_root is not None else ""))
    return EXIT_OK if res.feasible else EXIT_UNDECIDED


def cmd_margin(cfg: ExperimentConfig, out: Path, args) -> int:
    a, a_d, label = _closed_loop(cfg)
    sol = cfg.solver
    oracle = oracle_delay_margin(a, a_d, h_cap=sol.h_cap, tol=1e-6)
    lines = ["r,h_max,oracle_margin,note"]
    print(f"{label}: delay margins (search cap {sol.h_cap:g} s)")
    print(f"{'r':>3} {'h_max':>12} {'oracle':>12}  note")
    any_margin = False
    for r in sol.r_values:
        res = max_stable_delay(autonomous(a, a_d), r, sol.tol, h_cap=sol.h_cap, seed=cfg.seed)
        note = res.diagnostic or ""
        if res.h_max <= 0:
            note = note or "no margin"
            print(f"{r:>3} {'no margin':>12} {oracle:>12.6f}  {note}")
        else:
            any_margin = True
            print(f"{r:>3} {res.h_max:>12.6f} {oracle:>12.6f}  {note}")
        lines.append(f"{r},{res.h_max!r},{oracle!r},{note}")
    (out / "margin.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK if any_margin else EXIT_UNDECIDED


def _run_one(cfg: ExperimentConfig, kind: str, out: Path):
    trace = simulate(cfg.scenario(kind))
    trace.to_csv(out / f"trace_{kind}.csv", stride=cfg.run.stride)
    return kind, periodic_stats(trace, cfg.disturbance, cfg.run.settle_margin)


def _write_stats(reports: dict, out: Path) -> None:
    table = format_stats_table(reports)
    print(table)
    (out / "stats_table.txt").write_text(table + "\n")
    (out / "stats.csv").write_text(stats_csv(reports))


def cmd_simulate(cfg: ExperimentConfig, out: Path, args) -> int:
    kind, rep = _run_one(cfg, cfg.aqm.kind, out)
    _write_stats({kind: rep}, out)
    return EXIT_OK


def cmd_compare(cfg: ExperimentConfig, out: Path, args) -> int:
    kinds = list(cfg.run.aqms)
    for k in kinds:
        AqmKind(k)
    if args.jobs > 1 and len(kinds) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, [cfg] * len(kinds), kinds, [out] * len(kinds)))
    else:
        results = [_run_one(cfg, k, out) for k in kinds]
    _write_stats(dict(results), out)
    return EXIT_OK


def cmd_stats(cfg: ExperimentConfig, out: Path, args) -> int:
    paths = [Path(p) for p in args.traces] or sorted(out.glob("trace_*.csv"))
    if not paths:
        raise ConfigError(f"no trace files given and none found in {out}")
    reports = {}
    for p in paths:
        name = p.stem[len("trace_"):] if p.stem.startswith("trace_") else p.stem
        reports[name] = periodic_stats(Trace.from_csv(p), cfg.disturbance, cfg.run.settle_margin)
    _write_stats(reports, out)
    return EXIT_OK


COMMANDS = {
    "synthesize": cmd_synthesize,
    "analyze": cmd_analyze,
    "margin": cmd_margin,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "stats": cmd_stats,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdaqm", description="Delay-aware AQM design and fluid simulation.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("traces", nargs="*", help="trace CSV files (stats command only)")
    parser.add_argument("--scenario", required=True, type=Path, help="scenario TOML file")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="seed for all randomized searches")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a scenario value, e.g. run.duration=60 (repeatable)")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for compare")
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be a non-negative integer")
            overrides.append(f"seed={args.seed}")
        cfg = load_config(args.scenario, overrides)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args.out, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, DiscretizationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
