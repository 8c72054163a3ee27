"""Scenario files: TOML documents with [network], [aqm], [disturbance],
[solver], [system] and [run] sections and a ``schema = 1`` marker."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

try:  # Python >= 3.11
    import tomllib as _toml_reader
except ModuleNotFoundError:  # pragma: no cover
    import tomli as _toml_reader
import tomli_w

from tdaqm.controllers import AqmConfig, AqmKind
from tdaqm.model import NetworkParams
from tdaqm.sim import Scenario, Segment
from tdaqm.synthesis import REF_K_SF, REF_K_SFI, SynthesisOptions, load_certificate

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AqmSection:
    kind: str = "SFI_cwnd"
    sf_gains: tuple[float, ...] = REF_K_SF.as_tuple()
    sfi_gains: tuple[float, ...] = REF_K_SFI.as_tuple()
    certificate: str = ""
    pi_a: float = 1.822e-5
    pi_b: float = 1.816e-5
    pi_freq: float = 160.0
    min_th: float = 150.0
    max_th: float = 200.0
    p_max: float = 0.1
    ewma_weight: float = 0.002
    fixed_p: float = -1.0  # < 0: hold p0


@dataclass(frozen=True)
class SolverSection:
    flavor: str = "integral"
    r: int = 1
    h_m: float = 0.0  # <= 0: use R0
    restarts: int = 8
    rounds: int = 200
    gain_penalty: float = 1e-3
    decay_rate: float = 0.0
    max_seconds: float = 240.0
    r_values: tuple[int, ...] = (1, 2, 3)
    tol: float = 1e-4
    h_cap: float = 10.0


@dataclass(frozen=True)
class SystemSection:
    a: tuple[tuple[float, ...], ...]
    a_d: tuple[tuple[float, ...], ...]


@dataclass(frozen=True)
class RunSection:
    duration: float = 140.0
    dt: float = 1e-3
    model: str = "nonlinear"
    initial: tuple[float, ...] = ()
    settle_margin: float = 5.0
    stride: int = 1
    aqms: tuple[str, ...] = ("RED", "PI", "SF", "SFI_cwnd", "SFI_aggflow")


@dataclass(frozen=True)
class ExperimentConfig:
    network: NetworkParams | None
    aqm: AqmSection = AqmSection()
    disturbance: tuple[Segment, ...] = ()
    solver: SolverSection = SolverSection()
    system: SystemSection | None = None
    run: RunSection = RunSection()
    name: str = "scenario"
    seed: int = 0
    base_dir: str = field(default=".", compare=False)

    def require_network(self) -> NetworkParams:
        if self.network is None:
            raise ConfigError("scenario has no [network] section")
        return self.network

    def aqm_config(self, kind: str | None = None) -> AqmConfig:
        sec = self.aqm
        kind = AqmKind(kind or sec.kind)
        gains: tuple[float, ...] = ()
        if kind is AqmKind.SF:
            gains = sec.sf_gains
        elif kind in (AqmKind.SFI_CWND, AqmKind.SFI_AGGFLOW):
            gains = sec.sfi_gains
        if gains and sec.certificate:
            cert = load_certificate(Path(self.base_dir) / sec.certificate)
            if len(cert.gains.as_tuple()) == len(gains):
                gains = cert.gains.as_tuple()
        return AqmConfig(kind=kind, gains=gains, pi_a=sec.pi_a, pi_b=sec.pi_b, pi_freq=sec.pi_freq,
                         min_th=sec.min_th, max_th=sec.max_th, p_max=sec.p_max,
                         ewma_weight=sec.ewma_weight,
                         fixed_p=None if sec.fixed_p < 0 else sec.fixed_p)

    def scenario(self, kind: str | None = None) -> Scenario:
        run = self.run
        return Scenario(
            network=self.require_network(), aqm=self.aqm_config(kind), duration=run.duration,
            dt=run.dt, disturbance=self.disturbance,
            initial=tuple(run.initial) if run.initial else None, model=run.model, seed=self.seed,
        )

    def synthesis_options(self) -> SynthesisOptions:
        s = self.solver
        return SynthesisOptions(restarts=s.restarts, rounds=s.rounds, seed=self.seed,
                                gain_penalty=s.gain_penalty, decay_rate=s.decay_rate,
                                max_seconds=s.max_seconds)


def _build(cls, data: dict, section: str):
    known = {f.name: f for f in fields(cls)}
    extra = set(data) - set(known)
    if extra:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(extra))}")
    kw = {}
    for k, v in data.items():
        if isinstance(v, list):
            v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def config_from_dict(doc: dict, base_dir=".") -> ExperimentConfig:
    doc = copy.deepcopy(doc)
    schema = doc.pop("schema", None)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"unsupported or missing schema version {schema!r} (expected {SCHEMA_VERSION})")
    name = doc.pop("name", "scenario")
    seed = doc.pop("seed", 0)
    net = _build(NetworkParams, doc.pop("network"), "network") if "network" in doc else None
    aqm = _build(AqmSection, doc.pop("aqm", {}), "aqm")
    try:
        AqmKind(aqm.kind)
    except ValueError:
        raise ConfigError(f"[aqm] unknown kind {aqm.kind!r}") from None
    dist = doc.pop("disturbance", {})
    try:
        segments = tuple(Segment(**s) for s in dist.pop("segments", []))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[disturbance]: {exc}") from exc
    if dist:
        raise ConfigError(f"unknown key(s) in [disturbance]: {', '.join(sorted(dist))}")
    solver = _build(SolverSection, doc.pop("solver", {}), "solver")
    system = _build(SystemSection, doc.pop("system"), "system") if "system" in doc else None
    run = _build(RunSection, doc.pop("run", {}), "run")
    if doc:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(doc))}")
    return ExperimentConfig(network=net, aqm=aqm, disturbance=segments, solver=solver,
                            system=system, run=run, name=name, seed=seed, base_dir=str(base_dir))


def _plain(obj):
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    return obj


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc = {"schema": SCHEMA_VERSION, "name": cfg.name, "seed": cfg.seed}
    if cfg.network is not None:
        doc["network"] = asdict(cfg.network)
    doc["aqm"] = _plain(asdict(cfg.aqm))
    doc["disturbance"] = {"segments": [asdict(s) for s in cfg.disturbance]}
    doc["solver"] = _plain(asdict(cfg.solver))
    if cfg.system is not None:
        doc["system"] = _plain(asdict(cfg.system))
    doc["run"] = _plain(asdict(cfg.run))
    return doc


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError(f"empty override key in {text!r}")
    try:
        value = _toml_reader.loads(f"v = {raw.strip()}")["v"]
    except _toml_reader.TOMLDecodeError:
        value = raw.strip()
    return path, value


def apply_overrides(doc: dict, overrides) -> dict:
    doc = copy.deepcopy(doc)
    for text in overrides:
        path, value = parse_override(text)
        node = doc
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r} descends into a non-table")
        node[path[-1]] = value
    return doc


def load_config(path, overrides=()) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = _toml_reader.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {path}") from None
    except _toml_reader.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(apply_overrides(doc, overrides), base_dir=path.parent)


def dumps_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dumps_config(cfg))
