"""Scenario configuration loaded from a JSON or YAML document."""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import yaml

from ..mixnet import SimConfig

WORKLOADS = ("register", "discover-anonymous", "discover-named")
FAULT_MODES = ("crash",)
FAULT_PHASES = ("register", "lookup", "always")
ADVERSARIES = ("none", "users", "byzantine-node")


class ConfigError(ValueError):
    def __init__(self, path: str, problem: str):
        super().__init__(f"{path}: {problem}")
        self.path = path
        self.problem = problem


@dataclass(frozen=True)
class FaultEntry:
    """Crash ``node`` (an index into the discovery nodes) during ``phase``."""

    node: int
    mode: str = "crash"
    phase: str = "always"


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    n: int = 4
    f: int | None = None
    clients: int = 20
    layers: int = 3
    mixes_per_layer: int = 3
    providers: int = 3
    mu: float = 0.05
    lambda_send: float = 0.1
    transit: float = 0.01
    duration: float = 600.0
    repetitions: int = 6
    rng_seed: int = 0
    workload: str = "register"
    interarrival: float = 30.0
    initial_pause: float = 30.0
    faults: tuple[FaultEntry, ...] = ()
    adversary: str = "none"
    trials: int = 1000

    @property
    def fault_bound(self) -> int:
        return self.f if self.f is not None else (self.n - 1) // 3

    def sim_config(self, seed: int) -> SimConfig:
        return SimConfig(mu=self.mu, lambda_send=self.lambda_send, rng_seed=seed, transit=self.transit)

    def validate(self) -> ScenarioConfig:
        positive_ints = ("n", "clients", "layers", "mixes_per_layer", "providers", "repetitions")
        for name in positive_ints:
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be at least 1")
        for name in ("mu", "interarrival", "duration"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be positive")
        for name in ("lambda_send", "transit", "initial_pause"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be non-negative")
        if self.rng_seed < 0 or self.rng_seed >= 2**64:
            raise ConfigError("rng_seed", "must fit in an unsigned 64-bit integer")
        if self.n < 4:
            raise ConfigError("n", "needs at least 4 discovery nodes")
        if self.f is not None and not 0 <= self.f <= (self.n - 1) // 3:
            raise ConfigError("f", f"must be between 0 and {(self.n - 1) // 3} for n={self.n}")
        if self.workload not in WORKLOADS:
            raise ConfigError("workload", f"must be one of {', '.join(WORKLOADS)}")
        if self.adversary not in ADVERSARIES:
            raise ConfigError("adversary", f"must be one of {', '.join(ADVERSARIES)}")
        if self.trials < 0:
            raise ConfigError("trials", "must be non-negative")
        for i, fault in enumerate(self.faults):
            where = f"faults[{i}]"
            if not 0 <= fault.node < self.n:
                raise ConfigError(f"{where}.node", f"must index one of the {self.n} discovery nodes")
            if fault.mode not in FAULT_MODES:
                raise ConfigError(f"{where}.mode", f"must be one of {', '.join(FAULT_MODES)}")
            if fault.phase not in FAULT_PHASES:
                raise ConfigError(f"{where}.phase", f"must be one of {', '.join(FAULT_PHASES)}")
        return self


_SCALAR_TYPES = {"int": int, "float": (int, float), "str": str, "int | None": (int, type(None))}


def _check_type(path: str, value: Any, type_name: str) -> Any:
    expected = _SCALAR_TYPES[type_name]
    if isinstance(value, bool) or not isinstance(value, expected):
        raise ConfigError(path, f"expected {type_name}, got {type(value).__name__}")
    return float(value) if type_name == "float" else value


def _fault_from(path: str, raw: Any) -> FaultEntry:
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected a mapping")
    known = {f.name: f for f in fields(FaultEntry)}
    values = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"{path}.{key}", "unknown field")
        values[key] = _check_type(f"{path}.{key}", value, known[key].type)
    if "node" not in values:
        raise ConfigError(f"{path}.node", "required")
    return FaultEntry(**values)


def config_from_mapping(raw: Any) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a mapping")
    known = {f.name: f for f in fields(ScenarioConfig)}
    values: dict[str, Any] = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(key, "unknown field")
        if key == "faults":
            if not isinstance(value, list):
                raise ConfigError("faults", "expected a list")
            values[key] = tuple(_fault_from(f"faults[{i}]", v) for i, v in enumerate(value))
        else:
            values[key] = _check_type(key, value, known[key].type)
    return ScenarioConfig(**values).validate()


def load_config(path: str | Path) -> ScenarioConfig:
    p = Path(path)
    text = p.read_text()
    try:
        raw = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError("<root>", f"cannot parse {p.name}: {exc}") from None
    return config_from_mapping(raw if raw is not None else {})
