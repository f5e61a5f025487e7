"""Run configuration: JSON document to validated dataclasses.

Unknown keys are rejected with their dotted path; JSON syntax errors carry
line and column.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .selfmgmt import SelfMgmtParams


class ConfigError(ValueError):
    pass


SCENARIO_KINDS = ("None", "Worm", "EncryptedBackdoor", "Hacker", "Insider", "Physical", "Mixed")


@dataclass
class OrganParams:
    enabled: bool = True
    release_rate: float = 0.7
    initial_cells_per_node: int = 4
    kind_mix: Optional[dict] = None
    rule_file: Optional[str] = None
    candidate_batch: int = 1000
    max_rounds: int = 100
    wildcard_p: float = 0.25
    r: int = 8
    ttl_min: int = 200
    ttl_max: int = 400
    cell_value: float = 0.25
    component_values: dict = field(default_factory=lambda: {"Antivirus": 0.35, "Firewall": 0.25})
    clone_budget: int = 2
    clone_rate: float = 0.1
    clone_cooldown: int = 50
    lymph_window: int = 50
    retransmit_k: int = 3
    summary_batch: int = 10


@dataclass
class TrafficParams:
    benign_rate: float = 0.02
    payload_pool: int = 16
    payload_bytes: int = 32
    window_stride: int = 4
    service_ports: list = field(default_factory=lambda: [80, 443])
    client_ports: list = field(default_factory=lambda: [49152, 49153, 49154, 49155])


@dataclass
class ScenarioSpec:
    kind: str = "None"
    seed_nodes: list = field(default_factory=list)
    start: int = 0
    duration: int = 10**9
    propagation_rate: float = 0.05
    mutation_rate: float = 0.0
    signature_known: bool = True
    parameters: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in SCENARIO_KINDS:
            raise ConfigError(f"scenario.kind: unknown kind {self.kind!r}")
        if self.duration <= 0:
            raise ConfigError("scenario.duration must be > 0")
        if not 0 <= self.propagation_rate <= 1 or not 0 <= self.mutation_rate <= 1:
            raise ConfigError("scenario rates must lie in [0, 1]")


@dataclass
class RunConfig:
    seed: int
    duration: int = 2000
    topology: dict = field(default_factory=lambda: {"kind": "grid", "rows": 5, "cols": 10, "areas": 5})
    organs: OrganParams = field(default_factory=OrganParams)
    selfmgmt: SelfMgmtParams = field(default_factory=SelfMgmtParams)
    traffic: TrafficParams = field(default_factory=TrafficParams)
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    perturbations: list = field(default_factory=list)
    false_alarm_budget: float = 0.01
    output: Optional[str] = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_REQUIRED = {"RunConfig": ("seed",)}


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown key(s): {', '.join(where + k for k in unknown)}")
    for req in _REQUIRED.get(cls.__name__, ()):
        if req not in data:
            raise ConfigError(f"missing required key: {(path + '.') if path else ''}{req}")
    kwargs = {}
    for key, value in data.items():
        sub = hints[key]
        if dataclasses.is_dataclass(sub):
            kwargs[key] = _build(sub, value, f"{path}.{key}" if path else key)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _check_types(cfg: RunConfig) -> None:
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool):
        raise ConfigError("seed: must be an integer")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed: must fit in 64 bits")
    if not isinstance(cfg.duration, int) or cfg.duration <= 0:
        raise ConfigError("duration: must be a positive integer")
    o = cfg.organs
    if o.ttl_min < 1 or o.ttl_max < o.ttl_min:
        raise ConfigError("organs.ttl_min/ttl_max: need 1 <= ttl_min <= ttl_max")
    if o.release_rate < 0:
        raise ConfigError("organs.release_rate: must be non-negative")
    if not 1 <= o.r <= 24:
        raise ConfigError("organs.r: must be within 1..24")
    for i, p in enumerate(cfg.perturbations):
        if not isinstance(p, dict) or "tick" not in p or "action" not in p:
            raise ConfigError(f"perturbations[{i}]: needs 'tick' and 'action'")


def from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data, "")
    _check_types(cfg)
    return cfg


def load(path, seed: Optional[int] = None) -> RunConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if seed is not None and isinstance(data, dict):
        data["seed"] = seed
    return from_dict(data)
