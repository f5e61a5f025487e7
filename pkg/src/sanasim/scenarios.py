"""Attack scenarios, infection state on nodes, and metrics recomputed from
the event log."""

from __future__ import annotations

import hashlib
import logging
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Optional

from .config import ConfigError, ScenarioSpec
from .secenv import LogKind, Severity

if TYPE_CHECKING:
    from .simulation import Simulation

logger = logging.getLogger(__name__)

WORM_LABEL = "worm"
C2_LABEL = "c2"
BACKDOOR_PORT = 4444
USER = "mallory"


def body(name: str, seed: int, nbytes: int = 12) -> bytes:
    """Deterministic pseudo-random byte string for an attack body."""
    return hashlib.sha256(f"{name}:{seed}".encode()).digest()[:nbytes]


def embed(sim: "Simulation", core: bytes, rng) -> bytes:
    """Payload of the configured size carrying ``core`` at a window-aligned offset."""
    size = sim.traffic.payload_bytes
    stride = sim.traffic.window_stride
    slots = max(1, (size - len(core)) // stride + 1)
    off = rng.randrange(slots) * stride
    filler = bytes(rng.getrandbits(8) for _ in range(size))
    return filler[:off] + core + filler[off + len(core):size]


def mutate_hex(pattern: str, rate: float, rng) -> str:
    """Independently replace each hex symbol with a different one at ``rate``."""
    out = []
    for ch in pattern:
        if rng.random() < rate:
            ch = rng.choice([h for h in "0123456789ABCDEF" if h != ch])
        out.append(ch)
    return "".join(out)


def _spec_nodes(sim: "Simulation", spec: ScenarioSpec) -> list[int]:
    for v in spec.seed_nodes:
        if not isinstance(v, int) or not 0 <= v < sim.topo.n:
            raise ConfigError(f"scenario.seed_nodes: {v!r} is not a node")
    return list(spec.seed_nodes)


# ---------------------------------------------------------------------------
# Worm (and its virus / trojan trigger variant)


class Worm:
    def __init__(self, sim: "Simulation", spec: ScenarioSpec, tag: str = "") -> None:
        self.sim = sim
        self.spec = spec
        p = spec.parameters
        self.label = str(p.get("label", WORM_LABEL + tag))
        self.core = body(self.label, sim.cfg.seed)
        self.signature = self.core.hex().upper()
        self.rng = sim.rng.get(f"scenario:{self.label}")
        self.trigger = p.get("trigger", "delivery")  # "execution": virus/trojan waits for a run
        self.exec_rate = float(p.get("execution_rate", 0.05))
        self.seeds = _spec_nodes(sim, spec) or [sim.topo.n - 1]
        self.end = spec.start + spec.duration
        sim.attack_handlers[self.label] = self.delivered
        sim.signatures.setdefault(self.label, [self.signature])
        if spec.signature_known:
            sim.add_known([(self.label, self.signature)], initial=True)
        sim.schedule_action(spec.start, self.begin)
        sim.tick_hooks.append(self.tick)

    def begin(self, sim) -> None:
        sim.emit("action", name="worm-start", label=self.label, nodes=self.seeds)
        for v in self.seeds:
            self.infect(v, "seed")

    def infect(self, v: int, why: str) -> None:
        self.sim.add_marker(v, "infection", self.label, why)
        self.sim.add_marker(v, "backdoor", self.label, why)

    def delivered(self, sim, pkt) -> None:
        v = pkt.dst
        if sim.envs[v].quarantined or ("infection", self.label) in sim.markers[v]:
            return
        if self.trigger == "execution":
            if v not in sim.dormant:
                sim.dormant[v] = self.label
                sim.emit("dormant", node=v, label=self.label)
            return
        self.infect(v, "delivery")

    def tick(self, t: int) -> None:
        sim = self.sim
        if not self.spec.start <= t < self.end:
            return
        for v in sorted(sim.dormant):
            if sim.dormant[v] == self.label and self.rng.random() < self.exec_rate:
                del sim.dormant[v]
                if not sim.envs[v].quarantined:
                    sim.emit("execute", node=v, label=self.label)
                    self.infect(v, "execution")
        beta = self.spec.propagation_rate
        mut = self.spec.mutation_rate
        for v in sorted(sim.infected_nodes):
            if ("infection", self.label) not in sim.markers[v] or v in sim.network.down:
                continue
            for w in sim.topo.adj[v]:
                if self.rng.random() < beta:
                    core = self.core
                    if mut > 0:
                        core = bytes.fromhex(mutate_hex(self.signature, mut, self.rng))
                    sim.inject(v, w, 445, embed(sim, core, self.rng), attack=self.label,
                               sport=sim.traffic.client_ports[0])


# ---------------------------------------------------------------------------
# Encrypted traffic to a backdoor


class EncryptedBackdoor:
    def __init__(self, sim: "Simulation", spec: ScenarioSpec) -> None:
        self.sim = sim
        self.spec = spec
        p = spec.parameters
        nodes = _spec_nodes(sim, spec)
        self.target = int(p.get("target", nodes[0] if nodes else 0))
        self.attacker = int(p.get("attacker", nodes[1] if len(nodes) > 1 else sim.topo.n - 1))
        if self.target == self.attacker:
            raise ConfigError("scenario: attacker and target must differ")
        self.port = int(p.get("port", BACKDOOR_PORT))
        self.interval = int(p.get("interval", 5))
        self.label = str(p.get("label", "backdoor"))
        self.core = body(C2_LABEL, sim.cfg.seed)
        self.rng = sim.rng.get("scenario:c2")
        sim.signatures.setdefault(C2_LABEL, [self.core.hex().upper()])
        if p.get("c2_known", False):
            sim.add_known([(C2_LABEL, self.core.hex().upper())], initial=True)
        sim.external_sources.add(self.attacker)
        sim.attack_handlers[C2_LABEL] = lambda s, pkt: None
        sim.schedule_action(spec.start, self.plant)
        sim.tick_hooks.append(self.tick)

    def plant(self, sim) -> None:
        sim.emit("action", name="backdoor-plant", node=self.target, label=self.label)
        sim.add_marker(self.target, "backdoor", self.label, "scenario")
        sim.open_ports[self.target].add(self.port)
        sim.backdoor_ports[(self.target, self.label)] = self.port

    def tick(self, t: int) -> None:
        s = self.spec
        if t < s.start or t >= s.start + s.duration or (t - s.start) % self.interval:
            return
        if self.attacker in self.sim.network.down:
            return
        self.sim.inject(self.attacker, self.target, self.port, embed(self.sim, self.core, self.rng),
                        attack=C2_LABEL, encrypted=True, sport=self.sim.traffic.client_ports[-1])


# ---------------------------------------------------------------------------
# Multi-step intrusion by a hacker


class Hacker:
    STEPS = ("scan", "backdoor", "software")

    def __init__(self, sim: "Simulation", spec: ScenarioSpec) -> None:
        p = spec.parameters
        nodes = _spec_nodes(sim, spec)
        self.target = int(p.get("target", nodes[0] if nodes else 0))
        self.attacker = int(p.get("attacker", nodes[1] if len(nodes) > 1 else sim.topo.n - 1))
        gap = int(p.get("step_gap", 10))
        self.scan_ports = [int(x) for x in p.get("scan_ports", [21, 22, 23, 25])]
        for i, step in enumerate(self.STEPS):
            sim.schedule_action(spec.start + i * gap, lambda s, step=step: self.step(s, step))

    def step(self, sim, step: str) -> None:
        sim.emit("action", name=f"hacker-{step}", node=self.target)
        if step == "scan":
            for port in self.scan_ports:
                sim.inject(self.attacker, self.target, port, b"\x00" * sim.traffic.payload_bytes,
                           attack="hacker-scan")
        elif step == "backdoor":
            sim.add_marker(self.target, "backdoor", "hacker-backdoor", "hacker")
        else:
            sim.add_marker(self.target, "software", "hacker-software", "hacker")


# ---------------------------------------------------------------------------
# Insider guessing passwords


class Insider:
    def __init__(self, sim: "Simulation", spec: ScenarioSpec) -> None:
        p = spec.parameters
        nodes = _spec_nodes(sim, spec) or [0, 1]
        self.user = str(p.get("user", USER))
        attempts = int(p.get("attempts", 6))
        gap = int(p.get("gap", 5))
        for i in range(attempts):
            node = nodes[i % len(nodes)]
            kind = LogKind.LOGIN_ERROR if i % 2 == 0 else LogKind.ACCESS_DENIED
            sim.schedule_action(spec.start + i * gap,
                                lambda s, node=node, kind=kind: self.fail(s, node, kind))

    def fail(self, sim, node: int, kind: LogKind) -> None:
        sim.emit("action", name="insider-attempt", node=node, user=self.user)
        sim.envs[node].append(sim.now, "auth", Severity.WARNING, kind, user=self.user)


# ---------------------------------------------------------------------------
# Physical tampering and reboot


class Physical:
    def __init__(self, sim: "Simulation", spec: ScenarioSpec) -> None:
        p = spec.parameters
        nodes = _spec_nodes(sim, spec)
        self.target = int(p.get("target", nodes[0] if nodes else 0))
        self.tamper = str(p.get("tamper", "layer1"))  # layer1 | env | none
        if self.tamper not in ("layer1", "env", "none"):
            raise ConfigError("scenario.parameters.tamper: expected layer1, env or none")
        sim.schedule_action(spec.start, self.reboot)

    def reboot(self, sim) -> None:
        env = sim.envs[self.target]
        sim.emit("action", name="physical-reboot", node=self.target, tamper=self.tamper)
        if self.tamper == "layer1":
            env.layer1_image = env.layer1_image[::-1] + b"\x01"
        elif self.tamper == "env":
            env.env_image = env.env_image + b"\x01"
        sim.set_down(self.target, True, "reboot")
        sim.schedule_action(sim.now + 1, self.handshake)

    def handshake(self, sim) -> None:
        v = self.target
        env = sim.envs[v]
        peers = [w for w in sim.topo.adj[v] if w not in sim.network.down]
        reporter = sim.envs[peers[0]] if peers else None
        if env.verify_integrity(sim.now, reporter):
            sim.set_down(v, False, "handshake")
        else:
            sim.emit("isolated", node=v)


# ---------------------------------------------------------------------------

_DRIVERS = {
    "Worm": Worm,
    "EncryptedBackdoor": EncryptedBackdoor,
    "Hacker": Hacker,
    "Insider": Insider,
    "Physical": Physical,
}


def install(sim: "Simulation", spec: ScenarioSpec) -> list:
    if spec.kind == "None":
        return []
    if spec.kind == "Mixed":
        parts = spec.parameters.get("scenarios", [])
        if not parts:
            raise ConfigError("scenario.parameters.scenarios: Mixed needs a non-empty list")
        out = []
        for i, part in enumerate(parts):
            try:
                sub = ScenarioSpec(**part)
            except TypeError as exc:
                raise ConfigError(f"scenario.parameters.scenarios[{i}]: {exc}") from exc
            if sub.kind in ("Mixed", "None"):
                raise ConfigError(f"scenario.parameters.scenarios[{i}]: kind {sub.kind} not allowed")
            out.extend(install(sim, sub))
        return out
    return [_DRIVERS[spec.kind](sim, spec)]


def on_attack_delivered(sim: "Simulation", pkt) -> None:
    handler = sim.attack_handlers.get(pkt.attack)
    if handler is not None:
        handler(sim, pkt)


# ---------------------------------------------------------------------------
# Metrics


@dataclass
class MetricsReport:
    detections: int = 0
    false_positives: int = 0
    anomaly_warnings: int = 0
    true_infections: int = 0
    time_to_first_detect: Optional[int] = None
    time_to_clean: Optional[int] = None
    peak_infected: int = 0
    guarded_attack_arrivals: int = 0
    guarded_attack_drops: int = 0
    infected_curve: list = field(default_factory=list)
    packets: dict = field(default_factory=dict)
    messages_sent: int = 0
    cells_alive_curve: list = field(default_factory=list)
    coverage_curve: list = field(default_factory=list)
    max_staleness_curve: list = field(default_factory=list)
    alerts_curve: list = field(default_factory=list)
    dropped_curve: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def detection_rate(self) -> Optional[float]:
        if not self.guarded_attack_arrivals:
            return None
        return self.guarded_attack_drops / self.guarded_attack_arrivals


PACKET_KEYS = ("injected", "Delivered", "Dropped(Detected)", "Dropped(NoRoute)", "Dropped(Quarantine)")


def collect_metrics(events: list[dict], duration: int, n_nodes: int, patrol_interval: int,
                    start: int = 0) -> MetricsReport:
    """Compute every report field from the event log alone."""
    m = MetricsReport()
    attack_of = {}
    outcome_tick = {}
    for e in events:
        if e["ev"] == "pkt":
            attack_of[e["pid"]] = e["attack"]
    per_tick = defaultdict(list)
    for e in events:
        per_tick[e["t"]].append(e)

    packets = Counter({k: 0 for k in PACKET_KEYS})
    infected: dict[int, set] = defaultdict(set)
    alive = 0
    last_checked = [0] * n_nodes
    first_detect = None
    for t in range(duration):
        alerts = 0
        dropped = 0
        for e in per_tick.get(t, ()):
            ev = e["ev"]
            if ev == "inject":
                packets["injected"] += 1
            elif ev == "pkt":
                packets[e["outcome"]] += 1
                if e["outcome"] != "Delivered":
                    dropped += 1
            elif ev == "log":
                if e["kind"] != LogKind.DETECTION.value:
                    continue
                d = e["detail"]
                if e["severity"] == Severity.ALERT.value:
                    m.detections += 1
                    alerts += 1
                    if first_detect is None:
                        first_detect = t
                    if d.get("subject") == "packet" and not attack_of.get(d["pid"]):
                        m.false_positives += 1
                elif e["severity"] == Severity.WARNING.value and d.get("label") == "Anomaly":
                    m.anomaly_warnings += 1
            elif ev == "marker" and e["marker"] == "infection":
                if e["op"] == "add":
                    infected[e["node"]].add(e["label"])
                    m.true_infections += 1
                else:
                    infected[e["node"]].discard(e["label"])
            elif ev == "cell":
                alive += 1 if e["op"] == "born" else -1
            elif ev == "send":
                m.messages_sent += 1
            elif ev == "tick":
                for v in e["checked"]:
                    last_checked[v] = t
            elif ev == "arrival":
                m.guarded_attack_arrivals += 1
                m.guarded_attack_drops += e["dropped"]
        count = sum(1 for s in infected.values() if s)
        m.infected_curve.append(count)
        m.cells_alive_curve.append(alive)
        m.coverage_curve.append(sum(1 for lc in last_checked if t - lc <= patrol_interval) / n_nodes)
        m.max_staleness_curve.append(max(t - lc for lc in last_checked))
        m.alerts_curve.append(alerts)
        m.dropped_curve.append(dropped)
    m.packets = {k: packets[k] for k in PACKET_KEYS}
    m.peak_infected = max(m.infected_curve, default=0)
    if first_detect is not None:
        m.time_to_first_detect = first_detect - start
    if m.true_infections:
        last_dirty = max((t for t, c in enumerate(m.infected_curve) if c), default=None)
        if last_dirty is not None and last_dirty + 1 < duration:
            m.time_to_clean = last_dirty + 1 - start
    return m


def live_metrics(sim: "Simulation") -> dict:
    """The same quantities taken from the simulation's own counters."""
    detections = sum(1 for env in sim.envs.values() for r in env.log
                     if r.severity is Severity.ALERT and r.kind is LogKind.DETECTION)
    return {
        "detections": detections,
        "true_infections": sim.live["infections"],
        "packets": {k: sim.live[k] for k in PACKET_KEYS},
        "messages_sent": len(sim.comm.log),
        "cells_alive_curve": list(sim.live_curves["cells_alive"]),
        "infected_curve": list(sim.live_curves["infected"]),
        "coverage_curve": list(sim.live_curves["coverage"]),
        "guarded_attack_arrivals": sim.live["guarded"],
        "guarded_attack_drops": sim.live["guarded_drops"],
    }


def reconcile(report: MetricsReport, live: dict) -> list[str]:
    """Field-wise differences between the event recount and live counters."""
    diffs = []
    rep = report.to_dict()
    for key, want in live.items():
        got = rep[key]
        if isinstance(want, list):
            if len(got) != len(want) or any(abs(a - b) > 1e-12 for a, b in zip(got, want)):
                first = next((i for i, (a, b) in enumerate(zip(got, want)) if abs(a - b) > 1e-12),
                             min(len(got), len(want)))
                diffs.append(f"{key}: first difference at tick {first}")
        elif got != want:
            diffs.append(f"{key}: events say {got!r}, simulation says {want!r}")
    return diffs
