"""Artificial cells: pattern encoding, detectors, selection, clonal
expansion with hypermutation, lifecycle and per-kind inspection."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

from . import kernels
from .netsim import Packet
from .secenv import Capability, Credential, LogKind, SecurityEnvironment, Severity
from .selfmgmt import DangerState

HEX = "0123456789ABCDEF"
SIGMA = HEX + "|"
WILDCARD = "?"
MUTATION_ALPHABET = SIGMA + WILDCARD
PATTERN_WIDTH = 24
DEFAULT_R = 8
ANOMALY = "Anomaly"


# ---------------------------------------------------------------------------
# Patterns


def encode_header(pkt: Packet, width: int = PATTERN_WIDTH) -> str:
    """``SSSSS|PPPP|DDDDD|QQQQ|PR`` in upper-case hex, left zero-padded to ``width``."""
    core = f"{pkt.src:05X}|{pkt.sport:04X}|{pkt.dst:05X}|{pkt.dport:04X}|{pkt.protocol.code:02X}"
    if len(core) > width:
        raise ValueError(f"header pattern needs {len(core)} symbols, width is {width}")
    return core.rjust(width, "0")


def parse_header(pattern: str) -> dict:
    src, sport, dst, dport, proto = pattern[-24:].split("|")
    return {
        "src": int(src, 16),
        "sport": int(sport, 16),
        "dst": int(dst, 16),
        "dport": int(dport, 16),
        "protocol": int(proto, 16),
    }


def payload_patterns(payload: bytes, width: int = PATTERN_WIDTH, stride: int = 4) -> list[str]:
    """Fixed-width hex windows over the payload, ``width // 2`` bytes each."""
    span = width // 2
    if len(payload) < span:
        payload = payload.ljust(span, b"\x00")
    return [payload[i:i + span].hex().upper() for i in range(0, len(payload) - span + 1, stride)]


@dataclass(frozen=True)
class EncodedPacket:
    header: str
    payload: tuple[str, ...]  # empty for encrypted packets

    @property
    def header_raw(self) -> bytes:
        return self.header.encode()

    def payload_raw(self) -> list[bytes]:
        return [p.encode() for p in self.payload]


def encode_pattern(pkt: Packet, width: int = PATTERN_WIDTH, stride: int = 4) -> EncodedPacket:
    payload = () if pkt.encrypted else tuple(payload_patterns(pkt.payload, width, stride))
    return EncodedPacket(encode_header(pkt, width), payload)


def similarity(a: str, b: str) -> float:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    return 1.0 - kernels.hamming(a.encode(), b.encode()) / len(a)


# ---------------------------------------------------------------------------
# Detectors


class Rule(str, Enum):
    EXACT = "Exact"
    RCONTIGUOUS = "RContiguous"


class Channel(str, Enum):
    HEADER = "header"
    PAYLOAD = "payload"


@dataclass(frozen=True)
class Detector:
    pattern: str
    rule: Rule = Rule.RCONTIGUOUS
    r: int = DEFAULT_R
    label: str = ANOMALY
    channel: Channel = Channel.PAYLOAD

    def __post_init__(self) -> None:
        if self.rule is Rule.RCONTIGUOUS and not 1 <= self.r <= len(self.pattern):
            raise ValueError(f"r={self.r} outside 1..{len(self.pattern)}")

    @property
    def raw(self) -> bytes:
        return self.pattern.encode()

    @property
    def kernel_r(self) -> int:
        return 0 if self.rule is Rule.EXACT else self.r

    def relabel(self, label: str) -> "Detector":
        return Detector(self.pattern, self.rule, self.r, label, self.channel)

    def to_dict(self) -> dict:
        out = {"pattern": self.pattern, "rule": self.rule.value, "r": self.r, "label": self.label}
        if self.channel is not Channel.PAYLOAD:
            out["channel"] = self.channel.value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Detector":
        return cls(d["pattern"], Rule(d.get("rule", "RContiguous")), int(d.get("r", DEFAULT_R)),
                   d.get("label", ANOMALY), Channel(d.get("channel", "payload")))


def export_detectors(detectors: Iterable[Detector]) -> str:
    return json.dumps([d.to_dict() for d in detectors], indent=1)


def import_detectors(text: str) -> list[Detector]:
    return [Detector.from_dict(d) for d in json.loads(text)]


def match(det: Detector, pattern: str) -> bool:
    if len(det.pattern) != len(pattern):
        raise ValueError(f"length mismatch: detector {len(det.pattern)}, pattern {len(pattern)}")
    return kernels.match(det.raw, pattern.encode(), det.kernel_r)


def random_detector(rng: random.Random, width: int = PATTERN_WIDTH, r: int = DEFAULT_R,
                    wildcard_p: float = 0.25, rule: Rule = Rule.RCONTIGUOUS,
                    alphabet: str = SIGMA) -> Detector:
    sym = "".join(WILDCARD if rng.random() < wildcard_p else rng.choice(alphabet) for _ in range(width))
    return Detector(sym, rule, r)


def random_patterns(rng: random.Random, n: int, width: int = PATTERN_WIDTH, wildcard_p: float = 0.25,
                    alphabet: str = SIGMA) -> list[str]:
    """``n`` detector patterns with the same symbol law as :func:`random_detector`."""
    syms = alphabet + WILDCARD
    each = (1.0 - wildcard_p) / len(alphabet)
    cum = [each * (i + 1) for i in range(len(alphabet))] + [1.0]
    flat = "".join(rng.choices(syms, cum_weights=cum, k=n * width))
    return [flat[i * width:(i + 1) * width] for i in range(n)]


def random_detectors(rng: random.Random, n: int, width: int = PATTERN_WIDTH, r: int = DEFAULT_R,
                     wildcard_p: float = 0.25, rule: Rule = Rule.RCONTIGUOUS,
                     alphabet: str = SIGMA) -> list[Detector]:
    return [Detector(p, rule, r) for p in random_patterns(rng, n, width, wildcard_p, alphabet)]


def negative_selection(candidates: Sequence[Detector], selfset: Iterable[str]) -> list[Detector]:
    selfraw = [s.encode() for s in selfset]
    if not selfraw:
        return list(candidates)
    keep = kernels.survivors([d.raw for d in candidates], [d.kernel_r for d in candidates], selfraw)
    return [candidates[i] for i in keep]


def positive_selection(repertoire: Sequence[Detector],
                       known: Sequence[tuple[str, str]]) -> list[Detector]:
    """Keep detectors hitting at least one ``(label, pattern)``; relabel them."""
    if not known:
        return []
    targets = [p.encode() for _, p in known]
    idx = kernels.hits([d.raw for d in repertoire], [d.kernel_r for d in repertoire], targets)
    return [repertoire[i].relabel(known[j][0]) for i, j in enumerate(idx) if j >= 0]


def hypermutate(det: Detector, rate: float, rng: random.Random) -> Detector:
    return hypermutate_traced(det, rate, rng)[0]


def hypermutate_traced(det: Detector, rate: float, rng: random.Random) -> tuple[Detector, list[int]]:
    """Mutated detector plus the positions that were resampled."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be in [0, 1]")
    syms = list(det.pattern)
    hit = []
    for i in range(len(syms)):
        if rng.random() < rate:
            syms[i] = rng.choice(MUTATION_ALPHABET)
            hit.append(i)
    return Detector("".join(syms), det.rule, det.r, det.label, det.channel), hit


# ---------------------------------------------------------------------------
# Cells


class CellKind(str, Enum):
    PACKET_CHECKER = "PacketChecker"
    NODE_CHECKER = "NodeChecker"
    LOG_ANALYZER = "LogAnalyzer"
    UPDATE_CELL = "UpdateCell"
    STATUS_COLLECTOR = "StatusCollector"
    DISINFECTION_CELL = "DisinfectionCell"
    CONNECTOR_CELL = "ConnectorCell"


KIND_CAPABILITIES = {
    CellKind.PACKET_CHECKER: {Capability.INSPECT_PACKETS, Capability.WRITE_LOG},
    CellKind.NODE_CHECKER: {Capability.CHECK_NODE, Capability.WRITE_LOG},
    CellKind.LOG_ANALYZER: {Capability.READ_LOG, Capability.WRITE_LOG},
    CellKind.UPDATE_CELL: {Capability.MANAGE_CELLS, Capability.WRITE_LOG},
    CellKind.STATUS_COLLECTOR: {Capability.ADMIN_SNAPSHOT, Capability.READ_LOG},
    CellKind.DISINFECTION_CELL: {Capability.DISINFECT, Capability.CHECK_NODE, Capability.WRITE_LOG},
    CellKind.CONNECTOR_CELL: {Capability.INSPECT_PACKETS, Capability.READ_LOG, Capability.WRITE_LOG,
                              Capability.MANAGE_CELLS},
}

KIND_NEEDS = {
    CellKind.PACKET_CHECKER: Capability.INSPECT_PACKETS,
    CellKind.NODE_CHECKER: Capability.CHECK_NODE,
    CellKind.LOG_ANALYZER: Capability.READ_LOG,
    CellKind.UPDATE_CELL: Capability.MANAGE_CELLS,
    CellKind.STATUS_COLLECTOR: Capability.ADMIN_SNAPSHOT,
    CellKind.DISINFECTION_CELL: Capability.DISINFECT,
}


@dataclass(eq=False)
class ArtificialCell:
    id: str
    kind: CellKind
    detectors: list[Detector]
    ttl: int
    location: int
    security_value: float
    cred: Credential
    danger: DangerState = field(default_factory=DangerState)
    born: int = 0
    version: int = 0
    signatures: dict[str, list[str]] = field(default_factory=dict)
    target: Optional[int] = None  # attraction or dispatch destination
    mobile: bool = True
    prev: Optional[int] = None

    def __post_init__(self) -> None:
        self.refresh_kernel_cache()

    def refresh_kernel_cache(self) -> None:
        pay = [d for d in self.detectors if d.channel is Channel.PAYLOAD]
        hdr = [d for d in self.detectors if d.channel is Channel.HEADER]
        self._pay = (pay, [d.raw for d in pay], [d.kernel_r for d in pay])
        self._hdr = (hdr, [d.raw for d in hdr], [d.kernel_r for d in hdr])

    @property
    def alive(self) -> bool:
        return self.ttl > 0

    def labels(self) -> set[str]:
        return {d.label for d in self.detectors}


def tick_cell(cell: ArtificialCell) -> bool:
    """Decrement ttl; False once the cell has expired."""
    if cell.ttl <= 0:
        raise ValueError(f"cell {cell.id} already expired")
    cell.ttl -= 1
    return cell.ttl > 0


def clone_count(stimulus: float, budget: int) -> int:
    if stimulus <= 0:
        raise ValueError("clonal expansion needs a positive stimulus")
    return min(budget, math.ceil(stimulus * budget))


def disperse(n_clones: int, neighbors: Sequence[int]) -> list[int]:
    """Ascending distinct neighbors, cycling only once all are used."""
    ordered = sorted(neighbors)
    if not ordered:
        return []
    return [ordered[i % len(ordered)] for i in range(n_clones)]


def clonal_expand(cell: ArtificialCell, trigger: Detector, stimulus: float, budget: int, rate: float,
                  rng: random.Random, neighbors: Sequence[int], new_id, cred_for, ttl: int,
                  now: int, selfset: Optional[Sequence[str]] = None,
                  retries: int = 4) -> list[ArtificialCell]:
    """Clones carrying ``trigger`` plus one hypermutated copy of it.

    With a ``selfset`` a mutant that matches self is redrawn up to
    ``retries`` times and otherwise replaced by an unmutated copy.
    """
    n = clone_count(stimulus, budget)
    targets = disperse(n, neighbors)
    clones = []
    for i in range(n):
        mutant = hypermutate(trigger, rate, rng)
        if selfset:
            for _ in range(retries):
                if negative_selection([mutant], selfset):
                    break
                mutant = hypermutate(trigger, rate, rng)
            else:
                if not negative_selection([mutant], selfset):
                    mutant = trigger
        cid = new_id()
        clone = ArtificialCell(
            id=cid, kind=cell.kind, detectors=[trigger] if mutant == trigger else [trigger, mutant],
            ttl=ttl, location=cell.location,
            security_value=cell.security_value, cred=cred_for(cid, cell.kind), born=now,
            version=cell.version, signatures=dict(cell.signatures),
        )
        clone.target = targets[i] if targets else None
        clones.append(clone)
    return clones


# ---------------------------------------------------------------------------
# Inspection


@dataclass
class PacketFinding:
    detector: Optional[Detector]
    pattern: str
    severity: Severity
    variant: bool = False
    score: float = 1.0


def inspect_packet(cell: ArtificialCell, enc: EncodedPacket, similarity_cutoff: float = 0.85,
                   similarity_on: bool = False) -> Optional[PacketFinding]:
    """Match the cell's detectors against a packet; None when nothing fires.

    Signature (labelled) hits are Alerts; Anomaly and near-variant hits are
    Warnings.
    """
    dets, raws, rs = cell._pay
    if enc.payload and dets:
        praw = enc.payload_raw()
        i, j = kernels.first_match(raws, rs, praw)
        if i >= 0:
            d = dets[i]
            sev = Severity.WARNING if d.label == ANOMALY else Severity.ALERT
            return PacketFinding(d, enc.payload[j], sev)
    hdr, hraws, hrs = cell._hdr
    if hdr:
        i, _ = kernels.first_match(hraws, hrs, [enc.header_raw])
        if i >= 0:
            d = hdr[i]
            sev = Severity.WARNING if d.label == ANOMALY else Severity.ALERT
            return PacketFinding(d, enc.header, sev)
    if similarity_on and enc.payload and cell.signatures:
        best, best_label, best_pat = 0.0, None, None
        for label, sigs in cell.signatures.items():
            for sig in sigs:
                for p in enc.payload:
                    s = similarity(sig, p)
                    if s > best:
                        best, best_label, best_pat = s, label, p
        if best >= similarity_cutoff:
            return PacketFinding(Detector(best_pat, Rule.EXACT, 1, best_label), best_pat,
                                 Severity.WARNING, variant=True, score=best)
    return None


@dataclass
class NodeFinding:
    marker: str
    label: str
    severity: Severity


def inspect_node(cell: ArtificialCell, env: SecurityEnvironment, markers: Iterable[tuple[str, str]],
                 now: int, reported: set) -> Optional[list[NodeFinding]]:
    """NodeChecker scan. Returns None on capability deny, else the new findings.

    ``reported`` holds markers already alerted on this node and is updated.
    """
    if not env.access(cell.cred, Capability.CHECK_NODE, now):
        return None
    found = []
    for marker, label in sorted(markers):
        if (marker, label) in reported:
            continue
        reported.add((marker, label))
        found.append(NodeFinding(marker, label, Severity.ALERT))
        env.append(now, cell.id, Severity.ALERT, LogKind.DETECTION, subject="node",
                   marker=marker, label=label)
    for comp in env.components.values():
        if not getattr(comp, "healthy", True) and ("broken", comp.id) not in reported:
            reported.add(("broken", comp.id))
            found.append(NodeFinding("broken", comp.id, Severity.WARNING))
            env.append(now, cell.id, Severity.WARNING, LogKind.CHECK_REPORT,
                       status="not-working", component=comp.id)
    return found


FAILURE_KINDS = (LogKind.LOGIN_ERROR, LogKind.ACCESS_DENIED)


def inspect_log(cell: ArtificialCell, env: SecurityEnvironment, now: int,
                since: int) -> Optional[list[tuple[str, int, int]]]:
    """LogAnalyzer scan of records at index >= ``since``.

    Returns ``(identity, node, time)`` for every authentication failure that
    names a user identity.
    """
    if not env.access(cell.cred, Capability.READ_LOG, now):
        return None
    out = []
    for rec in env.log[since:]:
        if rec.kind in FAILURE_KINDS and "user" in rec.detail:
            out.append((rec.detail["user"], rec.node, rec.time))
    return out


def inspect_updates(cell: ArtificialCell, env: SecurityEnvironment, now: int,
                    version: int) -> Optional[list[tuple[str, int]]]:
    """UpdateCell pass: report and bring outdated components to ``version``."""
    if not env.access(cell.cred, Capability.MANAGE_CELLS, now):
        return None
    outdated = []
    for cid in sorted(env.components):
        comp = env.components[cid]
        if comp.rule_version < version:
            env.append(now, cell.id, Severity.WARNING, LogKind.UPDATE_REPORT, status="outdated",
                       component=cid, have=comp.rule_version, want=version)
            outdated.append((cid, comp.rule_version))
            comp.rule_version = version
            env.append(now, cell.id, Severity.INFO, LogKind.UPDATE_REPORT, status="updated",
                       component=cid, version=version)
    return outdated
