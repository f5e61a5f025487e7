"""Per-node security environment: credentialed resource access, layered
integrity checks, the common log, and cell residency."""

from __future__ import annotations

import hashlib
import hmac
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Optional

from .selfmgmt import compute_security_level

logger = logging.getLogger(__name__)


class Capability(str, Enum):
    INSPECT_PACKETS = "InspectPackets"
    READ_LOG = "ReadLog"
    WRITE_LOG = "WriteLog"
    CHECK_NODE = "CheckNode"
    DISINFECT = "Disinfect"
    MANAGE_CELLS = "ManageCells"
    ADMIN_SNAPSHOT = "AdminSnapshot"


class Severity(str, Enum):
    INFO = "Info"
    WARNING = "Warning"
    ALERT = "Alert"


class LogKind(str, Enum):
    DETECTION = "Detection"
    UPDATE_REPORT = "UpdateReport"
    CHECK_REPORT = "CheckReport"
    LOGIN_ERROR = "LoginError"
    ACCESS_DENIED = "AccessDenied"
    INTEGRITY_FAIL = "IntegrityFail"
    QUARANTINE_CHANGE = "QuarantineChange"


class AccessDenied(PermissionError):
    pass


@dataclass(frozen=True)
class Credential:
    holder_id: str
    capabilities: frozenset
    tag: bytes

    def with_tag(self, tag: bytes) -> "Credential":
        return Credential(self.holder_id, self.capabilities, tag)


def _cred_message(holder_id: str, caps: Iterable[Capability]) -> bytes:
    names = sorted(Capability(c).value for c in caps)
    return (holder_id + "\x00" + ",".join(names)).encode()


class Authority:
    """Network-wide issuer of keyed-hash capability tokens."""

    def __init__(self, key: bytes) -> None:
        self._key = key
        self._verified: set = set()

    @classmethod
    def from_seed(cls, seed: int) -> "Authority":
        return cls(hashlib.sha256(f"authority:{seed}".encode()).digest())

    def issue(self, holder_id: str, capabilities: Iterable[Capability]) -> Credential:
        caps = frozenset(Capability(c) for c in capabilities)
        tag = hmac.new(self._key, _cred_message(holder_id, caps), hashlib.sha256).digest()
        return Credential(holder_id, caps, tag)

    def verify(self, cred: Credential) -> bool:
        key = (cred.holder_id, cred.capabilities, cred.tag)
        if key in self._verified:
            return True
        expect = hmac.new(self._key, _cred_message(cred.holder_id, cred.capabilities), hashlib.sha256).digest()
        ok = hmac.compare_digest(expect, cred.tag)
        if ok:
            self._verified.add(key)
        return ok


@dataclass(slots=True)
class LogRecord:
    time: int
    node: int
    source: str
    severity: Severity
    kind: LogKind
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "node": self.node,
            "source": self.source,
            "severity": self.severity.value,
            "kind": self.kind.value,
            "detail": self.detail,
        }


class ComponentKind(str, Enum):
    ANTIVIRUS = "Antivirus"
    FIREWALL = "Firewall"
    PACKET_FILTER = "PacketFilter"
    IDS = "IDS"


@dataclass
class LegacyComponent:
    id: str
    kind: ComponentKind
    native_rules: list = field(default_factory=list)
    security_value: float = 0.0
    rule_version: int = 0
    healthy: bool = True


def image_digest(*images: bytes) -> bytes:
    h = hashlib.sha256()
    for img in images:
        h.update(len(img).to_bytes(8, "big"))
        h.update(img)
    return h.digest()


class SecurityEnvironment:
    """Middleware on one node.

    Every log record is passed to ``on_record`` (if set) right after it is
    appended, which is how the simulation forwards Alerts to the
    administrator and mirrors the log into the event log.
    """

    def __init__(self, node: int, authority: Authority, layer1_image: bytes = b"",
                 env_image: bytes = b"", on_record: Optional[Callable[[LogRecord], None]] = None) -> None:
        self.node = node
        self.authority = authority
        self.registry: dict[str, tuple[Credential, float]] = {}
        self.components: dict[str, LegacyComponent] = {}
        self.cells: dict[str, Any] = {}
        self.layer1_image = layer1_image
        self.env_image = env_image
        self.integrity_ref = image_digest(layer1_image, env_image)
        self.log: list[LogRecord] = []
        self.quarantined = False
        self.admissible = True
        self.last_checked = -1
        self.level = 0.0
        self.rejected: set[str] = set()
        self._grants: set = set()
        self.announced_version = 0
        self.notifying = False
        self.log_cursor = 0
        self.reported: set = set()
        self.on_record = on_record

    # -- log --------------------------------------------------------------
    def append(self, time: int, source: str, severity: Severity, kind: LogKind, **detail) -> LogRecord:
        if self.log and time < self.log[-1].time:
            raise ValueError(f"log time {time} precedes last record {self.log[-1].time}")
        rec = LogRecord(time, self.node, source, Severity(severity), LogKind(kind), detail)
        self.log.append(rec)
        if self.on_record is not None:
            self.on_record(rec)
        return rec

    def query_log(self, cred: Credential, now: int, kind: Optional[LogKind] = None,
                  severity: Optional[Severity] = None, start: Optional[int] = None,
                  end: Optional[int] = None) -> list[LogRecord]:
        if not self.access(cred, Capability.READ_LOG, now):
            raise AccessDenied(f"{cred.holder_id} lacks ReadLog on node {self.node}")
        out = []
        for rec in self.log:
            if start is not None and rec.time < start:
                continue
            if end is not None and rec.time > end:
                break
            if kind is not None and rec.kind != kind:
                continue
            if severity is not None and rec.severity != severity:
                continue
            out.append(rec)
        return out

    # -- credentials --------------------------------------------------------
    def access(self, cred: Credential, capability: Capability, now: int) -> bool:
        key = (cred.holder_id, cred.tag, capability)
        if key in self._grants and cred.holder_id not in self.rejected:
            return True
        ok = (
            self.authority.verify(cred)
            and Capability(capability) in cred.capabilities
            and cred.holder_id not in self.rejected
        )
        if ok:
            self._grants.add(key)
        else:
            self.append(now, "secenv", Severity.WARNING, LogKind.ACCESS_DENIED,
                        holder=cred.holder_id, capability=Capability(capability).value)
        return ok

    def register(self, component_id: str, cred: Credential, security_value: float, now: int,
                 component: Optional[LegacyComponent] = None) -> bool:
        if security_value < 0:
            raise ValueError("security value must be non-negative")
        if not self.authority.verify(cred) or cred.holder_id != component_id:
            self.append(now, "secenv", Severity.WARNING, LogKind.ACCESS_DENIED,
                        holder=component_id, action="register")
            return False
        if component_id in self.registry:
            self.append(now, "secenv", Severity.INFO, LogKind.CHECK_REPORT,
                        action="reregister", component=component_id)
        self.registry[component_id] = (cred, float(security_value))
        if component is not None:
            self.components[component_id] = component
        self.recompute_level()
        return True

    # -- integrity --------------------------------------------------------
    def integrity_now(self) -> bytes:
        return image_digest(self.layer1_image, self.env_image)

    def hardware_change(self, new_layer1: bytes) -> None:
        """Legitimate hardware change: the reference image moves with it."""
        self.layer1_image = new_layer1
        self.integrity_ref = self.integrity_now()

    def verify_integrity(self, now: int, reporter: Optional["SecurityEnvironment"] = None) -> bool:
        if hmac.compare_digest(self.integrity_now(), self.integrity_ref):
            return True
        self.admissible = False
        (reporter or self).append(now, "secenv", Severity.ALERT, LogKind.INTEGRITY_FAIL,
                                  subject=self.node)
        return False

    # -- cells --------------------------------------------------------------
    def admit(self, cell, now: int) -> bool:
        if not self.admissible:
            return False
        if not self.authority.verify(cell.cred):
            self.append(now, "secenv", Severity.WARNING, LogKind.ACCESS_DENIED,
                        holder=cell.id, action="admit")
            return False
        self.cells[cell.id] = cell
        cell.location = self.node
        self.level += cell.security_value  # exact recompute happens once per tick
        return True

    def eject(self, cell_id: str, now: int):
        cell = self.cells.pop(cell_id, None)
        if cell is None:
            self.append(now, "secenv", Severity.INFO, LogKind.CHECK_REPORT,
                        action="eject-missing", cell=cell_id)
            return None
        self.level -= cell.security_value
        return cell

    def recompute_level(self) -> float:
        self.level = compute_security_level(self)
        return self.level


def export_log_jsonl(envs: Iterable[SecurityEnvironment], path) -> None:
    """Write every node's log as JSONL ordered by (time, node, position)."""
    rows = []
    for env in envs:
        for i, rec in enumerate(env.log):
            rows.append((rec.time, rec.node, i, rec))
    rows.sort(key=lambda r: r[:3])
    with open(path, "w") as fh:
        for *_, rec in rows:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
