"""Artificial cell communication.

Area and Network scope messages flood hop by hop with msg_id dedup; Admin
scope messages are unicast hop by hop (rerouting around unavailable nodes)
to the administrator sink and to the origin area's lymph node. A hop to a
failed neighbor is retransmitted up to ``k`` times before that link is
abandoned.
"""

from __future__ import annotations

import itertools
import json
import logging
from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional

from .netsim import EventKind, EventQueue, Router, SimEvent, Topology

logger = logging.getLogger(__name__)

ADMIN = "admin"


class Scope(str, Enum):
    AREA = "Area"
    NETWORK = "Network"
    ADMIN = "Admin"


class MessageClass(str, Enum):
    ALERT = "Alert"
    WARNING = "Warning"
    DANGER_SIGNAL = "DangerSignal"
    SAFE_SIGNAL = "SafeSignal"
    STATUS_SUMMARY = "StatusSummary"
    UPDATE_REPORT = "UpdateReport"


class Status(str, Enum):
    PENDING = "Pending"
    COMPLETE = "Complete"
    PARTIAL = "Partial"
    EXPIRED = "Expired"


@dataclass
class CellMessage:
    msg_id: int
    sender: str
    origin: int
    scope: Scope
    cls: MessageClass
    payload: dict
    hop_ttl: int
    sent_at: int
    escalated: bool = False  # Alert flooded by a lymph node after reaching the admin path


@dataclass
class Delivery:
    msg: CellMessage
    intended: set
    received: dict = field(default_factory=dict)  # receiver -> tick
    inflight: int = 0
    expired_copies: int = 0
    status: Status = Status.PENDING

    def to_dict(self) -> dict:
        return {
            "msg_id": self.msg.msg_id,
            "class": self.msg.cls.value,
            "scope": self.msg.scope.value,
            "origin": self.msg.origin,
            "sent_at": self.msg.sent_at,
            "receivers": sorted(([str(r), t] for r, t in self.received.items())),
            "undelivered": sorted(str(r) for r in self.intended - set(self.received)),
            "status": self.status.value,
        }


@dataclass
class _Hop:
    msg_id: int
    frm: int
    to: int
    ttl: int
    attempt: int = 0
    target: Optional[object] = None  # unicast receiver (admin or lymph node id); None for floods


class Comm:
    """Point-to-multipoint messaging over the simulation's event queue.

    ``alive(node)`` says whether a node can receive at all; ``relays(node,
    msg)`` whether it forwards. ``on_receive(receiver, msg, tick)`` fires
    once per receiver.
    """

    def __init__(self, topo: Topology, queue: EventQueue, router: Router, k: int = 3,
                 alive: Callable[[int], bool] = lambda v: True,
                 relays: Callable[[int, CellMessage], bool] = lambda v, m: True,
                 on_receive: Optional[Callable[[object, CellMessage, int], None]] = None,
                 on_status: Optional[Callable[[Delivery], None]] = None,
                 hop_ttl: Optional[int] = None) -> None:
        self.topo = topo
        self.queue = queue
        self.router = router
        self.k = k
        self.alive = alive
        self.relays = relays
        self.on_receive = on_receive or (lambda r, m, t: None)
        self.on_status = on_status or (lambda d: None)
        self.on_send: Optional[Callable[[CellMessage], None]] = None
        self.hop_ttl = hop_ttl if hop_ttl is not None else max(2, topo.n)
        self.log: dict[int, Delivery] = {}
        self._ids = itertools.count(1)
        self._seen: dict[int, set] = defaultdict(set)
        self.transmissions = 0
        queue.on(EventKind.MESSAGE_HOP, self._handle)

    # -- sending ------------------------------------------------------------
    def intended_receivers(self, scope: Scope, origin: int) -> set:
        if scope is Scope.AREA:
            area = self.topo.area_of[origin]
            return {v for v in self.topo.areas[area] if self.alive(v)}
        if scope is Scope.NETWORK:
            return {v for v in self.topo.nodes if self.alive(v)}
        return {ADMIN, ("lymph", self.topo.lymph_hosts[self.topo.area_of[origin]])}

    def send(self, sender: str, origin: int, scope: Scope, cls: MessageClass, payload: dict,
             now: int, escalated: bool = False, hop_ttl: Optional[int] = None) -> int:
        if cls is MessageClass.ALERT and scope is not Scope.ADMIN and not escalated:
            raise ValueError("Alert messages must be sent with Admin scope")
        msg = CellMessage(next(self._ids), sender, origin, Scope(scope), MessageClass(cls), dict(payload),
                          hop_ttl or self.hop_ttl, now, escalated)
        d = Delivery(msg, self.intended_receivers(msg.scope, origin))
        self.log[msg.msg_id] = d
        if self.on_send is not None:
            self.on_send(msg)
        if msg.scope is Scope.ADMIN:
            for target in sorted(d.intended, key=str):
                host = self.topo.cnts_host if target == ADMIN else target[1]
                self._arrive_unicast(d, origin, target, host, msg.hop_ttl, now)
        else:
            self._arrive_flood(d, origin, None, msg.hop_ttl, now)
        self._settle(d)
        return msg.msg_id

    # -- flooding -----------------------------------------------------------
    def _arrive_flood(self, d: Delivery, node: int, frm: Optional[int], ttl: int, now: int) -> None:
        seen = self._seen[d.msg.msg_id]
        if node in seen:
            return
        seen.add(node)
        if node in d.intended:
            d.received[node] = now
            self.on_receive(node, d.msg, now)
        if ttl <= 0:
            d.expired_copies += 1
            return
        if frm is not None and not self.relays(node, d.msg):
            return
        for w in self.topo.adj[node]:
            if w != frm and w not in seen:
                self._transmit(_Hop(d.msg.msg_id, node, w, ttl - 1), now + 1, d)

    # -- unicast ------------------------------------------------------------
    def _arrive_unicast(self, d: Delivery, node: int, target, host: int, ttl: int, now: int) -> None:
        if node == host:
            if target not in d.received:
                d.received[target] = now
                self.on_receive(target, d.msg, now)
            return
        if ttl <= 0:
            d.expired_copies += 1
            return
        self.router.set_blocked(self._unavailable())
        nxt = self.router.next_hop(node, host)
        if nxt is None:
            logger.info("msg %d: no path %d -> %s", d.msg.msg_id, node, target)
            return
        self._transmit(_Hop(d.msg.msg_id, node, nxt, ttl - 1, target=target), now + 1, d)

    def _unavailable(self) -> set:
        return {v for v in self.topo.nodes if not self.alive(v)}

    # -- hops ---------------------------------------------------------------
    def _transmit(self, hop: _Hop, when: int, d: Delivery) -> None:
        self.transmissions += 1
        d.inflight += 1
        self.queue.at(when, EventKind.MESSAGE_HOP, hop)

    def _handle(self, ev: SimEvent) -> None:
        hop: _Hop = ev.data
        d = self.log[hop.msg_id]
        d.inflight -= 1
        if not self.alive(hop.to):
            if hop.attempt < self.k:
                hop.attempt += 1
                self._transmit(hop, ev.time + 1, d)
            elif hop.target is not None:
                # give up on this neighbor and reroute from the sender
                host = self.topo.cnts_host if hop.target == ADMIN else hop.target[1]
                self._arrive_unicast(d, hop.frm, hop.target, host, hop.ttl + 1, ev.time)
            self._settle(d)
            return
        if hop.target is None:
            self._arrive_flood(d, hop.to, hop.frm, hop.ttl, ev.time)
        else:
            host = self.topo.cnts_host if hop.target == ADMIN else hop.target[1]
            if hop.to != host and not self.relays(hop.to, d.msg):
                self._settle(d)
                return
            self._arrive_unicast(d, hop.to, hop.target, host, hop.ttl, ev.time)
        self._settle(d)

    def _settle(self, d: Delivery) -> None:
        if d.status is not Status.PENDING or d.inflight > 0:
            return
        if d.intended <= set(d.received):
            d.status = Status.COMPLETE
        elif d.expired_copies and not d.received:
            d.status = Status.EXPIRED
        else:
            d.status = Status.PARTIAL
            logger.info("msg %d partial: missing %s", d.msg.msg_id,
                        sorted(map(str, d.intended - set(d.received))))
        self.on_status(d)

    def export_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for mid in sorted(self.log):
                fh.write(json.dumps(self.log[mid].to_dict(), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Lymph-node escalation


class Decision(str, Enum):
    KEEP_LOCAL = "keep-local"
    TO_ADMIN = "to-admin"
    BROADCAST = "broadcast+to-admin"
    ABSORB = "absorb"


class EscalationTable:
    """Windowed cache of Alert origins per label.

    ``broadcast_since[label]`` records when a label was first broadcast; it
    is kept while same-label alerts keep arriving within the window.
    """

    def __init__(self, window: int = 50) -> None:
        self.window = window
        self.alerts: dict[str, deque] = defaultdict(deque)  # label -> (tick, origin)
        self.broadcast_last: dict[str, int] = {}
        self.statuses: deque = deque()  # (tick, node, summary)

    def expire(self, now: int) -> None:
        cut = now - self.window
        for q in self.alerts.values():
            while q and q[0][0] < cut:
                q.popleft()
        for label in [l for l, t in self.broadcast_last.items() if t < cut]:
            del self.broadcast_last[label]
        while self.statuses and self.statuses[0][0] < cut:
            self.statuses.popleft()

    def origins(self, label: str) -> set:
        return {o for _, o in self.alerts.get(label, ())}

    def oldest(self) -> Optional[int]:
        ticks = [q[0][0] for q in self.alerts.values() if q]
        if self.statuses:
            ticks.append(self.statuses[0][0])
        return min(ticks) if ticks else None


def escalate(table: EscalationTable, msg: CellMessage, now: int) -> Decision:
    table.expire(now)
    if msg.cls is MessageClass.ALERT:
        label = str(msg.payload.get("label", "unknown"))
        table.alerts[label].append((now, msg.origin))
        if label in table.broadcast_last or len(table.origins(label)) >= 2:
            table.broadcast_last[label] = now
            return Decision.BROADCAST
        return Decision.TO_ADMIN
    if msg.cls is MessageClass.STATUS_SUMMARY:
        table.statuses.append((now, msg.origin, dict(msg.payload)))
        return Decision.ABSORB
    return Decision.KEEP_LOCAL
