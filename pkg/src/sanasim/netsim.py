"""Deterministic discrete-event core: clock, event queue, RNG streams,
topologies and hop-by-hop packet delivery.

Time is an integer tick. A packet advances one hop per tick and may be
inspected at every node it visits, source and destination included.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import json
import logging
import math
import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Optional

logger = logging.getLogger(__name__)

DEFAULT_MTU = 1500


class SchedulingError(RuntimeError):
    """An event was scheduled before the current clock."""


class SimulationEnded(Exception):
    """Raised by :meth:`EventQueue.step` when no events remain."""


class NoRoute(Exception):
    pass


class EventKind(str, Enum):
    PACKET_HOP = "PacketHop"
    CELL_MOVE = "CellMove"
    CELL_TICK = "CellTick"
    MESSAGE_HOP = "MessageHop"
    SCENARIO_ACTION = "ScenarioAction"
    ORGAN_TICK = "OrganTick"


@dataclass(order=True)
class SimEvent:
    time: int
    seq: int = field(default=-1)
    kind: EventKind = field(default=EventKind.SCENARIO_ACTION, compare=False)
    data: Any = field(default=None, compare=False)


class EventQueue:
    """Min-heap of events ordered by ``(time, seq)``."""

    def __init__(self) -> None:
        self._heap: list[SimEvent] = []
        self._seq = itertools.count()
        self.clock = 0
        self._handlers: dict[EventKind, Callable[[SimEvent], None]] = {}

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, ev: SimEvent) -> SimEvent:
        if ev.time < self.clock:
            raise SchedulingError(f"event at t={ev.time} scheduled when clock={self.clock}")
        ev.seq = next(self._seq)
        heapq.heappush(self._heap, ev)
        return ev

    def at(self, time: int, kind: EventKind, data: Any = None) -> SimEvent:
        return self.schedule(SimEvent(time, kind=kind, data=data))

    def peek_time(self) -> Optional[int]:
        return self._heap[0].time if self._heap else None

    def step(self) -> SimEvent:
        if not self._heap:
            raise SimulationEnded()
        ev = heapq.heappop(self._heap)
        self.clock = ev.time
        return ev

    def on(self, kind: EventKind, handler: Callable[[SimEvent], None]) -> None:
        self._handlers[kind] = handler

    def run_until(self, t: int) -> int:
        """Dispatch every event with ``time <= t``; returns the count handled."""
        n = 0
        while self._heap and self._heap[0].time <= t:
            ev = self.step()
            self._handlers[ev.kind](ev)
            n += 1
        if t > self.clock:
            self.clock = t
        return n


class RngStreams:
    """Named, independent random streams derived from one 64-bit seed.

    Each stream is a CPython ``random.Random`` (Mersenne Twister) seeded
    with the first 8 bytes of ``sha256(f"{seed}:{name}")``.
    """

    def __init__(self, seed: int) -> None:
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._streams: dict[str, random.Random] = {}

    def get(self, name: str) -> random.Random:
        rng = self._streams.get(name)
        if rng is None:
            digest = hashlib.sha256(f"{self.seed}:{name}".encode()).digest()
            rng = random.Random(int.from_bytes(digest[:8], "big"))
            self._streams[name] = rng
        return rng


# ---------------------------------------------------------------------------
# Topology


@dataclass
class Topology:
    n: int
    edges: set[tuple[int, int]]
    areas: dict[int, list[int]]
    lymph_hosts: dict[int, int]
    cnts_host: int
    adj: dict[int, list[int]] = field(init=False, repr=False)
    area_of: dict[int, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.edges = {(min(a, b), max(a, b)) for a, b in self.edges}
        self.adj = {v: [] for v in range(self.n)}
        for a, b in sorted(self.edges):
            if a == b or not (0 <= a < self.n and 0 <= b < self.n):
                raise ValueError(f"bad edge ({a}, {b})")
            self.adj[a].append(b)
            self.adj[b].append(a)
        for v in self.adj:
            self.adj[v].sort()
        self.area_of = {}
        for aid, members in self.areas.items():
            for v in members:
                if v in self.area_of:
                    raise ValueError(f"node {v} in more than one area")
                self.area_of[v] = aid
        self.validate()

    @property
    def nodes(self) -> range:
        return range(self.n)

    def validate(self) -> None:
        if set(self.area_of) != set(self.nodes):
            missing = sorted(set(self.nodes) - set(self.area_of))
            raise ValueError(f"nodes without area: {missing}")
        if set(self.lymph_hosts) != set(self.areas):
            raise ValueError("every area needs exactly one lymph host")
        for aid, host in self.lymph_hosts.items():
            if self.area_of.get(host) != aid:
                raise ValueError(f"lymph host {host} is not a member of area {aid}")
        if not 0 <= self.cnts_host < self.n:
            raise ValueError(f"cnts_host {self.cnts_host} not a node")
        if self.n and len(bfs_distances(self, 0)) != self.n:
            raise ValueError("topology is not connected")

    def neighbors(self, v: int) -> list[int]:
        return self.adj[v]

    def diameter(self, blocked: Iterable[int] = ()) -> int:
        blocked = set(blocked)
        best = 0
        for v in self.nodes:
            if v in blocked:
                continue
            d = bfs_distances(self, v, blocked)
            best = max(best, max(d.values()))
        return best

    def to_dict(self) -> dict:
        aids = sorted(self.areas)
        return {
            "nodes": self.n,
            "edges": [list(e) for e in sorted(self.edges)],
            "areas": [self.areas[a] for a in aids],
            "lymph_hosts": [self.lymph_hosts[a] for a in aids],
            "cnts_host": self.cnts_host,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Topology":
        areas = {i: sorted(int(v) for v in members) for i, members in enumerate(doc["areas"])}
        hosts = {i: int(h) for i, h in enumerate(doc["lymph_hosts"])}
        return cls(
            n=int(doc["nodes"]),
            edges={(int(a), int(b)) for a, b in doc["edges"]},
            areas=areas,
            lymph_hosts=hosts,
            cnts_host=int(doc["cnts_host"]),
        )

    @classmethod
    def load(cls, path) -> "Topology":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def bfs_distances(topo: Topology, start: int, blocked: Iterable[int] = ()) -> dict[int, int]:
    blocked = blocked if isinstance(blocked, (set, frozenset)) else set(blocked)
    dist = {start: 0}
    q = deque([start])
    while q:
        v = q.popleft()
        for w in topo.adj[v]:
            if w not in dist and w not in blocked:
                dist[w] = dist[v] + 1
                q.append(w)
    return dist


def _medoid(topo: Topology, members: list[int]) -> int:
    best, best_cost = members[0], math.inf
    for v in members:
        d = bfs_distances(topo, v)
        cost = sum(d[m] for m in members)
        if cost < best_cost:
            best, best_cost = v, cost
    return best


def _assign_organs(n: int, edges: set, chunks: list[list[int]]) -> Topology:
    areas = {i: sorted(c) for i, c in enumerate(chunks)}
    # provisional hosts so the object validates, then pick medoids
    topo = Topology(n, edges, areas, {i: c[0] for i, c in areas.items()}, 0)
    topo.lymph_hosts = {i: _medoid(topo, c) for i, c in areas.items()}
    topo.cnts_host = _medoid(topo, list(range(n)))
    return topo


def _split(order: list[int], k: int) -> list[list[int]]:
    if not 1 <= k <= len(order):
        raise ValueError(f"cannot form {k} areas from {len(order)} nodes")
    size, extra = divmod(len(order), k)
    out, i = [], 0
    for a in range(k):
        step = size + (1 if a < extra else 0)
        out.append(order[i:i + step])
        i += step
    return out


def line(n: int, areas: int = 1) -> Topology:
    edges = {(i, i + 1) for i in range(n - 1)}
    return _assign_organs(n, edges, _split(list(range(n)), areas))


def grid(rows: int, cols: int, areas: int = 1) -> Topology:
    """Row-major ids; areas are contiguous column bands."""
    n = rows * cols
    edges = set()
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                edges.add((v, v + 1))
            if r + 1 < rows:
                edges.add((v, v + cols))
    order = sorted(range(n), key=lambda v: (v % cols, v // cols))
    return _assign_organs(n, edges, _split(order, areas))


def geometric(n: int, radius: float, seed: int, areas: int = 1, max_tries: int = 1000) -> Topology:
    """Random geometric graph in the unit square; resampled until connected."""
    rng = RngStreams(seed).get("topology")
    for _ in range(max_tries):
        pts = [(rng.random(), rng.random()) for _ in range(n)]
        edges = {
            (i, j)
            for i in range(n)
            for j in range(i + 1, n)
            if math.dist(pts[i], pts[j]) <= radius
        }
        probe = {v: [] for v in range(n)}
        for a, b in edges:
            probe[a].append(b)
            probe[b].append(a)
        seen, q = {0}, deque([0])
        while q:
            v = q.popleft()
            for w in probe[v]:
                if w not in seen:
                    seen.add(w)
                    q.append(w)
        if len(seen) == n:
            order = sorted(range(n), key=lambda v: (pts[v][0], v))
            return _assign_organs(n, edges, _split(order, areas))
    raise ValueError(f"no connected geometric graph with n={n}, radius={radius}")


def build_topology(spec: dict, seed: int = 0) -> Topology:
    kind = spec.get("kind", "grid")
    if kind == "line":
        return line(spec["n"], spec.get("areas", 1))
    if kind == "grid":
        return grid(spec["rows"], spec["cols"], spec.get("areas", 1))
    if kind == "geometric":
        return geometric(spec["n"], spec["radius"], spec.get("seed", seed), spec.get("areas", 1))
    if kind == "file":
        return Topology.load(spec["path"])
    if kind == "inline":
        return Topology.from_dict(spec["document"])
    raise ValueError(f"unknown topology kind {kind!r}")


class Router:
    """Shortest-path routing with smallest-next-hop tiebreak.

    Distance maps are cached per destination and dropped whenever the set of
    blocked nodes changes.
    """

    def __init__(self, topo: Topology) -> None:
        self.topo = topo
        self.blocked: frozenset[int] = frozenset()
        self._cache: dict[int, dict[int, int]] = {}

    def set_blocked(self, blocked: Iterable[int]) -> None:
        blocked = frozenset(blocked)
        if blocked != self.blocked:
            self.blocked = blocked
            self._cache.clear()

    def distances_to(self, dst: int) -> dict[int, int]:
        d = self._cache.get(dst)
        if d is None:
            d = {} if dst in self.blocked else bfs_distances(self.topo, dst, self.blocked)
            self._cache[dst] = d
        return d

    def route(self, src: int, dst: int) -> list[int]:
        return route(self.topo, src, dst, self.blocked, self.distances_to(dst))

    def next_hop(self, at: int, dst: int) -> Optional[int]:
        d = self.distances_to(dst)
        here = d.get(at)
        if here is None or here == 0:
            return None
        for w in self.topo.adj[at]:
            if d.get(w) == here - 1:
                return w
        return None


def route(topo: Topology, src: int, dst: int, blocked: Iterable[int] = (),
          dist: Optional[dict[int, int]] = None) -> list[int]:
    if src == dst:
        raise ValueError("route requires src != dst")
    for v in (src, dst):
        if not 0 <= v < topo.n:
            raise ValueError(f"node {v} not in topology")
    blocked = blocked if isinstance(blocked, (set, frozenset)) else set(blocked)
    if src in blocked or dst in blocked:
        raise NoRoute(f"{src}->{dst}: endpoint unavailable")
    if dist is None:
        dist = bfs_distances(topo, dst, blocked)
    if src not in dist:
        raise NoRoute(f"{src}->{dst}: unreachable")
    path = [src]
    v = src
    while v != dst:
        want = dist[v] - 1
        v = next(w for w in topo.adj[v] if dist.get(w) == want)
        path.append(v)
    return path


# ---------------------------------------------------------------------------
# Packets


class Protocol(str, Enum):
    TCP = "TCP"
    UDP = "UDP"
    OTHER = "OTHER"

    @property
    def code(self) -> int:
        return {"TCP": 6, "UDP": 17, "OTHER": 0}[self.value]


class Outcome(str, Enum):
    DELIVERED = "Delivered"
    DROPPED_DETECTED = "Dropped(Detected)"
    DROPPED_NOROUTE = "Dropped(NoRoute)"
    DROPPED_QUARANTINE = "Dropped(Quarantine)"


@dataclass(slots=True)
class Packet:
    pid: int
    src: int
    sport: int
    dst: int
    dport: int
    protocol: Protocol
    payload: bytes
    encrypted: bool = False
    injected_at: int = 0
    attack: Optional[str] = None  # ground-truth label, never visible to detectors
    mtu: int = DEFAULT_MTU

    def __post_init__(self) -> None:
        if self.src == self.dst:
            raise ValueError("packet src == dst")
        for p in (self.sport, self.dport):
            if not 0 <= p <= 65535:
                raise ValueError(f"port {p} out of range")
        if len(self.payload) > self.mtu:
            raise ValueError(f"payload {len(self.payload)} bytes exceeds MTU {self.mtu}")


# inspector(node, packet, hop_index, is_destination) -> True to drop as detected
Inspector = Callable[[int, Packet, int, bool], bool]
OutcomeSink = Callable[[Packet, Outcome, int, int, int], None]


@dataclass
class _Transit:
    packet: Packet
    path: list[int]
    index: int = 0


class Network:
    """Owns routing state and moves packets hop by hop through an EventQueue.

    ``quarantined`` nodes neither send, receive nor relay packets; ``down``
    nodes (failed or non-admissible) are treated as absent.
    """

    def __init__(self, topo: Topology, queue: EventQueue, inspector: Optional[Inspector] = None,
                 on_outcome: Optional[OutcomeSink] = None) -> None:
        self.topo = topo
        self.queue = queue
        self.router = Router(topo)
        self.inspector = inspector or (lambda node, pkt, hop, is_dst: False)
        self.on_outcome = on_outcome or (lambda pkt, outcome, node, tick, hops: None)
        self.quarantined: set[int] = set()
        self.down: set[int] = set()
        queue.on(EventKind.PACKET_HOP, self._handle_hop)

    def refresh_blocked(self) -> None:
        self.router.set_blocked(self.quarantined | self.down)

    def _finish(self, pkt: Packet, outcome: Outcome, node: int, hops: int) -> None:
        if outcome is not Outcome.DELIVERED:
            logger.debug("packet %d %s at node %d", pkt.pid, outcome.value, node)
        self.on_outcome(pkt, outcome, node, self.queue.clock, hops)

    def deliver(self, pkt: Packet) -> None:
        """Start a packet's transit at ``pkt.injected_at``."""
        self.refresh_blocked()
        if pkt.src in self.quarantined or pkt.dst in self.quarantined:
            self._finish(pkt, Outcome.DROPPED_QUARANTINE, pkt.src, 0)
            return
        try:
            path = self.router.route(pkt.src, pkt.dst)
        except NoRoute:
            self._finish(pkt, Outcome.DROPPED_NOROUTE, pkt.src, 0)
            return
        self.queue.at(pkt.injected_at, EventKind.PACKET_HOP, _Transit(pkt, path))

    def _handle_hop(self, ev: SimEvent) -> None:
        tr: _Transit = ev.data
        pkt, node = tr.packet, tr.path[tr.index]
        if node in self.quarantined:
            self._finish(pkt, Outcome.DROPPED_QUARANTINE, node, tr.index)
            return
        if node in self.down:
            self._finish(pkt, Outcome.DROPPED_NOROUTE, node, tr.index)
            return
        is_dst = tr.index == len(tr.path) - 1
        if self.inspector(node, pkt, tr.index, is_dst):
            self._finish(pkt, Outcome.DROPPED_DETECTED, node, tr.index)
            return
        if is_dst:
            self._finish(pkt, Outcome.DELIVERED, node, tr.index)
            return
        tr.index += 1
        self.queue.at(ev.time + 1, EventKind.PACKET_HOP, tr)
