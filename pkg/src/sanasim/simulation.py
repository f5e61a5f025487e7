"""The simulation core wiring every module together.

Each tick runs in a fixed order:

1. organ tick (CNTS release, pending disinfection dispatch)
2. traffic generation (benign flows, scenario emitters)
3. queued events due this tick (scenario actions, packet hops, message hops)
4. status exchange, danger update, cell moves, inspections,
   pheromone classification + evaporation, ttl expiry, level recompute

Everything observable is appended to ``self.events``; metrics are derived
from that list alone.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import defaultdict
from typing import Callable, Optional

from . import cells as C
from .cells import ArtificialCell, CellKind, encode_pattern, payload_patterns
from .comm import ADMIN, Comm, Decision, MessageClass, Scope, escalate
from .config import RunConfig
from .netsim import (
    EventKind, EventQueue, Network, Outcome, Packet, Protocol, RngStreams, Router, SimEvent,
    build_topology,
)
from .organs import CNTS, BreedParams, LymphNode, NodeStatus, snapshot
from .secenv import (
    Authority, Capability, ComponentKind, LegacyComponent, LogKind, LogRecord,
    SecurityEnvironment, Severity,
)
from .selfmgmt import (
    DangerState, PheromoneMap, QuarantineBook, attraction_target, can_leave,
    compute_security_level, patrol_next,
)

logger = logging.getLogger(__name__)

WORM_PORT = 445
MOBILE_KINDS = tuple(k for k in CellKind if k is not CellKind.CONNECTOR_CELL)


class ReconciliationError(RuntimeError):
    pass


class Simulation:
    def __init__(self, config: RunConfig) -> None:
        self.cfg = config
        self.now = 0
        self.events: list[dict] = []
        self.rng = RngStreams(config.seed)
        self.topo = build_topology(config.topology, config.seed)
        self.queue = EventQueue()
        self.authority = Authority.from_seed(config.seed)
        self.params = config.selfmgmt
        o = config.organs
        self.organ_params = o
        self.traffic = config.traffic

        self.envs: dict[int, SecurityEnvironment] = {}
        for v in self.topo.nodes:
            l1 = hashlib.sha256(f"layer1:{config.seed}:{v}".encode()).digest() * 4
            img = hashlib.sha256(f"secenv:{config.seed}".encode()).digest() * 4
            self.envs[v] = SecurityEnvironment(v, self.authority, l1, img, on_record=self._on_record)

        self.network = Network(self.topo, self.queue, self._inspect_packet, self._packet_outcome)
        self.comm_router = Router(self.topo)
        self.comm = Comm(self.topo, self.queue, self.comm_router, k=o.retransmit_k,
                         alive=self._node_alive, relays=self._relays,
                         on_receive=self._on_message, on_status=self._on_msg_status)
        self.comm.on_send = lambda m: self.emit("send", msg_id=m.msg_id, cls=m.cls.value,
                                                scope=m.scope.value, origin=m.origin)
        self.lymph = {a: LymphNode.create(a, h, o.lymph_window) for a, h in self.topo.lymph_hosts.items()}

        # traffic model
        pool_rng = self.rng.get("traffic-pool")
        self.benign_pool = [
            bytes(pool_rng.getrandbits(8) for _ in range(self.traffic.payload_bytes))
            for _ in range(self.traffic.payload_pool)
        ]
        selfset = sorted({p for pay in self.benign_pool for p in self.payload_windows(pay)})
        self.selfset = selfset
        self.open_ports = {v: set(self.traffic.service_ports) | {WORM_PORT} for v in self.topo.nodes}
        self.signatures: dict[str, list[str]] = {}  # every intrusion the scenarios may use

        bp = BreedParams(candidate_batch=o.candidate_batch, max_rounds=o.max_rounds, wildcard_p=o.wildcard_p,
                         r=o.r, ttl_min=o.ttl_min, ttl_max=o.ttl_max, security_value=o.cell_value)
        self.cnts = CNTS(self.topo.cnts_host, selfset, (), o.release_rate if o.enabled else 0.0,
                         o.kind_mix, bp)

        self.pheromone = PheromoneMap(self.params.evaporation, self.params.infected_threshold)
        self.qbook = QuarantineBook(self.params.clean_checks)
        self.markers: dict[int, set] = defaultdict(set)
        self.node_danger = {v: DangerState(decay=self.params.decay, low=self.params.danger_low,
                                           high=self.params.danger_high) for v in self.topo.nodes}
        self.alerts_now: dict[int, float] = defaultdict(float)
        self.neighbor_reports: dict[int, float] = defaultdict(float)
        self.last_visit = {k: {v: 0 for v in self.topo.nodes} for k in CellKind}
        for env in self.envs.values():
            env.last_checked = 0
        self.cells: dict[str, ArtificialCell] = {}
        self._cell_ids = 0
        self._pid = 0
        self._enc: dict[int, tuple] = {}
        self.clone_ready: dict[str, int] = {}
        self.pending_dispatch: list[tuple[str, int]] = []
        self.summary_buffer: dict[str, list] = defaultdict(list)
        self.auth_failures: dict[str, list] = defaultdict(list)  # identity -> [(node, time)]
        self.flagged_identities: set[str] = set()
        self.admin_inbox: list[dict] = []
        self.external_sources: set[int] = set()
        self.tick_hooks: list[Callable[[int], None]] = []
        self.checked_this_tick: set[int] = set()
        self.tx_mark = 0
        self.live = defaultdict(int)
        self.live_curves = defaultdict(list)
        self.infected_nodes: set[int] = set()
        self.dormant: dict[int, str] = {}
        self._pheromone_labels: dict[int, set] = defaultdict(set)
        self.backdoor_ports: dict[tuple[int, str], int] = {}
        self.attack_handlers: dict[str, Callable] = {}

        self.queue.on(EventKind.SCENARIO_ACTION, self._handle_action)

        self._install_components()
        self._install_rules()
        from .scenarios import install as install_scenario
        install_scenario(self, config.scenario)
        self._install_perturbations()
        if o.enabled:
            self._seed_population()

    # ------------------------------------------------------------------
    # setup

    def payload_windows(self, payload: bytes) -> list[str]:
        return payload_patterns(payload, C.PATTERN_WIDTH, self.traffic.window_stride)

    def emit(self, ev: str, **data) -> None:
        data["t"] = self.now
        data["ev"] = ev
        self.events.append(data)

    def new_cell_id(self) -> str:
        self._cell_ids += 1
        return f"c{self._cell_ids}"

    def cred_for(self, cid: str, kind: CellKind):
        return self.authority.issue(cid, C.KIND_CAPABILITIES[kind])

    def _install_components(self) -> None:
        vals = self.organ_params.component_values
        for v, env in self.envs.items():
            cid = f"conn{v}"
            conn = ArtificialCell(cid, CellKind.CONNECTOR_CELL, [], 1, v, 0.0,
                                  self.cred_for(cid, CellKind.CONNECTOR_CELL), mobile=False)
            env.admit(conn, 0)
            for kind_name, value in sorted(vals.items()):
                comp_id = f"{kind_name.lower()}{v}"
                comp = LegacyComponent(comp_id, ComponentKind(kind_name), security_value=value)
                cred = self.authority.issue(comp_id, {Capability.INSPECT_PACKETS, Capability.WRITE_LOG})
                env.register(comp_id, cred, value, 0, comp)

    def _install_rules(self) -> None:
        path = self.organ_params.rule_file
        if path:
            with open(path) as fh:
                items = [(d["label"], d["pattern"]) for d in json.load(fh)]
            self.add_known(items, initial=True)

    def add_known(self, items, initial: bool = False) -> int:
        for label, pat in items:
            self.signatures.setdefault(label, [])
            if pat not in self.signatures[label]:
                self.signatures[label].append(pat)
        if initial and self.cnts.rule_version == 0:
            for it in items:
                self.cnts._add_known(tuple(it))
            self.cnts.rule_version = 1
            version = 1
        else:
            version = self.cnts.update_rules(items)
        for env in self.envs.values():
            if initial:
                env.announced_version = version
                for comp in env.components.values():
                    comp.rule_version = version
        return version

    def _install_perturbations(self) -> None:
        for p in self.cfg.perturbations:
            self.schedule_action(int(p["tick"]), dict(p))

    def schedule_action(self, tick: int, action: dict) -> None:
        self.queue.at(tick, EventKind.SCENARIO_ACTION, action)

    def _seed_population(self) -> None:
        n = self.organ_params.initial_cells_per_node * self.topo.n
        if n <= 0:
            return
        res = self.cnts.breed_cells(n, self.rng.get("cnts"), 0, self.new_cell_id, self.cred_for)
        for i, cell in enumerate(res.cells):
            self._place_cell(cell, i % self.topo.n, "initial")
        for cid, why in res.warnings:
            self.envs[self.cnts.host].append(0, "cnts", Severity.WARNING, LogKind.CHECK_REPORT,
                                             status=why, cell=cid)

    def _place_cell(self, cell: ArtificialCell, node: int, how: str) -> bool:
        env = self.envs[node]
        if not env.admit(cell, self.now):
            return False
        self.cells[cell.id] = cell
        self.emit("cell", op="born", id=cell.id, kind=cell.kind.value, node=node, ttl=cell.ttl,
                  how=how, labels=sorted(cell.labels()))
        self.live["alive"] += 1
        return True

    def _kill_cell(self, cell: ArtificialCell, reason: str) -> None:
        env = self.envs[cell.location]
        env.eject(cell.id, self.now)
        del self.cells[cell.id]
        self.cnts.archive_cell(cell)
        self.emit("cell", op="died", id=cell.id, reason=reason, node=cell.location)
        self.live["alive"] -= 1

    # ------------------------------------------------------------------
    # availability

    def _node_alive(self, v: int) -> bool:
        return v not in self.network.down

    def _relays(self, v: int, msg) -> bool:
        if v in self.network.down:
            return False
        if self.envs[v].quarantined:
            return msg.scope is Scope.ADMIN
        return True

    def set_down(self, v: int, down: bool, why: str) -> None:
        if down and v not in self.network.down:
            self.network.down.add(v)
            self.emit("down", node=v, why=why)
        elif not down and v in self.network.down:
            self.network.down.discard(v)
            self.emit("up", node=v, why=why)
        self.network.refresh_blocked()

    # ------------------------------------------------------------------
    # logging / messaging hooks

    def _on_record(self, rec: LogRecord) -> None:
        self.events.append({"t": rec.time, "ev": "log", **rec.to_dict()})
        if rec.severity is Severity.ALERT:
            payload = {"kind": rec.kind.value, **{k: v for k, v in rec.detail.items()
                                                   if isinstance(v, (int, str, float, bool))}}
            payload.setdefault("label", rec.detail.get("label", rec.kind.value))
            origin = rec.node if self._node_alive(rec.node) else self.topo.cnts_host
            self.comm.send(rec.source, origin, Scope.ADMIN, MessageClass.ALERT, payload, self.now)

    def _on_msg_status(self, d) -> None:
        self.emit("msg", msg_id=d.msg.msg_id, cls=d.msg.cls.value, scope=d.msg.scope.value,
                  origin=d.msg.origin, status=d.status.value, intended=len(d.intended),
                  received=len(d.received))

    def _on_message(self, receiver, msg, tick: int) -> None:
        if receiver == ADMIN:
            self._admin_receive(msg, tick)
        elif isinstance(receiver, tuple):
            self._lymph_receive(receiver[1], msg, tick)
        elif msg.cls is MessageClass.UPDATE_REPORT:
            env = self.envs[receiver]
            env.announced_version = max(env.announced_version, int(msg.payload["version"]))
        elif msg.cls is MessageClass.ALERT and msg.escalated:
            # network-wide broadcast of a spreading intrusion
            self.alerts_now[receiver] += 1

    def _admin_receive(self, msg, tick: int) -> None:
        entry = {"msg_id": msg.msg_id, "class": msg.cls.value, "origin": msg.origin,
                 "sent": msg.sent_at, "received": tick}
        self.admin_inbox.append(entry)
        self.emit("admin", **entry)
        p = msg.payload
        if msg.cls is MessageClass.ALERT and p.get("subject") == "node":
            self.request_dispatch(str(p["label"]), int(msg.origin))
        elif msg.cls is MessageClass.STATUS_SUMMARY:
            for row in p.get("nodes", ()):
                self.cnts.status_store[row["node"]] = row
            if p.get("auth_failures"):
                self._correlate_auth(p["auth_failures"], tick)

    def _lymph_receive(self, host: int, msg, tick: int) -> None:
        ln = self.lymph[self.topo.area_of[host]]
        before = ln.table.origins(str(msg.payload.get("label")))
        decision = escalate(ln.table, msg, tick)
        if decision is Decision.BROADCAST:
            label = str(msg.payload.get("label"))
            after = ln.table.origins(label)
            if after != before or len(after) >= 2 and not before:
                self.comm.send(f"lymph{ln.area}", host, Scope.NETWORK, MessageClass.ALERT,
                               {"label": label, "origins": sorted(after)}, self.now, escalated=True)

    # ------------------------------------------------------------------
    # insider correlation

    def _correlate_auth(self, entries, tick: int) -> None:
        window = int(self.cfg.scenario.parameters.get("insider_window", 100))
        need = int(self.cfg.scenario.parameters.get("insider_failures", 5))
        need_nodes = int(self.cfg.scenario.parameters.get("insider_nodes", 2))
        touched = set()
        for user, node, t in entries:
            self.auth_failures[user].append((node, t))
            touched.add(user)
        for user in sorted(touched):
            if user in self.flagged_identities:
                continue
            if insider_flag(self.auth_failures[user], window, need, need_nodes):
                self.flagged_identities.add(user)
                self.envs[self.topo.cnts_host].append(
                    self.now, "loganalysis", Severity.ALERT, LogKind.DETECTION, subject="identity",
                    user=user, label=f"insider:{user}")

    # ------------------------------------------------------------------
    # packets

    def inject(self, src: int, dst: int, dport: int, payload: bytes, attack: Optional[str] = None,
               encrypted: bool = False, sport: int = 49152, protocol: Protocol = Protocol.TCP) -> Packet:
        self._pid += 1
        pkt = Packet(self._pid, src, sport, dst, dport, protocol, payload, encrypted, self.now, attack)
        self.live["injected"] += 1
        self.emit("inject", pid=pkt.pid)
        self.network.deliver(pkt)
        return pkt

    def _encoded(self, pkt: Packet, plaintext: bool):
        key = (pkt.pid, plaintext)
        enc = self._enc.get(key)
        if enc is None:
            if plaintext and pkt.encrypted:
                enc = C.EncodedPacket(C.encode_header(pkt), tuple(self.payload_windows(pkt.payload)))
            else:
                enc = encode_pattern(pkt, C.PATTERN_WIDTH, self.traffic.window_stride)
            self._enc[key] = enc
        return enc

    def _inspect_packet(self, node: int, pkt: Packet, hop: int, is_dst: bool) -> bool:
        if hop == 0 and pkt.src in self.external_sources:
            return False
        env = self.envs[node]
        # endpoints see decrypted content; relays only see the header of encrypted traffic
        enc = self._encoded(pkt, plaintext=(is_dst or hop == 0))
        warned = False
        guarded = pkt.attack is not None and any(
            c.kind is CellKind.PACKET_CHECKER for c in env.cells.values())
        for cid in sorted(env.cells):
            cell = env.cells[cid]
            if cell.kind is not CellKind.PACKET_CHECKER:
                continue
            if not env.access(cell.cred, Capability.INSPECT_PACKETS, self.now):
                continue
            f = C.inspect_packet(cell, enc, self.params.similarity_cutoff, cell.danger.similarity_on)
            if f is None:
                continue
            det = f.detector
            if f.severity is Severity.ALERT:
                env.append(self.now, cell.id, Severity.ALERT, LogKind.DETECTION, subject="packet",
                           pid=pkt.pid, src=pkt.src, dst=pkt.dst, hop=hop, label=det.label,
                           payload=bool(enc.payload) and det.channel is C.Channel.PAYLOAD)
                self.alerts_now[node] += 1
                self.pheromone.deposit(pkt.src, self.params.deposit)
                self.emit("deposit", node=pkt.src, amount=self.params.deposit, label=det.label)
                self._pheromone_labels[pkt.src].add(det.label)
                self._maybe_clone(cell, det)
                if guarded:
                    self._arrival(pkt, node, hop, True)
                return True
            if not warned:
                warned = True
                env.append(self.now, cell.id, Severity.WARNING, LogKind.DETECTION, subject="packet",
                           pid=pkt.pid, src=pkt.src, dst=pkt.dst, hop=hop, label=det.label,
                           variant=f.variant, score=round(f.score, 6),
                           payload=bool(enc.payload))
        if guarded:
            self._arrival(pkt, node, hop, False)
        if is_dst and pkt.protocol is Protocol.TCP and pkt.dport not in self.open_ports[node]:
            fw = next((c for c in env.components.values() if c.kind is ComponentKind.FIREWALL), None)
            if fw is not None:
                env.append(self.now, fw.id, Severity.WARNING, LogKind.DETECTION, subject="packet",
                           pid=pkt.pid, src=pkt.src, dst=pkt.dst, hop=hop, label="closed-port",
                           rule="header", port=pkt.dport)
        return False

    def _arrival(self, pkt: Packet, node: int, hop: int, dropped: bool) -> None:
        self.emit("arrival", pid=pkt.pid, node=node, hop=hop, dropped=int(dropped), attack=pkt.attack)
        self.live["guarded"] += 1
        self.live["guarded_drops"] += int(dropped)

    def _packet_outcome(self, pkt: Packet, outcome: Outcome, node: int, tick: int, hops: int) -> None:
        self._enc.pop((pkt.pid, True), None)
        self._enc.pop((pkt.pid, False), None)
        self.emit("pkt", pid=pkt.pid, src=pkt.src, dst=pkt.dst, dport=pkt.dport, sent=pkt.injected_at,
                  outcome=outcome.value, node=node, hops=hops, attack=pkt.attack,
                  encrypted=pkt.encrypted)
        self.live[outcome.value] += 1
        if outcome is Outcome.DELIVERED and pkt.attack:
            from .scenarios import on_attack_delivered
            on_attack_delivered(self, pkt)

    # ------------------------------------------------------------------
    # infection markers

    def add_marker(self, node: int, marker: str, label: str, why: str = "") -> bool:
        key = (marker, label)
        if key in self.markers[node]:
            return False
        self.markers[node].add(key)
        self.emit("marker", op="add", node=node, marker=marker, label=label, why=why)
        if marker == "infection":
            self.infected_nodes.add(node)
            self.live["infections"] += 1
        return True

    def clear_markers(self, node: int, label: str, why: str) -> int:
        gone = sorted(m for m in self.markers[node] if m[1] == label)
        for m in gone:
            self.markers[node].discard(m)
            self.envs[node].reported.discard(m)
            self.emit("marker", op="remove", node=node, marker=m[0], label=label, why=why)
            if m[0] == "backdoor" and (port := self.backdoor_ports.get((node, label))):
                self.open_ports[node].discard(port)
        if not any(m[0] == "infection" for m in self.markers[node]):
            self.infected_nodes.discard(node)
        return len(gone)

    # ------------------------------------------------------------------
    # response

    def request_dispatch(self, label: str, node: int) -> None:
        if self.cnts.request_dispatch(label, node, self.now):
            self.emit("dispatch", op="request", label=label, node=node)
            self.pending_dispatch.append((label, node))

    def _drain_dispatch(self) -> None:
        if not self.pending_dispatch or self.cnts.host in self.network.down:
            return
        still = []
        for label, node in self.pending_dispatch:
            reachable = node in self._cell_reachable()
            if not reachable:
                still.append((label, node))
                continue
            cell = self.cnts.disinfection_cell(label, node, self.rng.get("dispatch"), self.now,
                                               self.new_cell_id, self.cred_for)
            self._place_cell(cell, self.cnts.host, "dispatch")
        self.pending_dispatch = still

    def _cell_reachable(self) -> set:
        from .netsim import bfs_distances
        return set(bfs_distances(self.topo, self.cnts.host, self.network.down))

    def quarantine(self, node: int, labels, why: str) -> None:
        env = self.envs[node]
        if self.qbook.quarantine(node, self.now, labels):
            env.quarantined = True
            self.network.quarantined.add(node)
            self.network.refresh_blocked()
            self.emit("quarantine", op="on", node=node, why=why, labels=sorted(labels))
            env.append(self.now, "selfmgmt", Severity.WARNING, LogKind.QUARANTINE_CHANGE,
                       state="on", why=why)
            self.comm.send("selfmgmt", node, Scope.ADMIN, MessageClass.WARNING,
                           {"quarantine": node, "labels": ",".join(sorted(labels))}, self.now)
            for label in sorted(labels):
                self.request_dispatch(label, node)

    def lift_quarantine(self, node: int) -> None:
        env = self.envs[node]
        self.qbook.lift(node)
        env.quarantined = False
        self.network.quarantined.discard(node)
        self.network.refresh_blocked()
        self.pheromone.clear(node)
        self._pheromone_labels.pop(node, None)
        self.emit("quarantine", op="off", node=node)
        env.append(self.now, "selfmgmt", Severity.INFO, LogKind.QUARANTINE_CHANGE, state="off")

    # ------------------------------------------------------------------
    # scenario actions

    def _handle_action(self, ev: SimEvent) -> None:
        action = ev.data
        if callable(action):
            action(self)
            return
        name = action["action"]
        self.emit("action", **{k: v for k, v in action.items() if k != "tick"})
        if name == "delete_cells":
            rng = self.rng.get("perturb")
            ids = sorted(self.cells)
            k = int(round(float(action.get("fraction", 0.3)) * len(ids)))
            for cid in sorted(rng.sample(ids, k), key=lambda c: int(c[1:])):
                self._kill_cell(self.cells[cid], "deleted")
        elif name == "fail_node":
            self.set_down(int(action["node"]), True, "failure")
        elif name == "recover_node":
            self.set_down(int(action["node"]), False, "recovery")
        elif name == "admin_quarantine":
            node = int(action["node"])
            labels = sorted({m[1] for m in self.markers[node]})
            self.quarantine(node, labels, "admin")
        elif name == "update_rules":
            items = [(d["label"], d["pattern"]) for d in action.get("patterns", [])]
            if "file" in action:
                with open(action["file"]) as fh:
                    items += [(d["label"], d["pattern"]) for d in json.load(fh)]
            if action.get("scenario_signatures"):
                items += [(l, p) for l, pats in sorted(self.signatures.items()) for p in pats]
            self.rules_update(items)
        elif name == "halt_cnts":
            self.cnts.halted = True
        else:
            raise ValueError(f"unknown perturbation action {name!r}")

    def rules_update(self, items) -> int:
        version = self.add_known(items)
        self.emit("rules", version=version, count=len(self.cnts.known_intrusions))
        self.comm.send("cnts", self.cnts.host, Scope.NETWORK, MessageClass.UPDATE_REPORT,
                       {"version": version}, self.now)
        return version

    # ------------------------------------------------------------------
    # main loop

    def run(self, duration: Optional[int] = None) -> None:
        end = self.cfg.duration if duration is None else duration
        while self.now < end:
            self.step_tick()
            self.now += 1
        self.queue.clock = max(self.queue.clock, self.now)

    def step_tick(self) -> None:
        t = self.now
        self.checked_this_tick = set()
        self._organ_tick(t)
        self._generate_traffic(t)
        for hook in self.tick_hooks:
            hook(t)
        self.queue.run_until(t)
        self._exchange_status()
        self._update_danger()
        moves = self._move_cells()
        self._inspections()
        self._pheromone_phase()
        self._expire_cells()
        self._recompute_levels()
        tx = self.comm.transmissions - self.tx_mark
        self.tx_mark = self.comm.transmissions
        self.emit("tick", checked=sorted(self.checked_this_tick), tx=tx, moves=moves)
        self._record_live_curves()

    def _organ_tick(self, t: int) -> None:
        if t > 0 and self.organ_params.enabled and self.cnts.host not in self.network.down:
            n = self.cnts.release_tick()
            if n:
                res = self.cnts.breed_cells(n, self.rng.get("cnts"), t, self.new_cell_id, self.cred_for)
                for cell in res.cells:
                    self._place_cell(cell, self.cnts.host, "release")
                for cid, why in res.warnings:
                    self.envs[self.cnts.host].append(t, "cnts", Severity.WARNING, LogKind.CHECK_REPORT,
                                                     status=why, cell=cid)
        self._drain_dispatch()

    def _generate_traffic(self, t: int) -> None:
        tr = self.traffic
        if tr.benign_rate <= 0:
            return
        rng = self.rng.get("traffic")
        n = self.topo.n
        for v in self.topo.nodes:
            if rng.random() < tr.benign_rate:
                dst = rng.randrange(n - 1)
                dst = dst + 1 if dst >= v else dst
                self.inject(v, dst, rng.choice(tr.service_ports), rng.choice(self.benign_pool),
                            sport=rng.choice(tr.client_ports))

    def _exchange_status(self) -> None:
        reports = defaultdict(float)
        for v in self.topo.nodes:
            if v in self.network.down:
                continue
            count = self.alerts_now.get(v, 0.0)
            if self.envs[v].quarantined:
                continue  # summaries only travel on the admin channel
            for w in self.topo.adj[v]:
                reports[w] += count
        self._own_alerts = dict(self.alerts_now)
        self._incoming = self.neighbor_reports
        self.neighbor_reports = reports
        self.alerts_now = defaultdict(float)

    def _update_danger(self) -> None:
        for v in self.topo.nodes:
            a = self._own_alerts.get(v, 0.0) + self._incoming.get(v, 0.0)
            self.node_danger[v].update(a)
            for cell in self.envs[v].cells.values():
                if cell.mobile:
                    cell.danger.update(a)

    def _move_cells(self) -> int:
        P = self.params.patrol_interval
        thr = self.params.threshold
        now = self.now
        notifying = {v for v, e in self.envs.items() if e.notifying and v not in self.network.down}
        levels = {v: e.level for v, e in self.envs.items()}
        danger = {v: d.danger for v, d in self.node_danger.items()}
        crowd = defaultdict(int)
        for c in self.cells.values():
            crowd[(c.location, c.kind)] += 1
        moves = 0
        for cid in list(self.cells):  # insertion order is id order
            cell = self.cells[cid]
            here = cell.location
            env = self.envs[here]
            nbrs = [w for w in self.topo.adj[here] if w not in self.network.down]
            dest = None
            if cell.target is not None:
                if cell.target == here:
                    if cell.kind is not CellKind.DISINFECTION_CELL:
                        cell.target = None
                    continue
                if cell.kind is CellKind.DISINFECTION_CELL:
                    self.comm_router.set_blocked(self.network.down)
                    dest = self.comm_router.next_hop(here, cell.target)
                else:
                    dest = cell.target if cell.target in nbrs else None
                    cell.target = None
            elif here in self.network.down:
                dest = nbrs[0] if nbrs else None
            else:
                if env.notifying or not can_leave(levels[here], cell.security_value, thr):
                    continue
                dest = None
                if notifying and any(w in notifying for w in nbrs):
                    dest = attraction_target(cell.security_value, levels[here], thr,
                                             {w: levels[w] for w in nbrs}, notifying)
                if dest is None:
                    # a cell sharing its node with another of its kind never rests
                    visits = self.last_visit[cell.kind]
                    crowded = crowd[(here, cell.kind)] > 1
                    dest = patrol_next(nbrs, visits, now, 0 if crowded else P, danger,
                                       cell.danger.biased)
            if dest is None:
                continue
            if self._move(cell, dest, levels, notifying):
                moves += 1
                crowd[(here, cell.kind)] -= 1
                crowd[(dest, cell.kind)] += 1
        return moves

    def _move(self, cell: ArtificialCell, dest: int, levels: dict, notifying: set) -> int:
        here = cell.location
        target_env = self.envs[dest]
        if not target_env.admissible:
            self.envs[here].append(self.now, cell.id, Severity.WARNING, LogKind.ACCESS_DENIED,
                                   action="bounced", refused_by=dest)
            self.last_visit[cell.kind][dest] = self.now
            return 0
        self.envs[here].eject(cell.id, self.now)
        if not target_env.admit(cell, self.now):
            self.envs[here].admit(cell, self.now)
            return 0
        cell.prev = here
        self.last_visit[cell.kind][dest] = self.now
        levels[here] = self.envs[here].level
        levels[dest] = target_env.level
        if levels[dest] >= self.params.threshold:
            notifying.discard(dest)
        return 1

    def _inspections(self) -> None:
        now = self.now
        P = self.params.patrol_interval
        for v in self.topo.nodes:
            if v in self.network.down:
                continue
            env = self.envs[v]
            for cid in sorted(env.cells, key=lambda c: (len(c), c)):
                cell = env.cells[cid]
                kind = cell.kind
                if cell.version < env.announced_version:
                    cell.version = env.announced_version
                    cell.signatures = self.cnts.signatures()
                if kind is CellKind.NODE_CHECKER:
                    visible = self.visible_markers(cell, v)
                    found = C.inspect_node(cell, env, visible, now, env.reported)
                    if found is None:
                        continue
                    env.last_checked = now
                    self.last_visit[kind][v] = now
                    self.checked_this_tick.add(v)
                    clean = not visible
                    if self.qbook.record_check(v, clean):
                        self.lift_quarantine(v)
                elif kind is CellKind.DISINFECTION_CELL:
                    if cell.target == v and cell.ttl > 1:
                        self._disinfect(cell, env)
                elif kind is CellKind.LOG_ANALYZER:
                    found = C.inspect_log(cell, env, now, env.log_cursor)
                    if found is None:
                        continue
                    env.log_cursor = len(env.log)
                    if found:
                        self.comm.send(cell.id, v, Scope.ADMIN, MessageClass.STATUS_SUMMARY,
                                       {"auth_failures": [list(e) for e in found]}, now)
                elif kind is CellKind.UPDATE_CELL:
                    cell.version = max(cell.version, env.announced_version)
                    C.inspect_updates(cell, env, now, cell.version)
                elif kind is CellKind.STATUS_COLLECTOR:
                    if cell.prev is None and cell.born != now:
                        continue
                    buf = self.summary_buffer[cell.id]
                    if not buf or buf[-1]["node"] != v:
                        buf.append({"node": v, "tick": now, "level": round(env.level, 6),
                                    "last_checked": env.last_checked, "cells": len(env.cells) - 1})
                    if len(buf) >= self.organ_params.summary_batch:
                        self.comm.send(cell.id, v, Scope.ADMIN, MessageClass.STATUS_SUMMARY,
                                       {"nodes": buf[:]}, now)
                        buf.clear()

    def visible_markers(self, cell: ArtificialCell, v: int) -> set:
        """Markers a NodeChecker can recognise.

        Traces of signature-based malware are only recognisable with the
        signature; generic traces (backdoors, foreign software) always are.
        """
        return {m for m in self.markers[v] if m[1] in cell.signatures or m[1] not in self.signatures}

    def _disinfect(self, cell: ArtificialCell, env: SecurityEnvironment) -> None:
        v = env.node
        label = next(iter(cell.labels()))
        if not env.access(cell.cred, Capability.DISINFECT, self.now):
            return
        if not any(m[1] == label for m in self.markers[v]) and not (v in self.qbook and label in self.qbook.records[v].labels):
            env.append(self.now, cell.id, Severity.WARNING, LogKind.CHECK_REPORT,
                       status="disinfect-no-match", label=label)
        else:
            removed = self.clear_markers(v, label, "disinfection")
            self.qbook.disinfect(v, label)
            env.append(self.now, cell.id, Severity.INFO, LogKind.CHECK_REPORT,
                       status="disinfected", label=label, removed=removed)
        self.cnts.complete_dispatch(label, v)
        cell.ttl = 1  # retires at the end of this tick

    def _pheromone_phase(self) -> None:
        for v in sorted(self.pheromone.classify()):
            if v in self.qbook or v in self.network.down:
                continue
            self.emit("classify", node=v, suspicion=round(self.pheromone.suspicion[v], 9))
            self.quarantine(v, sorted(self._pheromone_labels.get(v, ())), "infected")
        self.pheromone.evaporate()

    def _expire_cells(self) -> None:
        for cid in list(self.cells):  # insertion order is id order
            cell = self.cells[cid]
            if not C.tick_cell(cell):
                self._kill_cell(cell, "expired")
                self.summary_buffer.pop(cid, None)

    def _recompute_levels(self) -> None:
        thr = self.params.threshold
        for v in self.topo.nodes:
            env = self.envs[v]
            env.recompute_level()
            if env.level < thr - 1e-12:
                if not env.notifying and v not in self.network.down:
                    env.notifying = True
                    self.emit("notify", node=v, level=round(env.level, 9))
                    self.comm.send(f"env{v}", v, Scope.AREA, MessageClass.DANGER_SIGNAL,
                                   {"underprotected": v, "level": round(env.level, 6)}, self.now)
            elif env.notifying:
                env.notifying = False
                self.emit("notify_clear", node=v)

    def _maybe_clone(self, cell: ArtificialCell, det) -> None:
        o = self.organ_params
        if o.clone_budget <= 0 or not o.enabled:
            return
        if self.clone_ready.get(cell.id, -1) > self.now:
            return
        self.clone_ready[cell.id] = self.now + o.clone_cooldown
        nbrs = [w for w in self.topo.adj[cell.location] if w not in self.network.down]
        rng = self.rng.get("clonal")
        clones = C.clonal_expand(cell, det, 1.0 / o.clone_budget, o.clone_budget, o.clone_rate, rng,
                                 nbrs, self.new_cell_id, self.cred_for,
                                 rng.randint(o.ttl_min, o.ttl_max), self.now, self.selfset)
        for c in clones:
            self._place_cell(c, cell.location, "clone")

    def _record_live_curves(self) -> None:
        P = self.params.patrol_interval
        lc = self.live_curves
        lc["cells_alive"].append(self.live["alive"])
        lc["infected"].append(len(self.infected_nodes))
        covered = sum(1 for e in self.envs.values() if self.now - e.last_checked <= P)
        lc["coverage"].append(covered / self.topo.n)

    # ------------------------------------------------------------------
    # outputs

    def node_rows(self) -> list[NodeStatus]:
        P = self.params.patrol_interval
        suspected = self.pheromone.classify() | set(self.qbook.records)
        rows = []
        for v in self.topo.nodes:
            env = self.envs[v]
            rows.append(NodeStatus(
                v, self.topo.area_of[v], env.level, env.last_checked,
                sum(1 for c in env.cells.values() if c.mobile),
                sum(1 for r in env.log if r.severity is Severity.ALERT),
                v in suspected, env.quarantined, self.now - env.last_checked <= P))
        return rows

    def snapshot(self, granularity: str = "summary") -> dict:
        return snapshot(self.node_rows(), self.now, granularity, self.lymph)

    def events_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n" for e in self.events)

    def digest(self) -> str:
        return hashlib.sha256(self.events_jsonl().encode()).hexdigest()


def insider_flag(failures, window: int, need: int, need_nodes: int) -> bool:
    """True if some ``window``-tick span holds >= need failures on >= need_nodes nodes."""
    times = sorted(failures, key=lambda x: x[1])
    lo = 0
    for hi in range(len(times)):
        while times[hi][1] - times[lo][1] > window:
            lo += 1
        span = times[lo:hi + 1]
        if len(span) >= need and len({n for n, _ in span}) >= need_nodes:
            return True
    return False
