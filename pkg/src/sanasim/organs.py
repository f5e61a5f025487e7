"""Artificial lymph nodes and the central nativity and training station
(CNTS): breeding, release, rule updates, status snapshots, on-demand
response dispatch."""

from __future__ import annotations

import logging
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from . import kernels
from .cells import (
    ANOMALY, HEX, PATTERN_WIDTH, ArtificialCell, CellKind, Channel, Detector, Rule,
    random_patterns,
)
from .comm import EscalationTable

logger = logging.getLogger(__name__)

DEFAULT_KIND_MIX = {
    CellKind.PACKET_CHECKER: 0.5,
    CellKind.NODE_CHECKER: 0.2,
    CellKind.LOG_ANALYZER: 0.1,
    CellKind.UPDATE_CELL: 0.1,
    CellKind.STATUS_COLLECTOR: 0.1,
}


@dataclass
class LymphNode:
    area: int
    host: int
    table: EscalationTable

    @classmethod
    def create(cls, area: int, host: int, window: int = 50) -> "LymphNode":
        return cls(area, host, EscalationTable(window))


@dataclass
class BreedParams:
    candidate_batch: int = 1000
    max_rounds: int = 100
    detectors_per_label: int = 2
    anomaly_detectors: int = 2
    stock_per_label: int = 4
    wildcard_p: float = 0.25
    r: int = 8
    width: int = PATTERN_WIDTH
    ttl_min: int = 200
    ttl_max: int = 400
    security_value: float = 0.25


@dataclass
class BreedResult:
    cells: list
    warnings: list = field(default_factory=list)  # (cell id, reason)


class CNTS:
    """Central nativity and training station on ``host``."""

    def __init__(self, host: int, selfset: Iterable[str] = (), known: Iterable[tuple[str, str]] = (),
                 release_rate: float = 1.0, kind_mix: Optional[dict] = None,
                 params: Optional[BreedParams] = None) -> None:
        self.host = host
        self.rule_version = 0
        self.known_intrusions: list[tuple[str, str]] = []
        self._known_set: set = set()
        for item in known:
            self._add_known(item)
        if self.known_intrusions:
            self.rule_version = 1
        self.selfset: list[str] = sorted(set(selfset))
        self.release_rate = release_rate
        self.kind_mix = {CellKind(k): float(v) for k, v in (kind_mix or DEFAULT_KIND_MIX).items()}
        if abs(sum(self.kind_mix.values()) - 1.0) > 1e-9:
            raise ValueError("kind mix must sum to 1")
        self.params = params or BreedParams()
        self.accumulator = 0.0
        self.archive: Counter = Counter()
        self.status_store: dict[int, dict] = {}
        self.pending_dispatch: dict[tuple[str, int], int] = {}
        self.halted = False

    def _add_known(self, item: tuple[str, str]) -> None:
        label, pattern = item
        if (label, pattern) not in self._known_set:
            self._known_set.add((label, pattern))
            self.known_intrusions.append((label, pattern))

    def signatures(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for label, pat in self.known_intrusions:
            out.setdefault(label, []).append(pat)
        return out

    # -- breeding -----------------------------------------------------------
    def draw_kind(self, rng: random.Random) -> CellKind:
        x = rng.random()
        acc = 0.0
        kinds = list(self.kind_mix.items())
        for kind, p in kinds:
            acc += p
            if x < acc:
                return kind
        return kinds[-1][0]

    def _refill(self, rng: random.Random) -> None:
        """Breed the detector stock for the current rule version."""
        p = self.params
        labels = sorted({l for l, _ in self.known_intrusions})
        stock: dict[str, list[Detector]] = {l: [] for l in labels}
        tolerant: list[Detector] = []
        need = max(p.stock_per_label, p.detectors_per_label)
        selfraw = [x.encode() for x in self.selfset]
        targets = [pat.encode() for _, pat in self.known_intrusions]
        kr = p.r  # r-contiguous candidates
        for _ in range(p.max_rounds):
            raws = [x.encode() for x in random_patterns(rng, p.candidate_batch, p.width, p.wildcard_p, HEX)]
            rs = [kr] * len(raws)
            keep = kernels.survivors(raws, rs, selfraw) if selfraw else list(range(len(raws)))
            survivors = [raws[i] for i in keep]
            if len(tolerant) < need:
                tolerant.extend(Detector(x.decode(), Rule.RCONTIGUOUS, kr, ANOMALY)
                                for x in survivors[: need - len(tolerant)])
            if targets:
                for x, j in zip(survivors, kernels.hits(survivors, [kr] * len(survivors), targets)):
                    label = self.known_intrusions[j][0] if j >= 0 else None
                    if label is not None and len(stock[label]) < need:
                        stock[label].append(Detector(x.decode(), Rule.RCONTIGUOUS, kr, label))
            if len(tolerant) >= need and all(len(v) >= need for v in stock.values()):
                break
        self._stock = {l: v for l, v in stock.items() if v}
        self._tolerant = tolerant
        self._stock_version = (self.rule_version, len(self.known_intrusions))
        for l in labels:
            if l not in self._stock:
                logger.warning("no tolerant detector found for %s after %d rounds", l, p.max_rounds)

    def breed_detectors(self, rng: random.Random) -> tuple[list[Detector], bool]:
        """Detectors for one cell slot; second item False if minted as Anomaly.

        Each cell draws ``detectors_per_label`` detectors per known label
        from a stock bred by negative then positive selection. The stock is
        rebuilt whenever the rule set changes.
        """
        if getattr(self, "_stock_version", None) != (self.rule_version, len(self.known_intrusions)):
            self._refill(rng)
        k = self.params.detectors_per_label
        dets = []
        for label in sorted(self._stock):
            pool = self._stock[label]
            dets.extend(rng.sample(pool, min(k, len(pool))))
        if dets:
            return dets, True
        pool = self._tolerant
        return rng.sample(pool, min(self.params.anomaly_detectors, len(pool))), False

    def breed_cells(self, count: int, rng: random.Random, now: int, new_id: Callable[[], str],
                    cred_for: Callable[[str, CellKind], object],
                    kind: Optional[CellKind] = None) -> BreedResult:
        if count <= 0:
            raise ValueError("count must be positive")
        p = self.params
        out = BreedResult([])
        sigs = self.signatures()
        for _ in range(count):
            k = kind or self.draw_kind(rng)
            dets, signature = self.breed_detectors(rng)
            cid = new_id()
            cell = ArtificialCell(
                id=cid, kind=k, detectors=dets, ttl=rng.randint(p.ttl_min, p.ttl_max),
                location=self.host, security_value=p.security_value, cred=cred_for(cid, k),
                born=now, version=self.rule_version, signatures=sigs,
            )
            if not signature and self.known_intrusions:
                out.warnings.append((cid, "no-signature-survivors"))
            out.cells.append(cell)
        return out

    def release_tick(self) -> int:
        """Number of cells due this tick."""
        if self.halted:
            return 0
        self.accumulator += self.release_rate
        n = math.floor(self.accumulator + 1e-12)
        self.accumulator -= n
        return n

    def update_rules(self, new_intrusions: Iterable[tuple[str, str]]) -> int:
        for item in new_intrusions:
            self._add_known((str(item[0]), str(item[1])))
        self.rule_version += 1
        return self.rule_version

    def archive_cell(self, cell: ArtificialCell) -> None:
        self.archive[("expired", cell.kind.value)] += 1
        for d in cell.detectors:
            self.archive[("detector", d.label)] += 1

    # -- response -----------------------------------------------------------
    def request_dispatch(self, label: str, node: int, now: int) -> bool:
        key = (label, node)
        if key in self.pending_dispatch:
            return False
        self.pending_dispatch[key] = now
        return True

    def complete_dispatch(self, label: str, node: int) -> None:
        self.pending_dispatch.pop((label, node), None)

    def disinfection_cell(self, label: str, node: int, rng: random.Random, now: int, new_id,
                          cred_for) -> ArtificialCell:
        pats = self.signatures().get(label)
        pattern = pats[0] if pats else "?" * self.params.width
        det = Detector(pattern, Rule.EXACT, 1, label)
        cid = new_id()
        cell = ArtificialCell(
            id=cid, kind=CellKind.DISINFECTION_CELL, detectors=[det],
            ttl=rng.randint(self.params.ttl_min, self.params.ttl_max), location=self.host,
            security_value=0.0, cred=cred_for(cid, CellKind.DISINFECTION_CELL), born=now,
            version=self.rule_version,
        )
        cell.target = node
        return cell


# ---------------------------------------------------------------------------
# Snapshots


@dataclass
class NodeStatus:
    node: int
    area: int
    level: float
    last_checked: int
    cells: int
    alerts: int
    suspected: bool
    quarantined: bool
    covered: bool


GRANULARITIES = ("summary", "area", "node")


def _totals(rows: Sequence[NodeStatus]) -> dict:
    covered = sum(r.covered for r in rows)
    return {
        "nodes": len(rows),
        "cells_alive": sum(r.cells for r in rows),
        "alerts": sum(r.alerts for r in rows),
        "infected_suspected": sum(r.suspected for r in rows),
        "quarantined": sum(r.quarantined for r in rows),
        "nodes_covered": covered,
        "coverage": covered / len(rows) if rows else 0.0,
    }


def snapshot(rows: Sequence[NodeStatus], now: int, granularity: str,
             lymph: Optional[dict[int, LymphNode]] = None, in_transit: int = 0) -> dict:
    if granularity not in GRANULARITIES:
        raise ValueError(f"granularity must be one of {GRANULARITIES}, got {granularity!r}")
    doc = {"tick": now, "granularity": granularity}
    if granularity == "summary":
        doc["summary"] = _totals(rows)
        doc["summary"]["cells_in_transit"] = in_transit
    elif granularity == "area":
        areas = {}
        for r in rows:
            areas.setdefault(r.area, []).append(r)
        doc["areas"] = []
        for aid in sorted(areas):
            entry = {"area": aid, **_totals(areas[aid])}
            if lymph and aid in lymph:
                ln = lymph[aid]
                entry["lymph_host"] = ln.host
                entry["cached_alert_labels"] = sorted(l for l, q in ln.table.alerts.items() if q)
                entry["cached_status"] = len(ln.table.statuses)
            doc["areas"].append(entry)
    else:
        doc["nodes"] = [
            {
                "node": r.node, "area": r.area, "level": round(r.level, 9),
                "last_checked": r.last_checked, "cells": r.cells, "alerts": r.alerts,
                "suspected": r.suspected, "quarantined": r.quarantined, "covered": r.covered,
            }
            for r in sorted(rows, key=lambda r: r.node)
        ]
    return doc


def rows_from_document(doc: dict) -> list[NodeStatus]:
    """Rebuild node rows from a node-granularity snapshot document."""
    out = []
    for e in doc["nodes"]:
        out.append(NodeStatus(e["node"], e["area"], e["level"], e["last_checked"], e["cells"],
                              e["alerts"], e["suspected"], e["quarantined"], e.get("covered", False)))
    return out
