"""Self-management: security levels and cell attraction, patrol choice,
danger adaptation, pheromone-based infected-node identification and the
quarantine / disinfection state machine."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence


@dataclass
class SelfMgmtParams:
    threshold: float = 1.0
    decay: float = 0.5
    danger_low: float = 0.5
    danger_high: float = 2.0
    evaporation: float = 0.9
    infected_threshold: float = 3.0
    deposit: float = 1.0
    patrol_interval: int = 50
    clean_checks: int = 3
    similarity_cutoff: float = 0.85

    def __post_init__(self) -> None:
        if not 0 < self.decay < 1:
            raise ValueError("decay must lie in (0, 1)")
        if not 0 < self.evaporation < 1:
            raise ValueError("evaporation must lie in (0, 1)")
        if self.danger_low > self.danger_high:
            raise ValueError("danger_low must not exceed danger_high")
        if self.patrol_interval < 2 or self.clean_checks < 1:
            raise ValueError("patrol_interval >= 2 and clean_checks >= 1 required")


def compute_security_level(env) -> float:
    """Sum of registered component values and resident cell values."""
    return (sum(v for _, v in env.registry.values())
            + sum(c.security_value for c in env.cells.values()))


def can_leave(level: float, value: float, threshold: float) -> bool:
    """A cell may depart only if its node stays at or above threshold."""
    return level - value >= threshold - 1e-12


def attraction_target(cell_value: float, here_level: float, threshold: float,
                      neighbor_levels: Mapping[int, float],
                      notifying: Iterable[int]) -> Optional[int]:
    """Neediest notifying neighbor this cell can move to without creating a deficit here.

    Ties by the lower level, then the smaller NodeId.
    """
    if not can_leave(here_level, cell_value, threshold):
        return None
    needy = [v for v in notifying if v in neighbor_levels]
    if not needy:
        return None
    return min(needy, key=lambda v: (neighbor_levels[v], v))


def patrol_next(neighbors: Sequence[int], last_visit: Mapping[int, int], now: int,
                interval: int, danger: Optional[Mapping[int, float]] = None,
                biased: bool = False) -> Optional[int]:
    """Neighbor with the oldest visit (ties: smallest id), or None to rest.

    Rests when every neighbor was visited within ``interval / 2`` ticks.
    With ``biased`` set, the most dangerous neighbor wins instead, falling
    back to the oldest-visit rule on ties.
    """
    if not neighbors:
        return None
    stale = [v for v in neighbors if now - last_visit.get(v, -10**9) > interval / 2]
    if not stale:
        return None
    if biased and danger:
        return min(stale, key=lambda v: (-danger.get(v, 0.0), last_visit.get(v, -10**9), v))
    return min(stale, key=lambda v: (last_visit.get(v, -10**9), v))


@dataclass
class DangerState:
    danger: float = 0.0
    decay: float = 0.5
    low: float = 0.5
    high: float = 2.0
    similarity_on: bool = False

    def update(self, alerts: float) -> float:
        self.danger = self.decay * self.danger + alerts
        if self.danger > self.high:
            self.similarity_on = True
        elif self.danger < self.low:
            self.similarity_on = False
        return self.danger

    @property
    def biased(self) -> bool:
        return self.danger > self.high


class PheromoneMap:
    """Suspicion per source node: deposits on detections, evaporation per tick."""

    def __init__(self, evaporation: float = 0.9, threshold: float = 3.0) -> None:
        self.evaporation = evaporation
        self.threshold = threshold
        self.suspicion: dict[int, float] = {}

    def deposit(self, source: int, amount: float = 1.0) -> None:
        self.suspicion[source] = self.suspicion.get(source, 0.0) + amount

    def evaporate(self) -> None:
        dead = []
        for v, s in self.suspicion.items():
            s *= self.evaporation
            if s < 1e-9:
                dead.append(v)
            self.suspicion[v] = s
        for v in dead:
            del self.suspicion[v]

    def classify(self) -> set[int]:
        return {v for v, s in self.suspicion.items() if s >= self.threshold - 1e-12}

    def clear(self, node: int) -> None:
        self.suspicion.pop(node, None)


def ticks_to_classify(threshold: float, evaporation: float, deposit: float = 1.0) -> int:
    """Ticks after the first deposit until one-per-tick deposits cross threshold."""
    s, k = deposit, 0
    while s < threshold - 1e-12:
        s = s * evaporation + deposit
        k += 1
        if k > 10**6:
            return -1
    return k


@dataclass
class QuarantineRecord:
    since: int
    labels: set = field(default_factory=set)
    disinfected: bool = False
    clean_streak: int = 0


class QuarantineBook:
    """Quarantine / disinfection state per node.

    A node leaves quarantine once a matching DisinfectionCell has cleared it
    and ``clean_checks`` consecutive clean NodeChecker inspections follow.
    A node quarantined without any infection label is vacuously disinfected.
    """

    def __init__(self, clean_checks: int = 3) -> None:
        self.clean_checks = clean_checks
        self.records: dict[int, QuarantineRecord] = {}

    def __contains__(self, node: int) -> bool:
        return node in self.records

    def quarantine(self, node: int, now: int, labels: Iterable[str] = ()) -> bool:
        if node in self.records:
            self.records[node].labels.update(labels)
            return False
        rec = QuarantineRecord(now, set(labels))
        rec.disinfected = not rec.labels
        self.records[node] = rec
        return True

    def disinfect(self, node: int, label: str) -> bool:
        rec = self.records.get(node)
        if rec is None or label not in rec.labels:
            return False
        rec.labels.discard(label)
        if not rec.labels:
            rec.disinfected = True
            rec.clean_streak = 0
        return True

    def record_check(self, node: int, clean: bool) -> bool:
        """Register a NodeChecker inspection; True when quarantine may lift."""
        rec = self.records.get(node)
        if rec is None or not rec.disinfected:
            return False
        rec.clean_streak = rec.clean_streak + 1 if clean else 0
        return rec.clean_streak >= self.clean_checks

    def lift(self, node: int) -> None:
        self.records.pop(node, None)


def clone_stimulus(hits: int, window: int) -> float:
    return min(1.0, hits / max(1, window))


def decayed(prior: float, decay: float, k: int) -> float:
    return prior * math.pow(decay, k)
