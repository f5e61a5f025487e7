"""Command-line runner: ``sanasim run|validate|snapshot|report``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional

from . import config as config_mod
from .config import ConfigError, RunConfig
from .organs import GRANULARITIES, rows_from_document, snapshot
from .scenarios import MetricsReport, collect_metrics, live_metrics, reconcile
from .secenv import export_log_jsonl
from .simulation import Simulation

logger = logging.getLogger("sanasim")

EXIT_OK, EXIT_CONFIG, EXIT_RECONCILE, EXIT_IO = 0, 1, 2, 3


class ReconcileFailure(RuntimeError):
    def __init__(self, diffs):
        super().__init__("; ".join(diffs))
        self.diffs = diffs


def execute(cfg: RunConfig) -> tuple[Simulation, MetricsReport]:
    """Run one configuration and return the simulation with its reconciled metrics."""
    sim = Simulation(cfg)
    sim.run()
    report = collect_metrics(sim.events, cfg.duration, sim.topo.n, cfg.selfmgmt.patrol_interval,
                             cfg.scenario.start if cfg.scenario.kind != "None" else 0)
    diffs = reconcile(report, live_metrics(sim))
    if diffs:
        raise ReconcileFailure(diffs)
    return sim, report


def write_outputs(sim: Simulation, report: MetricsReport, out: Path, wall: float) -> str:
    out.mkdir(parents=True, exist_ok=True)
    text = sim.events_jsonl()
    (out / "events.jsonl").write_text(text)
    digest = sim.digest()
    (out / "digest.txt").write_text(digest + "\n")
    doc = report.to_dict()
    doc["detection_rate"] = report.detection_rate
    doc["config"] = sim.cfg.to_dict()
    doc["meta"] = {"wall_clock_s": round(wall, 3)}  # the only non-deterministic field
    (out / "metrics.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tick", "infected", "cells_alive", "alerts", "packets_dropped", "coverage"])
        for t in range(len(report.infected_curve)):
            w.writerow([t, report.infected_curve[t], report.cells_alive_curve[t], report.alerts_curve[t],
                        report.dropped_curve[t], f"{report.coverage_curve[t]:.6f}"])
    (out / "state.json").write_text(json.dumps(sim.snapshot("node"), sort_keys=True, indent=1) + "\n")
    export_log_jsonl(sim.envs.values(), out / "logs.jsonl")
    sim.comm.export_jsonl(out / "messages.jsonl")
    with open(out / "admin.jsonl", "w") as fh:
        for entry in sim.admin_inbox:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return digest


def _load(args) -> RunConfig:
    cfg = config_mod.load(args.config, args.seed)
    if getattr(args, "rules", None):
        cfg.organs.rule_file = args.rules
    return cfg


def cmd_validate(args) -> int:
    cfg = _load(args)
    Simulation(cfg)  # topology and scenario references are checked on construction
    print(f"ok: seed {cfg.seed}, {cfg.duration} ticks, scenario {cfg.scenario.kind}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out or cfg.output or "out")
    t0 = time.perf_counter()
    try:
        sim, report = execute(cfg)
    except ReconcileFailure as exc:
        for d in exc.diffs:
            print(f"reconciliation: {d}", file=sys.stderr)
        return EXIT_RECONCILE
    digest = write_outputs(sim, report, out, time.perf_counter() - t0)
    print(f"{digest}  {out / 'events.jsonl'}")
    return EXIT_OK


def cmd_snapshot(args) -> int:
    if args.granularity not in GRANULARITIES:
        print(f"usage error: granularity must be one of {', '.join(GRANULARITIES)}", file=sys.stderr)
        return EXIT_CONFIG
    if args.state:
        doc = json.loads(Path(args.state).read_text())
        rows = rows_from_document(doc)
        result = snapshot(rows, doc["tick"], args.granularity)
    elif args.config:
        cfg = _load(args)
        sim = Simulation(cfg)
        sim.run()
        result = sim.snapshot(args.granularity)
    else:
        print("usage error: snapshot needs --state or --config", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(result, sort_keys=True, indent=1))
    return EXIT_OK


def format_report(doc: dict) -> str:
    rate = doc.get("detection_rate")
    rows = [
        ("time_to_first_detect", doc.get("time_to_first_detect")),
        ("time_to_clean", doc.get("time_to_clean")),
        ("peak_infected", doc.get("peak_infected")),
        ("detection_rate", "n/a" if rate is None else f"{100 * rate:.1f}%"),
        ("messages_sent", doc.get("messages_sent")),
        ("detections", doc.get("detections")),
        ("false_positives", doc.get("false_positives")),
        ("anomaly_warnings", doc.get("anomaly_warnings")),
    ]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {'-' if v is None else v}" for k, v in rows)


def cmd_report(args) -> int:
    path = Path(args.dir) / "metrics.json"
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        print(f"{path}: parse error at byte offset {exc.pos}: {exc.msg}", file=sys.stderr)
        return EXIT_CONFIG
    print(format_report(doc))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sanasim", description="Artificial immune system network simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, need_config=True):
        sp.add_argument("--config", required=need_config, help="run configuration JSON")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--rules", help="JSON list of {label, pattern} known intrusions")

    sp = sub.add_parser("run", help="execute a configuration and write outputs")
    common(sp)
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("validate", help="check a configuration without running it")
    common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("snapshot", help="print a status snapshot")
    common(sp, need_config=False)
    sp.add_argument("--state", help="state.json written by a previous run")
    sp.add_argument("--granularity", default="summary")
    sp.set_defaults(func=cmd_snapshot)

    sp = sub.add_parser("report", help="summarise a finished run")
    sp.add_argument("dir", help="run output directory")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
