"""Attack scenarios on the reference grid, checked against event-log recounts."""

import pytest

from sanasim.cells import payload_patterns, similarity
from sanasim.config import ConfigError, from_dict
from sanasim.scenarios import PACKET_KEYS, collect_metrics, embed, live_metrics, mutate_hex, reconcile
from sanasim.simulation import Simulation

import oracles
from conftest import load_config, run_cached


def alerts(events, **detail):
    return [e for e in events if e["ev"] == "log" and e["severity"] == "Alert"
            and all(e["detail"].get(k) == v for k, v in detail.items())]


# -- worm family ----------------------------------------------------------------

@pytest.mark.parametrize("seed", [1, 2, 3])
def test_unknown_worm_raises_no_alert_before_rule_update(seed):
    sim, report = run_cached("worm_unknown", seed)
    update = next(e["t"] for e in sim.events if e["ev"] == "rules")
    assert update == 600
    assert not [e for e in alerts(sim.events) if e["t"] < update and e["detail"].get("label") == "worm"]
    assert report.peak_infected > 1
    assert alerts(sim.events, label="worm")
    assert report.infected_curve[-1] == 0 and report.time_to_clean is not None


def test_unknown_worm_leaves_anomaly_warnings_before_update():
    total = 0
    for seed in (1, 2, 3):
        sim, _ = run_cached("worm_unknown", seed)
        total += sum(1 for e in sim.events if e["ev"] == "log" and e["t"] < 600
                     and e["severity"] == "Warning" and e["detail"].get("label") == "Anomaly")
    assert total > 0


def test_variant_worm_flagged_by_similarity():
    flagged = 0
    for seed in (1, 2, 3, 4):
        sim = Simulation(load_config("worm_variant", seed))
        payloads = {}
        inject = sim.inject

        def recording(*args, **kw):
            pkt = inject(*args, **kw)
            payloads[pkt.pid] = pkt.payload
            return pkt

        sim.inject = recording
        sim.run()
        sig = sim.signatures["worm"][0]
        for e in sim.events:
            if e["ev"] == "log" and e["detail"].get("variant"):
                flagged += 1
                windows = payload_patterns(payloads[e["detail"]["pid"]])
                best = max(similarity(sig, w) for w in windows)
                assert best == pytest.approx(e["detail"]["score"], abs=1e-6)
                assert best >= sim.params.similarity_cutoff and e["severity"] == "Warning"
    assert flagged > 0


def test_mutate_hex_changes_symbols_at_rate():
    import random
    rng = random.Random(0)
    sig = "0123456789ABCDEF01234567"
    assert mutate_hex(sig, 0.0, rng) == sig
    assert all(a != b for a, b in zip(sig, mutate_hex(sig, 1.0, rng)))


def test_embed_places_core_on_window_boundary():
    import random
    sim = Simulation(from_dict({"seed": 1, "duration": 1}))
    core = bytes(range(12))
    for i in range(20):
        pay = embed(sim, core, random.Random(i))
        assert len(pay) == sim.traffic.payload_bytes
        assert core.hex().upper() in payload_patterns(pay, stride=sim.traffic.window_stride)


def test_execution_trigger_goes_dormant_first():
    doc = {"seed": 2, "duration": 400,
           "scenario": {"kind": "Worm", "seed_nodes": [0], "start": 10, "propagation_rate": 0.3,
                        "signature_known": False, "parameters": {"trigger": "execution",
                                                                 "execution_rate": 0.1}}}
    sim = Simulation(from_dict(doc))
    sim.run()
    dormant = {e["node"]: e["t"] for e in sim.events if e["ev"] == "dormant"}
    executed = [e for e in sim.events if e["ev"] == "execute"]
    assert dormant and executed
    for e in executed:
        assert dormant[e["node"]] < e["t"]


# -- encrypted backdoor -------------------------------------------------------

def test_closed_port_warnings_after_backdoor_removal():
    sim, _ = run_cached("encrypted_backdoor", 1)
    removed = next(e["t"] for e in sim.events if e["ev"] == "marker" and e["op"] == "remove"
                   and e["marker"] == "backdoor")
    warns = [e for e in sim.events if e["ev"] == "log" and e["detail"].get("label") == "closed-port"]
    assert warns and min(e["t"] for e in warns) > removed
    assert all(e["detail"]["port"] == 4444 and e["severity"] == "Warning" for e in warns)


# -- hacker -----------------------------------------------------------------------

@pytest.mark.parametrize("seed", [1, 2, 3])
def test_hacker_software_reaches_admin_within_2p(seed):
    sim, _ = run_cached("hacker", seed)
    step = next(e["t"] for e in sim.events if e["ev"] == "action" and e.get("name") == "hacker-software")
    found = alerts(sim.events, label="hacker-software")
    assert found
    sends = {e["msg_id"]: e for e in sim.events if e["ev"] == "admin"}
    arrived = min(e["received"] for e in sends.values() if e["received"] >= found[0]["t"])
    assert arrived - step <= 2 * sim.params.patrol_interval


# -- insider ----------------------------------------------------------------------

@pytest.mark.parametrize("seed", [1, 2, 3])
def test_insider_flagged_and_matches_central_recount(seed):
    sim, _ = run_cached("insider", seed)
    failures = [(e["node"], e["t"]) for e in sim.events if e["ev"] == "log"
                and e["kind"] in ("LoginError", "AccessDenied") and e["detail"].get("user") == "mallory"]
    assert oracles.insider_flagged(failures, 100, 5, 2)
    assert "mallory" in sim.flagged_identities
    assert alerts(sim.events, label="insider:mallory")


def test_legitimate_user_with_four_failures_not_flagged():
    doc = {"seed": 1, "duration": 400,
           "scenario": {"kind": "Insider", "seed_nodes": [3], "start": 100,
                        "parameters": {"attempts": 4, "user": "alice"}}}
    sim = Simulation(from_dict(doc))
    sim.run()
    assert sim.flagged_identities == set()
    assert not alerts(sim.events, subject="identity")


# -- physical ---------------------------------------------------------------------

def _physical(tamper, seed=1):
    doc = {"seed": seed, "duration": 400,
           "scenario": {"kind": "Physical", "seed_nodes": [22], "start": 150,
                        "parameters": {"tamper": tamper}}}
    sim = Simulation(from_dict(doc))
    sim.run()
    return sim


def test_untampered_reboot_isolated_for_one_tick_only():
    sim = _physical("none")
    ups = [(e["ev"], e["t"]) for e in sim.events if e["ev"] in ("down", "up") and e["node"] == 22]
    assert ups == [("down", 150), ("up", 151)]
    assert not [e for e in sim.events if e["ev"] == "isolated"]


def test_environment_image_tamper_also_fails_integrity():
    sim = _physical("env")
    assert [e["node"] for e in sim.events if e["ev"] == "isolated"] == [22]
    assert [e for e in sim.events if e["ev"] == "log" and e["kind"] == "IntegrityFail"]


def test_unknown_tamper_mode_rejected():
    doc = {"seed": 1, "scenario": {"kind": "Physical", "seed_nodes": [1], "parameters": {"tamper": "x"}}}
    with pytest.raises(ConfigError):
        Simulation(from_dict(doc))


# -- composition and config errors ---------------------------------------------------

def test_mixed_scenario_runs_every_part():
    sim, report = run_cached("mixed", 1)
    names = {e.get("name") for e in sim.events if e["ev"] == "action"}
    assert {"worm-start", "insider-attempt", "physical-reboot"} <= names
    assert report.true_infections >= 1 and "mallory" in sim.flagged_identities


@pytest.mark.parametrize("scenario", [
    {"kind": "Worm", "seed_nodes": [99]},
    {"kind": "Mixed"},
    {"kind": "Mixed", "parameters": {"scenarios": [{"kind": "Mixed"}]}},
    {"kind": "EncryptedBackdoor", "seed_nodes": [3, 3]},
])
def test_bad_scenarios_rejected(scenario):
    with pytest.raises(ConfigError):
        Simulation(from_dict({"seed": 1, "scenario": scenario}))


# -- metrics ----------------------------------------------------------------------

@pytest.mark.parametrize("name", ["worm", "encrypted_backdoor", "insider", "physical"])
def test_report_matches_independent_recount(name):
    sim, report = run_cached(name, 1)
    cfg = sim.cfg
    start = cfg.scenario.start if cfg.scenario.kind != "None" else 0
    want = oracles.recount_report(sim.events, cfg.duration, sim.topo.n, sim.params.patrol_interval, start)
    got = report.to_dict()
    packets = want.pop("packets")
    assert got["packets"] == {k: packets.get(k, 0) for k in PACKET_KEYS}
    for key, value in want.items():
        assert got[key] == value, key


def test_reconcile_reports_a_tampered_field():
    sim, report = run_cached("worm", 1)
    live = live_metrics(sim)
    assert reconcile(report, live) == []
    live["detections"] += 1
    live["infected_curve"] = live["infected_curve"][:-1] + [99]
    diffs = reconcile(report, live)
    assert len(diffs) == 2 and any("tick" in d for d in diffs)


def test_known_worm_drops_equal_packet_alerts():
    sim, report = run_cached("worm", 1)
    packet_alerts = alerts(sim.events, subject="packet")
    assert report.packets["Dropped(Detected)"] == len(packet_alerts)


def test_attack_free_report_is_quiet():
    _, report = run_cached("attack_free", 1)
    assert report.detections == 0 and report.false_positives == 0
    assert report.detection_rate is None and report.time_to_first_detect is None
