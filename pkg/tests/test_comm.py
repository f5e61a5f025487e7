import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sanasim.comm import (ADMIN, CellMessage, Comm, Decision, EscalationTable, MessageClass, Scope,
                          Status, escalate)
from sanasim.netsim import EventQueue, Router, Topology, grid, line


def harness(topo, k=3):
    q = EventQueue()
    down = set()
    got = []
    comm = Comm(topo, q, Router(topo), k=k, alive=lambda v: v not in down,
                on_receive=lambda r, m, t: got.append((r, m.msg_id, t)))
    return q, comm, down, got


def ring(n):
    edges = {(i, (i + 1) % n) for i in range(n)}
    half = n // 2
    return Topology(n, edges, {0: list(range(half)), 1: list(range(half, n))}, {0: 0, 1: half}, 0)


def test_area_message_reaches_all_three_members():
    topo = line(3)
    q, comm, down, got = harness(topo)
    mid = comm.send("c", 0, Scope.AREA, MessageClass.WARNING, {}, 0)
    q.run_until(50)
    d = comm.log[mid]
    assert d.status is Status.COMPLETE and set(d.received) == {0, 1, 2}
    assert d.received == {0: 0, 1: 1, 2: 2}


def test_member_failing_mid_flood_is_recorded_undelivered():
    topo = ring(8)  # area 0 = {0,1,2,3}, lymph host 0
    q, comm, down, got = harness(topo)
    mid = comm.send("c", 1, Scope.AREA, MessageClass.DANGER_SIGNAL, {}, 0)
    down.add(2)  # fails after the send, before the flood reaches it
    q.run_until(100)
    d = comm.log[mid]
    assert d.status is Status.PARTIAL
    assert set(d.received) == {0, 1, 3}  # node 3 reached the long way round
    assert d.to_dict()["undelivered"] == ["2"]


def test_alert_requires_admin_scope():
    q, comm, _, _ = harness(line(3))
    with pytest.raises(ValueError):
        comm.send("c", 0, Scope.AREA, MessageClass.ALERT, {}, 0)
    comm.send("lymph", 0, Scope.NETWORK, MessageClass.ALERT, {}, 0, escalated=True)


def test_admin_alert_reaches_sink_within_diameter_plus_k():
    topo = grid(5, 10, 5)
    bound = topo.diameter() + 3
    for origin in topo.nodes:
        q, comm, _, _ = harness(topo)
        mid = comm.send("c", origin, Scope.ADMIN, MessageClass.ALERT, {"label": "x"}, 7)
        q.run_until(7 + 3 * bound)
        d = comm.log[mid]
        assert d.status is Status.COMPLETE
        assert d.received[ADMIN] - 7 <= bound


def test_admin_unicast_reroutes_around_failed_relay():
    topo = ring(6)
    topo.cnts_host = 3
    q, comm, down, _ = harness(topo, k=2)
    mid = comm.send("c", 0, Scope.ADMIN, MessageClass.ALERT, {}, 0)
    down.add(1)  # first hop on the tie-broken path 0-1-2-3
    q.run_until(100)
    d = comm.log[mid]
    assert ADMIN in d.received and d.received[ADMIN] > 3


def test_hop_ttl_expiry():
    topo = line(6)
    q, comm, _, _ = harness(topo)
    mid = comm.send("c", 0, Scope.NETWORK, MessageClass.WARNING, {}, 0, hop_ttl=2)
    q.run_until(50)
    d = comm.log[mid]
    assert set(d.received) == {0, 1, 2} and d.status is Status.PARTIAL


def test_quarantined_relay_blocks_flood_but_not_admin():
    topo = line(4)
    topo.cnts_host = 3
    q = EventQueue()
    comm = Comm(topo, q, Router(topo), relays=lambda v, m: v != 1 or m.scope is Scope.ADMIN)
    flood = comm.send("c", 0, Scope.NETWORK, MessageClass.WARNING, {}, 0)
    admin = comm.send("c", 0, Scope.ADMIN, MessageClass.ALERT, {}, 0)
    q.run_until(50)
    assert set(comm.log[flood].received) == {0, 1}
    assert ADMIN in comm.log[admin].received


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 49), st.sampled_from([Scope.AREA, Scope.NETWORK]))
def test_at_most_once_delivery(origin, scope):
    topo = grid(5, 10, 5)
    q, comm, _, got = harness(topo)
    comm.send("c", origin, scope, MessageClass.WARNING, {}, 0)
    q.run_until(200)
    receivers = [r for r, _, _ in got]
    assert len(receivers) == len(set(receivers))


def test_msg_ids_never_reused():
    q, comm, _, _ = harness(line(3))
    ids = [comm.send("c", 0, Scope.AREA, MessageClass.WARNING, {}, 0) for _ in range(5)]
    assert len(set(ids)) == 5


def test_send_hook_sees_every_message():
    q, comm, _, _ = harness(line(3))
    sent = []
    comm.on_send = sent.append
    comm.send("c", 0, Scope.AREA, MessageClass.WARNING, {}, 0)
    assert isinstance(sent[0], CellMessage)


def test_jsonl_export(tmp_path):
    import json
    q, comm, _, _ = harness(line(3))
    comm.send("c", 0, Scope.AREA, MessageClass.WARNING, {}, 0)
    q.run_until(10)
    comm.export_jsonl(tmp_path / "m.jsonl")
    row = json.loads((tmp_path / "m.jsonl").read_text())
    assert {"msg_id", "class", "scope", "origin", "receivers", "status"} <= set(row)


# -- escalation ---------------------------------------------------------------

def msg(cls, origin, label="worm"):
    return CellMessage(0, "c", origin, Scope.ADMIN, cls, {"label": label}, 10, 0)


def test_escalation_decision_table():
    t = EscalationTable(window=50)
    assert escalate(t, msg(MessageClass.ALERT, 1), 10) is Decision.TO_ADMIN
    assert escalate(t, msg(MessageClass.ALERT, 2), 20) is Decision.BROADCAST
    assert escalate(t, msg(MessageClass.SAFE_SIGNAL, 2), 20) is Decision.KEEP_LOCAL
    assert escalate(t, msg(MessageClass.WARNING, 2), 20) is Decision.KEEP_LOCAL
    assert escalate(t, msg(MessageClass.DANGER_SIGNAL, 2), 20) is Decision.KEEP_LOCAL
    assert escalate(t, msg(MessageClass.STATUS_SUMMARY, 2), 20) is Decision.ABSORB


def test_same_origin_twice_is_not_spreading():
    t = EscalationTable(window=50)
    escalate(t, msg(MessageClass.ALERT, 1), 0)
    assert escalate(t, msg(MessageClass.ALERT, 1), 5) is Decision.TO_ADMIN


def test_window_expiry_resets_origins():
    t = EscalationTable(window=50)
    escalate(t, msg(MessageClass.ALERT, 1), 0)
    assert escalate(t, msg(MessageClass.ALERT, 2), 51) is Decision.TO_ADMIN


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 4)), min_size=1, max_size=30))
def test_broadcast_never_downgraded_within_window(steps):
    t, now, since = EscalationTable(window=50), 0, None
    for gap, origin in steps:
        now += gap
        dec = escalate(t, msg(MessageClass.ALERT, origin), now)
        if since is not None and now - since <= 50:
            assert dec is Decision.BROADCAST
        if dec is Decision.BROADCAST:
            since = now
