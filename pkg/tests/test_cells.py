import random
import statistics

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sanasim.cells import (ANOMALY, HEX, SIGMA, ArtificialCell, CellKind, Channel, Detector,
                           KIND_CAPABILITIES, Rule, clonal_expand, clone_count, disperse,
                           encode_header, encode_pattern, export_detectors, hypermutate,
                           hypermutate_traced, import_detectors, inspect_node, inspect_packet,
                           inspect_updates, match, negative_selection, parse_header,
                           payload_patterns, positive_selection, random_detectors, similarity,
                           tick_cell)
from sanasim.netsim import Packet, Protocol
from sanasim.secenv import (Authority, Capability, LegacyComponent, ComponentKind, LogKind,
                            SecurityEnvironment, Severity)

import oracles

AUTH = Authority.from_seed(3)
pattern24 = st.text(alphabet=SIGMA, min_size=24, max_size=24)


def make_cell(kind=CellKind.PACKET_CHECKER, detectors=(), cid="c1", ttl=100, caps=None):
    caps = KIND_CAPABILITIES[kind] if caps is None else caps
    return ArtificialCell(cid, kind, list(detectors), ttl, 0, 0.25, AUTH.issue(cid, caps))


def pkt(payload=b"", encrypted=False):
    return Packet(0, 1, 4242, 2, 80, Protocol.TCP, payload, encrypted=encrypted)


# -- encoding ---------------------------------------------------------------

def test_header_encoding_fields_and_width():
    h = encode_header(pkt())
    assert h == "00001|1092|00002|0050|06"
    assert len(h) == 24 and set(h) <= set(SIGMA)
    assert parse_header(h) == {"src": 1, "sport": 4242, "dst": 2, "dport": 80, "protocol": 6}
    assert encode_header(pkt()) == h


def test_encrypted_packet_has_no_payload_patterns():
    enc = encode_pattern(pkt(b"secret" * 10, encrypted=True))
    assert enc.payload == () and enc.header


def test_payload_windows_stride_and_padding():
    pats = payload_patterns(bytes(range(20)), stride=4)
    assert [p[:2] for p in pats] == ["00", "04", "08"]
    assert all(len(p) == 24 for p in pats)
    assert payload_patterns(b"\x01") == ["01" + "0" * 22]


# -- matching and selection -------------------------------------------------

def test_match_examples():
    assert match(Detector("ABCDE", Rule.RCONTIGUOUS, 3), "XBCDY")
    assert not match(Detector("ABCDE", Rule.RCONTIGUOUS, 5), "XBCDY")
    assert match(Detector("ABCDE", Rule.EXACT, 1), "ABCDE")
    with pytest.raises(ValueError):
        match(Detector("ABCDE", Rule.EXACT, 1), "ABCD")


def test_negative_selection_examples():
    d_self, d_other = Detector("A" * 24, r=8), Detector("B" * 24, r=8)
    assert negative_selection([d_self, d_other], ["A" * 24]) == [d_other]
    assert negative_selection([d_self, d_other], []) == [d_self, d_other]


def test_negative_selection_matches_exhaustive_filter():
    rng = random.Random(11)
    cands = random_detectors(rng, 100, r=4, alphabet=HEX)
    selfset = ["".join(rng.choice(HEX) for _ in range(24)) for _ in range(50)]
    got = [d.pattern for d in negative_selection(cands, selfset)]
    assert got == oracles.survivors([d.pattern for d in cands], selfset, 4)
    assert 0 < len(got) < 100  # the filter is exercised both ways


def test_positive_selection_examples_and_oracle():
    worm = "0123456789ABCDEF01234567"
    d1, d2 = Detector(worm, Rule.EXACT, 1), Detector("F" * 24, Rule.EXACT, 1)
    kept = positive_selection([d1, d2], [("W", worm)])
    assert [(d.pattern, d.label) for d in kept] == [(worm, "W")]
    assert positive_selection([d1, d2], []) == []
    rng = random.Random(5)
    rep = random_detectors(rng, 40, r=3, alphabet=HEX)
    known = [(f"L{i}", "".join(rng.choice(HEX) for _ in range(24))) for i in range(5)]
    want = []
    for d in rep:
        for label, p in known:
            if oracles.match(d.pattern, p, 3):
                want.append((d.pattern, label))
                break
    assert [(d.pattern, d.label) for d in positive_selection(rep, known)] == want


# -- hypermutation and cloning --------------------------------------------------

def test_hypermutate_rate_zero_and_one():
    d = Detector("0123456789ABCDEF01234567", Rule.RCONTIGUOUS, 6, "worm")
    assert hypermutate(d, 0.0, random.Random(1)) == d
    m, hit = hypermutate_traced(d, 1.0, random.Random(1))
    assert hit == list(range(24))
    assert m == hypermutate(d, 1.0, random.Random(1))
    assert (m.rule, m.r, m.label) == (d.rule, d.r, d.label)
    with pytest.raises(ValueError):
        hypermutate(d, 1.5, random.Random(1))


def test_hypermutation_mean_resamples():
    rng = random.Random(2024)
    d = Detector("A" * 24)
    counts = [len(hypermutate_traced(d, 0.1, rng)[1]) for _ in range(10_000)]
    assert abs(statistics.fmean(counts) - oracles.binomial_mean(24, 0.1)) <= 0.15


def test_clone_count_formula():
    assert clone_count(1.0, 4) == 4
    assert clone_count(0.25, 4) == 1
    with pytest.raises(ValueError):
        clone_count(0.0, 4)


def test_disperse_uses_distinct_neighbors_first():
    assert disperse(3, [9, 2, 5]) == [2, 5, 9]
    assert disperse(4, [9, 2]) == [2, 9, 2, 9]
    assert disperse(2, []) == []


def _ids():
    n = iter(range(1000))
    return lambda: f"k{next(n)}"


def test_clone_mutants_equal_direct_hypermutate_stream():
    trigger = Detector("0123456789ABCDEF01234567", label="worm")
    parent = make_cell(detectors=[trigger])
    clones = clonal_expand(parent, trigger, 1.0, 4, 0.1, random.Random(9), [3, 1, 7], _ids(),
                           lambda cid, kind: AUTH.issue(cid, KIND_CAPABILITIES[kind]), 250, 0)
    oracle_rng = random.Random(9)
    expect = [hypermutate(trigger, 0.1, oracle_rng) for _ in range(4)]
    for clone, m in zip(clones, expect):
        assert clone.detectors[0] == trigger
        assert clone.detectors[-1] == m
        assert clone.kind is parent.kind and clone.ttl == 250
    assert [c.target for c in clones] == [1, 3, 7, 1]


def test_clone_mutants_respect_selfset():
    trigger = Detector("0123456789ABCDEF01234567", r=4, label="worm")
    selfset = ["".join(random.Random(i).choice(HEX) for _ in range(24)) for i in range(200)]
    parent = make_cell(detectors=[trigger])
    clones = clonal_expand(parent, trigger, 1.0, 8, 0.5, random.Random(0), [1], _ids(),
                           lambda cid, kind: AUTH.issue(cid, KIND_CAPABILITIES[kind]), 250, 0,
                           selfset=selfset)
    for c in clones:
        for d in c.detectors[1:]:
            assert not any(oracles.match(d.pattern, s, d.r) for s in selfset)


# -- similarity ------------------------------------------------------------------

def test_similarity_examples():
    a = "0123456789ABCDEF01234567"
    assert similarity(a, a) == 1.0
    assert similarity("A" * 24, "B" * 24) == 0.0
    assert similarity(a, "FFFFFF" + a[6:]) == 0.75


@settings(max_examples=200, deadline=None)
@given(pattern24, pattern24, pattern24)
def test_similarity_metric_properties(a, b, c):
    assert similarity(a, b) == similarity(b, a) == pytest.approx(oracles.hamming_similarity(a, b))
    assert (similarity(a, b) == 1.0) == (a == b)
    dist = lambda x, y: 1 - similarity(x, y)
    assert dist(a, c) <= dist(a, b) + dist(b, c) + 1e-12


# -- lifecycle -----------------------------------------------------------------

def test_tick_cell():
    c = make_cell(ttl=1)
    assert tick_cell(c) is False
    with pytest.raises(ValueError):
        tick_cell(c)
    c = make_cell(ttl=100)
    assert tick_cell(c) is True and c.ttl == 99


# -- inspection ------------------------------------------------------------------

WORM = bytes.fromhex("DEADBEEF00112233445566778899AABB")


def test_packet_checker_signature_hit_is_alert():
    sig = WORM[:12].hex().upper()
    c = make_cell(detectors=[Detector(sig, Rule.EXACT, 1, "worm")])
    f = inspect_packet(c, encode_pattern(pkt(WORM)))
    assert f.severity is Severity.ALERT and f.detector.label == "worm"
    assert inspect_packet(c, encode_pattern(pkt(WORM, encrypted=True))) is None


def test_anomaly_hit_is_warning():
    c = make_cell(detectors=[Detector("?" * 24, Rule.EXACT, 1, ANOMALY)])
    assert inspect_packet(c, encode_pattern(pkt(b"x"))).severity is Severity.WARNING


def test_header_detector_sees_encrypted_packets():
    h = encode_header(pkt())
    c = make_cell(detectors=[Detector(h, Rule.EXACT, 1, "c2", Channel.HEADER)])
    assert inspect_packet(c, encode_pattern(pkt(b"zz", encrypted=True))).detector.label == "c2"


def test_variant_with_two_mutations_flagged_under_similarity():
    sig = WORM[:12].hex().upper()
    variant = "00" + sig[2:]  # 2 of 24 symbols changed
    assert similarity(sig, variant) == pytest.approx(22 / 24)
    c = make_cell(detectors=[Detector(sig, Rule.EXACT, 1, "worm")])
    c.signatures = {"worm": [sig]}
    enc = encode_pattern(pkt(bytes.fromhex(variant)))
    assert inspect_packet(c, enc, similarity_on=False) is None
    f = inspect_packet(c, enc, 0.85, similarity_on=True)
    assert f.variant and f.severity is Severity.WARNING and f.score > 0.85


def test_node_checker_reports_backdoor_once():
    env = SecurityEnvironment(0, AUTH)
    c = make_cell(CellKind.NODE_CHECKER)
    reported = set()
    found = inspect_node(c, env, [("backdoor:4444", "backdoor")], 5, reported)
    assert [(f.label, f.severity) for f in found] == [("backdoor", Severity.ALERT)]
    assert env.log[-1].kind is LogKind.DETECTION
    assert inspect_node(c, env, [("backdoor:4444", "backdoor")], 6, reported) == []


def test_capability_deny_yields_no_finding():
    env = SecurityEnvironment(0, AUTH)
    c = make_cell(CellKind.NODE_CHECKER, caps={Capability.INSPECT_PACKETS})
    assert inspect_node(c, env, [("m", "worm")], 0, set()) is None
    assert env.log[-1].kind is LogKind.ACCESS_DENIED


def test_update_cell_reports_outdated_component():
    env = SecurityEnvironment(0, AUTH)
    env.components["av"] = LegacyComponent("av", ComponentKind.ANTIVIRUS, rule_version=3)
    out = inspect_updates(make_cell(CellKind.UPDATE_CELL), env, 10, 5)
    assert out == [("av", 3)]
    warn = [r for r in env.log if r.severity is Severity.WARNING]
    assert warn[0].kind is LogKind.UPDATE_REPORT and warn[0].detail["status"] == "outdated"
    assert env.components["av"].rule_version == 5


def test_detector_json_round_trip():
    ds = [Detector("A" * 24), Detector("B" * 24, Rule.EXACT, 1, "worm", Channel.HEADER)]
    assert import_detectors(export_detectors(ds)) == ds
    assert set(ds[0].to_dict()) == {"pattern", "rule", "r", "label"}
