"""Acceptance criteria 1-11, each with its tolerance and time budget.

Run ``pytest tests/test_acceptance.py -v``; the terminal summary prints one
PASS/FAIL line per criterion.
"""

import json
import random
import time
from collections import Counter
from ipaddress import IPv4Address, IPv4Network
from pathlib import Path

import pytest
from _graphs import LooplessSweep, all_labeled, brute_force_cycles
from _packets import T0, icmp_bytes, message, oc_checksum, quote
from _scenarios import loop_free_suite, loop_suite
from fixtures.make_fixtures import mask_manifest

from icmprecycle.anomaly import (
    RedirectViolation as V,
    TtlCategory,
    audit_source_quench,
    ttl_category,
    validate_redirect,
)
from icmprecycle.asmap import parse_table
from icmprecycle.churn import EpochSet, compare_epochs
from icmprecycle.cli import main
from icmprecycle.loopdet import (
    ProbeConfig,
    find_loop,
    persistence_check,
    run_traceroutes,
    schedule_seeds,
    simple_cycles_indexed,
    slash24,
    traceroute,
)
from icmprecycle.netsim import Simulator, ground_truth, load_topology
from icmprecycle.wire import Family, OuterMeta, classify, decode_quotation, parse_icmp

FIX = Path(__file__).parent / "fixtures"
GOLDEN = FIX / "golden"


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.2f} s, budget {self.seconds} s"


# 1 ------------------------------------------------------------------------------------


def random_corpus(n, seed=1):
    rng = random.Random(seed)
    types = [0, 3, 4, 5, 8, 11, 12, 13, 17, rng.randrange(256)]
    corpus = []
    for i in range(n):
        t = rng.choice(types)
        kind = i % 4
        if kind == 0:  # well-formed, correct checksum, quoted packet
            raw = icmp_bytes(t, rng.randrange(16), bytes(rng.randrange(256) for _ in range(4)),
                             quote("192.0.2.10", f"203.0.113.{rng.randrange(256)}",
                                   rng.choice([6, 17, 1]), size=rng.choice([28, 40, 48, 60])))
        elif kind == 1:  # corrupted checksum
            raw = icmp_bytes(t, rng.randrange(256), payload=bytes(rng.randrange(256)
                                                                  for _ in range(rng.randrange(60))),
                             valid=False)
        else:  # arbitrary bytes, odd and even lengths
            raw = bytes(rng.randrange(256) for _ in range(rng.randrange(8, 120)))
        corpus.append(raw)
    return corpus


@pytest.mark.criterion(1, "wire round-trip and checksum oracle, 1000 messages, < 5 s")
def test_wire_fidelity():
    corpus = random_corpus(1000)
    meta = OuterMeta(T0, IPv4Address("198.51.100.1"), IPv4Address("192.0.2.10"))
    with Budget(5):
        valid = Counter()
        for raw in corpus:
            msg = parse_icmp(raw, meta)
            assert msg.to_bytes() == raw
            assert msg.checksum_valid == (oc_checksum(raw) == 0)
            valid[msg.checksum_valid] += 1
    assert valid[True] >= 250 and valid[False] >= 250  # both branches exercised


# 2 ------------------------------------------------------------------------------------

DU, TE = Family.DestinationUnreachable, Family.TimeExceeded
# Unreachability table rows, as named in the source tables (punctuation dropped).
UNREACH_ROWS = {
    (3, 3): (DU, "Port"), (11, 0): (TE, "TTLExceeded"), (3, 1): (DU, "Host"),
    (3, 13): (DU, "CommProhibited"), (3, 10): (DU, "HostProhibited"), (3, 0): (DU, "Net"),
    (3, 2): (DU, "Protocol"), (3, 4): (DU, "FragNeeded"), (3, 9): (DU, "NetProhibited"),
    (11, 1): (TE, "FragReassembly"), (3, 7): (DU, "HostUnknown"), (3, 11): (DU, "NetTOS"),
    (3, 6): (DU, "NetUnknown"), (3, 8): (DU, "SourceIsolated"),
}
# Per-type overview rows plus the pairs the detectors depend on.
TYPE_ROWS = {
    (0, 0): Family.EchoReply, (13, 0): Family.TimestampRequest, (12, 0): Family.ParameterProblem,
    (17, 0): Family.AddressMaskRequest, (4, 0): Family.SourceQuench, (5, 0): Family.Redirect,
    (5, 1): Family.Redirect, (8, 0): Family.EchoRequest,
}


@pytest.mark.criterion(2, "type/code taxonomy and exhaustive 65,536-pair sweep, < 1 s")
def test_taxonomy():
    with Budget(1):
        for pair, (family, name) in UNREACH_ROWS.items():
            assert (classify(*pair).family, classify(*pair).code_name) == (family, name), pair
        for pair, family in TYPE_ROWS.items():
            assert classify(*pair).family is family, pair
        assert classify(5, 0).code_name == "NetworkRedirect" and classify(5, 1).code_name == "HostRedirect"
        assert classify(4, 0).deprecated
        families = Counter()
        for t in range(256):
            for c in range(256):
                cls = classify(t, c)
                families[cls.family] += 1
                if t not in (0, 3, 4, 5, 8, 11, 12, 13, 17):
                    assert (cls.family, cls.code_name) == (Family.Other, "NonStandard")
    assert sum(families.values()) == 65536
    assert families[Family.Other] == 256 * (256 - 9)


# 3 ------------------------------------------------------------------------------------


@pytest.mark.criterion(3, "28-byte quotations give ports only, >=40-byte give full transport header")
def test_quotation_semantics():
    rng = random.Random(3)
    cases = 0
    for _ in range(200):
        dst = f"203.0.113.{rng.randrange(1, 255)}"
        sport, dport = rng.randrange(1024, 65536), rng.choice([80, 443, 53])
        short = decode_quotation(message(3, 3, payload=quote("192.0.2.10", dst, 6, sport, dport, size=28)))
        assert (short.src_port, short.dst_port, short.full_transport_header) == (sport, dport, False)
        assert short.quoted_byte_count == 28
        size = rng.choice([40, 48, 60, 68])
        proto = rng.choice([6, 17])
        full = decode_quotation(message(11, 0, payload=quote("192.0.2.10", dst, proto, sport, dport, size=size)))
        assert (full.src_port, full.dst_port, full.full_transport_header) == (sport, dport, True)
        assert full.dst == IPv4Address(dst) and full.quoted_byte_count == size
        cases += 2
    assert cases == 400


# 4 ------------------------------------------------------------------------------------


def with_self_loops(succ, loops):
    return [sorted(succ[v] + [v]) if loops >> v & 1 else succ[v] for v in range(len(succ))]


@pytest.mark.criterion(4, "cycles match brute force on all digraphs <= 5 nodes and 10,000 random <= 8, < 60 s")
def test_cycle_oracle():
    with Budget(60):
        checked = 0
        # every labeled digraph, self-loops included, up to four vertices
        for n in range(0, 5):
            for succ in all_labeled(n, self_loops=True):
                assert simple_cycles_indexed(succ) == brute_force_cycles(succ), succ
                checked += 1
        # five vertices: every isomorphism class of the loopless part, with every self-loop subset
        sweep = LooplessSweep(5)
        reps = sweep.representatives()
        assert len(reps) == 9608  # OEIS A000273
        for mask in reps:
            base, base_cycles = sweep.graph(mask), sweep.expected(mask)
            for loops in range(32):
                expected = sorted(base_cycles + [[v, v] for v in range(5) if loops >> v & 1])
                if simple_cycles_indexed(with_self_loops(base, loops)) != expected:
                    pytest.fail(f"mismatch on {with_self_loops(base, loops)}")
                checked += 1
        rng = random.Random(4)
        for _ in range(10_000):
            n = rng.randint(1, 8)
            p = rng.random()
            succ = [[j for j in range(n) if rng.random() < p] for _ in range(n)]
            assert simple_cycles_indexed(succ) == brute_force_cycles(succ), succ
            checked += 1
    assert checked == 1 + 2 + 16 + 512 + 65536 + 9608 * 32 + 10_000


# 5 and 6 ------------------------------------------------------------------------------


def trace(scenario):
    topo = scenario.topology
    sim = Simulator(topo)
    path = traceroute(scenario.target, ProbeConfig(transport=sim, max_ttl=64))
    return topo, path


@pytest.fixture(scope="module")
def suite_runs():
    start = time.perf_counter()
    runs = [(s, *trace(s)) for s in loop_suite() + loop_free_suite()]
    return runs, time.perf_counter() - start


@pytest.mark.criterion(5, "100% loop detection, 0% false positives on >= 50 + >= 50 topologies, < 2 min")
def test_loop_detection(suite_runs):
    runs, elapsed = suite_runs
    looped = [r for r in runs if r[0].has_loop]
    free = [r for r in runs if not r[0].has_loop]
    assert len(looped) >= 50 and len(free) >= 50
    assert {len(r[0].doc["routers"]) - int(r[0].name.split("-")[1][1:]) for r in looped} == {2, 3, 4, 5, 6}
    assert {int(r[0].name.split("-")[1][1:]) for r in looped} >= {1, 10}
    missed, false_pos = [], []
    for scenario, topo, path in looped:
        truth = ground_truth(topo, scenario.target)
        assert truth.loop is not None
        finding = find_loop(path)
        if finding is None:
            missed.append(scenario.name)
            continue
        loop_addrs = {topo.routers[r].address for r in truth.loop}
        responders = {label.address for label in finding.members if not label.silent}
        assert responders and responders <= loop_addrs, scenario.name
    for scenario, topo, path in free:
        assert ground_truth(topo, scenario.target).loop is None
        if find_loop(path) is not None:
            false_pos.append(scenario.name)
    assert missed == [] and false_pos == []
    assert elapsed < 120


@pytest.mark.criterion(6, "send gaps >= 500 ms after the first repeated responder, full suite")
def test_pacing_invariant(suite_runs):
    runs, _ = suite_runs
    with_repeats = 0
    for scenario, _, path in runs:
        seen = set()
        first_repeat = None
        for i, label in enumerate(path.hops):
            if not label.silent and label in seen:
                first_repeat = i
                break
            seen.add(label)
        if first_repeat is None:
            continue
        with_repeats += 1
        post = [b - a for a, b in zip(path.probe_times[first_repeat:], path.probe_times[first_repeat + 1:])]
        assert post and min(post) >= 0.5, scenario.name
    assert with_repeats >= 60


# 7 ------------------------------------------------------------------------------------


@pytest.mark.criterion(7, "at most one traceroute per (/24, 30-min window) over 100K events in 1K /24s")
def test_seeding_invariant():
    rng = random.Random(7)
    nets = [f"100.{64 + i // 256}.{i % 256}" for i in range(1000)]
    events = sorted((rng.uniform(0, 7 * 86400), IPv4Address(f"{rng.choice(nets)}.{rng.randrange(256)}"))
                    for _ in range(100_000))
    seeds = list(schedule_seeds(events))
    # oracle: tumbling windows anchored at each /24's first event
    anchors, windows = {}, set()
    for when, dst in events:
        net = slash24(dst)
        anchors.setdefault(net, when)
        windows.add((net, int((when - anchors[net]) // 1800)))
    per_window = Counter((s.slash24, int((s.seen_at - anchors[s.slash24]) // 1800)) for s in seeds)
    assert max(per_window.values()) == 1
    assert set(per_window) == windows  # every occupied window gets its traceroute
    assert len({s.slash24 for s in seeds}) == 1000
    shuffled = events[:]
    rng.shuffle(shuffled)
    first_seen = {}
    for when, dst in shuffled:
        first_seen.setdefault(slash24(dst), when)
    late = Counter()
    for s in schedule_seeds(shuffled):
        offset = (s.window_start - first_seen[s.slash24]) / 1800
        assert abs(offset - round(offset)) < 1e-9  # grid anchored at the first sighting
        late[s.slash24, s.window_start] += 1
    assert max(late.values()) == 1


# 8 ------------------------------------------------------------------------------------


@pytest.mark.criterion(8, "re-probing after one of three loops is removed: persisted 2, disappeared 1")
def test_persistence():
    topo = load_topology(FIX / "loops3.json")
    sim = Simulator(topo)
    cfg = ProbeConfig(transport=sim)
    table_asn = parse_table((FIX / "astable.csv").read_text().splitlines())
    targets = ["100.64.1.7", "100.64.2.7", "100.64.3.7"]
    truth_before = {t: ground_truth(topo, t).loop for t in targets}
    assert all(truth_before.values()) and len(set(truth_before.values())) == 3
    outcomes = run_traceroutes([(0.0, t) for t in targets], cfg)
    findings = [find_loop(o.path, table_asn) for o in outcomes]
    assert all(findings)
    table = persistence_check(findings, 14 * 86400, cfg, table_asn)
    truth_after = {t: ground_truth(sim.topology, t).loop for t in targets}
    expected = {IPv4Address(t): "persisted" if truth_after[t] else "disappeared" for t in targets}
    assert table.per_target == expected
    assert (table.persisted, table.disappeared, table.failed) == (2, 1, 0)


# 9 ------------------------------------------------------------------------------------


@pytest.mark.criterion(9, "churn identities on 1,000 random epoch pairs; identity yields zero flips")
def test_churn_identities():
    rng = random.Random(9)
    universe = [IPv4Address(0xC6336400 + i) for i in range(400)]
    for i in range(1000):
        a = frozenset(rng.sample(universe, rng.randrange(0, 200)))
        b = frozenset(rng.sample(universe, rng.randrange(0, 200)))
        r = compare_epochs(EpochSet("a", a), EpochSet("b", b))
        assert len(a) == r.stayed_unreachable + r.became_reachable
        assert len(b) == r.stayed_unreachable + r.became_unreachable
        same = compare_epochs(EpochSet("a", a), EpochSet("a2", a))
        assert (same.became_reachable, same.became_unreachable) == (0, 0)
        assert same.stayed_unreachable == len(a)


# 10 -----------------------------------------------------------------------------------

LOCAL = [IPv4Network("192.0.2.0/24")]
HAND_TABLE = parse_table(["198.51.100.0/24,64500", "203.0.113.0/24,64501"])


def _redirect(code, gateway, quoted_src, quoted_dst, origin):
    msg = message(5, code, IPv4Address(gateway).packed, quote(quoted_src, quoted_dst, 6, 1000, 80), src=origin)
    return validate_redirect(msg, decode_quotation(msg), LOCAL).violations


def _sq(origin, quoted_dst):
    msg = message(4, 0, payload=quote("192.0.2.10", quoted_dst, 6, 1000, 80), src=origin)
    f = audit_source_quench(msg, decode_quotation(msg), HAND_TABLE)
    return f.self_generated, f.cross_operator


@pytest.mark.criterion(10, "redirect violation sets, source quench split, TTL category partition")
def test_detector_contracts():
    redirects = [
        ((1, "192.0.2.254", "192.0.2.10", "203.0.113.5", "192.0.2.1"), set()),
        ((1, "192.0.2.254", "198.51.100.3", "203.0.113.5", "192.0.2.1"), {V.CrossNetworkSource}),
        ((0, "192.0.2.254", "192.0.2.10", "203.0.113.5", "192.0.2.1"), {V.NetworkRedirectType}),
        ((1, "192.168.1.1", "192.0.2.10", "203.0.113.5", "192.0.2.1"), {V.PrivateGateway}),
        ((1, "192.0.2.254", "192.0.2.10", "10.1.2.3", "192.0.2.1"), {V.PrivateDestination}),
        ((0, "10.0.0.1", "8.8.8.8", "203.0.113.5", "198.51.100.9"),
         {V.NetworkRedirectType, V.PrivateGateway, V.CrossNetworkSource}),
    ]
    for args, expected in redirects:
        assert _redirect(*args) == expected, args
    assert _sq("198.51.100.7", "198.51.100.7") == (True, False)
    assert _sq("198.51.100.7", "203.0.113.9") == (False, True)
    assert _sq("198.51.100.7", "198.51.100.8") == (False, False)
    assert _sq("8.8.8.8", "203.0.113.9") == (False, False)

    def oracle(ttl):
        if ttl <= 1:
            return TtlCategory.Expected
        if ttl <= 6:
            return TtlCategory.MplsHint
        if ttl < 200:
            return TtlCategory.MidRange
        return TtlCategory.RewriteHint

    cats = [ttl_category(t) for t in range(256)]
    assert cats == [oracle(t) for t in range(256)]
    assert set(cats) == set(TtlCategory)
    for lo, hi in ((1, 2), (6, 7), (199, 200)):
        assert ttl_category(lo) != ttl_category(hi)


# 11 -----------------------------------------------------------------------------------


def _compare(out, golden):
    assert sorted(p.name for p in out.iterdir()) == sorted(p.name for p in golden.iterdir())
    for path in golden.iterdir():
        produced = out / path.name
        if path.name == "manifest.json":
            assert mask_manifest(json.loads(produced.read_text())) == json.loads(path.read_text())
        else:
            assert produced.read_bytes() == path.read_bytes(), path.name


@pytest.mark.criterion(11, "analyze and loops reproduce the bundled golden reports")
def test_end_to_end(tmp_path):
    assert main(["analyze", "--capture", str(FIX / "capture200.pcap"), "--campaigns",
                 str(FIX / "campaigns.json"), "--astable", str(FIX / "astable.csv"),
                 "--out", str(tmp_path / "analyze")]) == 0
    _compare(tmp_path / "analyze", GOLDEN / "analyze")
    assert json.loads((tmp_path / "analyze/stats.json").read_text())["total"] == 200
    assert main(["loops", "--seeds", str(FIX / "seeds3.csv"), "--topology", str(FIX / "loops3.json"),
                 "--astable", str(FIX / "astable.csv"), "--reprobe-delay", "14d",
                 "--out", str(tmp_path / "loops")]) == 0
    _compare(tmp_path / "loops", GOLDEN / "loops")
    summary = json.loads((tmp_path / "loops/loop_summary.json").read_text())
    assert summary["loops_found"] == 3 and summary["ground_truth"]["agrees"]


# Labeled five-vertex sweeps: 2**20 loopless graphs, and 2**25 with self-loops. Opt-in (-m slow).


@pytest.mark.slow
def test_all_labeled_loopless_five_node_digraphs():
    sweep = LooplessSweep(5)
    for mask in range(len(sweep)):
        assert simple_cycles_indexed(sweep.graph(mask)) == sweep.expected(mask), mask


@pytest.mark.slow
def test_all_labeled_five_node_digraphs_with_self_loops():
    sweep = LooplessSweep(5)
    for mask in range(len(sweep)):
        base, base_cycles = sweep.graph(mask), sweep.expected(mask)
        for loops in range(32):
            expected = sorted(base_cycles + [[v, v] for v in range(5) if loops >> v & 1])
            assert simple_cycles_indexed(with_self_loops(base, loops)) == expected, (mask, loops)
