"""Rate-limit-aware Paris traceroute and the loop-detection pipeline around it."""

from __future__ import annotations

import heapq
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from ipaddress import IPv4Address
from typing import Iterable, Protocol

from ..errors import TransportFailure
from ..netsim import ProbeReply, ReplyKind
from .classify import DEFAULT_DEGREE_THRESHOLD, LoopFinding, as_reduce, classify_loop
from .cycles import DEFAULT_CYCLE_BUDGET, elementary_cycles
from .graph import Label, LabelPath, build_label_graph

log = logging.getLogger(__name__)

MIN_SEEN_IP_PAUSE = 0.5
DEFAULT_PARALLELISM = 8


class ProbeTransport(Protocol):
    def send_probe(self, target: IPv4Address, ttl: int, flow_id: int, at: float) -> ProbeReply: ...

    def now(self) -> float: ...

    def wait_until(self, t: float) -> None: ...


@dataclass
class ProbeConfig:
    """Traceroute parameters; durations are in seconds.

    ``stop_repeats`` ends a traceroute once any responder has been seen that
    many times, which is enough to clear the default degree threshold.
    """

    transport: ProbeTransport | None = None
    max_ttl: int = 64
    flow_id: int = 0x5A17
    base_inter_probe_gap: float = 0.05
    seen_ip_pause: float = MIN_SEEN_IP_PAUSE
    per_hop_timeout: float = 1.0
    stop_repeats: int = 8

    def __post_init__(self):
        if self.seen_ip_pause < MIN_SEEN_IP_PAUSE:
            raise ValueError(f"seen_ip_pause must be at least {MIN_SEEN_IP_PAUSE} s")
        if not 1 <= self.max_ttl <= 255:
            raise ValueError("max_ttl must be within 1..255")
        if not 0 <= self.flow_id <= 0xFFFF:
            raise ValueError("flow_id must be a 16-bit value")
        if self.per_hop_timeout <= 0 or self.base_inter_probe_gap < 0:
            raise ValueError("timeouts and gaps must be positive")


class _Session:
    """One traceroute as a sequence of probe decisions, independent of the clock."""

    def __init__(self, target: IPv4Address, cfg: ProbeConfig, start: float):
        self.cfg = cfg
        self.path = LabelPath(IPv4Address(target))
        self.ttl = 1
        self.next_time = start
        self.seen = Counter()
        self.paced = False
        self.done = False
        self.error: Exception | None = None

    def record(self, sent_at: float, reply: ProbeReply):
        cfg = self.cfg
        answered = (reply.kind is not ReplyKind.Timeout and reply.at is not None
                    and reply.at - sent_at <= cfg.per_hop_timeout)
        if answered:
            label = Label.responder(reply.address)
            finished_at = reply.at
            self.seen[label] += 1
            if self.seen[label] == 2:
                self.paced = True
        else:
            label = Label.silent_hop(self.ttl)
            finished_at = sent_at + cfg.per_hop_timeout
        self.path.hops.append(label)
        self.path.probe_times.append(sent_at)
        gap = cfg.seen_ip_pause if self.paced else cfg.base_inter_probe_gap
        next_time = max(finished_at, sent_at + gap)
        while next_time - sent_at < gap:  # keep the measured gap exact under float rounding
            next_time = math.nextafter(next_time, math.inf)
        self.next_time = next_time

        if answered and reply.kind is ReplyKind.TargetReached:
            self.path.reached = True
            self.done = True
        elif self.ttl >= cfg.max_ttl or (answered and self.seen[label] >= cfg.stop_repeats):
            self.done = True
        self.ttl += 1


def _transport(cfg: ProbeConfig) -> ProbeTransport:
    if cfg.transport is None:
        raise TransportFailure("no probe transport configured")
    return cfg.transport


def traceroute(target, cfg: ProbeConfig, start: float | None = None) -> LabelPath:
    """Run one traceroute to completion; transport failures propagate."""
    transport = _transport(cfg)
    now = transport.now()
    session = _Session(IPv4Address(target), cfg, now if start is None else max(start, now))
    while not session.done:
        transport.wait_until(session.next_time)
        sent_at = session.next_time
        reply = transport.send_probe(session.path.target, session.ttl, cfg.flow_id, sent_at)
        session.record(sent_at, reply)
    return session.path


@dataclass
class TracerouteOutcome:
    target: IPv4Address
    path: LabelPath | None = None
    error: Exception | None = None


def run_traceroutes(jobs: Iterable[tuple[float, IPv4Address]], cfg: ProbeConfig,
                    parallelism: int = DEFAULT_PARALLELISM) -> list[TracerouteOutcome]:
    """Interleave many traceroutes, at most ``parallelism`` at a time.

    ``jobs`` are ``(earliest start, target)`` pairs. Probes from all sessions
    are issued in global time order, ties broken by session index, so a
    simulated run is fully deterministic. A job starts when a session slot
    frees up, never before its own start time.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    transport = _transport(cfg)
    jobs = sorted(enumerate(jobs), key=lambda j: (j[1][0], j[0]))
    outcomes: list[TracerouteOutcome | None] = [None] * len(jobs)
    free_slots = [transport.now()] * parallelism
    active: list = []
    pending = list(reversed(jobs))
    while pending or active:
        if pending and free_slots:
            sid, (start, target) = pending.pop()
            slot_time = heapq.heappop(free_slots)
            session = _Session(IPv4Address(target), cfg, max(start, slot_time))
            heapq.heappush(active, (session.next_time, sid, session))
            continue
        t, sid, session = heapq.heappop(active)
        transport.wait_until(t)
        try:
            reply = transport.send_probe(session.path.target, session.ttl, cfg.flow_id, t)
        except TransportFailure as exc:
            log.warning("traceroute to %s failed: %s", session.path.target, exc)
            outcomes[sid] = TracerouteOutcome(session.path.target, error=exc)
            heapq.heappush(free_slots, t)
            continue
        session.record(t, reply)
        if session.done:
            outcomes[sid] = TracerouteOutcome(session.path.target, path=session.path)
            heapq.heappush(free_slots, session.next_time)
        else:
            heapq.heappush(active, (session.next_time, sid, session))
    return outcomes


def find_loop(path: LabelPath, as_lookup=None, degree_threshold: int = DEFAULT_DEGREE_THRESHOLD,
              cycle_budget: int = DEFAULT_CYCLE_BUDGET) -> LoopFinding | None:
    graph = build_label_graph(path)
    core = classify_loop(graph, elementary_cycles(graph, cycle_budget), degree_threshold)
    if core is None:
        return None
    detected_at = path.probe_times[-1] if path.probe_times else 0.0
    return as_reduce(core, as_lookup, path.target, detected_at)


@dataclass
class PersistenceTable:
    per_target: dict[IPv4Address, str] = field(default_factory=dict)
    per_as: dict = field(default_factory=dict)

    @property
    def persisted(self) -> int:
        return sum(1 for v in self.per_target.values() if v == "persisted")

    @property
    def disappeared(self) -> int:
        return sum(1 for v in self.per_target.values() if v == "disappeared")

    @property
    def failed(self) -> int:
        return sum(1 for v in self.per_target.values() if v == "failed")

    def to_json(self) -> dict:
        return {
            "persisted": self.persisted,
            "disappeared": self.disappeared,
            "failed": self.failed,
            "targets": {str(t): v for t, v in sorted(self.per_target.items())},
            "per_as": {str(a): dict(sorted(c.items())) for a, c in
                       sorted(self.per_as.items(), key=lambda kv: str(kv[0]))},
        }


def persistence_check(findings: list[LoopFinding], reprobe_delay: float, cfg: ProbeConfig,
                      as_lookup=None, degree_threshold: int = DEFAULT_DEGREE_THRESHOLD,
                      parallelism: int = DEFAULT_PARALLELISM) -> PersistenceTable:
    """Re-probe every finding's target after ``reprobe_delay`` seconds.

    A loop persists when the target again classifies as looping; the cycle
    members may differ. Per-AS tallies use the ASes of the original loop.
    """
    transport = _transport(cfg)
    at = transport.now() + reprobe_delay
    outcomes = run_traceroutes([(at, f.target) for f in findings], cfg, parallelism)
    table = PersistenceTable()
    for finding, outcome in zip(findings, outcomes):
        if outcome.error is not None:
            status = "failed"
        elif find_loop(outcome.path, as_lookup, degree_threshold) is not None:
            status = "persisted"
        else:
            status = "disappeared"
        table.per_target[finding.target] = status
        for asn in {a for a in finding.as_cycle if isinstance(a, int)}:
            counts = table.per_as.setdefault(asn, Counter())
            counts[status] += 1
    return table
