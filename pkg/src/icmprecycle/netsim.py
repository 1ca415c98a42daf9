"""Deterministic router-level network simulator driven by a virtual clock.

Routers forward probes along static routes (longest-prefix match, then the
default route), decrement the TTL, and answer expiring probes with a time
exceeded message when they respond to ICMP and their token bucket grants a
token. MPLS segments without TTL propagation hide their interior hops.

Topology files are JSON::

    {
      "entry": "r0",                      # router the vantage point attaches to
      "entry_latency_ms": 1,
      "default_latency_ms": 1,
      "routers": [
        {"id": "r0", "address": "192.0.2.1", "responds_icmp": true,
         "rate_limiter": {"capacity": 2, "refill_per_second": 2},
         "routing": {"198.51.100.0/24": "r1", "203.0.113.0/24": ["r1", "r2"]},
         "default_route": "r1",
         "link_latency_ms": {"r1": 3}}
      ],
      "hosts": [{"address": "198.51.100.7", "router": "r1"}],
      "mpls_segments": [{"routers": ["r1", "r2", "r3"], "ttl_copy": false}],
      "edits": [{"at": 3600, "router": "r2", "routing": {"198.51.100.0/24": null}}]
    }

A list of next hops is an ECMP group; the member is chosen per flow from a
CRC32 of (flow id, destination, router id). Edits are applied when the
virtual clock passes their ``at`` time (seconds).
"""

from __future__ import annotations

import copy
import heapq
import json
import math
import zlib
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from ipaddress import IPv4Address, IPv4Network
from pathlib import Path
from typing import Callable

from .errors import DanglingNextHop, FileUnreadable, SchemaError

DEFAULT_LATENCY = 0.001
MAX_FORWARDING_STEPS = 4096


class VirtualClock:
    """Monotonic virtual time with a queue of timed callbacks."""

    def __init__(self, start: float = 0.0):
        self.now = start
        self._events: list = []
        self._seq = 0

    def schedule(self, at: float, callback: Callable[[], None], order: int = 0):
        heapq.heappush(self._events, (at, order, self._seq, callback))
        self._seq += 1

    def advance_to(self, t: float):
        """Run due callbacks in time order; earlier times leave the clock unchanged."""
        while self._events and self._events[0][0] <= t:
            at, _, _, callback = heapq.heappop(self._events)
            self.now = max(self.now, at)
            callback()
        self.now = max(self.now, t)

    @property
    def pending(self) -> int:
        return len(self._events)


class TokenBucket:
    def __init__(self, capacity: float, refill_per_second: float, start: float = 0.0):
        self.capacity = capacity
        self.refill_per_second = refill_per_second
        self.tokens = capacity
        self.last = start

    def take(self, t: float) -> bool:
        if math.isinf(self.capacity):
            return True
        if t > self.last:
            self.tokens = min(self.capacity, self.tokens + (t - self.last) * self.refill_per_second)
            self.last = t
        if self.tokens >= 1:
            self.tokens -= 1
            return True
        return False


@dataclass
class Router:
    id: str
    address: IPv4Address
    responds_icmp: bool = True
    rate_limiter: tuple[float, float] | None = None  # (capacity, refill per second)
    routing: dict[IPv4Network, tuple[str, ...]] = field(default_factory=dict)
    default_route: tuple[str, ...] | None = None
    link_latency: dict[str, float] = field(default_factory=dict)

    def next_hops(self, dst: IPv4Address) -> tuple[str, ...] | None:
        best = None
        for net, hops in self.routing.items():
            if dst in net and (best is None or net.prefixlen > best[0].prefixlen):
                best = (net, hops)
        return best[1] if best else self.default_route


def flow_choice(hops: tuple[str, ...], flow_id: int, dst: IPv4Address, router_id: str) -> str:
    if len(hops) == 1:
        return hops[0]
    key = f"{flow_id}|{dst}|{router_id}".encode()
    return hops[zlib.crc32(key) % len(hops)]


@dataclass
class Edit:
    at: float
    router: str
    routing: dict[IPv4Network, tuple[str, ...] | None] = field(default_factory=dict)
    set_default: bool = False
    default_route: tuple[str, ...] | None = None
    responds_icmp: bool | None = None


@dataclass
class SimTopology:
    routers: dict[str, Router]
    entry: str
    hosts: dict[IPv4Address, str] = field(default_factory=dict)
    mpls_segments: list[tuple[tuple[str, ...], bool]] = field(default_factory=list)
    entry_latency: float = DEFAULT_LATENCY
    default_latency: float = DEFAULT_LATENCY
    edits: list[Edit] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.entry not in self.routers:
            raise DanglingNextHop(f"entry router {self.entry!r} does not exist", "entry")
        for r in self.routers.values():
            groups = list(r.routing.items()) + [("default_route", r.default_route)]
            for where, hops in groups:
                for hop in hops or ():
                    if hop not in self.routers:
                        raise DanglingNextHop(f"unknown next hop {hop!r}",
                                              f"routers[{r.id}].routing[{where}]")
        for addr, rid in self.hosts.items():
            if rid not in self.routers:
                raise DanglingNextHop(f"host attached to unknown router {rid!r}", f"hosts[{addr}]")
        for members, _ in self.mpls_segments:
            for rid in members:
                if rid not in self.routers:
                    raise DanglingNextHop(f"unknown router {rid!r}", "mpls_segments")

    def invalidate(self):
        for name in ("hidden_pairs", "by_address", "ground_truth_loops"):
            self.__dict__.pop(name, None)

    @cached_property
    def hidden_pairs(self) -> frozenset[tuple[str, str]]:
        """(previous, current) router pairs that do not decrement the TTL."""
        pairs = set()
        for members, ttl_copy in self.mpls_segments:
            if not ttl_copy:
                pairs.update(zip(members, members[1:]))
        return frozenset(pairs)

    @cached_property
    def by_address(self) -> dict[IPv4Address, str]:
        return {r.address: r.id for r in self.routers.values()}

    def latency(self, router: Router, nxt: str) -> float:
        return router.link_latency.get(nxt, self.default_latency)

    def apply_edit(self, edit: Edit):
        router = self.routers[edit.router]
        for net, hops in edit.routing.items():
            if hops is None:
                router.routing.pop(net, None)
            else:
                router.routing[net] = hops
        if edit.set_default:
            router.default_route = edit.default_route
        if edit.responds_icmp is not None:
            router.responds_icmp = edit.responds_icmp
        self.validate()
        self.invalidate()

    def forwarding_successors(self, rid: str, dst: IPv4Address, flow_id: int | None):
        """Routers a packet for ``dst`` may be forwarded to from ``rid``; None on delivery."""
        router = self.routers[rid]
        if router.address == dst or self.hosts.get(dst) == rid:
            return None
        hops = router.next_hops(dst)
        if not hops:
            return ()
        if flow_id is not None:
            return (flow_choice(hops, flow_id, dst, rid),)
        return tuple(sorted(set(hops)))

    @cached_property
    def ground_truth_loops(self) -> frozenset[tuple[str, ...]]:
        """Every forwarding cycle reachable from the entry router for some destination."""
        loops = set()
        for dst in self._representative_destinations():
            loops |= forwarding_cycles(self, dst)
        return frozenset(loops)

    def _representative_destinations(self):
        # Forwarding is constant between consecutive prefix or address boundaries.
        points = {0}
        for r in self.routers.values():
            for net in r.routing:
                points.add(int(net.network_address))
                points.add(int(net.broadcast_address) + 1)
            points.add(int(r.address))
            points.add(int(r.address) + 1)
        for addr in self.hosts:
            points.add(int(addr))
            points.add(int(addr) + 1)
        return [IPv4Address(p) for p in sorted(points) if p < 2**32]


def canonical_cycle(nodes) -> tuple[str, ...]:
    nodes = list(nodes)
    i = nodes.index(min(nodes))
    return tuple(nodes[i:] + nodes[:i])


def forwarding_cycles(topo: SimTopology, dst: IPv4Address, flow_id: int | None = None,
                      max_paths: int = 100_000) -> set[tuple[str, ...]]:
    """All cycles of the forwarding graph for ``dst`` reachable from the entry.

    Enumerates simple forwarding paths from the entry; any next hop already on
    the current path closes a cycle. Every reachable cycle is found this way
    because a shortest path into the cycle touches it only at its last node.
    """
    cycles = set()
    stack = [(topo.entry, [topo.entry])]
    explored = 0
    while stack:
        rid, path = stack.pop()
        explored += 1
        if explored > max_paths:
            raise RuntimeError("forwarding path enumeration budget exceeded")
        succ = topo.forwarding_successors(rid, dst, flow_id)
        for nxt in succ or ():
            if nxt in path:
                cycles.add(canonical_cycle(path[path.index(nxt):]))
            else:
                stack.append((nxt, path + [nxt]))
    return cycles


@dataclass(frozen=True)
class GroundTruth:
    loop: tuple[str, ...] | None
    reachable: bool


def ground_truth(topo: SimTopology, target, flow_id: int | None = None) -> GroundTruth:
    """Fate of packets to ``target`` derived from routing tables alone."""
    target = IPv4Address(target)
    reachable = False
    loops = set()
    stack = [(topo.entry, [topo.entry])]
    while stack:
        rid, path = stack.pop()
        succ = topo.forwarding_successors(rid, target, flow_id)
        if succ is None:
            reachable = True
            continue
        for nxt in succ:
            if nxt in path:
                loops.add(canonical_cycle(path[path.index(nxt):]))
            else:
                stack.append((nxt, path + [nxt]))
    return GroundTruth(min(loops) if loops else None, reachable)


# --- probing -------------------------------------------------------------------------


class ReplyKind(str, Enum):
    Responder = "Responder"
    Timeout = "Timeout"
    TargetReached = "TargetReached"


@dataclass(frozen=True)
class ProbeReply:
    kind: ReplyKind
    address: IPv4Address | None = None
    at: float | None = None


@dataclass(frozen=True)
class Probe:
    target: IPv4Address
    ttl: int
    flow_id: int


@dataclass(frozen=True)
class ProbeLogEntry:
    at: float
    target: IPv4Address
    ttl: int
    flow_id: int
    reply: ProbeReply


class Simulator:
    """Probe transport backed by a :class:`SimTopology` and a virtual clock."""

    def __init__(self, topology: SimTopology, clock: VirtualClock | None = None):
        # Scheduled edits mutate the topology, so the simulator owns a copy.
        self.topology = copy.deepcopy(topology)
        self.clock = clock or VirtualClock()
        self.buckets: dict[str, TokenBucket] = {}
        self.log: list[ProbeLogEntry] = []
        for edit in self.topology.edits:
            self.clock.schedule(edit.at, lambda e=edit: self.topology.apply_edit(e))

    def now(self) -> float:
        return self.clock.now

    def wait_until(self, t: float):
        self.clock.advance_to(t)

    def _bucket(self, router: Router) -> TokenBucket | None:
        if router.rate_limiter is None:
            return None
        bucket = self.buckets.get(router.id)
        if bucket is None:
            capacity, refill = router.rate_limiter
            bucket = self.buckets[router.id] = TokenBucket(capacity, refill, self.clock.now)
        return bucket

    def inject_probe(self, probe: Probe, at: float | None = None) -> ProbeReply:
        at = self.clock.now if at is None else at
        reply = self._walk(probe, at)
        self.log.append(ProbeLogEntry(at, probe.target, probe.ttl, probe.flow_id, reply))
        return reply

    def send_probe(self, target, ttl: int, flow_id: int, at: float) -> ProbeReply:
        return self.inject_probe(Probe(IPv4Address(target), ttl, flow_id), at)

    def _walk(self, probe: Probe, at: float) -> ProbeReply:
        topo = self.topology
        target = probe.target
        ttl = probe.ttl
        one_way = topo.entry_latency
        prev, cur = None, topo.entry
        for _ in range(MAX_FORWARDING_STEPS):
            router = topo.routers[cur]
            if router.address == target:
                return ProbeReply(ReplyKind.TargetReached, target, at + 2 * one_way)
            if (prev, cur) not in topo.hidden_pairs:
                ttl -= 1
            if ttl <= 0:
                bucket = self._bucket(router)
                if router.responds_icmp and (bucket is None or bucket.take(at + one_way)):
                    return ProbeReply(ReplyKind.Responder, router.address, at + 2 * one_way)
                return ProbeReply(ReplyKind.Timeout)
            if topo.hosts.get(target) == cur:
                one_way += topo.default_latency
                return ProbeReply(ReplyKind.TargetReached, target, at + 2 * one_way)
            hops = router.next_hops(target)
            if not hops:
                return ProbeReply(ReplyKind.Timeout)
            nxt = flow_choice(hops, probe.flow_id, target, cur)
            one_way += topo.latency(router, nxt)
            prev, cur = cur, nxt
        return ProbeReply(ReplyKind.Timeout)


# --- loading -------------------------------------------------------------------------


def _hops(value, where) -> tuple[str, ...] | None:
    if value is None:
        return None
    if isinstance(value, str):
        return (value,)
    if isinstance(value, list) and value and all(isinstance(v, str) for v in value):
        if len(value) > len(set(value)):
            raise SchemaError("duplicate next hop in ECMP group", where)
        return tuple(value)
    raise SchemaError("next hop must be a router id or a non-empty list of ids", where)


def _routing(table, where) -> dict:
    if not isinstance(table, dict):
        raise SchemaError("routing must be an object mapping prefix to next hop", where)
    out = {}
    for prefix, value in table.items():
        try:
            net = IPv4Network(prefix)
        except ValueError as exc:
            raise SchemaError(str(exc), f"{where}[{prefix}]") from None
        out[net] = _hops(value, f"{where}[{prefix}]")
    return out


def _ms(value, where) -> float:
    if not isinstance(value, (int, float)) or value < 0:
        raise SchemaError("latency must be a non-negative number of milliseconds", where)
    return value / 1000.0


def _rate_limiter(spec, where):
    if spec is None:
        return None
    if not isinstance(spec, dict):
        raise SchemaError("rate_limiter must be an object", where)
    capacity = spec.get("capacity")
    refill = spec.get("refill_per_second", 0)
    if capacity in (None, "inf"):
        return None
    if not isinstance(capacity, (int, float)) or capacity < 0:
        raise SchemaError("capacity must be a non-negative number or 'inf'", f"{where}.capacity")
    if not isinstance(refill, (int, float)) or refill < 0:
        raise SchemaError("refill_per_second must be non-negative", f"{where}.refill_per_second")
    return (float(capacity), float(refill))


def parse_topology(doc) -> SimTopology:
    if not isinstance(doc, dict):
        raise SchemaError("top level must be an object")
    routers = {}
    for i, spec in enumerate(doc.get("routers", [])):
        where = f"routers[{i}]"
        if not isinstance(spec, dict):
            raise SchemaError("router entry must be an object", where)
        for key in ("id", "address"):
            if key not in spec:
                raise SchemaError(f"missing field {key!r}", where)
        rid = str(spec["id"])
        if rid in routers:
            raise SchemaError(f"duplicate router id {rid!r}", f"{where}.id")
        try:
            address = IPv4Address(spec["address"])
        except ValueError as exc:
            raise SchemaError(str(exc), f"{where}.address") from None
        responds = spec.get("responds_icmp", True)
        if not isinstance(responds, bool):
            raise SchemaError("must be true or false", f"{where}.responds_icmp")
        latency = spec.get("link_latency_ms", {})
        if not isinstance(latency, dict):
            raise SchemaError("must be an object", f"{where}.link_latency_ms")
        routers[rid] = Router(
            id=rid,
            address=address,
            responds_icmp=responds,
            rate_limiter=_rate_limiter(spec.get("rate_limiter"), f"{where}.rate_limiter"),
            routing=_routing(spec.get("routing", {}), f"{where}.routing"),
            default_route=_hops(spec.get("default_route"), f"{where}.default_route"),
            link_latency={k: _ms(v, f"{where}.link_latency_ms.{k}") for k, v in latency.items()},
        )
    if not routers:
        raise SchemaError("at least one router is required", "routers")
    addresses = [r.address for r in routers.values()]
    if len(set(addresses)) != len(addresses):
        raise SchemaError("router addresses must be unique", "routers")

    hosts = {}
    for i, spec in enumerate(doc.get("hosts", [])):
        try:
            hosts[IPv4Address(spec["address"])] = str(spec["router"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad host entry ({exc})", f"hosts[{i}]") from None

    segments = []
    for i, spec in enumerate(doc.get("mpls_segments", [])):
        members = spec.get("routers") if isinstance(spec, dict) else None
        if not isinstance(members, list) or len(members) < 2:
            raise SchemaError("segment needs a list of at least two router ids", f"mpls_segments[{i}]")
        segments.append((tuple(str(m) for m in members), bool(spec.get("ttl_copy", True))))

    edits = []
    for i, spec in enumerate(doc.get("edits", [])):
        where = f"edits[{i}]"
        if not isinstance(spec, dict) or "at" not in spec or "router" not in spec:
            raise SchemaError("edit needs 'at' and 'router'", where)
        if str(spec["router"]) not in routers:
            raise DanglingNextHop(f"edit for unknown router {spec['router']!r}", f"{where}.router")
        routing = {}
        for prefix, value in spec.get("routing", {}).items():
            try:
                routing[IPv4Network(prefix)] = _hops(value, f"{where}.routing[{prefix}]")
            except ValueError as exc:
                raise SchemaError(str(exc), f"{where}.routing[{prefix}]") from None
        edits.append(Edit(
            at=float(spec["at"]),
            router=str(spec["router"]),
            routing=routing,
            set_default="default_route" in spec,
            default_route=_hops(spec.get("default_route"), f"{where}.default_route"),
            responds_icmp=spec.get("responds_icmp"),
        ))

    entry = str(doc.get("entry", next(iter(routers))))
    topo = SimTopology(
        routers=routers,
        entry=entry,
        hosts=hosts,
        mpls_segments=segments,
        entry_latency=_ms(doc.get("entry_latency_ms", 1), "entry_latency_ms"),
        default_latency=_ms(doc.get("default_latency_ms", 1), "default_latency_ms"),
        edits=sorted(edits, key=lambda e: e.at),
    )
    for edit in topo.edits:
        for hops in list(edit.routing.values()) + [edit.default_route]:
            for hop in hops or ():
                if hop not in routers:
                    raise DanglingNextHop(f"edit routes to unknown router {hop!r}", "edits")
    return topo


def load_topology(path) -> SimTopology:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise FileUnreadable(f"cannot read topology {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(exc.msg, f"{path}:line {exc.lineno} column {exc.colno}") from None
    return parse_topology(doc)
