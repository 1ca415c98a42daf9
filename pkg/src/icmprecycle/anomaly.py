"""Detectors for misconfigured or suspicious ICMP behaviour."""

from __future__ import annotations

import csv
import io
import struct
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from ipaddress import IPv4Address, IPv4Network
from typing import Iterable, Iterator

from .errors import NotARedirect, NotSourceQuench
from .wire import (
    PROTO_TCP,
    PROTO_UDP,
    Classification,
    Family,
    IcmpMessage,
    QuotedPacket,
    classify,
    decode_ipv4,
    is_reserved,
)


class RedirectViolation(str, Enum):
    CrossNetworkSource = "CrossNetworkSource"
    NetworkRedirectType = "NetworkRedirectType"
    PrivateGateway = "PrivateGateway"
    PrivateDestination = "PrivateDestination"


@dataclass(frozen=True)
class RedirectVerdict:
    violations: frozenset[RedirectViolation]
    redirected_gateway: IPv4Address
    affected_destination: IPv4Address
    origin: IPv4Address

    def to_json(self):
        return {
            "kind": "RedirectVerdict",
            "origin": str(self.origin),
            "redirected_gateway": str(self.redirected_gateway),
            "affected_destination": str(self.affected_destination),
            "violations": sorted(v.value for v in self.violations),
        }


def _containing(prefixes, addr):
    return next((net for net in prefixes if addr in net), None)


def validate_redirect(msg: IcmpMessage, quotation: QuotedPacket,
                      local_prefixes: Iterable[IPv4Network]) -> RedirectVerdict:
    """Check the receiver-observable redirect rules.

    Interface and source-route conditions cannot be seen from the
    receiving side and are never asserted. The subnet condition is checked
    by requiring the quoted source to be local and the issuing router to
    sit on that same local prefix.
    """
    if msg.icmp_type != 5:
        raise NotARedirect(f"ICMP type {msg.icmp_type} is not a redirect")
    local_prefixes = [IPv4Network(p) for p in local_prefixes]
    gateway = IPv4Address(msg.rest_of_header)
    violations = set()
    source_net = _containing(local_prefixes, quotation.src)
    if source_net is None or msg.outer_src not in source_net:
        violations.add(RedirectViolation.CrossNetworkSource)
    if msg.icmp_code == 0:
        violations.add(RedirectViolation.NetworkRedirectType)
    if is_reserved(gateway):
        violations.add(RedirectViolation.PrivateGateway)
    if is_reserved(quotation.dst):
        violations.add(RedirectViolation.PrivateDestination)
    return RedirectVerdict(frozenset(violations), gateway, quotation.dst, msg.outer_src)


@dataclass(frozen=True)
class SourceQuenchFinding:
    origin: IPv4Address
    quoted_destination: IPv4Address
    self_generated: bool
    origin_as: int | None
    destination_as: int | None
    cross_operator: bool

    def to_json(self):
        return {
            "kind": "SourceQuenchFinding",
            "origin": str(self.origin),
            "quoted_destination": str(self.quoted_destination),
            "self_generated": self.self_generated,
            "origin_as": self.origin_as,
            "destination_as": self.destination_as,
            "cross_operator": self.cross_operator,
        }


def audit_source_quench(msg: IcmpMessage, quotation: QuotedPacket, as_lookup) -> SourceQuenchFinding:
    if classify(msg.icmp_type, msg.icmp_code).family is not Family.SourceQuench:
        raise NotSourceQuench(f"ICMP type {msg.icmp_type} is not a source quench")
    self_generated = msg.outer_src == quotation.dst
    origin_as = as_lookup.lookup(msg.outer_src) if as_lookup is not None else None
    dest_as = as_lookup.lookup(quotation.dst) if as_lookup is not None else None
    cross = (not self_generated and origin_as is not None and dest_as is not None
             and origin_as != dest_as)
    return SourceQuenchFinding(msg.outer_src, quotation.dst, self_generated, origin_as, dest_as, cross)


class EchoAnomalyKind(str, Enum):
    NonStandardRequestCode = "NonStandardRequestCode"
    OrphanReply = "OrphanReply"
    SpoofHint = "SpoofHint"


@dataclass(frozen=True)
class EchoAnomaly:
    kind: EchoAnomalyKind
    source: IPv4Address
    details: str

    def to_json(self):
        return {"kind": self.kind.value, "source": str(self.source), "details": self.details}


def echo_key(msg: IcmpMessage) -> tuple[IPv4Address, int, int]:
    """(peer, identifier, sequence) of an echo message."""
    ident, seq = struct.unpack("!HH", msg.rest_of_header)
    return (msg.outer_src, ident, seq)


def detect_echo_anomalies(messages: Iterable[IcmpMessage], sent_requests=frozenset(),
                          measurement_prefixes: Iterable[IPv4Network] = ()) -> Iterator[EchoAnomaly]:
    """Flag unusual echo traffic.

    ``sent_requests`` holds ``(peer, identifier, sequence)`` triples of echo
    requests we sent; a reply matching one is not an orphan.
    """
    measurement = [IPv4Network(p) for p in measurement_prefixes]
    for msg in messages:
        if msg.icmp_type == 8 and msg.icmp_code != 0:
            yield EchoAnomaly(EchoAnomalyKind.NonStandardRequestCode, msg.outer_src,
                              f"echo request with code {msg.icmp_code}")
        elif msg.icmp_type == 0 and echo_key(msg) not in sent_requests:
            yield EchoAnomaly(EchoAnomalyKind.OrphanReply, msg.outer_src,
                              f"unsolicited echo reply with code {msg.icmp_code} to {msg.outer_dst}")
            inner = decode_ipv4(msg.payload)
            if inner is not None and _carries_transport_payload(inner) and \
                    _containing(measurement, inner.dst) is not None:
                yield EchoAnomaly(
                    EchoAnomalyKind.SpoofHint, msg.outer_src,
                    f"reply embeds protocol {inner.protocol} packet {inner.src}:{inner.src_port}"
                    f" -> {inner.dst}:{inner.dst_port} (heuristic)",
                )


def _carries_transport_payload(inner: QuotedPacket) -> bool:
    header = {PROTO_UDP: 8, PROTO_TCP: 20}.get(inner.protocol)
    return header is not None and inner.transport_bytes > header


@dataclass(frozen=True)
class NatLeak:
    source: IPv4Address
    quoted_destination: IPv4Address

    def to_json(self):
        return {"kind": "NatLeak", "source": str(self.source),
                "quoted_destination": str(self.quoted_destination)}


# --- quoted TTLs ------------------------------------------------------------------


class TtlCategory(str, Enum):
    Expected = "Expected"
    MplsHint = "MplsHint"
    MidRange = "MidRange"
    RewriteHint = "RewriteHint"


def ttl_category(ttl: int) -> TtlCategory:
    if not 0 <= ttl <= 255:
        raise ValueError(f"TTL out of range: {ttl}")
    if ttl <= 1:
        return TtlCategory.Expected
    if ttl <= 6:
        return TtlCategory.MplsHint
    if ttl < 200:
        return TtlCategory.MidRange
    return TtlCategory.RewriteHint


@dataclass(frozen=True)
class TtlObservation:
    router: IPv4Address
    quoted_ttl: int

    @property
    def category(self) -> TtlCategory:
        return ttl_category(self.quoted_ttl)


@dataclass
class TtlHistogram:
    pairs: set[tuple[IPv4Address, int]] = field(default_factory=set)

    def add(self, msg: IcmpMessage, quotation: QuotedPacket):
        if (msg.icmp_type, msg.icmp_code) == (11, 0) and quotation is not None:
            self.pairs.add((msg.outer_src, quotation.ttl))

    def merge(self, other: TtlHistogram) -> TtlHistogram:
        self.pairs |= other.pairs
        return self

    def counts(self) -> dict[TtlCategory, int]:
        c = Counter(ttl_category(ttl) for _, ttl in self.pairs)
        return {cat: c.get(cat, 0) for cat in TtlCategory}

    def fractions(self) -> dict[TtlCategory, float]:
        n = len(self.pairs)
        return {cat: (v / n if n else 0.0) for cat, v in self.counts().items()}

    def to_json(self):
        values = Counter(ttl for _, ttl in self.pairs)
        return {
            "unique_router_ttl_pairs": len(self.pairs),
            "categories": {
                cat.value: {"count": n, "fraction": round(self.fractions()[cat], 9)}
                for cat, n in self.counts().items()
            },
            "ttl_values": {str(t): values[t] for t in sorted(values)},
            "note": "MplsHint and RewriteHint are indications, not proof",
        }

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category", "count", "fraction"])
        fr = self.fractions()
        for cat, n in self.counts().items():
            w.writerow([cat.value, n, f"{fr[cat]:.6f}"])
        return buf.getvalue()


def analyze_quoted_ttls(pairs: Iterable[tuple[IcmpMessage, QuotedPacket]]) -> TtlHistogram:
    hist = TtlHistogram()
    for msg, quotation in pairs:
        hist.add(msg, quotation)
    return hist


# --- unreachability ------------------------------------------------------------------

UNREACHABILITY_FAMILIES = (Family.DestinationUnreachable, Family.TimeExceeded)


@dataclass
class UnreachabilityRollup:
    counts: Counter = field(default_factory=Counter)
    senders: dict[tuple[str, str], set] = field(default_factory=dict)
    port_total: int = 0
    port_end_host: int = 0
    frag_needed_mtus: Counter = field(default_factory=Counter)

    def add(self, msg: IcmpMessage, cls: Classification, quotation: QuotedPacket | None):
        if cls.family not in UNREACHABILITY_FAMILIES:
            return
        self.counts[cls.key] += 1
        self.senders.setdefault(cls.key, set()).add(msg.outer_src)
        if cls.key == (Family.DestinationUnreachable.value, "Port") and quotation is not None:
            self.port_total += 1
            if msg.outer_src == quotation.dst:
                self.port_end_host += 1
        if cls.key == (Family.DestinationUnreachable.value, "FragNeeded"):
            (mtu,) = struct.unpack("!H", msg.rest_of_header[2:4])
            self.frag_needed_mtus[mtu] += 1

    def merge(self, other: UnreachabilityRollup) -> UnreachabilityRollup:
        self.counts.update(other.counts)
        for key, ips in other.senders.items():
            self.senders.setdefault(key, set()).update(ips)
        self.port_total += other.port_total
        self.port_end_host += other.port_end_host
        self.frag_needed_mtus.update(other.frag_needed_mtus)
        return self

    @property
    def end_host_fraction(self) -> float | None:
        return self.port_end_host / self.port_total if self.port_total else None

    def rows(self):
        ordered = sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return [
            {"family": fam, "code_name": code, "count": n, "uniq_src": len(self.senders[fam, code])}
            for (fam, code), n in ordered
        ]

    def to_json(self):
        frac = self.end_host_fraction
        return {
            "rows": self.rows(),
            "port_unreachable_with_quote": self.port_total,
            "port_unreachable_end_host": self.port_end_host,
            "port_unreachable_end_host_fraction": None if frac is None else round(frac, 9),
            "frag_needed_next_hop_mtu": {str(m): n for m, n in sorted(self.frag_needed_mtus.items())},
        }

    def to_csv(self):
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["family", "code_name", "count", "uniq_src"], lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows())
        return buf.getvalue()


def unreachability_rollup(results: Iterable[tuple[IcmpMessage, Classification, QuotedPacket | None]]
                          ) -> UnreachabilityRollup:
    rollup = UnreachabilityRollup()
    for msg, cls, quotation in results:
        rollup.add(msg, cls, quotation)
    return rollup
