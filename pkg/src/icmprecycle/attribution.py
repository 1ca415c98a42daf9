"""Tie ICMP messages to the scan campaign that triggered them."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass
from datetime import datetime, time
from enum import Enum
from ipaddress import IPv4Address, IPv4Network
from pathlib import Path
from typing import Iterable

from .errors import FileUnreadable, SchemaError
from .wire import PROTO_TCP, PROTO_UDP, Classification, IcmpMessage, QuotedPacket

WEEKDAYS = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")
UNATTRIBUTED = "unattributed"


class Transport(str, Enum):
    TCP = "TCP"
    UDP = "UDP"

    @property
    def protocol(self) -> int:
        return PROTO_TCP if self is Transport.TCP else PROTO_UDP


class Basis(str, Enum):
    QuotedHeader = "QuotedHeader"
    OuterHeader = "OuterHeader"
    NONE = "None"


@dataclass(frozen=True)
class WeeklyWindow:
    """A UTC weekday window ``[start_min, end_min)`` in minutes after midnight."""

    weekday: int
    start_min: int
    end_min: int

    def contains(self, when: datetime) -> bool:
        minute = when.hour * 60 + when.minute + when.second / 60 + when.microsecond / 6e7
        return when.weekday() == self.weekday and self.start_min <= minute < self.end_min

    def overlaps(self, other: WeeklyWindow) -> bool:
        return (self.weekday == other.weekday and self.start_min < other.end_min
                and other.start_min < self.end_min)


@dataclass(frozen=True)
class ScanCampaign:
    id: str
    name: str
    transport: Transport
    target_port: int
    source_addrs: tuple[IPv4Network, ...]
    schedule: tuple[WeeklyWindow, ...] = ()

    def __post_init__(self):
        if not self.source_addrs:
            raise ValueError(f"campaign {self.id}: empty source set")
        for i, a in enumerate(self.schedule):
            for b in self.schedule[i + 1:]:
                if a.overlaps(b):
                    raise ValueError(f"campaign {self.id}: overlapping schedule windows")

    def is_source(self, addr: IPv4Address) -> bool:
        return any(addr in net for net in self.source_addrs)

    def active_at(self, when: datetime) -> bool:
        return any(w.contains(when) for w in self.schedule)


@dataclass(frozen=True)
class AttributionResult:
    campaign_id: str | None
    basis: Basis
    dedup_key: tuple[IPv4Address, int] | None = None


def attribute(msg: IcmpMessage, quotation: QuotedPacket | None,
              campaigns: list[ScanCampaign]) -> AttributionResult:
    """Attribute one message, preferring quoted-header evidence.

    A unique quoted match wins regardless of time. Several quoted matches
    are narrowed by the weekly schedule; if that leaves one campaign it is
    still a quoted-header attribution. Otherwise the outer destination is
    matched against campaign sources active at capture time.
    """
    dedup = (quotation.src, quotation.quoted_byte_count) if quotation is not None else None

    if quotation is not None and quotation.dst_port is not None:
        quoted = [
            c for c in campaigns
            if c.transport.protocol == quotation.protocol
            and c.target_port == quotation.dst_port
            and c.is_source(quotation.src)
        ]
        if len(quoted) > 1:
            quoted = [c for c in quoted if c.active_at(msg.capture_time)]
        if len(quoted) == 1:
            return AttributionResult(quoted[0].id, Basis.QuotedHeader, dedup)

    outer = [c for c in campaigns if c.is_source(msg.outer_dst) and c.active_at(msg.capture_time)]
    if len(outer) == 1:
        return AttributionResult(outer[0].id, Basis.OuterHeader, dedup)
    return AttributionResult(None, Basis.NONE, dedup)


@dataclass
class CampaignHistogram:
    counts: dict[str, Counter]

    def merge(self, other: CampaignHistogram) -> CampaignHistogram:
        for cid, counter in other.counts.items():
            self.counts.setdefault(cid, Counter()).update(counter)
        return self

    def shares(self, campaign_id: str) -> dict[tuple[str, str], float]:
        counter = self.counts.get(campaign_id, Counter())
        total = sum(counter.values())
        return {k: v / total for k, v in counter.items()} if total else {}

    def top(self, campaign_id: str, k: int | None = None):
        """Rows ``(key, count, share)`` by descending count; share is of the full total."""
        counter = self.counts.get(campaign_id, Counter())
        total = sum(counter.values())
        rows = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))
        if k is not None:
            rows = rows[:k]
        return [(key, n, n / total) for key, n in rows]

    def to_json(self, k: int | None = None) -> dict:
        out = {}
        for cid in sorted(self.counts):
            out[cid] = {
                "total": sum(self.counts[cid].values()),
                "rows": [
                    {"family": fam, "code_name": code, "count": n, "share": round(share, 9)}
                    for (fam, code), n, share in self.top(cid, k)
                ],
            }
        return out

    def to_csv(self, k: int | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["campaign", "family", "code_name", "count", "share"])
        for cid in sorted(self.counts):
            for (fam, code), n, share in self.top(cid, k):
                writer.writerow([cid, fam, code, n, f"{share:.6f}"])
        return buf.getvalue()


def campaign_breakdown(results: Iterable[tuple[AttributionResult, Classification]]) -> CampaignHistogram:
    counts: dict[str, Counter] = {}
    for result, cls in results:
        cid = result.campaign_id or UNATTRIBUTED
        counts.setdefault(cid, Counter())[cls.key] += 1
    return CampaignHistogram(counts)


# --- registry -------------------------------------------------------------------


def _parse_clock(text: str, where: str) -> int:
    if text in ("24:00", "24:00:00"):
        return 24 * 60
    try:
        t = time.fromisoformat(text)
    except (TypeError, ValueError):
        raise SchemaError(f"bad time of day {text!r}", where) from None
    return t.hour * 60 + t.minute


@dataclass(frozen=True)
class Registry:
    """Deployment configuration: campaigns plus the measurement network layout."""

    campaigns: tuple[ScanCampaign, ...]
    measurement_prefixes: tuple[IPv4Network, ...]
    local_prefixes: tuple[IPv4Network, ...]


def parse_registry(doc: dict) -> Registry:
    if not isinstance(doc, dict):
        raise SchemaError("top level must be an object")
    try:
        measurement = tuple(IPv4Network(p) for p in doc.get("measurement_prefixes", []))
        local = tuple(IPv4Network(p) for p in doc.get("local_prefixes", measurement))
    except ValueError as exc:
        raise SchemaError(str(exc), "measurement_prefixes") from None
    campaigns = []
    for i, entry in enumerate(doc.get("campaigns", [])):
        where = f"campaigns[{i}]"
        try:
            schedule = []
            for j, w in enumerate(entry.get("schedule", [])):
                day = str(w["weekday"]).lower()[:3]
                if day not in WEEKDAYS:
                    raise SchemaError(f"unknown weekday {w['weekday']!r}", f"{where}.schedule[{j}]")
                schedule.append(WeeklyWindow(
                    WEEKDAYS.index(day),
                    _parse_clock(w.get("start", "00:00"), f"{where}.schedule[{j}].start"),
                    _parse_clock(w.get("end", "24:00"), f"{where}.schedule[{j}].end"),
                ))
            campaigns.append(ScanCampaign(
                id=str(entry["id"]),
                name=str(entry.get("name", entry["id"])),
                transport=Transport(str(entry["transport"]).upper()),
                target_port=int(entry["port"]),
                source_addrs=tuple(IPv4Network(p) for p in entry["sources"]),
                schedule=tuple(schedule),
            ))
        except KeyError as exc:
            raise SchemaError(f"missing field {exc.args[0]!r}", where) from None
        except ValueError as exc:
            raise SchemaError(str(exc), where) from None
    ids = [c.id for c in campaigns]
    if len(set(ids)) != len(ids):
        raise SchemaError("duplicate campaign id", "campaigns")
    return Registry(tuple(campaigns), measurement, local)


def load_registry(path) -> Registry:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(f"cannot read campaign registry {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(exc.msg, f"{path}:{exc.lineno}:{exc.colno}") from None
    return parse_registry(doc)
