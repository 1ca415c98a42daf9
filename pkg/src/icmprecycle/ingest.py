"""Classic pcap reading, ICMP capture filtering and dataset statistics."""

from __future__ import annotations

import csv
import io
import logging
import struct
from dataclasses import dataclass, field
from datetime import datetime
from ipaddress import IPv4Address, IPv4Network
from pathlib import Path
from typing import Iterable, Iterator

from .errors import FileUnreadable, MalformedCaptureHeader, TruncatedMessage
from .wire import (
    PROTO_ICMP,
    Classification,
    IcmpMessage,
    OuterMeta,
    classify,
    decode_quotation,
    is_reserved,
    parse_icmp,
    utc_from_timestamp,
)

log = logging.getLogger(__name__)

PCAP_MAGIC_USEC = 0xA1B2C3D4
PCAP_MAGIC_NSEC = 0xA1B23C4D
PCAPNG_MAGIC = 0x0A0D0D0A

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_IPV4 = 228
# DLT_RAW is 12 on most platforms and 14 on OpenBSD.
RAW_LINKTYPES = frozenset({LINKTYPE_RAW, LINKTYPE_IPV4, 12, 14})

ETHERTYPE_IPV4 = 0x0800
VLAN_ETHERTYPES = frozenset({0x8100, 0x88A8})

UNMAPPED_AS = "unmapped"


@dataclass(frozen=True)
class CaptureFilter:
    measurement_prefixes: tuple[IPv4Network, ...]
    exclude_outbound: bool = True

    def __post_init__(self):
        prefixes = tuple(IPv4Network(p) for p in self.measurement_prefixes)
        if not prefixes:
            raise ValueError("CaptureFilter needs at least one measurement prefix")
        object.__setattr__(self, "measurement_prefixes", prefixes)

    def is_measurement(self, addr: IPv4Address) -> bool:
        return any(addr in net for net in self.measurement_prefixes)

    def accepts(self, msg: IcmpMessage) -> bool:
        if not self.is_measurement(msg.outer_dst):
            return False
        return not (self.exclude_outbound and self.is_measurement(msg.outer_src))


@dataclass
class CaptureCounters:
    records: int = 0
    icmp_yielded: int = 0
    non_ipv4: int = 0
    non_icmp: int = 0
    filtered: int = 0
    malformed: int = 0


class CaptureReader:
    """Iterates over the ICMP messages of a classic pcap file.

    The global header is validated on construction so unreadable or
    malformed files fail before iteration starts. Per-record problems are
    tallied in ``counters`` and skipped.
    """

    def __init__(self, path, capture_filter: CaptureFilter):
        self.path = Path(path)
        self.filter = capture_filter
        self.counters = CaptureCounters()
        try:
            self._fh = open(self.path, "rb")
        except OSError as exc:
            raise FileUnreadable(f"cannot open capture {path}: {exc}") from exc
        try:
            header = self._fh.read(24)
            self._endian, self._nanos, self.linktype = _parse_global_header(header)
        except MalformedCaptureHeader:
            self._fh.close()
            raise

    def __iter__(self) -> Iterator[IcmpMessage]:
        record_fmt = self._endian + "IIII"
        try:
            while True:
                header = self._fh.read(16)
                if not header:
                    return
                if len(header) < 16:
                    log.warning("%s: truncated record header at end of file", self.path)
                    self.counters.malformed += 1
                    return
                ts_sec, ts_frac, incl_len, _orig_len = struct.unpack(record_fmt, header)
                data = self._fh.read(incl_len)
                self.counters.records += 1
                if len(data) < incl_len:
                    log.warning("%s: truncated final record", self.path)
                    self.counters.malformed += 1
                    return
                usec = ts_frac // 1000 if self._nanos else ts_frac
                if usec >= 1_000_000:
                    self.counters.malformed += 1
                    continue
                msg = self._decode_frame(data, utc_from_timestamp(ts_sec, usec))
                if msg is not None:
                    self.counters.icmp_yielded += 1
                    yield msg
        finally:
            self._fh.close()

    def _decode_frame(self, frame: bytes, when: datetime) -> IcmpMessage | None:
        if self.linktype == LINKTYPE_ETHERNET:
            packet = _strip_ethernet(frame)
        else:
            packet = frame
        if packet is None or len(packet) < 20 or packet[0] >> 4 != 4:
            self.counters.non_ipv4 += 1
            return None
        ihl = (packet[0] & 0x0F) * 4
        total_length, frag, ttl, proto = struct.unpack_from("!2xH2xHBB", packet)
        if ihl < 20 or len(packet) < ihl:
            self.counters.malformed += 1
            return None
        if proto != PROTO_ICMP:
            self.counters.non_icmp += 1
            return None
        if frag & 0x1FFF:
            # Non-first fragments carry no ICMP header.
            self.counters.malformed += 1
            return None
        end = min(len(packet), total_length) if total_length >= ihl else len(packet)
        meta = OuterMeta(when, IPv4Address(packet[12:16]), IPv4Address(packet[16:20]), ttl)
        try:
            msg = parse_icmp(packet[ihl:end], meta)
        except TruncatedMessage:
            self.counters.malformed += 1
            return None
        if not self.filter.accepts(msg):
            self.counters.filtered += 1
            return None
        return msg


def _parse_global_header(header: bytes):
    if len(header) < 24:
        raise MalformedCaptureHeader("capture shorter than the 24-byte pcap global header")
    (magic_le,) = struct.unpack("<I", header[:4])
    (magic_be,) = struct.unpack(">I", header[:4])
    if PCAPNG_MAGIC in (magic_le, magic_be):
        raise MalformedCaptureHeader("pcapng captures are not supported; convert to classic pcap")
    for endian, magic in (("<", magic_le), (">", magic_be)):
        if magic in (PCAP_MAGIC_USEC, PCAP_MAGIC_NSEC):
            _major, _minor, _zone, _sigfigs, _snaplen, linktype = struct.unpack(
                endian + "HHiIII", header[4:24]
            )
            if linktype != LINKTYPE_ETHERNET and linktype not in RAW_LINKTYPES:
                raise MalformedCaptureHeader(f"unsupported link type {linktype}")
            return endian, magic == PCAP_MAGIC_NSEC, linktype
    raise MalformedCaptureHeader(f"bad pcap magic 0x{magic_be:08x}")


def _strip_ethernet(frame: bytes) -> bytes | None:
    if len(frame) < 14:
        return None
    (ethertype,) = struct.unpack_from("!H", frame, 12)
    offset = 14
    if ethertype in VLAN_ETHERTYPES:
        if len(frame) < 18:
            return None
        (ethertype,) = struct.unpack_from("!H", frame, 16)
        offset = 18
    if ethertype != ETHERTYPE_IPV4:
        return None
    return frame[offset:]


def read_capture(path, capture_filter: CaptureFilter) -> CaptureReader:
    return CaptureReader(path, capture_filter)


def write_capture(path, records: Iterable[tuple[float, bytes]], linktype=LINKTYPE_ETHERNET,
                  snaplen=65535, byteorder="<", nanos=False) -> None:
    """Write ``(timestamp, frame)`` records as a classic pcap file."""
    magic = PCAP_MAGIC_NSEC if nanos else PCAP_MAGIC_USEC
    with open(path, "wb") as fh:
        fh.write(struct.pack(byteorder + "IHHiIII", magic, 2, 4, 0, 0, snaplen, linktype))
        for ts, frame in records:
            sec = int(ts)
            frac = round((ts - sec) * (1e9 if nanos else 1e6))
            captured = frame[:snaplen]
            fh.write(struct.pack(byteorder + "IIII", sec, frac, len(captured), len(frame)))
            fh.write(captured)


# --- statistics ---------------------------------------------------------------


@dataclass
class ClassStats:
    count: int = 0
    ips: set = field(default_factory=set)
    ases: set = field(default_factory=set)

    def merge(self, other: ClassStats):
        self.count += other.count
        self.ips |= other.ips
        self.ases |= other.ases


@dataclass
class DatasetStats:
    """Per-class and per-family message tallies.

    Unique IP and AS sets are kept so partial tallies from several workers
    can be merged associatively with :meth:`merge`.
    """

    classes: dict[tuple[str, str], ClassStats] = field(default_factory=dict)
    families: dict[str, ClassStats] = field(default_factory=dict)
    total: int = 0
    quoting_expected: int = 0
    undecodable_quotations: int = 0
    reserved_destination_quotations: int = 0
    checksum_invalid: int = 0

    def add(self, msg: IcmpMessage, as_lookup, cls: Classification | None = None, quotation=None):
        cls = cls or classify(msg.icmp_type, msg.icmp_code)
        asn = as_lookup.lookup(msg.outer_src) if as_lookup is not None else None
        asn = UNMAPPED_AS if asn is None else asn
        for bucket in (
            self.classes.setdefault(cls.key, ClassStats()),
            self.families.setdefault(cls.family.value, ClassStats()),
        ):
            bucket.count += 1
            bucket.ips.add(msg.outer_src)
            bucket.ases.add(asn)
        self.total += 1
        self.checksum_invalid += not msg.checksum_valid
        if cls.quoting_expected:
            self.quoting_expected += 1
            if quotation is None:
                quotation = decode_quotation(msg)
            if quotation is None:
                self.undecodable_quotations += 1
            elif is_reserved(quotation.dst):
                self.reserved_destination_quotations += 1

    def merge(self, other: DatasetStats) -> DatasetStats:
        for key, stats in other.classes.items():
            self.classes.setdefault(key, ClassStats()).merge(stats)
        for key, stats in other.families.items():
            self.families.setdefault(key, ClassStats()).merge(stats)
        self.total += other.total
        self.quoting_expected += other.quoting_expected
        self.undecodable_quotations += other.undecodable_quotations
        self.reserved_destination_quotations += other.reserved_destination_quotations
        self.checksum_invalid += other.checksum_invalid
        return self

    def rows(self):
        """Class rows ordered by descending count, then by name."""
        ordered = sorted(self.classes.items(), key=lambda kv: (-kv[1].count, kv[0]))
        return [
            {"family": fam, "code_name": code, "count": s.count,
             "uniq_ip": len(s.ips), "uniq_as": len(s.ases)}
            for (fam, code), s in ordered
        ]

    def family_rows(self):
        ordered = sorted(self.families.items(), key=lambda kv: (-kv[1].count, kv[0]))
        return [
            {"family": fam, "count": s.count, "uniq_ip": len(s.ips), "uniq_as": len(s.ases)}
            for fam, s in ordered
        ]

    def to_json(self) -> dict:
        return {
            "total": self.total,
            "quoting_expected": self.quoting_expected,
            "undecodable_quotations": self.undecodable_quotations,
            "reserved_destination_quotations": self.reserved_destination_quotations,
            "checksum_invalid": self.checksum_invalid,
            "classes": self.rows(),
            "families": self.family_rows(),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, ["family", "code_name", "count", "uniq_ip", "uniq_as"],
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows())
        return buf.getvalue()


def compute_stats(messages: Iterable[IcmpMessage], as_lookup) -> DatasetStats:
    stats = DatasetStats()
    for msg in messages:
        stats.add(msg, as_lookup)
    return stats
