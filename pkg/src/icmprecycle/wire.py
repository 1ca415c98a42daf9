"""ICMP wire model: parsing, checksums, the type/code taxonomy and quoted-packet decoding."""

from __future__ import annotations

import struct
import sys
from array import array
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from ipaddress import IPv4Address, IPv4Network

from .errors import TruncatedMessage

ICMP_HEADER_LEN = 8
IPV4_MIN_HEADER_LEN = 20

PROTO_ICMP = 1
PROTO_TCP = 6
PROTO_UDP = 17

# Transport protocols whose first four bytes are source and destination ports.
PORT_PROTOCOLS = frozenset({PROTO_TCP, PROTO_UDP, 33, 132, 136})
FULL_HEADER_LEN = {PROTO_TCP: 20, PROTO_UDP: 8}


def internet_checksum_sum(data: bytes) -> int:
    """One's-complement sum of 16-bit big-endian words, odd byte zero-padded."""
    if len(data) % 2:
        data = bytes(data) + b"\x00"
    words = array("H", data)
    total = sum(words)
    while total > 0xFFFF:
        total = (total & 0xFFFF) + (total >> 16)
    if sys.byteorder == "little":
        total = ((total & 0xFF) << 8) | (total >> 8)
    return total


def internet_checksum(data: bytes) -> int:
    """Checksum value to place in a header whose checksum field is zeroed."""
    return ~internet_checksum_sum(data) & 0xFFFF


@dataclass(frozen=True)
class OuterMeta:
    capture_time: datetime
    src: IPv4Address
    dst: IPv4Address
    ttl: int = 64


@dataclass(frozen=True)
class IcmpMessage:
    capture_time: datetime
    outer_src: IPv4Address
    outer_dst: IPv4Address
    outer_ttl: int
    icmp_type: int
    icmp_code: int
    checksum_field: int
    checksum_valid: bool
    rest_of_header: bytes
    payload: bytes = field(repr=False)

    def to_bytes(self) -> bytes:
        return (
            struct.pack("!BBH", self.icmp_type, self.icmp_code, self.checksum_field)
            + self.rest_of_header
            + self.payload
        )


def parse_icmp(raw: bytes, meta: OuterMeta) -> IcmpMessage:
    if len(raw) < ICMP_HEADER_LEN:
        raise TruncatedMessage(f"ICMP message of {len(raw)} bytes, need at least {ICMP_HEADER_LEN}")
    raw = bytes(raw)
    icmp_type, icmp_code, checksum = struct.unpack_from("!BBH", raw)
    return IcmpMessage(
        capture_time=meta.capture_time,
        outer_src=meta.src,
        outer_dst=meta.dst,
        outer_ttl=meta.ttl,
        icmp_type=icmp_type,
        icmp_code=icmp_code,
        checksum_field=checksum,
        checksum_valid=internet_checksum_sum(raw) == 0xFFFF,
        rest_of_header=raw[4:8],
        payload=raw[8:],
    )


# --- taxonomy -------------------------------------------------------------


class Family(str, Enum):
    DestinationUnreachable = "DestinationUnreachable"
    TimeExceeded = "TimeExceeded"
    Redirect = "Redirect"
    EchoRequest = "EchoRequest"
    EchoReply = "EchoReply"
    SourceQuench = "SourceQuench"
    TimestampRequest = "TimestampRequest"
    ParameterProblem = "ParameterProblem"
    AddressMaskRequest = "AddressMaskRequest"
    Other = "Other"

    def __str__(self) -> str:
        return self.value


NON_STANDARD = "NonStandard"
NO_CODE = "NoCode"

_FAMILY_BY_TYPE = {
    0: Family.EchoReply,
    3: Family.DestinationUnreachable,
    4: Family.SourceQuench,
    5: Family.Redirect,
    8: Family.EchoRequest,
    11: Family.TimeExceeded,
    12: Family.ParameterProblem,
    13: Family.TimestampRequest,
    17: Family.AddressMaskRequest,
}

_CODE_NAMES = {
    0: {0: NO_CODE},
    3: {
        0: "Net",
        1: "Host",
        2: "Protocol",
        3: "Port",
        4: "FragNeeded",
        5: "SourceRouteFailed",
        6: "NetUnknown",
        7: "HostUnknown",
        8: "SourceIsolated",
        9: "NetProhibited",
        10: "HostProhibited",
        11: "NetTOS",
        12: "HostTOS",
        13: "CommProhibited",
        14: "HostPrecedenceViolation",
        15: "PrecedenceCutoff",
    },
    4: {0: NO_CODE},
    5: {0: "NetworkRedirect", 1: "HostRedirect", 2: "NetTOSRedirect", 3: "HostTOSRedirect"},
    8: {0: NO_CODE},
    11: {0: "TTLExceeded", 1: "FragReassembly"},
    12: {0: "PointerIndicatesError", 1: "MissingOption", 2: "BadLength"},
    13: {0: NO_CODE},
    17: {0: NO_CODE},
}

_QUOTING_FAMILIES = frozenset(
    {
        Family.DestinationUnreachable,
        Family.TimeExceeded,
        Family.Redirect,
        Family.SourceQuench,
        Family.ParameterProblem,
    }
)


@dataclass(frozen=True)
class Classification:
    family: Family
    code_name: str
    deprecated: bool
    quoting_expected: bool

    @property
    def key(self) -> tuple[str, str]:
        return (self.family.value, self.code_name)


def _build_classifications() -> dict[tuple[int, int], Classification]:
    table = {}
    for icmp_type, names in _CODE_NAMES.items():
        family = _FAMILY_BY_TYPE[icmp_type]
        for code, name in names.items():
            table[icmp_type, code] = Classification(
                family, name, family is Family.SourceQuench, family in _QUOTING_FAMILIES
            )
    return table


_CLASSIFICATIONS = _build_classifications()
_OTHER = Classification(Family.Other, NON_STANDARD, False, False)


def classify(icmp_type: int, icmp_code: int) -> Classification:
    """Map a (type, code) pair to its classification; total over all integers."""
    found = _CLASSIFICATIONS.get((icmp_type, icmp_code))
    if found is not None:
        return found
    family = _FAMILY_BY_TYPE.get(icmp_type)
    if family is None:
        return _OTHER
    return Classification(
        family, NON_STANDARD, family is Family.SourceQuench, family in _QUOTING_FAMILIES
    )


# --- quoted packets ---------------------------------------------------------


@dataclass(frozen=True)
class QuotedPacket:
    src: IPv4Address
    dst: IPv4Address
    ttl: int
    protocol: int
    ip_id: int
    dont_fragment: bool
    total_length: int
    src_port: int | None
    dst_port: int | None
    full_transport_header: bool
    quoted_byte_count: int
    header_length: int = IPV4_MIN_HEADER_LEN

    @property
    def transport_bytes(self) -> int:
        return self.quoted_byte_count - self.header_length


def decode_ipv4(data: bytes) -> QuotedPacket | None:
    """Decode an IPv4 header plus whatever transport prefix follows it.

    Returns None for anything that is not a consistent IPv4 header.
    IP options are skipped via the header-length field.
    """
    if len(data) < IPV4_MIN_HEADER_LEN:
        return None
    version_ihl = data[0]
    if version_ihl >> 4 != 4:
        return None
    ihl = (version_ihl & 0x0F) * 4
    if ihl < IPV4_MIN_HEADER_LEN or ihl > len(data):
        return None
    total_length, ip_id, flags_frag, ttl, protocol = struct.unpack_from("!2xHHHBB", data)
    if total_length and total_length < ihl:
        return None
    src = IPv4Address(data[12:16])
    dst = IPv4Address(data[16:20])
    available = len(data) - ihl
    src_port = dst_port = None
    if protocol in PORT_PROTOCOLS and available >= 4:
        src_port, dst_port = struct.unpack_from("!HH", data, ihl)
    needed = FULL_HEADER_LEN.get(protocol)
    return QuotedPacket(
        src=src,
        dst=dst,
        ttl=ttl,
        protocol=protocol,
        ip_id=ip_id,
        dont_fragment=bool(flags_frag & 0x4000),
        total_length=total_length,
        src_port=src_port,
        dst_port=dst_port,
        full_transport_header=needed is not None and available >= needed,
        quoted_byte_count=len(data),
        header_length=ihl,
    )


def decode_quotation(msg: IcmpMessage) -> QuotedPacket | None:
    if not classify(msg.icmp_type, msg.icmp_code).quoting_expected:
        return None
    return decode_ipv4(msg.payload)


# --- reserved space ---------------------------------------------------------

RESERVED_NETWORKS = tuple(
    IPv4Network(p)
    for p in (
        "0.0.0.0/8",  # "this" network
        "10.0.0.0/8",  # RFC1918
        "127.0.0.0/8",  # loopback
        "169.254.0.0/16",  # link-local
        "172.16.0.0/12",  # RFC1918
        "192.168.0.0/16",  # RFC1918
        "224.0.0.0/4",  # multicast
        "240.0.0.0/4",  # class E, includes limited broadcast
    )
)


def is_reserved(addr: IPv4Address | str) -> bool:
    addr = IPv4Address(addr)
    return any(addr in net for net in RESERVED_NETWORKS)


def utc_from_timestamp(sec: int, usec: int = 0) -> datetime:
    return datetime.fromtimestamp(sec, tz=timezone.utc).replace(microsecond=usec)
