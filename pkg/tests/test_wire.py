import random
import struct
from ipaddress import IPv4Address

import pytest
from _packets import T0, icmp_bytes, message, oc_checksum, quote

from icmprecycle.errors import TruncatedMessage
from icmprecycle.wire import (
    Family,
    OuterMeta,
    classify,
    decode_ipv4,
    decode_quotation,
    internet_checksum,
    is_reserved,
    parse_icmp,
)

META = OuterMeta(T0, IPv4Address("198.51.100.1"), IPv4Address("192.0.2.10"))


def test_valid_echo_request_checksum():
    msg = parse_icmp(bytes.fromhex("0800F7FF00000000"), META)
    assert (msg.icmp_type, msg.icmp_code, msg.checksum_valid) == (8, 0, True)


def test_zeroed_checksum_is_invalid():
    raw = bytes.fromhex("03030000") + b"\x00" * 4 + quote("192.0.2.10", "203.0.113.5")
    assert parse_icmp(raw, META).checksum_valid is False


def test_truncated():
    with pytest.raises(TruncatedMessage):
        parse_icmp(b"\x08" * 7, META)


@pytest.mark.parametrize("n", range(8, 40))
def test_roundtrip_lengths(n):
    raw = bytes(random.Random(n).randrange(256) for _ in range(n))
    assert parse_icmp(raw, META).to_bytes() == raw


def test_checksum_against_reference():
    rng = random.Random(1)
    for _ in range(500):
        data = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 64)))
        assert internet_checksum(data) == oc_checksum(data)


def test_odd_length_message_with_fixed_checksum_is_valid():
    raw = icmp_bytes(0, 0, b"\x00\x01\x00\x02", b"abc")
    assert len(raw) % 2 == 1
    assert parse_icmp(raw, META).checksum_valid


def test_outer_meta_carried():
    msg = parse_icmp(icmp_bytes(11, 0), OuterMeta(T0, IPv4Address("1.1.1.1"), IPv4Address("2.2.2.2"), 7))
    assert (msg.outer_src, msg.outer_dst, msg.outer_ttl, msg.capture_time) == (
        IPv4Address("1.1.1.1"), IPv4Address("2.2.2.2"), 7, T0)


@pytest.mark.parametrize("pair,family,code", [
    ((3, 3), Family.DestinationUnreachable, "Port"),
    ((11, 0), Family.TimeExceeded, "TTLExceeded"),
    ((4, 0), Family.SourceQuench, "NoCode"),
    ((240, 0), Family.Other, "NonStandard"),
    ((3, 42), Family.DestinationUnreachable, "NonStandard"),
    ((8, 9), Family.EchoRequest, "NonStandard"),
])
def test_classify_examples(pair, family, code):
    cls = classify(*pair)
    assert (cls.family, cls.code_name) == (family, code)


def test_source_quench_deprecated():
    assert classify(4, 0).deprecated
    assert not classify(3, 3).deprecated


def test_quoting_expected():
    for t in (3, 4, 5, 11, 12):
        assert classify(t, 0).quoting_expected
    for t in (0, 8, 13, 17, 240):
        assert not classify(t, 0).quoting_expected


def test_quote_28_bytes_tcp_ports_only():
    msg = message(3, 3, payload=quote("192.0.2.10", "203.0.113.5", 6, 4000, 80, size=28))
    q = decode_quotation(msg)
    assert (q.src_port, q.dst_port, q.full_transport_header) == (4000, 80, False)
    assert q.quoted_byte_count == 28


def test_quote_28_bytes_udp_is_complete():
    # eight bytes are the whole UDP header
    q = decode_quotation(message(3, 3, payload=quote("192.0.2.20", "203.0.113.5", 17, 4000, 443, size=28)))
    assert (q.src_port, q.dst_port, q.full_transport_header) == (4000, 443, True)
    q = decode_ipv4(quote("192.0.2.20", "203.0.113.5", 17, 4000, 443, size=27))
    assert not q.full_transport_header


def test_quote_tcp_full_header():
    q = decode_quotation(message(3, 3, payload=quote("192.0.2.10", "203.0.113.5", 6, 4000, 80, size=40)))
    assert q.full_transport_header and q.dst_port == 80 and q.protocol == 6


def test_echo_request_has_no_quotation():
    assert decode_quotation(message(8, 0, payload=quote("192.0.2.10", "203.0.113.5"))) is None


def test_quote_with_ip_options():
    data = quote("192.0.2.10", "203.0.113.5", 17, 1234, 53, size=32, options=b"\x01" * 12)
    q = decode_ipv4(data)
    assert q.header_length == 32 and q.src_port is None
    q = decode_ipv4(quote("192.0.2.10", "203.0.113.5", 17, 1234, 53, size=36, options=b"\x01" * 12))
    assert (q.src_port, q.dst_port) == (1234, 53)


def test_icmp_quote_has_no_ports():
    q = decode_ipv4(quote("192.0.2.10", "203.0.113.5", 1, size=28))
    assert q.src_port is None and not q.full_transport_header


@pytest.mark.parametrize("data", [
    b"",
    b"\x45" + b"\x00" * 18,
    b"\x65" + b"\x00" * 27,  # version 6
    b"\x44" + b"\x00" * 27,  # IHL 16 bytes
    b"\x4f" + b"\x00" * 27,  # IHL 60 > available
])
def test_bad_quotations(data):
    assert decode_ipv4(data) is None


def test_quoted_fields():
    data = quote("192.0.2.10", "203.0.113.5", 6, 1, 2, ttl=3, size=28)
    data = data[:6] + struct.pack("!H", 0x4000) + data[8:]
    q = decode_ipv4(data)
    assert q.ttl == 3 and q.dont_fragment and q.dst == IPv4Address("203.0.113.5")


@pytest.mark.parametrize("addr,expected", [
    ("192.168.0.5", True), ("10.1.2.3", True), ("8.8.8.8", False), ("172.31.255.255", True),
    ("172.32.0.0", False), ("127.0.0.1", True), ("224.0.0.1", True), ("255.255.255.255", True),
])
def test_is_reserved(addr, expected):
    assert is_reserved(addr) is expected


def test_fuzz_never_crashes():
    rng = random.Random(3)
    for _ in range(2000):
        raw = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 80)))
        try:
            msg = parse_icmp(raw, META)
        except TruncatedMessage:
            assert len(raw) < 8
            continue
        decode_quotation(msg)
        classify(msg.icmp_type, msg.icmp_code)
