"""IPv4 to AS mapping by longest-prefix match.

Input is a flat text file with one ``prefix,asn`` entry per line. Lines
starting with ``#`` are comments. The nested prefix set is flattened once into
disjoint address intervals, each carrying the AS of its most specific
covering prefix, so a lookup is a single binary search.
"""

from __future__ import annotations

import hashlib
from bisect import bisect_right
from dataclasses import dataclass, field
from ipaddress import IPv4Address, IPv4Network
from pathlib import Path

from .errors import EmptyTable, FileUnreadable


def _as_int(addr) -> int:
    if isinstance(addr, int):
        return addr
    return int(IPv4Address(addr))


@dataclass
class AsTable:
    entries: dict[IPv4Network, int]
    diagnostics: list[str] = field(default_factory=list)
    source_sha256: str | None = None

    def __post_init__(self):
        self._starts, self._ends, self._asns = _flatten(self.entries)

    def __len__(self):
        return len(self.entries)

    def lookup(self, addr) -> int | None:
        value = _as_int(addr)
        i = bisect_right(self._starts, value) - 1
        if i >= 0 and value <= self._ends[i]:
            return self._asns[i]
        return None


def _flatten(entries: dict[IPv4Network, int]):
    """Turn a laminar prefix family into sorted, disjoint (start, end, asn) runs."""
    prefixes = sorted(
        ((int(net.network_address), int(net.broadcast_address), asn, net.prefixlen)
         for net, asn in entries.items()),
        key=lambda p: (p[0], p[3]),
    )
    starts, ends, asns = [], [], []

    def emit(lo, hi, asn):
        if lo > hi:
            return
        if asns and asns[-1] == asn and ends[-1] + 1 == lo:
            ends[-1] = hi
            return
        starts.append(lo)
        ends.append(hi)
        asns.append(asn)

    stack: list[tuple[int, int, int]] = []
    cursor = 0
    for start, end, asn, _ in prefixes:
        while stack and stack[-1][1] < start:
            _, top_end, top_asn = stack.pop()
            emit(cursor, top_end, top_asn)
            cursor = top_end + 1
        if stack:
            emit(cursor, start - 1, stack[-1][2])
        cursor = start
        stack.append((start, end, asn))
    while stack:
        _, top_end, top_asn = stack.pop()
        emit(cursor, top_end, top_asn)
        cursor = top_end + 1
    return starts, ends, asns


def parse_table(lines, source_sha256=None) -> AsTable:
    entries: dict[IPv4Network, int] = {}
    diagnostics = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            prefix, asn_text = (part.strip() for part in line.split(","))
            net = IPv4Network(prefix, strict=False)
            asn = int(asn_text.upper().removeprefix("AS"))
            if asn < 0:
                raise ValueError("negative AS number")
        except ValueError as exc:
            diagnostics.append(f"line {lineno}: malformed entry {line!r} ({exc})")
            continue
        if net in entries:
            diagnostics.append(f"line {lineno}: duplicate prefix {net}, keeping AS{entries[net]}")
            continue
        entries[net] = asn
    if not entries:
        raise EmptyTable("AS table contains no valid prefix,asn entries")
    return AsTable(entries, diagnostics, source_sha256)


def load_table(path) -> AsTable:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FileUnreadable(f"cannot read AS table {path}: {exc}") from exc
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FileUnreadable(f"AS table {path} is not UTF-8: {exc}") from exc
    return parse_table(text.splitlines(), hashlib.sha256(data).hexdigest())


def lookup(table: AsTable, addr) -> int | None:
    return table.lookup(addr)
