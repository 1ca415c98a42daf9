"""Traceroute seeding from TTL-exceeded quotations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from ipaddress import IPv4Address, IPv4Network
from typing import Iterable, Iterator

from .classify import slash24

DEFAULT_WINDOW = 30 * 60.0


@dataclass(frozen=True)
class SeedTarget:
    target: IPv4Address
    slash24: IPv4Network
    window_start: float
    seen_at: float


def schedule_seeds(events: Iterable[tuple[float, IPv4Address]], window: float = DEFAULT_WINDOW
                   ) -> Iterator[SeedTarget]:
    """Emit the first destination per /24 per tumbling window.

    Windows for a /24 form a fixed grid anchored at that /24's first
    sighting, so events arriving out of order are still deduplicated.
    """
    anchors: dict[IPv4Network, float] = {}
    emitted: dict[IPv4Network, set[int]] = {}
    for when, dst in events:
        dst = IPv4Address(dst)
        net = slash24(dst)
        anchor = anchors.setdefault(net, when)
        index = math.floor((when - anchor) / window)
        slots = emitted.setdefault(net, set())
        if index in slots:
            continue
        slots.add(index)
        yield SeedTarget(dst, net, anchor + index * window, when)
