"""Degree-threshold loop classification and AS reduction."""

from __future__ import annotations

from dataclasses import dataclass
from ipaddress import IPv4Address, IPv4Network

from .graph import Label, LabelGraph

DEFAULT_DEGREE_THRESHOLD = 5
UNKNOWN_AS = "unknown"


@dataclass(frozen=True)
class LoopCore:
    cycle: tuple[Label, ...]  # closed: first == last
    max_degree_node: Label
    max_degree: int


def classify_loop(graph: LabelGraph, cycles, degree_threshold: int = DEFAULT_DEGREE_THRESHOLD
                  ) -> LoopCore | None:
    """Return the cycle whose busiest node has the highest multigraph degree.

    A loop is reported only if that degree exceeds ``degree_threshold``.
    Ties keep the earliest cycle in enumeration order, and within a cycle
    the smallest label.
    """
    degrees = graph.degrees()
    best = None
    for cycle in cycles:
        node = min(cycle[:-1], key=lambda label: (-degrees[label], label))
        if best is None or degrees[node] > best.max_degree:
            best = LoopCore(tuple(cycle), node, degrees[node])
    if best is None or best.max_degree <= degree_threshold:
        return None
    return best


@dataclass(frozen=True)
class LoopFinding:
    target: IPv4Address
    target_slash24: IPv4Network
    cycle: tuple[Label, ...]
    max_degree_node: Label
    max_degree: int
    fully_identified: bool
    as_cycle: tuple
    cross_as: bool
    detected_at: float

    @property
    def members(self) -> frozenset[Label]:
        return frozenset(self.cycle[:-1])

    def to_json(self) -> dict:
        return {
            "target": str(self.target),
            "target_slash24": str(self.target_slash24),
            "cycle": [str(label) for label in self.cycle],
            "max_degree_node": str(self.max_degree_node),
            "max_degree": self.max_degree,
            "fully_identified": self.fully_identified,
            "as_cycle": list(self.as_cycle),
            "cross_as": self.cross_as,
            "detected_at": round(self.detected_at, 6),
        }

    @classmethod
    def from_json(cls, doc: dict) -> LoopFinding:
        return cls(
            target=IPv4Address(doc["target"]),
            target_slash24=IPv4Network(doc["target_slash24"]),
            cycle=tuple(Label.parse(x) for x in doc["cycle"]),
            max_degree_node=Label.parse(doc["max_degree_node"]),
            max_degree=int(doc["max_degree"]),
            fully_identified=bool(doc["fully_identified"]),
            as_cycle=tuple(doc["as_cycle"]),
            cross_as=bool(doc["cross_as"]),
            detected_at=float(doc["detected_at"]),
        )


def slash24(addr) -> IPv4Network:
    return IPv4Network(f"{IPv4Address(addr)}/24", strict=False)


def as_reduce(core: LoopCore, as_lookup, target, detected_at: float = 0.0) -> LoopFinding:
    """Replace cycle members by their AS, collapsing consecutive repeats (cyclically)."""
    nodes = core.cycle[:-1]
    mapped = []
    for label in nodes:
        asn = None if label.silent or as_lookup is None else as_lookup.lookup(label.value)
        mapped.append(UNKNOWN_AS if asn is None else asn)
    collapsed = [a for i, a in enumerate(mapped) if i == 0 or a != mapped[i - 1]]
    while len(collapsed) > 1 and collapsed[0] == collapsed[-1]:
        collapsed.pop()
    distinct = {a for a in collapsed if a != UNKNOWN_AS}
    target = IPv4Address(target)
    return LoopFinding(
        target=target,
        target_slash24=slash24(target),
        cycle=core.cycle,
        max_degree_node=core.max_degree_node,
        max_degree=core.max_degree,
        fully_identified=not any(label.silent for label in nodes),
        as_cycle=tuple(collapsed),
        cross_as=len(distinct) >= 2,
        detected_at=detected_at,
    )
