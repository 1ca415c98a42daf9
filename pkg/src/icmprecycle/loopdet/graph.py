"""Hop labels, labelled traceroute paths and the label multigraph."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from ipaddress import IPv4Address


@dataclass(frozen=True, order=True)
class Label:
    """A traceroute hop: an answering address, or a unique token for a silent hop.

    Ordering puts responders before silent hops, each by numeric value.
    """

    silent: bool
    value: int

    @classmethod
    def responder(cls, addr) -> Label:
        return cls(False, int(IPv4Address(addr)))

    @classmethod
    def silent_hop(cls, token: int) -> Label:
        return cls(True, token)

    @property
    def address(self) -> IPv4Address | None:
        return None if self.silent else IPv4Address(self.value)

    def __str__(self):
        return f"*{self.value}" if self.silent else str(IPv4Address(self.value))

    @classmethod
    def parse(cls, text: str) -> Label:
        if text.startswith("*"):
            return cls.silent_hop(int(text[1:]))
        return cls.responder(text)


@dataclass
class LabelPath:
    target: IPv4Address
    hops: list[Label] = field(default_factory=list)
    probe_times: list[float] = field(default_factory=list)
    reached: bool = False

    def gaps(self) -> list[float]:
        return [b - a for a, b in zip(self.probe_times, self.probe_times[1:])]


@dataclass
class LabelGraph:
    nodes: list[Label]
    edges: Counter  # (u, v) -> multiplicity

    def successors(self) -> dict[Label, set[Label]]:
        """Adjacency of the simple projection."""
        adj = {n: set() for n in self.nodes}
        for u, v in self.edges:
            adj[u].add(v)
        return adj

    def degree(self, node: Label) -> int:
        """Total multigraph degree: in-multiplicity plus out-multiplicity."""
        return sum(m * ((u == node) + (v == node)) for (u, v), m in self.edges.items())

    def degrees(self) -> Counter:
        deg = Counter()
        for (u, v), m in self.edges.items():
            deg[u] += m
            deg[v] += m
        return deg

    @property
    def edge_count(self) -> int:
        return sum(self.edges.values())


def build_label_graph(path: LabelPath | list[Label]) -> LabelGraph:
    hops = path.hops if isinstance(path, LabelPath) else list(path)
    nodes = list(dict.fromkeys(hops))
    return LabelGraph(nodes, Counter(zip(hops, hops[1:])))
