"""Reference cycle enumeration and graph generators for the cycle tests."""

from __future__ import annotations

import itertools


def brute_force_cycles(succ: list[list[int]]) -> list[list[int]]:
    """Every simple path that returns to its start, rooted at the cycle's smallest vertex."""
    n = len(succ)
    out = []
    for s in range(n):
        stack = [(s, [s])]
        while stack:
            v, path = stack.pop()
            for w in succ[v]:
                if w == s:
                    out.append(path + [s])
                elif w > s and w not in path:
                    stack.append((w, path + [w]))
    out.sort()
    return out


def all_labeled(n: int, self_loops: bool = True):
    """Every labeled digraph on ``n`` vertices as successor lists."""
    pairs = [(i, j) for i in range(n) for j in range(n) if self_loops or i != j]
    for mask in range(1 << len(pairs)):
        succ = [[] for _ in range(n)]
        for k, (i, j) in enumerate(pairs):
            if mask >> k & 1:
                succ[i].append(j)
        yield succ


class LooplessSweep:
    """All 2**(n*(n-1)) loopless labeled digraphs on ``n`` vertices, with their cycles.

    Edge ``(i, j)`` is bit ``i*(n-1) + rank of j among the other vertices``.
    The expected cycles of a graph are those cycles of the complete digraph
    whose edges are all present, which is checked with one mask test each.
    """

    def __init__(self, n: int):
        self.n = n
        self.width = n - 1
        others = [[j for j in range(n) if j != i] for i in range(n)]
        self.out_lists = [
            [[others[i][k] for k in range(self.width) if bits >> k & 1] for bits in range(1 << self.width)]
            for i in range(n)
        ]
        complete = [others[i] for i in range(n)]
        self.complete_cycles = [(c, self.cycle_mask(c)) for c in brute_force_cycles(complete)]

    def bit(self, i, j):
        return i * self.width + (j if j < i else j - 1)

    def cycle_mask(self, cycle):
        return sum(1 << self.bit(a, b) for a, b in zip(cycle, cycle[1:]))

    def __len__(self):
        return 1 << (self.n * self.width)

    def graph(self, mask: int) -> list[list[int]]:
        low = (1 << self.width) - 1
        return [self.out_lists[i][(mask >> (i * self.width)) & low] for i in range(self.n)]

    def expected(self, mask: int) -> list[list[int]]:
        return [c for c, m in self.complete_cycles if m & mask == m]

    def representatives(self) -> list[int]:
        """One mask per isomorphism class, found by marking whole orbits under vertex permutations."""
        n, w, low = self.n, self.width, (1 << self.width) - 1
        tables = []
        for perm in itertools.permutations(range(n)):
            rows = []
            for i in range(n):
                row = []
                for bits in range(1 << w):
                    out = 0
                    for j in self.out_lists[i][bits]:
                        out |= 1 << self.bit(perm[i], perm[j])
                    row.append(out)
                rows.append(row)
            tables.append(rows)
        seen = bytearray(len(self))
        reps = []
        mask = seen.find(0)
        while mask != -1:
            reps.append(mask)
            for rows in tables:
                image = 0
                for i in range(n):
                    image |= rows[i][(mask >> (i * w)) & low]
                seen[image] = 1
            mask = seen.find(0, mask + 1)
        return reps
