"""Elementary-cycle enumeration (Johnson's algorithm)."""

from __future__ import annotations

from ..errors import CycleBudgetExceeded

DEFAULT_CYCLE_BUDGET = 100_000


def _component_of(root: int, succ: list[list[int]], pred: list[list[int]]) -> list[int]:
    """Strong component of ``root`` in the subgraph induced by vertices >= root.

    Computed as the intersection of forward and backward reachability.
    """
    if not any(w > root for w in succ[root]) or not any(w > root for w in pred[root]):
        return [root]
    forward = {root}
    frontier = [root]
    while frontier:
        for w in succ[frontier.pop()]:
            if w > root and w not in forward:
                forward.add(w)
                frontier.append(w)
    if len(forward) == 1:
        return [root]
    component = [root]
    seen = {root}
    frontier = [root]
    while frontier:
        for w in pred[frontier.pop()]:
            if w in forward and w not in seen:
                seen.add(w)
                component.append(w)
                frontier.append(w)
    return component


def simple_cycles_indexed(succ: list[list[int]], budget: int = DEFAULT_CYCLE_BUDGET) -> list[list[int]]:
    """All elementary cycles of a digraph on vertices ``0..n-1``.

    Each cycle is returned once as a closed list starting at its smallest
    vertex; the result is sorted lexicographically. Self-loops count as
    cycles of length one.
    """
    n = len(succ)
    found = [[v, v] for v in range(n) if v in succ[v]]
    pred: list[list[int]] = [[] for _ in range(n)]
    for v in range(n):
        for w in succ[v]:
            if w != v:
                pred[w].append(v)

    blocked = [False] * n
    bmap: list[list[int]] = [[] for _ in range(n)]
    for s in range(n):
        members = _component_of(s, succ, pred)
        if len(members) < 2:
            continue
        inside = [False] * n
        for v in members:
            inside[v] = True
            blocked[v] = False
            bmap[v].clear()
        sub = [[w for w in succ[v] if inside[w] and w != v] if inside[v] else None
               for v in range(n)]
        blocked[s] = True
        path = [s]
        iters = [iter(sub[s])]
        closed = [False]
        while iters:
            for w in iters[-1]:
                if w == s:
                    found.append(path + [s])
                    if len(found) > budget:
                        raise CycleBudgetExceeded(f"more than {budget} elementary cycles")
                    closed[-1] = True
                elif not blocked[w]:
                    path.append(w)
                    iters.append(iter(sub[w]))
                    closed.append(False)
                    blocked[w] = True
                    break
            else:
                iters.pop()
                v = path.pop()
                if closed.pop():
                    pending = [v]
                    while pending:
                        u = pending.pop()
                        if blocked[u]:
                            blocked[u] = False
                            pending.extend(bmap[u])
                            bmap[u].clear()
                    if closed:
                        closed[-1] = True
                else:
                    for w in sub[v]:
                        if v not in bmap[w]:
                            bmap[w].append(v)
    if len(found) > budget:
        raise CycleBudgetExceeded(f"more than {budget} elementary cycles")
    found.sort()
    return found


def elementary_cycles(graph, budget: int = DEFAULT_CYCLE_BUDGET):
    """Elementary cycles of a :class:`LabelGraph`'s simple projection.

    Cycles are closed label lists (first == last) starting at their smallest
    label, in lexicographic order.
    """
    adj = graph.successors()
    order = sorted(adj)
    index = {label: i for i, label in enumerate(order)}
    succ = [sorted(index[w] for w in adj[label]) for label in order]
    return [[order[i] for i in cycle] for cycle in simple_cycles_indexed(succ, budget)]
