"""Reachability graph and structural decomposition of an MDP.

The algorithm's guarantees rest on three structural facts: every state is
reachable from the start distribution, the one-step support of transitions
is action-independent (so a single reachability graph describes every
policy), and the transient part of that graph is acyclic. This module
computes the graph, the transient/recurrent decomposition, and verdicts
for those three assumptions.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .mdp import InitialDistribution, Mdp


@dataclass(frozen=True)
class SupportMismatch:
    """Two actions of one state reach different one-step supports."""

    state: int
    action_a: int
    action_b: int
    support_a: tuple[int, ...]
    support_b: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class ReachabilityGraph:
    """Directed graph with an edge (i, j) whenever some action of i can
    move to j; support mismatches found while building it are recorded."""

    num_states: int
    out_neighbors: tuple[tuple[int, ...], ...]
    support_mismatches: tuple[SupportMismatch, ...] = ()

    @property
    def assumption2_ok(self) -> bool:
        return not self.support_mismatches

    def edges(self):
        for i, nbrs in enumerate(self.out_neighbors):
            for j in nbrs:
                yield (i, j)


@dataclass(frozen=True, eq=False)
class StructureReport:
    """Transient/recurrent decomposition plus assumption verdicts.

    `transient_states` is stored in reverse topological order: for any
    edge (x_i, x_j) inside the transient subgraph, i > j. When the
    transient subgraph has a cycle that order is only partial and
    `assumption3_ok` is False.
    """

    transient_states: tuple[int, ...]
    recurrent_classes: tuple[tuple[int, ...], ...]
    assumption1_ok: bool
    assumption2_ok: bool
    assumption3_ok: bool
    unreachable_states: tuple[int, ...] = ()
    support_mismatches: tuple[SupportMismatch, ...] = ()
    transient_cycle: tuple[int, ...] = ()

    @property
    def all_ok(self) -> bool:
        return (self.assumption1_ok and self.assumption2_ok
                and self.assumption3_ok)

    def recurrent_class_of(self) -> dict[int, int]:
        """Map each recurrent state to the index of its class."""
        out = {}
        for idx, cls in enumerate(self.recurrent_classes):
            for i in cls:
                out[i] = idx
        return out


def build_reachability_graph(mdp: Mdp) -> ReachabilityGraph:
    """One-step reachability graph, with action-support consistency checks.

    The edge set is the union of supports over actions (equivalently, the
    support under any single policy once the consistency check passes).
    An entry counts as positive iff it is strictly greater than zero; no
    epsilon is applied because file inputs are exact.
    """
    neighbors = []
    mismatches = []
    for i in range(mdp.num_states):
        P = mdp.transitions[i]
        ref = tuple(int(j) for j in np.flatnonzero(P[0] > 0.0))
        union = set(ref)
        for a in range(1, P.shape[0]):
            supp = tuple(int(j) for j in np.flatnonzero(P[a] > 0.0))
            if supp != ref:
                mismatches.append(SupportMismatch(
                    state=i, action_a=0, action_b=a,
                    support_a=ref, support_b=supp))
            union.update(supp)
        neighbors.append(tuple(sorted(union)))
    return ReachabilityGraph(
        num_states=mdp.num_states,
        out_neighbors=tuple(neighbors),
        support_mismatches=tuple(mismatches))


def _strongly_connected_components(n, out_neighbors):
    """Tarjan's algorithm, iterative. Components are returned in reverse
    topological order of the condensation (successors before predecessors).
    """
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack = []
    components = []
    counter = 0
    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        while work:
            v, ptr = work[-1]
            if ptr == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            advanced = False
            nbrs = out_neighbors[v]
            while ptr < len(nbrs):
                w = nbrs[ptr]
                ptr += 1
                if index[w] == -1:
                    work[-1] = (v, ptr)
                    work.append((w, 0))
                    advanced = True
                    break
                if on_stack[w]:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                components.append(tuple(sorted(comp)))
            if work:
                u, _ = work[-1]
                low[u] = min(low[u], low[v])
    return components


def _find_cycle(nodes, out_neighbors):
    """Concrete cycle inside a strongly connected node set."""
    inside = set(nodes)
    start = min(nodes)
    path = [start]
    seen = {start: 0}
    v = start
    while True:
        v = min(w for w in out_neighbors[v] if w in inside)
        if v in seen:
            return tuple(path[seen[v]:])
        seen[v] = len(path)
        path.append(v)


def decompose_structure(graph: ReachabilityGraph,
                        p: InitialDistribution) -> StructureReport:
    """Classify states into transient and recurrent, order the transient
    subgraph reverse-topologically, and judge the three assumptions.

    Recurrent classes are the closed strongly connected components of the
    graph. Reachability of every state from supp(p) stands in for the
    positive-visit-probability requirement: with action-independent
    supports, every policy's chain shares this graph, so the probability
    of ever visiting a state is positive exactly when the state is
    reachable here.
    """
    n = graph.num_states
    comps = _strongly_connected_components(n, graph.out_neighbors)
    comp_of = [0] * n
    for idx, comp in enumerate(comps):
        for v in comp:
            comp_of[v] = idx

    closed = [True] * len(comps)
    for i in range(n):
        for j in graph.out_neighbors[i]:
            if comp_of[j] != comp_of[i]:
                closed[comp_of[i]] = False

    recurrent_classes = []
    transient = []
    for idx, comp in enumerate(comps):
        if closed[idx]:
            recurrent_classes.append(comp)
        else:
            transient.extend(comp)
    recurrent_classes.sort(key=min)
    transient_set = set(transient)

    # Assumption 3: the transient subgraph is acyclic, i.e. every transient
    # component is a lone state without a self-loop.
    cycle = ()
    for idx, comp in enumerate(comps):
        if closed[idx]:
            continue
        if len(comp) > 1:
            cycle = _find_cycle(comp, graph.out_neighbors)
            break
        v = comp[0]
        if v in graph.out_neighbors[v]:
            cycle = (v,)
            break
    assumption3_ok = not cycle

    # Reverse topological order of the transient subgraph: forward
    # (sources-first) Kahn order, reversed. Ties resolved by state id so
    # the stored order is canonical. States on cycles, if any, are
    # appended in ascending order to keep the partition exact.
    indegree = {v: 0 for v in transient_set}
    for i in transient_set:
        for j in graph.out_neighbors[i]:
            if j in transient_set and j != i:
                indegree[j] += 1
    ready = [v for v, d in indegree.items() if d == 0]
    heapq.heapify(ready)
    forward = []
    while ready:
        v = heapq.heappop(ready)
        forward.append(v)
        for j in graph.out_neighbors[v]:
            if j in transient_set and j != v:
                indegree[j] -= 1
                if indegree[j] == 0:
                    heapq.heappush(ready, j)
    leftover = sorted(transient_set - set(forward))
    transient_order = tuple(reversed(forward)) + tuple(leftover)

    # Assumption 1: every state reachable from the support of p.
    seen = [False] * n
    queue = [int(s) for s in p.support]
    for s in queue:
        seen[s] = True
    while queue:
        v = queue.pop()
        for j in graph.out_neighbors[v]:
            if not seen[j]:
                seen[j] = True
                queue.append(j)
    unreachable = tuple(i for i in range(n) if not seen[i])

    return StructureReport(
        transient_states=transient_order,
        recurrent_classes=tuple(recurrent_classes),
        assumption1_ok=not unreachable,
        assumption2_ok=graph.assumption2_ok,
        assumption3_ok=assumption3_ok,
        unreachable_states=unreachable,
        support_mismatches=graph.support_mismatches,
        transient_cycle=cycle)


def analyze(mdp: Mdp, p: InitialDistribution) -> StructureReport:
    """Build the reachability graph and decompose it in one step."""
    return decompose_structure(build_reachability_graph(mdp), p)


def reachable_mask(graph: ReachabilityGraph,
                   p: InitialDistribution) -> np.ndarray:
    """Boolean mask of states reachable from supp(p)."""
    seen = np.zeros(graph.num_states, dtype=bool)
    queue = [int(s) for s in p.support]
    seen[queue] = True
    while queue:
        v = queue.pop()
        for j in graph.out_neighbors[v]:
            if not seen[j]:
                seen[j] = True
                queue.append(j)
    return seen
