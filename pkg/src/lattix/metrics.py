"""One-best extraction and lattice quality metrics."""

from __future__ import annotations

import heapq
import math
from typing import Sequence

import numpy as np

from .fst import EPSILON
from .lattice import Lattice, NoPathError, shortest_from


def best_path(lattice: Lattice) -> tuple[list[int], float]:
    """Cheapest complete path: its output words (epsilons elided) and cost."""
    dist, back = shortest_from(
        lattice.num_nodes,
        lattice.arc_from,
        lattice.arc_to,
        lattice.arc_graph_cost,
        lattice.arc_acoustic_cost,
        {lattice.start: 0.0},
    )
    best, node = math.inf, -1
    for v, c in zip(lattice.final_nodes.tolist(), lattice.final_costs.tolist()):
        total = dist[v] + c
        if total < best:
            best, node = total, v
    if node < 0:
        raise NoPathError("lattice has no complete path")
    words = []
    while back[node] >= 0:
        a = back[node]
        if lattice.arc_olabel[a] != EPSILON:
            words.append(int(lattice.arc_olabel[a]))
        node = int(lattice.arc_from[a])
    words.reverse()
    return words, best


def lattice_density(lattice: Lattice) -> float:
    """Outgoing arcs per node, averaged over all nodes."""
    return lattice.num_arcs / lattice.num_nodes if lattice.num_nodes else 0.0


def edit_distance(hyp: Sequence, ref: Sequence) -> int:
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, start=1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r))
        prev = cur
    return prev[-1]


def wer(hyp: Sequence, ref: Sequence) -> float:
    """Levenshtein distance over words divided by the reference length."""
    if not ref:
        raise ValueError("word error rate is undefined for an empty reference")
    return edit_distance(hyp, ref) / len(ref)


def oracle_wer(lattice: Lattice, ref: Sequence) -> float:
    """Lowest WER of any complete lattice path.

    Dijkstra over (lattice node, reference position) pairs: a word arc either
    matches or substitutes ``ref[j]`` or is an insertion; a reference word may
    be deleted in place; epsilon arcs are free.
    """
    if not ref:
        raise ValueError("word error rate is undefined for an empty reference")
    if not len(lattice.final_nodes):
        raise NoPathError("lattice has no complete path")
    ref = list(ref)
    m = len(ref)
    out = [[] for _ in range(lattice.num_nodes)]
    for a, (s, d, o) in enumerate(zip(lattice.arc_from.tolist(), lattice.arc_to.tolist(), lattice.arc_olabel.tolist())):
        out[s].append((d, o))
    finals = set(lattice.final_nodes.tolist())
    dist = {(lattice.start, 0): 0}
    heap = [(0, lattice.start, 0)]
    while heap:
        c, v, j = heapq.heappop(heap)
        if c > dist.get((v, j), math.inf):
            continue
        if v in finals and j == m:
            return c / m

        def push(cost, node, pos):
            if cost < dist.get((node, pos), math.inf):
                dist[(node, pos)] = cost
                heapq.heappush(heap, (cost, node, pos))

        if j < m:
            push(c + 1, v, j + 1)  # deletion
        for d, o in out[v]:
            if o == EPSILON:
                push(c, d, j)
            else:
                push(c + 1, d, j)  # insertion
                if j < m:
                    push(c + (o != ref[j]), d, j + 1)
    raise NoPathError("lattice has no complete path")


def arc_slack(lattice: Lattice) -> np.ndarray:
    """Per arc: cost of the best complete path through it minus the best path cost."""
    args = (lattice.arc_graph_cost, lattice.arc_acoustic_cost)
    alpha, _ = shortest_from(lattice.num_nodes, lattice.arc_from, lattice.arc_to, *args, {lattice.start: 0.0})
    beta, _ = shortest_from(
        lattice.num_nodes, lattice.arc_to, lattice.arc_from, *args, dict(zip(lattice.final_nodes.tolist(), lattice.final_costs.tolist()))
    )
    alpha, beta = np.array(alpha), np.array(beta)
    best = float(np.min(alpha[lattice.final_nodes] + lattice.final_costs)) if len(lattice.final_nodes) else math.inf
    return alpha[lattice.arc_from] + lattice.arc_graph_cost + lattice.arc_acoustic_cost + beta[lattice.arc_to] - best


def enumerate_paths(lattice: Lattice, limit: int = 100_000) -> list[tuple[float, tuple[int, ...]]]:
    """All complete paths as ``(cost, arc indices)``; for small lattices only."""
    out = [[] for _ in range(lattice.num_nodes)]
    for a, s in enumerate(lattice.arc_from.tolist()):
        out[s].append(a)
    to = lattice.arc_to.tolist()
    cost = (lattice.arc_graph_cost).tolist()
    ac = lattice.arc_acoustic_cost.tolist()
    finals = lattice.finals
    paths = []
    stack = [(lattice.start, 0.0, ())]
    while stack:
        v, c, arcs = stack.pop()
        if v in finals:
            paths.append((c + finals[v], arcs))
            if len(paths) > limit:
                raise ValueError(f"more than {limit} lattice paths")
        for a in out[v]:
            stack.append((to[a], c + cost[a] + ac[a], arcs + (a,)))
    return paths
