"""Decode graph in compressed-sparse-row form.

The graph is read from an AT&T-style arc list::

    src dst ilabel olabel weight
    state [weight]

Arcs of every state are stored contiguously with the emitting arcs
(``ilabel != 0``) first, so the emitting expand walks
``[arc_offsets[s], emitting_end[s])`` and the non-emitting pass walks
``[emitting_end[s], arc_offsets[s + 1])``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

EPSILON = 0


class FstError(Exception):
    """Base class for graph loading failures."""


class FstParseError(FstError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class FstValidationError(FstError):
    pass


class GraphRejectedError(FstError):
    """The epsilon subgraph has a cycle of total cost <= 0."""


@dataclass(frozen=True, eq=False)
class CsrFst:
    num_states: int
    arc_offsets: np.ndarray
    emitting_end: np.ndarray
    arc_next_state: np.ndarray
    arc_ilabel: np.ndarray
    arc_olabel: np.ndarray
    arc_weight: np.ndarray
    final_costs: np.ndarray
    start_state: int = 0
    _eps_adjacency: list = field(default=None, repr=False, compare=False)

    @property
    def num_arcs(self) -> int:
        return int(self.arc_offsets[-1])

    @property
    def num_emitting_arcs(self) -> int:
        return int(np.count_nonzero(self.arc_ilabel != EPSILON))

    @property
    def max_ilabel(self) -> int:
        return int(self.arc_ilabel.max()) if self.num_arcs else 0

    @property
    def emitting_degree(self) -> np.ndarray:
        return self.emitting_end - self.arc_offsets[:-1]

    @property
    def epsilon_degree(self) -> np.ndarray:
        return self.arc_offsets[1:] - self.emitting_end

    def arcs(self, state: int) -> range:
        return range(int(self.arc_offsets[state]), int(self.arc_offsets[state + 1]))

    def epsilon_adjacency(self) -> list[list[tuple[int, float, int]]]:
        """Per-state ``(next_state, weight, arc_idx)`` lists for scalar loops.

        Built once and cached; the CSR arrays stay the source of truth.
        """
        if self._eps_adjacency is None:
            adj = []
            nxt = self.arc_next_state.tolist()
            wt = self.arc_weight.tolist()
            for s in range(self.num_states):
                lo, hi = int(self.emitting_end[s]), int(self.arc_offsets[s + 1])
                adj.append([(nxt[a], wt[a], a) for a in range(lo, hi)])
            object.__setattr__(self, "_eps_adjacency", adj)
        return self._eps_adjacency

    def is_final(self, state: int) -> bool:
        return math.isfinite(self.final_costs[state])

    def same_structure(self, other: "CsrFst") -> bool:
        return (
            self.num_states == other.num_states
            and self.start_state == other.start_state
            and all(
                np.array_equal(getattr(self, name), getattr(other, name))
                for name in (
                    "arc_offsets",
                    "emitting_end",
                    "arc_next_state",
                    "arc_ilabel",
                    "arc_olabel",
                    "arc_weight",
                    "final_costs",
                )
            )
        )


def _parse_lines(lines: Iterable[str]):
    arcs = []
    finals = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        try:
            if len(fields) == 5:
                src, dst, ilabel, olabel = (int(x) for x in fields[:4])
                weight = float(fields[4])
                if min(src, dst, ilabel, olabel) < 0:
                    raise FstParseError(lineno, "ids and labels must be non-negative")
                if not math.isfinite(weight):
                    raise FstParseError(lineno, f"non-finite weight {fields[4]!r}")
                arcs.append((src, dst, ilabel, olabel, weight))
            elif len(fields) in (1, 2):
                state = int(fields[0])
                weight = float(fields[1]) if len(fields) == 2 else 0.0
                if state < 0:
                    raise FstParseError(lineno, "state ids must be non-negative")
                if not math.isfinite(weight):
                    raise FstParseError(lineno, f"non-finite final weight {fields[1]!r}")
                if state in finals:
                    raise FstParseError(lineno, f"duplicate final entry for state {state}")
                finals[state] = weight
            else:
                raise FstParseError(lineno, f"expected 5 (arc) or 2 (final) fields, got {len(fields)}")
        except ValueError as exc:
            raise FstParseError(lineno, str(exc)) from None
    return arcs, finals


def _reject_nonpositive_epsilon_cycles(fst: CsrFst) -> None:
    eps = fst.arc_ilabel == EPSILON
    if not eps.any():
        return
    src = np.repeat(np.arange(fst.num_states), np.diff(fst.arc_offsets))[eps]
    dst = fst.arc_next_state[eps]
    weight = fst.arc_weight[eps]

    self_loops = src == dst
    if np.any(weight[self_loops] <= 0.0):
        bad = int(src[self_loops][np.argmin(weight[self_loops])])
        raise GraphRejectedError(f"epsilon self-loop with cost <= 0 at state {bad}")

    # Only arcs inside a strongly connected component can lie on a cycle.
    graph = csr_matrix((np.ones(len(src)), (src, dst)), shape=(fst.num_states,) * 2)
    _, comp = connected_components(graph, directed=True, connection="strong")
    inner = (comp[src] == comp[dst]) & ~self_loops
    if not inner.any():
        return
    edges = list(zip(src[inner].tolist(), dst[inner].tolist(), weight[inner].tolist()))
    nodes = sorted({s for s, _, _ in edges})

    # Bellman-Ford on lexicographic (cost, -steps): a cycle relaxes forever
    # iff its cost is < 0, or == 0 (then the step count keeps decreasing).
    dist = {v: (0.0, 0) for v in nodes}
    for _ in range(len(nodes)):
        changed = False
        for s, d, w in edges:
            cand = (dist[s][0] + w, dist[s][1] - 1)
            if cand < dist[d]:
                dist[d] = cand
                changed = True
        if not changed:
            return
    raise GraphRejectedError("epsilon subgraph contains a cycle with total cost <= 0")


def build_fst(arcs, finals: dict[int, float], start_state: int = 0) -> CsrFst:
    """Build a validated :class:`CsrFst` from ``(src, dst, ilabel, olabel, weight)`` tuples."""
    num_states = 1 + max([start_state, *(a[0] for a in arcs), *finals])
    arr = np.array(arcs, dtype=np.float64).reshape(-1, 5)
    src = arr[:, 0].astype(np.int64)
    dst = arr[:, 1].astype(np.int64)
    ilabel = arr[:, 2].astype(np.int64)
    olabel = arr[:, 3].astype(np.int64)
    weight = arr[:, 4]

    dangling = dst >= num_states
    if dangling.any():
        i = int(np.argmax(dangling))
        raise FstValidationError(
            f"arc {int(src[i])}->{int(dst[i])} targets undefined state {int(dst[i])} "
            f"(states are 0..{num_states - 1})"
        )

    # stable: original order is kept within (state, emitting-first) buckets
    order = np.lexsort((ilabel == EPSILON, src))
    src, dst, ilabel, olabel, weight = (a[order] for a in (src, dst, ilabel, olabel, weight))

    counts = np.bincount(src, minlength=num_states)
    emit_counts = np.bincount(src[ilabel != EPSILON], minlength=num_states)
    offsets = np.zeros(num_states + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])

    final_costs = np.full(num_states, np.inf)
    for s, w in finals.items():
        final_costs[s] = w

    fst = CsrFst(
        num_states=num_states,
        arc_offsets=offsets,
        emitting_end=offsets[:-1] + emit_counts,
        arc_next_state=dst,
        arc_ilabel=ilabel,
        arc_olabel=olabel,
        arc_weight=weight.astype(np.float64),
        final_costs=final_costs,
        start_state=start_state,
    )
    _reject_nonpositive_epsilon_cycles(fst)
    return fst


def load_fst(source: str | TextIO) -> CsrFst:
    """Parse the arc-list text format into a :class:`CsrFst`.

    ``source`` is either the text itself or a readable stream. State 0 is
    the start state and state ids must be dense.

    Raises:
        FstParseError: a malformed line (the message carries the line number).
        FstValidationError: an arc targets a state that is never defined.
        GraphRejectedError: the epsilon subgraph has a cycle of cost <= 0.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    arcs, finals = _parse_lines(source)
    if not arcs and not finals:
        raise FstValidationError("empty graph: no arcs and no final states")
    return build_fst(arcs, finals)


def write_fst(fst: CsrFst, out: TextIO | None = None) -> str | None:
    """Serialize in the arc-list format (CSR order, then final lines)."""
    buf = io.StringIO() if out is None else out
    src = np.repeat(np.arange(fst.num_states), np.diff(fst.arc_offsets))
    for s, d, i, o, w in zip(
        src.tolist(),
        fst.arc_next_state.tolist(),
        fst.arc_ilabel.tolist(),
        fst.arc_olabel.tolist(),
        fst.arc_weight.tolist(),
    ):
        buf.write(f"{s} {d} {i} {o} {w!r}\n")
    for s in np.flatnonzero(np.isfinite(fst.final_costs)).tolist():
        buf.write(f"{s} {float(fst.final_costs[s])!r}\n")
    if out is None:
        return buf.getvalue()
    return None


def fst_memory_bytes(fst: CsrFst) -> int:
    """Expected device footprint of the graph: 12|Q| + 8|E| + 4|E_E| bytes."""
    return 12 * fst.num_states + 8 * fst.num_arcs + 4 * fst.num_emitting_arcs
