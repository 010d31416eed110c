"""Lattice segments, their transfer pipeline, and final lattice assembly.

After each frame the raw tokens (duplicates included) are regrouped by FST
state into a CSR segment. The cheapest token of a group is its
representative; only representatives expand into the next frame. Every
token stays in the segment as an incoming lattice arc of the node
``(frame, state)``.
"""

from __future__ import annotations

import heapq
import io
import logging
import math
import queue
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence, TextIO

import numpy as np

from .decoder import NO_TOKEN, Token, TokenBatch, segment_min
from .fst import EPSILON, CsrFst

log = logging.getLogger(__name__)

# slack comparisons tolerate summation-order rounding
SLACK_TOL = 1e-9


class LatticeError(Exception):
    pass


class LatticeAssemblyError(LatticeError):
    pass


class NoPathError(LatticeError):
    pass


@dataclass(eq=False)
class LatticeSegment:
    """One frame's surviving tokens, grouped by FST state.

    Group ``g`` covers tokens ``state_offsets[g]:state_offsets[g + 1]``, all at
    FST state ``states[g]``, cheapest first; that first token is the group's
    representative. Token ``j`` has global index ``token_base + j``.
    ``extra_costs`` is the forward estimate ``cost - frame best``; the exact
    slack is only known at finalization.
    """

    frame_index: int
    token_base: int
    states: np.ndarray
    state_offsets: np.ndarray
    token_state: np.ndarray
    cost: np.ndarray
    prev_token: np.ndarray
    arc_idx: np.ndarray
    acoustic: np.ndarray
    extra_costs: np.ndarray

    def __len__(self) -> int:
        return len(self.cost)

    @property
    def num_groups(self) -> int:
        return len(self.states)

    @property
    def representative(self) -> np.ndarray:
        return self.state_offsets[:-1]

    @property
    def best_cost(self) -> float:
        return float(self.cost.min()) if len(self.cost) else math.inf

    @property
    def tokens(self) -> list[Token]:
        return [
            Token(int(s), float(c), int(p), int(a))
            for s, c, p, a in zip(self.token_state, self.cost, self.prev_token, self.arc_idx)
        ]

    def group(self, g: int) -> slice:
        return slice(int(self.state_offsets[g]), int(self.state_offsets[g + 1]))


def preprocess_lattice(
    fst: CsrFst,
    main: TokenBatch,
    frames,
    bases,
    lattice_beam: float,
    soft_prune: bool = True,
) -> tuple[list[LatticeSegment], TokenBatch]:
    """Regroup a converged frame into per-lane CSR segments.

    Tokens whose cost exceeds their group representative's by more than
    ``lattice_beam`` are dropped: any path through such a token can be
    rerouted through the representative, so its slack is at least that gap.
    Within a group tokens are ordered by ``(cost, prev_token, arc_idx)``,
    which fixes the representative deterministically.

    Epsilon tokens point at their same-frame predecessor state; that link is
    resolved here to the predecessor group's representative.

    Returns the segments and the soft-pruned main queue for the next frame.
    """
    num_lanes = main.num_lanes
    nq = fst.num_states
    frames = np.broadcast_to(np.asarray(frames, dtype=np.int64), (num_lanes,))
    bases = np.broadcast_to(np.asarray(bases, dtype=np.int64), (num_lanes,))

    key = main.lane_ids() * nq + main.state
    # (key, cost) order via one integer sort; equal costs share a rank
    rank = _dense_rank(main.cost)
    packed = key * (int(rank.max(initial=0)) + 1) + rank
    order = np.argsort(packed)
    k = key[order]
    c = main.cost[order]
    first = np.ones(len(k), dtype=bool)
    first[1:] = k[1:] != k[:-1]
    gid = np.cumsum(first) - 1
    keep = (c - c[first][gid]) <= lattice_beam
    order, gid = order[keep], gid[keep]

    gkeys = k[first]
    glane = gkeys // nq
    gcount = np.bincount(gid, minlength=len(gkeys))
    gpos = np.cumsum(gcount) - gcount
    lane_counts = np.bincount(glane, weights=gcount, minlength=num_lanes).astype(np.int64)
    lane_start = np.cumsum(lane_counts) - lane_counts
    glocal = gpos - lane_start[glane]
    tok_lane = glane[gid]

    prev = main.prev[order].copy()
    prev_state = main.prev_state[order]
    eps = prev_state >= 0
    if eps.any():
        pg = np.searchsorted(gkeys, tok_lane[eps] * nq + prev_state[eps])
        prev[eps] = bases[tok_lane[eps]] + glocal[pg]
    cost = main.cost[order]
    arc = main.arc[order]
    acoustic = main.acoustic[order]

    # tokens are in (group, cost) order; break exact cost ties by (prev, arc)
    p = packed[order]
    if np.any(p[1:] == p[:-1]):
        o2 = np.lexsort((arc, prev, p))
        prev, cost, arc, acoustic = prev[o2], cost[o2], arc[o2], acoustic[o2]
    state = gkeys[gid] % nq  # gid is sorted after o2
    index = bases[tok_lane] + (np.arange(len(cost)) - lane_start[tok_lane])
    rep = np.zeros(len(cost), dtype=bool)
    rep[gpos] = True

    lane_offsets = np.zeros(num_lanes + 1, dtype=np.int64)
    np.cumsum(lane_counts, out=lane_offsets[1:])
    frame_best = segment_min(cost, lane_offsets)
    extra = cost - frame_best[tok_lane]

    group_offsets = np.zeros(num_lanes + 1, dtype=np.int64)
    np.cumsum(np.bincount(glane, minlength=num_lanes), out=group_offsets[1:])
    gstate = gkeys % nq
    segments = []
    for i in range(num_lanes):
        lo, hi = lane_offsets[i], lane_offsets[i + 1]
        g0, g1 = group_offsets[i], group_offsets[i + 1]
        segments.append(
            LatticeSegment(
                frame_index=int(frames[i]),
                token_base=int(bases[i]),
                states=gstate[g0:g1],
                state_offsets=np.append(glocal[g0:g1], hi - lo),
                token_state=state[lo:hi],
                cost=cost[lo:hi],
                prev_token=prev[lo:hi],
                arc_idx=arc[lo:hi],
                acoustic=acoustic[lo:hi],
                extra_costs=extra[lo:hi],
            )
        )

    expands = rep if soft_prune else np.ones(len(cost), dtype=bool)
    next_main = TokenBatch(
        state=state,
        cost=cost,
        prev=prev,
        prev_state=np.full(len(cost), NO_TOKEN, dtype=np.int64),
        arc=arc,
        acoustic=acoustic,
        index=index,
        degree=np.where(expands, fst.emitting_degree[state], 0),
        rep=rep,
        lane_offsets=lane_offsets,
    )
    return segments, next_main


def _dense_rank(values: np.ndarray) -> np.ndarray:
    """Rank of each value among the distinct values (ties share a rank)."""
    order = np.argsort(values)
    step = np.empty(len(values), dtype=np.int64)
    if len(values):
        step[0] = 0
        step[1:] = values[order][1:] != values[order][:-1]
    rank = np.empty(len(values), dtype=np.int64)
    rank[order] = np.cumsum(step)
    return rank


def soft_prune_for_next_frame(fst: CsrFst, segment: LatticeSegment, enabled: bool = True) -> TokenBatch:
    """Main queue for the next frame built from one segment.

    All tokens are kept, but only representatives carry their state's
    emitting out-degree; the others get degree 0 and the load balancer
    assigns them no work.
    """
    n = len(segment)
    rep = np.zeros(n, dtype=bool)
    rep[segment.representative] = True
    expands = rep if enabled else np.ones(n, dtype=bool)
    return TokenBatch.from_columns(
        [n],
        state=segment.token_state,
        cost=segment.cost,
        prev=segment.prev_token,
        arc=segment.arc_idx,
        acoustic=segment.acoustic,
        index=segment.token_base + np.arange(n),
        degree=np.where(expands, fst.emitting_degree[segment.token_state], 0),
        rep=rep,
    )


class ChannelSegments:
    """Segments of one channel, in arrival (= frame) order."""

    def __init__(self):
        self.segments: list[LatticeSegment] = []
        self._cond = threading.Condition()

    def append(self, segment: LatticeSegment) -> None:
        with self._cond:
            self.segments.append(segment)
            self._cond.notify_all()

    def wait_for(self, count: int, timeout: float | None = None) -> bool:
        with self._cond:
            return self._cond.wait_for(lambda: len(self.segments) >= count, timeout)

    def snapshot(self) -> list[LatticeSegment]:
        with self._cond:
            return list(self.segments)


_STOP = object()


class SegmentPipeline:
    """Single-consumer transfer queue decoupled from frame advance.

    ``emit`` only enqueues; a background thread moves segments into
    per-channel storage. The producer blocks only once ``high_water``
    segments are in flight. ``on_segment`` (called in the consumer thread)
    lets callers observe or slow down consumption.
    """

    def __init__(
        self,
        high_water: int = 1 << 16,
        on_segment: Callable[[Hashable, LatticeSegment], None] | None = None,
    ):
        self._queue: queue.Queue = queue.Queue(maxsize=high_water)
        self._sinks: dict[Hashable, ChannelSegments] = {}
        self._lock = threading.Lock()
        self.on_segment = on_segment
        self.discarded = 0
        self._thread = threading.Thread(target=self._consume, name="lattice-d2h", daemon=True)
        self._thread.start()

    def open(self, key: Hashable) -> ChannelSegments:
        with self._lock:
            sink = self._sinks[key] = ChannelSegments()
        return sink

    def close(self, key: Hashable) -> None:
        with self._lock:
            self._sinks.pop(key, None)

    def sink(self, key: Hashable) -> ChannelSegments:
        with self._lock:
            return self._sinks[key]

    def emit(self, key: Hashable, segment: LatticeSegment) -> None:
        self._queue.put((key, segment))

    def flush(self) -> None:
        """Block until every emitted segment has been consumed."""
        self._queue.join()

    def stop(self) -> None:
        if self._thread.is_alive():
            self._queue.put(_STOP)
            self._thread.join()

    def _consume(self) -> None:
        while True:
            item = self._queue.get()
            try:
                if item is _STOP:
                    return
                key, segment = item
                if self.on_segment is not None:
                    self.on_segment(key, segment)
                with self._lock:
                    sink = self._sinks.get(key)
                if sink is None:
                    self.discarded += 1
                    log.warning("channel %s closed; discarding segment for frame %d", key, segment.frame_index)
                else:
                    sink.append(segment)
            finally:
                self._queue.task_done()


@dataclass(eq=False)
class Lattice:
    """Word lattice over ``(frame, fst_state)`` nodes; node 0 is the start.

    A node may appear more than once when exact lattice-beam pruning had to
    split it (paths reaching it with different slack allow different
    continuations). ``arc_fst_arc`` keeps the decode-graph arc behind each
    lattice arc.
    """

    node_frame: np.ndarray
    node_state: np.ndarray
    arc_from: np.ndarray
    arc_to: np.ndarray
    arc_ilabel: np.ndarray
    arc_olabel: np.ndarray
    arc_graph_cost: np.ndarray
    arc_acoustic_cost: np.ndarray
    arc_fst_arc: np.ndarray
    final_nodes: np.ndarray
    final_costs: np.ndarray
    exact: bool = True
    start: int = 0

    @property
    def num_nodes(self) -> int:
        return len(self.node_frame)

    @property
    def num_arcs(self) -> int:
        return len(self.arc_from)

    @property
    def num_frames(self) -> int:
        return int(self.node_frame.max()) if self.num_nodes else 0

    @property
    def nodes(self) -> list[tuple[int, int]]:
        return list(zip(self.node_frame.tolist(), self.node_state.tolist()))

    @property
    def arcs(self) -> list[tuple]:
        return list(
            zip(
                self.arc_from.tolist(),
                self.arc_to.tolist(),
                self.arc_ilabel.tolist(),
                self.arc_olabel.tolist(),
                self.arc_graph_cost.tolist(),
                self.arc_acoustic_cost.tolist(),
            )
        )

    @property
    def finals(self) -> dict[int, float]:
        return dict(zip(self.final_nodes.tolist(), self.final_costs.tolist()))

    def arc_cost(self) -> np.ndarray:
        return self.arc_graph_cost + self.arc_acoustic_cost

    def equals(self, other: "Lattice") -> bool:
        """Bit-exact structural equality."""
        names = (
            "node_frame",
            "node_state",
            "arc_from",
            "arc_to",
            "arc_ilabel",
            "arc_olabel",
            "arc_graph_cost",
            "arc_acoustic_cost",
            "arc_fst_arc",
            "final_nodes",
            "final_costs",
        )
        return self.start == other.start and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in names
        )


# -- shortest distances over lattice-shaped graphs ---------------------------


def _topological_order(num_nodes: int, src: np.ndarray, dst: np.ndarray) -> list[int] | None:
    indeg = np.bincount(dst, minlength=num_nodes).tolist()
    out = [[] for _ in range(num_nodes)]
    for s, d in zip(src.tolist(), dst.tolist()):
        out[s].append(d)
    ready = deque(v for v in range(num_nodes) if indeg[v] == 0)
    order = []
    while ready:
        v = ready.popleft()
        order.append(v)
        for w in out[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
    return order if len(order) == num_nodes else None


def _adjacency(num_nodes: int, src: np.ndarray) -> list[list[int]]:
    adj = [[] for _ in range(num_nodes)]
    for a, s in enumerate(src.tolist()):
        adj[s].append(a)
    return adj


def shortest_from(
    num_nodes: int,
    src: np.ndarray,
    dst: np.ndarray,
    graph_cost: np.ndarray,
    acoustic_cost: np.ndarray,
    sources: dict[int, float],
):
    """Single pass in topological order, or label correcting if cyclic.

    Returns ``(dist, back_arc)``. Arc costs are accumulated as
    ``(dist + graph_cost) + acoustic_cost``, matching the decoder.
    """
    dist = [math.inf] * num_nodes
    back = [-1] * num_nodes
    for v, c in sources.items():
        dist[v] = c
    adj = _adjacency(num_nodes, src)
    d_l, g_l, a_l = dst.tolist(), graph_cost.tolist(), acoustic_cost.tolist()
    order = _topological_order(num_nodes, src, dst)
    if order is not None:
        for v in order:
            dv = dist[v]
            if dv == math.inf:
                continue
            for a in adj[v]:
                c = dv + g_l[a] + a_l[a]
                w = d_l[a]
                if c < dist[w]:
                    dist[w] = c
                    back[w] = a
        return dist, back
    work = deque(v for v in sources)
    queued = set(work)
    while work:
        v = work.popleft()
        queued.discard(v)
        dv = dist[v]
        for a in adj[v]:
            c = dv + g_l[a] + a_l[a]
            w = d_l[a]
            if c < dist[w]:
                dist[w] = c
                back[w] = a
                if w not in queued:
                    work.append(w)
                    queued.add(w)
    return dist, back


def _backward(num_nodes, src, dst, graph_cost, acoustic_cost, finals: dict[int, float]):
    dist, _ = shortest_from(num_nodes, dst, src, graph_cost, acoustic_cost, finals)
    return dist


# -- assembly -----------------------------------------------------------------


def _raw_graph(fst: CsrFst, segments: Sequence[LatticeSegment]):
    if not segments:
        raise LatticeAssemblyError("no segments: channel was never initialized")
    for expect, seg in enumerate(segments):
        if seg.frame_index != expect:
            raise LatticeAssemblyError(f"segment gap: expected frame {expect}, got {seg.frame_index}")
    base = 0
    for seg in segments:
        if seg.token_base != base:
            raise LatticeAssemblyError(f"frame {seg.frame_index}: token index gap at {base}")
        base += len(seg)

    node_frame = np.concatenate([np.full(s.num_groups, s.frame_index, dtype=np.int64) for s in segments])
    node_state = np.concatenate([np.asarray(s.states, dtype=np.int64) for s in segments])
    group_base = np.cumsum([0] + [s.num_groups for s in segments])
    token_node = np.concatenate(
        [
            group_base[f] + np.repeat(np.arange(s.num_groups), np.diff(s.state_offsets))
            for f, s in enumerate(segments)
        ]
    )
    prev = np.concatenate([s.prev_token for s in segments])
    arc = np.concatenate([s.arc_idx for s in segments])
    acoustic = np.concatenate([s.acoustic for s in segments])

    has_prev = prev != NO_TOKEN
    a_from = token_node[prev[has_prev]]
    a_to = token_node[has_prev]
    a_arc = arc[has_prev]
    a_ac = acoustic[has_prev]
    # one lattice arc per (source node, graph arc)
    _, uniq = np.unique(np.stack([a_from, a_arc]), axis=1, return_index=True)
    uniq.sort()
    return node_frame, node_state, a_from[uniq], a_to[uniq], a_arc[uniq], a_ac[uniq]


def finalize_lattice(
    fst: CsrFst,
    segments: Sequence[LatticeSegment],
    lattice_beam: float,
    exact: bool = True,
    partial: bool = False,
    max_split_factor: int = 32,
) -> Lattice:
    """Assemble the lattice of a channel from its ordered segments.

    Arcs whose best complete path has slack above ``lattice_beam`` are
    removed. With ``exact`` the remaining nodes are split where needed so
    that *every* complete path of the result has slack within the beam (arc
    pruning alone only bounds the best path through each arc). Splitting is
    abandoned, with a warning and ``exact=False`` on the result, if it would
    grow the lattice beyond ``max_split_factor`` times its pruned size.

    ``partial`` finalizes a stream that has not ended: if no final state is
    active on the last frame, all last-frame nodes count as final with cost 0.

    Raises:
        LatticeAssemblyError: missing or out-of-order segments.
        NoPathError: no complete path exists.
    """
    node_frame, node_state, a_from, a_to, a_arc, a_ac = _raw_graph(fst, segments)
    a_graph = fst.arc_weight[a_arc]
    num_nodes = len(node_frame)
    last = len(segments) - 1
    start_candidates = np.flatnonzero((node_frame == 0) & (node_state == fst.start_state))
    if not len(start_candidates):
        raise NoPathError("start state pruned away")
    start = int(start_candidates[0])

    on_last = np.flatnonzero(node_frame == last)
    fin_cost = fst.final_costs[node_state[on_last]]
    finite = np.isfinite(fin_cost)
    if partial and not finite.any():
        finals = {int(v): 0.0 for v in on_last}
    else:
        finals = {int(v): float(c) for v, c in zip(on_last[finite], fin_cost[finite])}

    alpha, _ = shortest_from(num_nodes, a_from, a_to, a_graph, a_ac, {start: 0.0})
    beta = _backward(num_nodes, a_from, a_to, a_graph, a_ac, finals)
    alpha = np.array(alpha)
    beta = np.array(beta)
    best = min((alpha[v] + c for v, c in finals.items()), default=math.inf)
    if not math.isfinite(best):
        raise NoPathError(f"no complete path after {last} frames")

    slack = alpha[a_from] + a_graph + a_ac + beta[a_to] - best
    keep = np.isfinite(slack) & (slack <= lattice_beam + SLACK_TOL)
    a_from, a_to, a_arc, a_ac, a_graph = (x[keep] for x in (a_from, a_to, a_arc, a_ac, a_graph))
    finals = {
        v: c for v, c in finals.items()
        if math.isfinite(alpha[v]) and alpha[v] + c - best <= lattice_beam + SLACK_TOL
    }

    used = np.zeros(num_nodes, dtype=bool)
    used[start] = True
    used[a_from] = True
    used[a_to] = True
    used[list(finals)] = True

    arcs = (a_from, a_to, a_arc, a_ac, a_graph)
    if exact and math.isfinite(lattice_beam):
        split = _split_by_slack(
            num_nodes, start, arcs, finals, alpha, beta, best, lattice_beam,
            budget=max_split_factor * (int(used.sum()) + len(a_from)),
        )
        if split is not None:
            return _build(fst, node_frame, node_state, start, *split, exact=True, split=True)
        log.info("exact lattice pruning exceeded its size budget; returning arc-pruned lattice")
        return _build(fst, node_frame, node_state, start, np.flatnonzero(used), arcs, finals, exact=False)
    return _build(fst, node_frame, node_state, start, np.flatnonzero(used), arcs, finals, exact=exact)


def _max_suffix_slack(num_nodes, arcs, finals, delta, phi):
    """Largest slack increment collectable from each node to a final (inf on cycles)."""
    a_from, a_to = arcs[0], arcs[1]
    m = np.full(num_nodes, -np.inf)
    for v, p in phi.items():
        m[v] = p
    order = _topological_order(num_nodes, a_from, a_to)
    if order is None:
        return np.full(num_nodes, np.inf)
    adj = _adjacency(num_nodes, a_from)
    to = a_to.tolist()
    dl = delta.tolist()
    for v in reversed(order):
        for a in adj[v]:
            cand = dl[a] + m[to[a]]
            if cand > m[v]:
                m[v] = cand
    return m


def _suffix_slack_sets(num_nodes, arcs, delta, phi, limit, cap=4096):
    """Sorted distinct slacks (<= ``limit``) of the completions from each node.

    ``None`` marks nodes with more than ``cap`` distinct values (or any node
    of a cyclic graph).
    """
    a_from, a_to = arcs[0], arcs[1]
    order = _topological_order(num_nodes, a_from, a_to)
    if order is None:
        return [None] * num_nodes
    adj = _adjacency(num_nodes, a_from)
    to = a_to.tolist()
    dl = delta.tolist()
    sets: list = [None] * num_nodes
    for v in reversed(order):
        parts = [np.array([phi[v]])] if v in phi else []
        ok = True
        for a in adj[v]:
            sub = sets[to[a]]
            if sub is None:
                ok = False
                break
            parts.append(sub + dl[a])
        if not ok:
            continue
        vals = np.unique(np.round(np.concatenate(parts), 9)) if parts else np.empty(0)
        vals = vals[vals <= limit]
        sets[v] = vals if len(vals) <= cap else None
    return sets


def _split_by_slack(num_nodes, start, arcs, finals, alpha, beta, best, beam, budget):
    """Expand nodes by accumulated prefix slack so no complete path exceeds ``beam``.

    A copy ``(v, sigma)`` remembers the slack ``sigma`` collected so far. Once
    ``sigma`` plus the largest slack any continuation can add fits in the
    beam, the copy collapses into the shared unconstrained copy of ``v``.
    Otherwise copies whose ``sigma`` admits exactly the same completions
    are shared.
    """
    a_from, a_to, a_arc, a_ac, a_graph = arcs
    delta = alpha[a_from] + a_graph + a_ac - alpha[a_to]
    gap = alpha + beta - best
    phi = {v: alpha[v] + c - best for v, c in finals.items()}
    m = _max_suffix_slack(num_nodes, arcs, finals, delta, phi)
    limit = beam + SLACK_TOL
    suffixes = _suffix_slack_sets(num_nodes, arcs, delta, phi, limit)

    adj = _adjacency(num_nodes, a_from)
    to = a_to.tolist()
    dl = delta.tolist()
    FREE = None

    ids: dict[tuple, int] = {}
    copies: list[tuple[int, float | None]] = []

    def node_id(v, sigma):
        key = None
        if sigma is not FREE and sigma + m[v] <= limit:
            sigma = FREE
        elif sigma is not FREE and suffixes[v] is not None:
            idx = int(np.searchsorted(suffixes[v], limit - sigma, side="right")) - 1
            if idx >= 0:
                key = (v, "class", idx)
        if key is None:
            key = (v, FREE if sigma is FREE else round(sigma, 9))
        nid = ids.get(key)
        if nid is None:
            nid = ids[key] = len(copies)
            copies.append((v, sigma))
            work.append(nid)
        return nid

    work: deque[int] = deque()
    node_id(start, 0.0)
    out_from, out_to, out_arc = [], [], []
    while work:
        nid = work.popleft()
        v, sigma = copies[nid]
        for a in adj[v]:
            w = to[a]
            if sigma is FREE:
                tid = node_id(w, FREE)
            else:
                s2 = sigma + dl[a]
                if s2 + gap[w] > limit:
                    continue
                tid = node_id(w, s2)
            out_from.append(nid)
            out_to.append(tid)
            out_arc.append(a)
        if len(copies) + len(out_from) > budget:
            return None

    new_finals = {}
    for nid, (v, sigma) in enumerate(copies):
        if v in finals and (sigma is FREE or sigma + phi[v] <= limit):
            new_finals[nid] = finals[v]
    orig = np.array([v for v, _ in copies], dtype=np.int64)
    sel = np.array(out_arc, dtype=np.int64)
    new_arcs = (
        np.array(out_from, dtype=np.int64),
        np.array(out_to, dtype=np.int64),
        a_arc[sel],
        a_ac[sel],
        a_graph[sel],
    )
    return orig, new_arcs, new_finals


def _build(fst, node_frame, node_state, start, orig_nodes, arcs, finals, exact, split=False):
    """Renumber nodes by (frame, start first, original id) and pack a Lattice.

    ``orig_nodes[i]`` is the assembled node behind new-graph node ``i``; for an
    unsplit lattice the arcs still refer to assembled node ids.
    """
    a_from, a_to, a_arc, a_ac, a_graph = arcs
    orig_nodes = np.asarray(orig_nodes, dtype=np.int64)
    if not split and len(orig_nodes) != len(node_frame):
        # arc-pruned: arcs use assembled ids; map them onto the kept subset
        remap = np.full(len(node_frame), -1, dtype=np.int64)
        remap[orig_nodes] = np.arange(len(orig_nodes))
        a_from, a_to = remap[a_from], remap[a_to]
        finals = {int(remap[v]): c for v, c in finals.items()}
        start = int(remap[start])
    elif not split:
        pass
    else:
        start = 0  # copy 0 is the start copy
    frame = node_frame[orig_nodes]
    is_start = np.arange(len(orig_nodes)) == start
    order = np.lexsort((np.arange(len(orig_nodes)), orig_nodes, ~is_start, frame))
    new_id = np.empty(len(order), dtype=np.int64)
    new_id[order] = np.arange(len(order))

    a_from, a_to = new_id[a_from], new_id[a_to]
    arc_order = np.lexsort((a_arc, a_to, a_from))
    fin = sorted((int(new_id[v]), c) for v, c in finals.items())
    return Lattice(
        node_frame=frame[order],
        node_state=node_state[orig_nodes][order],
        arc_from=a_from[arc_order],
        arc_to=a_to[arc_order],
        arc_ilabel=fst.arc_ilabel[a_arc][arc_order],
        arc_olabel=fst.arc_olabel[a_arc][arc_order],
        arc_graph_cost=a_graph[arc_order],
        arc_acoustic_cost=a_ac[arc_order],
        arc_fst_arc=a_arc[arc_order],
        final_nodes=np.array([v for v, _ in fin], dtype=np.int64),
        final_costs=np.array([c for _, c in fin], dtype=np.float64),
        exact=exact,
        start=int(new_id[start]),
    )


# -- text format --------------------------------------------------------------


def write_lattice(lattice: Lattice, out: TextIO | None = None) -> str | None:
    """``from to ilabel olabel graph_cost acoustic_cost`` lines, then ``node final_cost``."""
    buf = io.StringIO() if out is None else out
    for f, t, i, o, g, a in lattice.arcs:
        buf.write(f"{f} {t} {i} {o} {g!r} {a!r}\n")
    for v, c in zip(lattice.final_nodes.tolist(), lattice.final_costs.tolist()):
        buf.write(f"{v} {c!r}\n")
    return buf.getvalue() if out is None else None


def read_lattice(source: str | TextIO) -> Lattice:
    """Parse the lattice text format; frames are recovered from emitting arcs.

    FST states are not part of the format and come back as -1.
    """
    text = source if isinstance(source, str) else source.read()
    arcs, finals = [], {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) == 6:
            arcs.append((int(fields[0]), int(fields[1]), int(fields[2]), int(fields[3]),
                         float(fields[4]), float(fields[5])))
        elif len(fields) == 2:
            finals[int(fields[0])] = float(fields[1])
        else:
            raise LatticeError(f"line {lineno}: expected 6 or 2 fields, got {len(fields)}")
    num_nodes = 1 + max([0, *(a[0] for a in arcs), *(a[1] for a in arcs), *finals])
    frame = np.full(num_nodes, -1, dtype=np.int64)
    frame[0] = 0
    adj = [[] for _ in range(num_nodes)]
    for f, t, i, *_ in arcs:
        adj[f].append((t, i != EPSILON))
    todo = deque([0])
    while todo:
        v = todo.popleft()
        for t, emitting in adj[v]:
            if frame[t] < 0:
                frame[t] = frame[v] + int(emitting)
                todo.append(t)
    cols = list(zip(*arcs)) if arcs else [[]] * 6
    fin = sorted(finals.items())
    return Lattice(
        node_frame=frame,
        node_state=np.full(num_nodes, -1, dtype=np.int64),
        arc_from=np.array(cols[0], dtype=np.int64),
        arc_to=np.array(cols[1], dtype=np.int64),
        arc_ilabel=np.array(cols[2], dtype=np.int64),
        arc_olabel=np.array(cols[3], dtype=np.int64),
        arc_graph_cost=np.array(cols[4], dtype=np.float64),
        arc_acoustic_cost=np.array(cols[5], dtype=np.float64),
        arc_fst_arc=np.full(len(arcs), -1, dtype=np.int64),
        final_nodes=np.array([v for v, _ in fin], dtype=np.int64),
        final_costs=np.array([c for _, c in fin], dtype=np.float64),
        exact=False,
    )
