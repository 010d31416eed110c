"""Batched frame-advance pipeline.

Every stage works on a :class:`TokenBatch`, a struct-of-arrays holding the
tokens of all active lanes back to back (``lane_offsets`` delimits lanes).
One frame for the whole batch is::

    expand_emitting -> set_beam_via_max_active -> contract_and_preprocess
      -> expand_nonemitting -> preprocess_lattice -> soft prune -> emit

All per-token and per-arc work is done with array operations whose output
slots are assigned by prefix sums, so a batch of ``n`` lanes costs roughly
the same number of dispatches as a single lane.
"""

from __future__ import annotations

import logging
import math
import sys
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .fst import CsrFst

log = logging.getLogger(__name__)

NO_TOKEN = -1
UNBOUNDED = sys.maxsize

# ne stage modes, reported per lane
NE_NONE, NE_PERSISTENT, NE_WIDE = 0, 1, 2


class DecoderError(Exception):
    pass


class DivergenceError(DecoderError):
    """Non-emitting relaxation exceeded its iteration guard."""


class PosteriorWidthError(DecoderError):
    pass


@dataclass(frozen=True)
class DecoderConfig:
    beam: float = 15.0
    lattice_beam: float = 8.0
    max_active: int = 10000
    n_lanes: int = 8
    n_channels: int = 32
    ne_persistent_threshold: int = 4000
    histogram_bins: int = 256
    # Debug switch: when False every token (not only the per-state
    # representative) expands into the next frame.
    soft_prune: bool = True

    def __post_init__(self):
        if not self.beam > 0:
            raise ValueError(f"beam must be > 0, got {self.beam}")
        if not self.lattice_beam > 0:
            raise ValueError(f"lattice_beam must be > 0, got {self.lattice_beam}")
        if self.lattice_beam > self.beam:
            raise ValueError("lattice_beam must not exceed beam")
        if self.max_active < 1:
            raise ValueError("max_active must be >= 1")
        if not 1 <= self.n_lanes <= self.n_channels:
            raise ValueError("need 1 <= n_lanes <= n_channels")
        if self.ne_persistent_threshold < 1:
            raise ValueError("ne_persistent_threshold must be >= 1")
        if self.histogram_bins < 2:
            raise ValueError("histogram_bins must be >= 2")

    @classmethod
    def unpruned(cls, lattice_beam: float = math.inf, **kwargs) -> "DecoderConfig":
        """Infinite beam and unbounded max-active: exact Viterbi."""
        return cls(beam=math.inf, lattice_beam=lattice_beam, max_active=UNBOUNDED, **kwargs)

    @property
    def state_bytes(self) -> int:
        return decoder_state_bytes(self.max_active, self.n_channels, self.n_lanes)


def decoder_state_bytes(max_active: int, n_channels: int, n_lanes: int) -> int:
    """Closed-form decoder state footprint: 64·α·n_c + 544·α·n_l + 1024·n_l bytes."""
    return 64 * max_active * n_channels + 544 * max_active * n_lanes + 1024 * n_lanes


class Token(NamedTuple):
    fst_state: int
    cost: float
    prev_token: int
    arc_idx: int


_COLUMNS = {
    "state": np.int64,
    "cost": np.float64,
    "prev": np.int64,  # global token index of the predecessor, or NO_TOKEN
    "prev_state": np.int64,  # same-frame predecessor state of an epsilon token
    "arc": np.int64,
    "acoustic": np.float64,
    "index": np.int64,  # global token index once placed in a lattice segment
    "degree": np.int64,  # out-degree the next expand stage will use
    "rep": np.bool_,
}


@dataclass(eq=False)
class TokenBatch:
    """Tokens of several lanes stored as parallel arrays."""

    state: np.ndarray
    cost: np.ndarray
    prev: np.ndarray
    prev_state: np.ndarray
    arc: np.ndarray
    acoustic: np.ndarray
    index: np.ndarray
    degree: np.ndarray
    rep: np.ndarray
    lane_offsets: np.ndarray

    @classmethod
    def empty(cls, num_lanes: int = 1) -> "TokenBatch":
        cols = {name: np.empty(0, dtype=dt) for name, dt in _COLUMNS.items()}
        return cls(**cols, lane_offsets=np.zeros(num_lanes + 1, dtype=np.int64))

    @classmethod
    def from_columns(cls, lane_counts, **cols) -> "TokenBatch":
        n = int(np.sum(lane_counts))
        full = {}
        for name, dt in _COLUMNS.items():
            if name in cols:
                full[name] = np.asarray(cols[name], dtype=dt)
            elif name in ("prev", "prev_state", "arc", "index"):
                full[name] = np.full(n, NO_TOKEN, dtype=dt)
            else:
                full[name] = np.zeros(n, dtype=dt)
        offsets = np.zeros(len(lane_counts) + 1, dtype=np.int64)
        np.cumsum(lane_counts, out=offsets[1:])
        return cls(**full, lane_offsets=offsets)

    @classmethod
    def start(cls, fst: CsrFst, num_lanes: int = 1) -> "TokenBatch":
        """One start token (state ``fst.start_state``, cost 0) per lane."""
        return cls.from_columns(
            np.ones(num_lanes, dtype=np.int64),
            state=np.full(num_lanes, fst.start_state),
            cost=np.zeros(num_lanes),
            degree=np.full(num_lanes, fst.epsilon_degree[fst.start_state]),
            rep=np.ones(num_lanes, dtype=bool),
        )

    @classmethod
    def concat(cls, batches: Sequence["TokenBatch"]) -> "TokenBatch":
        if len(batches) == 1:
            return batches[0]
        cols = {name: np.concatenate([getattr(b, name) for b in batches]) for name in _COLUMNS}
        counts = np.concatenate([np.diff(b.lane_offsets) for b in batches])
        offsets = np.zeros(len(counts) + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        return cls(**cols, lane_offsets=offsets)

    def __len__(self) -> int:
        return len(self.state)

    def __getitem__(self, i: int) -> Token:
        return Token(int(self.state[i]), float(self.cost[i]), int(self.prev[i]), int(self.arc[i]))

    @property
    def num_lanes(self) -> int:
        return len(self.lane_offsets) - 1

    def lane_counts(self) -> np.ndarray:
        return np.diff(self.lane_offsets)

    def lane_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_lanes), self.lane_counts())

    def lane(self, i: int) -> "TokenBatch":
        lo, hi = int(self.lane_offsets[i]), int(self.lane_offsets[i + 1])
        cols = {name: getattr(self, name)[lo:hi] for name in _COLUMNS}
        return TokenBatch(**cols, lane_offsets=np.array([0, hi - lo], dtype=np.int64))

    def take(self, idx: np.ndarray, lanes: np.ndarray | None = None) -> "TokenBatch":
        """Select tokens by mask or index array; ``idx`` must keep lanes grouped."""
        if lanes is None:
            lanes = self.lane_ids()
        lanes = lanes[idx]
        cols = {name: getattr(self, name)[idx] for name in _COLUMNS}
        counts = np.bincount(lanes, minlength=self.num_lanes)
        offsets = np.zeros(self.num_lanes + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        return TokenBatch(**cols, lane_offsets=offsets)

    def tokens(self) -> list[Token]:
        return [self[i] for i in range(len(self))]


def segment_min(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Per-segment minimum (``+inf`` for empty segments)."""
    out = np.full(len(offsets) - 1, np.inf)
    counts = np.diff(offsets)
    nonempty = counts > 0
    if nonempty.any():
        out[nonempty] = np.minimum.reduceat(values, offsets[:-1][nonempty])
    return out


def segment_max(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    out = np.full(len(offsets) - 1, -np.inf)
    nonempty = np.diff(offsets) > 0
    if nonempty.any():
        out[nonempty] = np.maximum.reduceat(values, offsets[:-1][nonempty])
    return out


def _arc_slots(first_arc: np.ndarray, degree: np.ndarray):
    """Two-pass load balancing: one output slot per outgoing arc.

    Returns ``(owner, arc)``: for every slot, the index of the token that owns
    it and the graph arc it processes. Slots are assigned by an exclusive
    prefix sum over ``degree`` so no two arcs contend for an output position.
    """
    total = int(degree.sum())
    owner = np.repeat(np.arange(len(degree)), degree)
    excl = np.cumsum(degree) - degree
    arc = first_arc[owner] + (np.arange(total) - excl[owner])
    return owner, arc


def _as_lane_array(value, num_lanes: int) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(num_lanes, float(arr))
    return arr


def expand_emitting(fst: CsrFst, main: TokenBatch, loglikes: np.ndarray, beam) -> TokenBatch:
    """Expand every token over its emitting arcs for one frame.

    ``loglikes`` has one row per lane. A candidate costs
    ``token.cost + weight - loglike[ilabel]``. Tokens only contribute
    ``main.degree`` arcs, so soft-pruned tokens (degree 0) produce nothing.
    Candidates at or above the lane's running cutoff ``best + beam`` are
    dropped here; the contract stage re-filters against the final cutoff.
    """
    num_lanes = main.num_lanes
    loglikes = np.asarray(loglikes, dtype=np.float64).reshape(num_lanes, -1)
    owner, arc = _arc_slots(fst.arc_offsets[main.state], main.degree)
    if len(arc) == 0:
        return TokenBatch.empty(num_lanes)

    lanes = main.lane_ids()[owner]
    acoustic = -loglikes[lanes, fst.arc_ilabel[arc]]
    cost = main.cost[owner] + fst.arc_weight[arc] + acoustic

    slot_offsets = np.zeros(num_lanes + 1, dtype=np.int64)
    np.cumsum(np.bincount(lanes, minlength=num_lanes), out=slot_offsets[1:])
    best = segment_min(cost, slot_offsets)
    keep = cost < best[lanes] + _as_lane_array(beam, num_lanes)[lanes]

    aux = TokenBatch.from_columns(
        np.bincount(lanes[keep], minlength=num_lanes),
        state=fst.arc_next_state[arc[keep]],
        cost=cost[keep],
        prev=main.index[owner[keep]],
        arc=arc[keep],
        acoustic=acoustic[keep],
    )
    return aux


@dataclass
class AdaptiveBeamState:
    best_cost: float
    cutoff: float
    effective_beam: float
    histogram: np.ndarray = field(repr=False)
    cutoff_bin: int = -1  # -1 when max-active did not tighten the beam
    cutoff_bin_population: int = 0

    @property
    def tightened(self) -> bool:
        return self.cutoff_bin >= 0


def set_beam_via_max_active(
    aux: TokenBatch, beam: float, max_active: int, bins: int = 256
) -> list[AdaptiveBeamState]:
    """Pick each lane's cutoff from a histogram of its candidate costs.

    The histogram has ``bins`` equal-width bins over ``[best, best + beam)``.
    If at most ``max_active`` candidates fall under ``best + beam`` the beam is
    kept; otherwise the cutoff moves down to the upper edge of the first bin
    whose cumulative count reaches ``max_active``. Ties inside a bin cannot be
    split, so up to one bin's population may survive beyond ``max_active``.

    With an infinite beam the histogram spans ``[best, max cost]`` instead.
    """
    num_lanes = aux.num_lanes
    offsets = aux.lane_offsets
    lanes = aux.lane_ids()
    best = segment_min(aux.cost, offsets)
    has_tokens = np.isfinite(best)

    if math.isfinite(beam):
        span = np.full(num_lanes, float(beam))
    else:
        span = segment_max(aux.cost, offsets) - best
        span[~(span > 0)] = 1.0
    width = span / bins

    lane_best = best[lanes]
    lane_width = width[lanes]
    rel = aux.cost - lane_best
    under = rel < span[lanes] if math.isfinite(beam) else np.ones(len(rel), dtype=bool)
    b = np.clip(np.floor(rel / lane_width), 0, bins - 1).astype(np.int64)
    # pin bin membership to the exact boundary values used for the cutoff
    lower = lane_best + b * lane_width
    b -= (aux.cost < lower) & (b > 0)
    upper = lane_best + (b + 1) * lane_width
    b += (aux.cost >= upper) & (b < bins - 1)

    hist = np.bincount(lanes[under] * bins + b[under], minlength=num_lanes * bins).reshape(num_lanes, bins)
    cum = np.cumsum(hist, axis=1)
    total = cum[:, -1]
    tighten = total > max_active
    k = np.argmax(cum >= max_active, axis=1)

    states = []
    for i in range(num_lanes):
        if not has_tokens[i]:
            states.append(AdaptiveBeamState(math.inf, math.inf, float(beam), hist[i]))
        elif tighten[i]:
            edge = (k[i] + 1) * width[i]
            states.append(
                AdaptiveBeamState(
                    float(best[i]),
                    float(best[i] + edge),
                    float(edge),
                    hist[i],
                    cutoff_bin=int(k[i]),
                    cutoff_bin_population=int(hist[i, k[i]]),
                )
            )
        else:
            states.append(AdaptiveBeamState(float(best[i]), float(best[i] + beam), float(beam), hist[i]))
    return states


def contract_and_preprocess(fst: CsrFst, aux: TokenBatch, cutoffs) -> TokenBatch:
    """Compact the candidates under each lane's cutoff into a new main queue.

    The survivors' ``degree`` is set to their epsilon out-degree, which is
    what the non-emitting stage balances over.
    """
    cutoffs = _as_lane_array(cutoffs, aux.num_lanes)
    lanes = aux.lane_ids()
    main = aux.take(aux.cost < cutoffs[lanes], lanes)
    main.degree = fst.epsilon_degree[main.state]
    return main


@dataclass
class NonEmittingStats:
    modes: np.ndarray  # per lane: NE_NONE / NE_PERSISTENT / NE_WIDE (highest used)
    wide_iterations: int = 0
    persistent_pops: int = 0


def _min_per_key(keys: np.ndarray, costs: np.ndarray):
    order = np.argsort(keys)
    k = keys[order]
    first = np.ones(len(k), dtype=bool)
    first[1:] = k[1:] != k[:-1]
    return k[first], np.minimum.reduceat(costs[order], np.flatnonzero(first)) if len(k) else costs[:0]


def expand_nonemitting(
    fst: CsrFst,
    main: TokenBatch,
    cutoffs,
    persistent_threshold: int = 4000,
    soft_prune: bool = True,
) -> tuple[TokenBatch, NonEmittingStats]:
    """Follow epsilon chains until no cheaper token under the cutoff appears.

    First the per-state best costs are relaxed to convergence: lanes whose
    frontier holds at least ``persistent_threshold`` tokens iterate in the
    wide array mode; below it a lane finishes in a scalar work-queue loop.
    Both modes reach the same fixed point. Then every reached state expands
    its epsilon arcs once, from its best cost, which yields one token per
    (state, epsilon arc) and makes the token set independent of relaxation
    order.
    """
    cutoffs = _as_lane_array(cutoffs, main.num_lanes)
    if not soft_prune:
        return _expand_nonemitting_all_tokens(fst, main, cutoffs)

    num_lanes = main.num_lanes
    nq = fst.num_states
    eps_degree = fst.epsilon_degree
    stats = NonEmittingStats(modes=np.zeros(num_lanes, dtype=np.int8))
    if len(main) == 0 or fst.num_arcs == fst.num_emitting_arcs:
        return main, stats

    lanes = main.lane_ids()
    seed_keys, seed_cost = _min_per_key(lanes * nq + main.state, main.cost)
    dist = np.full(num_lanes * nq, np.inf)
    dist[seed_keys] = seed_cost
    touched = [seed_keys]
    guard = nq * (1 + fst.num_arcs)

    frontier = seed_keys[eps_degree[seed_keys % nq] > 0]
    persistent: dict[int, list[int]] = {}
    while len(frontier):
        f_lane = frontier // nq
        counts = np.bincount(f_lane, minlength=num_lanes)
        wide = counts >= persistent_threshold
        for lane in np.flatnonzero((counts > 0) & ~wide).tolist():
            persistent[lane] = (frontier[f_lane == lane] % nq).tolist()
        frontier = frontier[wide[f_lane]]
        if not len(frontier):
            break
        stats.modes[wide] = NE_WIDE
        stats.wide_iterations += 1
        if stats.wide_iterations > guard:
            raise DivergenceError("non-emitting expansion did not converge")

        states = frontier % nq
        owner, arc = _arc_slots(fst.emitting_end[states], eps_degree[states])
        src = frontier[owner]
        src_lane = src // nq
        cand = dist[src] + fst.arc_weight[arc]
        dst = src_lane * nq + fst.arc_next_state[arc]
        ok = (cand < cutoffs[src_lane]) & (cand < dist[dst])
        keys, costs = _min_per_key(dst[ok], cand[ok])
        dist[keys] = costs
        touched.append(keys)
        frontier = keys[eps_degree[keys % nq] > 0]

    if persistent:
        adjacency = fst.epsilon_adjacency()
        for lane, states in persistent.items():
            if stats.modes[lane] == NE_NONE:
                stats.modes[lane] = NE_PERSISTENT
            stats.persistent_pops += _relax_persistent(
                adjacency, dist, lane * nq, float(cutoffs[lane]), states, touched, guard
            )

    # one epsilon token per (reached state, epsilon arc), from the state's best cost
    reached = np.unique(np.concatenate(touched))
    states = reached % nq
    owner, arc = _arc_slots(fst.emitting_end[states], eps_degree[states])
    src = reached[owner]
    src_lane = src // nq
    cost = dist[src] + fst.arc_weight[arc]
    ok = cost < cutoffs[src_lane]
    eps = TokenBatch.from_columns(
        np.bincount(src_lane[ok], minlength=num_lanes),
        state=fst.arc_next_state[arc[ok]],
        cost=cost[ok],
        prev_state=states[owner[ok]],
        arc=arc[ok],
    )
    return _merge_lanes(main, eps), stats


def _relax_persistent(adjacency, dist, base, cutoff, states, touched, guard) -> int:
    """Scalar FIFO label-correcting loop for one lane."""
    queue = deque(states)
    queued = set(states)
    new_keys = []
    pops = 0
    while queue:
        u = queue.popleft()
        queued.discard(u)
        pops += 1
        if pops > guard:
            raise DivergenceError("non-emitting expansion did not converge")
        du = dist[base + u]
        for v, w, _ in adjacency[u]:
            c = du + w
            if c < cutoff and c < dist[base + v]:
                dist[base + v] = c
                new_keys.append(base + v)
                if adjacency[v] and v not in queued:
                    queue.append(v)
                    queued.add(v)
    if new_keys:
        touched.append(np.asarray(new_keys, dtype=np.int64))
    return pops


def _expand_nonemitting_all_tokens(fst: CsrFst, main: TokenBatch, cutoffs: np.ndarray):
    """Debug path without representatives: every token follows every epsilon arc."""
    num_lanes = main.num_lanes
    stats = NonEmittingStats(modes=np.full(num_lanes, NE_WIDE, dtype=np.int8))
    eps_degree = fst.epsilon_degree
    parts = [main]
    f_state, f_cost, f_lane = main.state, main.cost, main.lane_ids()
    guard = fst.num_states * (1 + fst.num_arcs)
    while len(f_state):
        stats.wide_iterations += 1
        if stats.wide_iterations > guard:
            raise DivergenceError("non-emitting expansion did not converge")
        owner, arc = _arc_slots(fst.emitting_end[f_state], eps_degree[f_state])
        cost = f_cost[owner] + fst.arc_weight[arc]
        lane = f_lane[owner]
        ok = cost < cutoffs[lane]
        order = np.argsort(lane[ok], kind="stable")
        new = TokenBatch.from_columns(
            np.bincount(lane[ok], minlength=num_lanes),
            state=fst.arc_next_state[arc[ok]][order],
            cost=cost[ok][order],
            prev_state=f_state[owner[ok]][order],
            arc=arc[ok][order],
        )
        parts.append(new)
        f_state, f_cost, f_lane = new.state, new.cost, new.lane_ids()
    merged = parts[0]
    for p in parts[1:]:
        merged = _merge_lanes(merged, p)
    return merged, stats


def _merge_lanes(a: TokenBatch, b: TokenBatch) -> TokenBatch:
    """Concatenate two batches lane by lane (a's tokens first in each lane)."""
    if len(b) == 0:
        return a
    lanes = np.concatenate([a.lane_ids(), b.lane_ids()])
    order = np.argsort(lanes, kind="stable")
    cols = {name: np.concatenate([getattr(a, name), getattr(b, name)])[order] for name in _COLUMNS}
    offsets = a.lane_offsets + b.lane_offsets
    return TokenBatch(**cols, lane_offsets=offsets)


@dataclass
class FrameSummary:
    frame: int
    num_tokens: int  # main_q size right after contract
    best_cost: float
    num_tokens_total: int = 0  # after non-emitting expansion
    num_kept: int = 0  # tokens stored in the lattice segment
    cutoff: float = math.inf
    effective_beam: float = math.inf
    cutoff_bin_population: int = 0
    ne_mode: int = NE_NONE


SegmentSink = Callable[[object, "object"], None]


class BatchedDecoder:
    """Runs the frame pipeline over whichever lanes are handed to it.

    Lanes are duck-typed working sets (see ``scheduler.LaneSlot``) exposing
    ``main_q``, ``frame_index``, ``next_index``, ``initialized``,
    ``beam_state`` and ``channel_key``. ``emit`` receives
    ``(channel_key, segment)`` for every finished frame and must not block.
    """

    def __init__(self, fst: CsrFst, config: DecoderConfig, emit: SegmentSink | None = None):
        self.fst = fst
        self.config = config
        self.emit = emit or (lambda key, segment: None)
        self.min_width = fst.max_ilabel + 1

    def check_rows(self, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2:
            raise PosteriorWidthError("posterior rows must be a 2-D frame x ilabel array")
        if len(rows) and rows.shape[1] < self.min_width:
            raise PosteriorWidthError(
                f"posterior width {rows.shape[1]} too small for graph max ilabel {self.min_width - 1}"
            )
        return rows

    def initialize(self, lanes: Sequence) -> dict:
        """Epsilon closure of the start token: frame 0 of each lane's lattice."""
        from .lattice import preprocess_lattice

        lanes = [lane for lane in lanes if not lane.initialized]
        if not lanes:
            return {}
        cfg = self.config
        main = TokenBatch.start(self.fst, len(lanes))
        cutoffs = np.full(len(lanes), 0.0 + cfg.beam)
        contracted = np.ones(len(lanes), dtype=np.int64)
        main, ne = expand_nonemitting(self.fst, main, cutoffs, cfg.ne_persistent_threshold, cfg.soft_prune)
        beams = [
            AdaptiveBeamState(0.0, float(c), float(cfg.beam), np.zeros(cfg.histogram_bins, dtype=np.int64))
            for c in cutoffs
        ]
        return self._finish_frame(lanes, main, beams, contracted, ne, preprocess_lattice, init=True)

    def advance_decoding(self, work: Sequence[tuple[object, np.ndarray]]) -> dict:
        """Decode ``rows`` on each ``(lane, rows)`` pair; lanes advance in lockstep.

        Returns ``{channel_key: [FrameSummary, ...]}``; frame 0 (the start
        closure) is included the first time a lane is decoded.
        """
        from .lattice import preprocess_lattice

        work = [(lane, self.check_rows(rows)) for lane, rows in work]
        summaries: dict = {lane.channel_key: [] for lane, _ in work}
        for key, frames in self.initialize([lane for lane, _ in work]).items():
            summaries[key].extend(frames)

        cfg = self.config
        num_steps = max((len(rows) for _, rows in work), default=0)
        for t in range(num_steps):
            active = [(lane, rows[t]) for lane, rows in work if t < len(rows)]
            lanes = [lane for lane, _ in active]
            main = TokenBatch.concat([lane.main_q for lane in lanes])
            loglikes = np.stack([row for _, row in active])

            aux = expand_emitting(self.fst, main, loglikes, cfg.beam)
            beams = set_beam_via_max_active(aux, cfg.beam, cfg.max_active, cfg.histogram_bins)
            cutoffs = np.array([b.cutoff for b in beams])
            main = contract_and_preprocess(self.fst, aux, cutoffs)
            contracted = main.lane_counts()
            main, ne = expand_nonemitting(self.fst, main, cutoffs, cfg.ne_persistent_threshold, cfg.soft_prune)
            for key, frames in self._finish_frame(lanes, main, beams, contracted, ne, preprocess_lattice).items():
                summaries[key].extend(frames)
        return summaries

    def _finish_frame(self, lanes, main, beams, contracted, ne, preprocess_lattice, init=False):
        cfg = self.config
        frames = np.array([0 if init else lane.frame_index + 1 for lane in lanes], dtype=np.int64)
        bases = np.array([lane.next_index for lane in lanes], dtype=np.int64)
        segments, next_main = preprocess_lattice(
            self.fst, main, frames, bases, cfg.lattice_beam, soft_prune=cfg.soft_prune
        )
        out = {}
        for i, (lane, seg) in enumerate(zip(lanes, segments)):
            lane.main_q = next_main.lane(i)
            lane.frame_index = int(frames[i])
            lane.next_index += len(seg)
            lane.beam_state = beams[i]
            lane.initialized = True
            self.emit(lane.channel_key, seg)
            b = beams[i]
            out[lane.channel_key] = [
                FrameSummary(
                    frame=int(frames[i]),
                    num_tokens=int(contracted[i]),
                    best_cost=seg.best_cost,
                    num_tokens_total=int(main.lane_offsets[i + 1] - main.lane_offsets[i]),
                    num_kept=len(seg),
                    cutoff=b.cutoff,
                    effective_beam=b.effective_beam,
                    cutoff_bin_population=b.cutoff_bin_population,
                    ne_mode=int(ne.modes[i]),
                )
            ]
        return out
