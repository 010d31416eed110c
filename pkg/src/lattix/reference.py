"""Serial oracles: a per-state Viterbi beam decoder and a brute-force path enumerator.

Both use plain Python containers and share nothing with the batched
pipeline except the graph itself, so they serve as independent ground truth.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .decoder import UNBOUNDED
from .fst import EPSILON, CsrFst

MAX_ENUM_STATES = 8
MAX_ENUM_FRAMES = 8


class DecodeFailed(Exception):
    """No token survived, or no final state was reached."""


class InstanceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class Path:
    cost: float
    arcs: tuple[int, ...]
    words: tuple[int, ...]
    # frame of each arc: emitting arcs consume frames 0..T-1; an epsilon arc
    # taken after t emitting arcs has frame t
    frames: tuple[int, ...] = ()


@dataclass
class OracleResult:
    best_cost: float
    best_path_words: list[int]
    all_paths: list[Path] | None = None
    best_arcs: list[int] = field(default_factory=list)
    frame_best_costs: list[float] = field(default_factory=list)


def _loglike_rows(fst: CsrFst, loglikes) -> list[list[float]]:
    arr = np.asarray(getattr(loglikes, "loglikes", loglikes), dtype=np.float64)
    if arr.ndim != 2:
        arr = arr.reshape(0, fst.max_ilabel + 1)
    if len(arr) and arr.shape[1] <= fst.max_ilabel:
        raise ValueError("posterior matrix narrower than the graph's largest ilabel")
    return arr.tolist()


def _adjacency(fst: CsrFst):
    nxt = fst.arc_next_state.tolist()
    ilab = fst.arc_ilabel.tolist()
    wt = fst.arc_weight.tolist()
    emit, eps = [], []
    for s in range(fst.num_states):
        lo, mid, hi = int(fst.arc_offsets[s]), int(fst.emitting_end[s]), int(fst.arc_offsets[s + 1])
        emit.append([(a, nxt[a], ilab[a], wt[a]) for a in range(lo, mid)])
        eps.append([(a, nxt[a], wt[a]) for a in range(mid, hi)])
    return emit, eps


def _closure(tokens: dict, eps_adj, cutoff: float, frame: int) -> None:
    """Extend ``tokens`` in place along epsilon arcs (label correcting)."""
    work = deque(tokens)
    queued = set(work)
    while work:
        u = work.popleft()
        queued.discard(u)
        cu = tokens[u][0]
        for a, v, w in eps_adj[u]:
            c = cu + w
            if c < cutoff and (v not in tokens or c < tokens[v][0]):
                tokens[v] = (c, (frame, u, a))
                if v not in queued:
                    work.append(v)
                    queued.add(v)


def serial_decode(
    fst: CsrFst,
    loglikes,
    beam: float = math.inf,
    max_active: int = UNBOUNDED,
) -> OracleResult:
    """Token-passing Viterbi with one token per state per frame.

    After each emitting step the cutoff is ``best + beam``, lowered to the
    cost of the ``max_active``-th cheapest state if more states are active.
    The same cutoff bounds the frame's epsilon closure.

    Raises:
        DecodeFailed: a frame ends with no tokens, or no final state is active
            at the end.
    """
    rows = _loglike_rows(fst, loglikes)
    emit_adj, eps_adj = _adjacency(fst)
    # per frame: state -> (cost, backpointer (frame, prev_state, arc) or None)
    cur = {fst.start_state: (0.0, None)}
    _closure(cur, eps_adj, 0.0 + beam, 0)
    history = [cur]
    frame_best = [min(c for c, _ in cur.values())]
    for t, row in enumerate(rows):
        nxt: dict = {}
        for u, (cu, _) in cur.items():
            for a, v, ilabel, w in emit_adj[u]:
                c = cu + w + -row[ilabel]
                if v not in nxt or c < nxt[v][0]:
                    nxt[v] = (c, (t, u, a))
        if not nxt:
            raise DecodeFailed(f"no tokens survive frame {t + 1}")
        costs = sorted(c for c, _ in nxt.values())
        cutoff = costs[0] + beam
        if len(costs) > max_active:
            cutoff = min(cutoff, costs[max_active])
        cur = {v: tok for v, tok in nxt.items() if tok[0] < cutoff}
        if not cur:
            raise DecodeFailed(f"max-active cutoff removed every token at frame {t + 1}")
        _closure(cur, eps_adj, cutoff, t + 1)
        history.append(cur)
        frame_best.append(min(c for c, _ in cur.values()))

    finals = [(c + float(fst.final_costs[s]), s) for s, (c, _) in cur.items() if fst.is_final(s)]
    if not finals:
        raise DecodeFailed("no final state active after the last frame")
    best_cost, state = min(finals)

    arcs = []
    frame = len(rows)
    while True:
        bp = history[frame][state][1]
        if bp is None:
            break
        frame, state, arc = bp
        arcs.append(arc)
    arcs.reverse()
    words = [int(fst.arc_olabel[a]) for a in arcs if fst.arc_olabel[a] != EPSILON]
    return OracleResult(best_cost, words, best_arcs=arcs, frame_best_costs=frame_best)


def _cost_to_go(fst: CsrFst, rows, emit_adj, eps_adj) -> list[list[float]]:
    """Exact cheapest completion from (frame, state), by backward relaxation."""
    n = fst.num_states
    h = [[math.inf] * n for _ in range(len(rows) + 1)]
    for t in range(len(rows), -1, -1):
        cur = h[t]
        if t == len(rows):
            for s in range(n):
                cur[s] = float(fst.final_costs[s])
        else:
            row, later = rows[t], h[t + 1]
            for s in range(n):
                for _, v, ilabel, w in emit_adj[s]:
                    cur[s] = min(cur[s], w + -row[ilabel] + later[v])
        for _ in range(n):  # epsilon arcs within the frame; cycles are positive
            changed = False
            for s in range(n):
                for _, v, w in eps_adj[s]:
                    c = w + cur[v]
                    if c < cur[s]:
                        cur[s] = c
                        changed = True
            if not changed:
                break
    return h


def exhaustive_paths(
    fst: CsrFst,
    loglikes,
    cost_bound: float | None = None,
    slack: float | None = None,
    max_paths: int = 200_000,
    guard: bool = True,
) -> OracleResult:
    """Enumerate every complete path with cost within a bound, depth first.

    Give either an absolute ``cost_bound`` or a ``slack`` relative to the best
    complete path. Partial paths that cannot finish within the bound are cut
    using the exact cheapest completion. Path costs are summed along the path
    in order, as ``(cost + weight) + acoustic`` per arc, then the final cost.

    Raises:
        InstanceTooLarge: more than 8 states or 8 frames while ``guard`` is on,
            or more than ``max_paths`` paths.
        DecodeFailed: no complete path exists.
    """
    rows = _loglike_rows(fst, loglikes)
    if guard and (fst.num_states > MAX_ENUM_STATES or len(rows) > MAX_ENUM_FRAMES):
        raise InstanceTooLarge(
            f"exhaustive enumeration is limited to {MAX_ENUM_STATES} states and {MAX_ENUM_FRAMES} frames"
        )
    emit_adj, eps_adj = _adjacency(fst)
    h = _cost_to_go(fst, rows, emit_adj, eps_adj)
    best_possible = h[0][fst.start_state]
    if not math.isfinite(best_possible):
        raise DecodeFailed("no complete path")
    if cost_bound is None:
        cost_bound = best_possible + (slack if slack is not None else 0.0)
    limit = cost_bound + 1e-9 * max(1.0, abs(cost_bound))
    num_frames = len(rows)
    max_eps = fst.num_states
    olabel = fst.arc_olabel.tolist()
    paths: list[Path] = []
    arcs: list[int] = []
    frames: list[int] = []

    def visit(state: int, t: int, cost: float, eps_steps: int) -> None:
        if t == num_frames and fst.is_final(state):
            total = cost + float(fst.final_costs[state])
            if total <= limit:
                words = tuple(olabel[a] for a in arcs if olabel[a] != EPSILON)
                paths.append(Path(total, tuple(arcs), words, tuple(frames)))
                if len(paths) > max_paths:
                    raise InstanceTooLarge(f"more than {max_paths} paths within the bound")
        if eps_steps < max_eps:
            for a, v, w in eps_adj[state]:
                c = cost + w
                if c + h[t][v] <= limit:
                    arcs.append(a)
                    frames.append(t)
                    visit(v, t, c, eps_steps + 1)
                    arcs.pop()
                    frames.pop()
        if t < num_frames:
            row = rows[t]
            for a, v, ilabel, w in emit_adj[state]:
                c = cost + w + -row[ilabel]
                if c + h[t + 1][v] <= limit:
                    arcs.append(a)
                    frames.append(t)
                    visit(v, t + 1, c, 0)
                    arcs.pop()
                    frames.pop()

    visit(fst.start_state, 0, 0.0, 0)
    if not paths:
        raise DecodeFailed("no complete path within the bound")
    paths.sort(key=lambda p: (p.cost, p.arcs))
    best = paths[0]
    return OracleResult(best.cost, list(best.words), all_paths=paths, best_arcs=list(best.arcs))
