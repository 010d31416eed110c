"""Channels, lanes, and the streaming decode loop.

A *channel* is the persistent state of one utterance stream; a *lane* is a
working slot of the batched decoder. Channels with pending frames wait in a
FIFO ready queue; each step binds up to ``n_lanes`` of them to lanes,
advances them together, and saves their state back (a context switch).
"""

from __future__ import annotations

import logging
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .decoder import AdaptiveBeamState, BatchedDecoder, DecoderConfig, FrameSummary, TokenBatch
from .fst import CsrFst
from .lattice import Lattice, SegmentPipeline, finalize_lattice

log = logging.getLogger(__name__)

IDLE, READY, ACTIVE, FINISHED = "idle", "ready", "active", "finished"


class SchedulerError(Exception):
    pass


class ChannelExhaustedError(SchedulerError):
    pass


class ChannelStateError(SchedulerError):
    pass


@dataclass
class ChannelState:
    """Everything needed to resume a stream on any lane."""

    channel_id: int
    frame_index: int = 0
    kept_tokens: TokenBatch | None = None
    beam_state: AdaptiveBeamState | None = None
    status: str = IDLE
    # resume cursor: global index of the next lattice token
    next_index: int = 0
    initialized: bool = False
    # bumped on every open so late segments of a reused id are told apart
    generation: int = 0
    pending: deque = field(default_factory=deque, repr=False)
    ended: bool = False
    summaries: list[FrameSummary] = field(default_factory=list, repr=False)

    @property
    def key(self) -> tuple[int, int]:
        return (self.channel_id, self.generation)


@dataclass
class LaneSlot:
    lane_id: int
    bound_channel: int | None = None
    main_q: TokenBatch | None = None
    frame_index: int = 0
    next_index: int = 0
    initialized: bool = False
    beam_state: AdaptiveBeamState | None = None
    channel_key: tuple[int, int] | None = None


def default_threads() -> int:
    value = os.environ.get("LATTIX_THREADS")
    if value:
        return max(1, int(value))
    return os.cpu_count() or 1


class Scheduler:
    """Streaming front end over a :class:`BatchedDecoder`.

    Args:
        fst: decode graph shared by every channel.
        config: decoder configuration; ``n_lanes`` and ``n_channels`` size
            the lane and channel pools.
        pipeline: segment transfer queue; one is created if omitted.
        frames_per_step: cap on frames a channel decodes per step (``None``
            decodes everything pending).
    """

    def __init__(
        self,
        fst: CsrFst,
        config: DecoderConfig | None = None,
        pipeline: SegmentPipeline | None = None,
        frames_per_step: int | None = None,
    ):
        self.fst = fst
        self.config = config or DecoderConfig()
        self._own_pipeline = pipeline is None
        self.pipeline = pipeline or SegmentPipeline()
        self.decoder = BatchedDecoder(fst, self.config, emit=self.pipeline.emit)
        self.frames_per_step = frames_per_step
        self.channels = [ChannelState(i) for i in range(self.config.n_channels)]
        self.lanes = [LaneSlot(i) for i in range(self.config.n_lanes)]
        self._open: set[int] = set()
        self._ready: deque[int] = deque()

    # -- channel lifecycle ---------------------------------------------------

    def open_channel(self) -> int:
        """Reserve the lowest free channel id."""
        free = [c.channel_id for c in self.channels if c.channel_id not in self._open]
        if not free:
            raise ChannelExhaustedError(f"all {len(self.channels)} channels are in use")
        ch = self.channels[free[0]]
        generation = ch.generation + 1
        ch.__init__(ch.channel_id, kept_tokens=TokenBatch.start(self.fst), generation=generation)
        self._open.add(ch.channel_id)
        self.pipeline.open(ch.key)
        return ch.channel_id

    def _channel(self, channel_id: int) -> ChannelState:
        if channel_id not in self._open:
            raise ChannelStateError(f"channel {channel_id} is not open")
        return self.channels[channel_id]

    def submit_frames(self, channel_id: int, rows, last: bool = False) -> None:
        """Queue posterior rows for a channel; decodes once enough channels are ready."""
        ch = self._channel(channel_id)
        if ch.ended:
            raise ChannelStateError(f"channel {channel_id} already received its last frame")
        rows = self.decoder.check_rows(rows)
        ch.pending.extend(rows)
        ch.ended = last
        if (ch.pending or not ch.initialized) and ch.status != READY:
            ch.status = READY
            self._ready.append(channel_id)
        if len(self._ready) >= len(self.lanes):
            self.step()

    def close_channel(self, channel_id: int) -> None:
        """Release a channel without finalizing; in-flight segments are discarded."""
        ch = self._channel(channel_id)
        self._open.discard(channel_id)
        if channel_id in self._ready:
            self._ready.remove(channel_id)
        ch.status = FINISHED
        ch.pending.clear()
        self.pipeline.close(ch.key)

    # -- decoding ------------------------------------------------------------

    def step(self) -> int:
        """Run one batched step over up to ``n_lanes`` ready channels.

        Returns the number of channels advanced.
        """
        batch = []
        while self._ready and len(batch) < len(self.lanes):
            batch.append(self.channels[self._ready.popleft()])
        if not batch:
            return 0
        work = []
        for lane, ch in zip(self.lanes, batch):
            self.context_switch_restore(ch, lane)
            n = len(ch.pending) if self.frames_per_step is None else min(self.frames_per_step, len(ch.pending))
            if n:
                rows = np.array([ch.pending.popleft() for _ in range(n)])
            else:
                rows = np.empty((0, self.fst.max_ilabel + 1), dtype=np.float32)
            work.append((lane, rows))
        summaries = self.decoder.advance_decoding(work)
        for lane, ch in zip(self.lanes, batch):
            ch.summaries.extend(summaries.get(ch.key, ()))
            self.context_switch_save(lane, ch)
            if ch.pending:
                ch.status = READY
                self._ready.append(ch.channel_id)
            else:
                ch.status = IDLE
        return len(batch)

    def drain(self) -> None:
        """Decode every pending frame."""
        while self._ready:
            self.step()

    def context_switch_save(self, lane: LaneSlot, channel: ChannelState | None = None) -> ChannelState:
        """Copy a lane's working set back into its channel and unbind the lane."""
        if lane.bound_channel is None:
            raise ChannelStateError(f"lane {lane.lane_id} is not bound")
        channel = channel or self.channels[lane.bound_channel]
        if lane.bound_channel != channel.channel_id:
            raise ChannelStateError(f"lane {lane.lane_id} is not bound to channel {channel.channel_id}")
        channel.kept_tokens = lane.main_q
        channel.frame_index = lane.frame_index
        channel.next_index = lane.next_index
        channel.initialized = lane.initialized
        channel.beam_state = lane.beam_state
        lane.bound_channel = None
        lane.main_q = None
        lane.channel_key = None
        return channel

    def context_switch_restore(self, channel: ChannelState, lane: LaneSlot) -> None:
        if lane.bound_channel is not None:
            raise ChannelStateError(f"lane {lane.lane_id} is occupied by channel {lane.bound_channel}")
        channel.status = ACTIVE
        lane.bound_channel = channel.channel_id
        lane.channel_key = channel.key
        lane.main_q = channel.kept_tokens
        lane.frame_index = channel.frame_index
        lane.next_index = channel.next_index
        lane.initialized = channel.initialized
        lane.beam_state = channel.beam_state

    # -- results ---------------------------------------------------------------

    def _segments(self, channel_id: int):
        ch = self._channel(channel_id)
        if ch.pending or not ch.initialized:
            self.drain()
            if not ch.initialized:  # nothing was ever submitted
                lane = self.lanes[0]
                self.context_switch_restore(ch, lane)
                self.decoder.initialize([lane])
                self.context_switch_save(lane, ch)
        self.pipeline.flush()
        return ch, self.pipeline.sink(ch.key).snapshot()

    def partial_result(self, channel_id: int) -> Lattice:
        """Lattice over the frames decoded so far; the stream stays open."""
        ch, segments = self._segments(channel_id)
        return finalize_lattice(self.fst, segments, self.config.lattice_beam, partial=not ch.ended)

    def finalize(self, channel_id: int) -> Lattice:
        """Final lattice of a channel; the channel is released afterwards."""
        ch, segments = self._segments(channel_id)
        try:
            return finalize_lattice(self.fst, segments, self.config.lattice_beam)
        finally:
            self.close_channel(channel_id)

    def finalize_all(self, threads: int | None = None) -> dict[int, Lattice | Exception]:
        """Finalize every open channel on a thread pool.

        Failures are returned in place of the lattice rather than raised.
        """
        self.drain()
        for cid in sorted(self._open):
            if not self.channels[cid].initialized:
                self._segments(cid)
        self.pipeline.flush()
        jobs = {cid: self.pipeline.sink(self.channels[cid].key).snapshot() for cid in sorted(self._open)}

        def run(segments):
            try:
                return finalize_lattice(self.fst, segments, self.config.lattice_beam)
            except Exception as exc:  # reported per channel
                return exc

        with ThreadPoolExecutor(max_workers=threads or default_threads()) as pool:
            results = dict(zip(jobs, pool.map(run, jobs.values())))
        for cid in jobs:
            self.close_channel(cid)
        return results

    def close(self) -> None:
        if self._own_pipeline:
            self.pipeline.stop()

    def __enter__(self) -> "Scheduler":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def decode_utterances(
    fst: CsrFst,
    utterances,
    config: DecoderConfig | None = None,
    threads: int | None = None,
) -> list[Lattice | Exception]:
    """Decode whole utterances through the streaming scheduler.

    Channels are opened as they free up, so any number of utterances can be
    decoded with a fixed channel pool.
    """
    config = config or DecoderConfig()
    results: list = [None] * len(utterances)
    with Scheduler(fst, config) as sched:
        todo = deque(enumerate(utterances))
        while todo:
            opened = {}
            while todo and len(opened) < config.n_channels:
                i, loglikes = todo.popleft()
                cid = sched.open_channel()
                opened[cid] = i
                sched.submit_frames(cid, loglikes, last=True)
            for cid, lat in sched.finalize_all(threads).items():
                results[opened[cid]] = lat
    return results
