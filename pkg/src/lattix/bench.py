"""Throughput and beam-sweep benchmarks writing CSV."""

from __future__ import annotations

import csv
import dataclasses
import statistics
import time
from typing import Iterable, Sequence, TextIO

import numpy as np

from .decoder import DecoderConfig
from .generate import Corpus
from .metrics import best_path, wer
from .scheduler import Scheduler

FRAME_SECONDS = 0.01
THROUGHPUT_HEADER = ("config", "wall_clock", "xrtf")
BEAM_SWEEP_HEADER = ("beam", "wall_clock", "wer")


def timed_decode(corpus: Corpus, config: DecoderConfig, finalize: bool = True):
    """Decode every utterance; returns ``(decode seconds, lattices)``.

    Only frame advance is timed (submission through drain); lattice
    finalization runs afterwards, outside the measurement.
    """
    lattices = [None] * len(corpus.posteriors)
    elapsed = 0.0
    with Scheduler(corpus.fst, config) as sched:
        for lo in range(0, len(corpus.posteriors), config.n_channels):
            group = range(lo, min(lo + config.n_channels, len(corpus.posteriors)))
            start = time.perf_counter()
            opened = {}
            for i in group:
                cid = sched.open_channel()
                opened[cid] = i
                sched.submit_frames(cid, corpus.posteriors[i].loglikes, last=True)
            sched.drain()
            elapsed += time.perf_counter() - start
            if finalize:
                for cid, lat in sched.finalize_all().items():
                    lattices[opened[cid]] = lat
            else:
                sched.pipeline.flush()
                for cid in opened:
                    sched.close_channel(cid)
    return elapsed, lattices


def _median_time(corpus: Corpus, config: DecoderConfig, repeats: int) -> float:
    return statistics.median(timed_decode(corpus, config, finalize=False)[0] for _ in range(repeats))


def config_label(config: DecoderConfig) -> str:
    return f"lanes={config.n_lanes}/channels={config.n_channels}"


def bench_throughput(
    corpus: Corpus,
    grid: Sequence[dict],
    base: DecoderConfig | None = None,
    repeats: int = 5,
) -> list[tuple[str, float, float]]:
    """One ``(config, wall_clock, xrtf)`` row per grid point.

    ``xrtf`` is audio seconds decoded per wall-clock second, with one frame
    standing for 10 ms.
    """
    base = base or DecoderConfig()
    rows = []
    if not corpus.posteriors:
        return rows
    audio = FRAME_SECONDS * sum(p.num_frames for p in corpus.posteriors)
    for point in grid:
        cfg = dataclasses.replace(base, **point)
        wall = _median_time(corpus, cfg, repeats)
        rows.append((config_label(cfg), wall, audio / wall if wall > 0 else float("inf")))
    return rows


def bench_beam_sweep(
    corpus: Corpus,
    beams: Iterable[float],
    base: DecoderConfig | None = None,
    repeats: int = 5,
) -> list[tuple[float, float, float]]:
    """One ``(beam, wall_clock, wer)`` row per beam; WER is corpus-level."""
    base = base or DecoderConfig()
    rows = []
    for beam in beams:
        cfg = dataclasses.replace(base, beam=beam, lattice_beam=min(base.lattice_beam, beam))
        wall = _median_time(corpus, cfg, repeats)
        _, lattices = timed_decode(corpus, cfg)
        errors, words = 0.0, 0
        for utt, lat in zip(corpus.utt_ids, lattices):
            ref = corpus.references.get(utt)
            if not ref:
                continue
            hyp = best_path(lat)[0] if not isinstance(lat, Exception) else []
            errors += wer(hyp, ref) * len(ref)
            words += len(ref)
        rows.append((float(beam), wall, errors / words if words else float("nan")))
    return rows


def write_csv(header: Sequence[str], rows: Iterable[Sequence], out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([f"{x:.6g}" if isinstance(x, (float, np.floating)) else x for x in row])
