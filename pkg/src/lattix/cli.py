"""Command line: ``lattix generate | decode | bench``.

Exit codes: 0 success, 1 some utterances failed, 2 invalid invocation.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import BEAM_SWEEP_HEADER, THROUGHPUT_HEADER, bench_beam_sweep, bench_throughput, write_csv
from .decoder import UNBOUNDED, DecoderConfig
from .fst import FstError, build_fst, load_fst
from .generate import load_corpus, read_manifest, read_refs, write_corpus
from .lattice import Lattice, write_lattice
from .metrics import best_path, lattice_density, oracle_wer, wer
from .posteriors import PosteriorFormatError, load_posteriors
from .reference import DecodeFailed, serial_decode
from .scheduler import decode_utterances

log = logging.getLogger("lattix")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _max_active(text: str) -> int:
    if text.lower() in ("inf", "infinity", "unbounded"):
        return UNBOUNDED
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("max-active must be >= 1")
    return value


def _epsilon_frac(text: str) -> float:
    value = float(text)
    if not 0.0 <= value < 1.0:
        raise argparse.ArgumentTypeError("epsilon-frac must be in [0, 1)")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    d = DecoderConfig()
    p.add_argument("--beam", type=float, default=d.beam)
    p.add_argument("--lattice-beam", type=float, default=d.lattice_beam)
    p.add_argument("--max-active", type=_max_active, default=d.max_active, help="integer or 'inf'")
    p.add_argument("--nlanes", type=_positive_int, default=d.n_lanes)
    p.add_argument("--nchannels", type=_positive_int, default=d.n_channels)
    p.add_argument("--ne-persistent-threshold", type=_positive_int, default=d.ne_persistent_threshold)
    p.add_argument("--histogram-bins", type=_positive_int, default=d.histogram_bins)


def _config(args) -> DecoderConfig:
    try:
        return DecoderConfig(
            beam=args.beam,
            lattice_beam=args.lattice_beam,
            max_active=args.max_active,
            n_lanes=args.nlanes,
            n_channels=args.nchannels,
            ne_persistent_threshold=args.ne_persistent_threshold,
            histogram_bins=args.histogram_bins,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lattix", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lattix {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic corpus")
    g.add_argument("--states", type=_positive_int, required=True)
    g.add_argument("--arcs", type=_positive_int, required=True)
    g.add_argument("--epsilon-frac", type=_epsilon_frac, default=0.1)
    g.add_argument("--frames", type=_positive_int, required=True)
    g.add_argument("--utts", type=_positive_int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--ilabels", type=_positive_int, default=10)
    g.add_argument("--words", type=_positive_int, default=20)
    g.add_argument("--sharpness", type=float, default=4.0)
    g.add_argument("--out", type=Path, required=True)

    d = sub.add_parser("decode", help="decode posteriors into lattices and transcripts")
    d.add_argument("--graph", type=Path, required=True)
    d.add_argument("posteriors", nargs="*", type=Path)
    d.add_argument("--list", type=Path, help="manifest with one 'utt_id path' per line")
    d.add_argument("--engine", choices=("parallel", "serial"), default="parallel")
    d.add_argument("--out", type=Path, required=True)
    d.add_argument("--refs", type=Path, help="reference transcripts, 'utt_id w1 w2 ...'")
    d.add_argument("--metrics", type=Path, help="per-utterance metrics CSV")
    _add_config_flags(d)

    b = sub.add_parser("bench", help="throughput and beam-sweep benchmarks")
    b.add_argument("kind", choices=("throughput", "beam-sweep"))
    b.add_argument("--corpus", type=Path, required=True)
    b.add_argument("--grid", default="1:64,8:64", help="comma list of lanes:channels")
    b.add_argument("--beams", default="6,10,15")
    b.add_argument("--repeats", type=_positive_int, default=5)
    b.add_argument("--out", type=Path, help="CSV path (default stdout)")
    _add_config_flags(b)
    return parser


def cmd_generate(args) -> int:
    try:
        write_corpus(
            args.out, args.states, args.arcs, args.epsilon_frac, args.frames, args.utts, args.seed,
            num_ilabels=args.ilabels, num_words=args.words, sharpness=args.sharpness,
        )
    except OSError as exc:
        print(f"lattix: cannot write corpus to {args.out}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def _inputs(args) -> list[tuple[str, Path]]:
    entries = read_manifest(args.list) if args.list else []
    entries += [(p.stem, p) for p in args.posteriors]
    if not entries:
        raise UsageError("no posterior inputs (give paths or --list)")
    return entries


def _linear_lattice(fst, arcs: list[int], loglikes: np.ndarray) -> Lattice:
    """Single-path lattice along a serial one-best path."""
    frames, acoustic, t = [], [], 0
    for a in arcs:
        frames.append(t)
        if fst.arc_ilabel[a] != 0:
            acoustic.append(-float(loglikes[t, fst.arc_ilabel[a]]))
            t += 1
        else:
            acoustic.append(0.0)
    n = len(arcs)
    states = [fst.start_state] + [int(fst.arc_next_state[a]) for a in arcs]
    node_frame = [0] + [f + int(fst.arc_ilabel[a] != 0) for f, a in zip(frames, arcs)]
    idx = np.array(arcs, dtype=np.int64)
    return Lattice(
        node_frame=np.array(node_frame, dtype=np.int64),
        node_state=np.array(states, dtype=np.int64),
        arc_from=np.arange(n, dtype=np.int64),
        arc_to=np.arange(1, n + 1, dtype=np.int64),
        arc_ilabel=fst.arc_ilabel[idx],
        arc_olabel=fst.arc_olabel[idx],
        arc_graph_cost=fst.arc_weight[idx],
        arc_acoustic_cost=np.array(acoustic, dtype=np.float64),
        arc_fst_arc=idx,
        final_nodes=np.array([n], dtype=np.int64),
        final_costs=np.array([float(fst.final_costs[states[-1]])]),
    )


def cmd_decode(args) -> int:
    if not args.graph.is_file():
        print(f"lattix: graph file not found: {args.graph}", file=sys.stderr)
        return EXIT_USAGE
    config = _config(args)
    try:
        fst = load_fst(args.graph.read_text())
    except FstError as exc:
        print(f"lattix: invalid graph {args.graph}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    entries = _inputs(args)
    refs = read_refs(args.refs) if args.refs else {}
    args.out.mkdir(parents=True, exist_ok=True)

    failures = 0
    loaded = {}
    for utt, path in entries:
        try:
            post = load_posteriors(path)
        except (OSError, PosteriorFormatError) as exc:
            print(f"lattix: {utt}: cannot read {path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        if post.num_frames and post.num_ilabels <= fst.max_ilabel:
            print(
                f"lattix: {utt}: posterior width {post.num_ilabels} < graph max ilabel {fst.max_ilabel} + 1",
                file=sys.stderr,
            )
            failures += 1
            continue
        loaded[utt] = post.loglikes

    results: dict[str, Lattice | Exception] = {}
    if args.engine == "parallel":
        lattices = decode_utterances(fst, list(loaded.values()), config)
        results = dict(zip(loaded, lattices))
    else:
        for utt, ll in loaded.items():
            try:
                res = serial_decode(fst, ll, config.beam, config.max_active)
                results[utt] = _linear_lattice(fst, res.best_arcs, ll)
            except DecodeFailed as exc:
                results[utt] = exc

    rows = []
    with open(args.out / "transcripts.txt", "w") as transcripts:
        for utt, lat in results.items():
            if isinstance(lat, Exception):
                print(f"lattix: {utt}: decode failed: {lat}", file=sys.stderr)
                failures += 1
                continue
            words, cost = best_path(lat)
            (args.out / f"{utt}.lat").write_text(write_lattice(lat))
            transcripts.write(" ".join([utt, *map(str, words)]) + "\n")
            ref = refs.get(utt)
            if ref:
                rows.append((utt, wer(words, ref), oracle_wer(lat, ref), lattice_density(lat), cost))
            else:
                rows.append((utt, math.nan, math.nan, lattice_density(lat), cost))
    if args.metrics:
        with open(args.metrics, "w") as out:
            write_csv(("utt_id", "wer", "ower", "density", "best_cost"), rows, out)
    return EXIT_PARTIAL if failures else EXIT_OK


def _parse_grid(text: str) -> list[dict]:
    grid = []
    for item in text.split(","):
        try:
            lanes, channels = (int(x) for x in item.split(":"))
        except ValueError:
            raise UsageError(f"bad grid point {item!r}; expected lanes:channels") from None
        grid.append({"n_lanes": lanes, "n_channels": channels})
    return grid


def cmd_bench(args) -> int:
    if not (args.corpus / "graph.fst").is_file():
        print(f"lattix: corpus not found: {args.corpus}", file=sys.stderr)
        return EXIT_USAGE
    corpus = load_corpus(args.corpus)
    base = _config(args)
    if args.kind == "throughput":
        try:
            rows = bench_throughput(corpus, _parse_grid(args.grid), base, args.repeats)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        header = THROUGHPUT_HEADER
    else:
        beams = [float(b) for b in args.beams.split(",")]
        rows = bench_beam_sweep(corpus, beams, base, args.repeats)
        header = BEAM_SWEEP_HEADER
    if args.out:
        with open(args.out, "w") as out:
            write_csv(header, rows, out)
    else:
        write_csv(header, rows, sys.stdout)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    handlers = {"generate": cmd_generate, "decode": cmd_decode, "bench": cmd_bench}
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"lattix: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
