"""Synthetic decode graphs, posteriors, and corpora."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fst import CsrFst, build_fst, load_fst, write_fst
from .posteriors import PosteriorMatrix, generate_synthetic, load_posteriors, save_posteriors


@dataclass
class Instance:
    fst: CsrFst
    posteriors: PosteriorMatrix
    reference: list[int]  # words of the planted path
    planted_arcs: list[int]


def random_fst(
    num_states: int,
    num_arcs: int,
    epsilon_frac: float = 0.1,
    seed: int = 0,
    num_ilabels: int = 10,
    num_words: int = 20,
    final_frac: float = 0.2,
) -> CsrFst:
    """Random graph in which every state can finish in one emitting step.

    Each state gets a guaranteed emitting arc (its first arc) to a final
    state, carrying a word. Epsilon arcs only go from lower to higher state
    ids with positive weight, so the epsilon subgraph is acyclic.
    """
    if num_states < 1:
        raise ValueError("need at least one state")
    rng = np.random.default_rng(seed)
    num_finals = max(1, int(round(final_frac * num_states)))
    finals_ids = rng.choice(num_states, size=num_finals, replace=False)
    finals = {int(s): float(rng.uniform(0.0, 1.0)) for s in finals_ids}

    arcs = []
    for s in range(num_states):
        arcs.append(
            (s, int(rng.choice(finals_ids)), int(rng.integers(1, num_ilabels + 1)),
             int(rng.integers(1, num_words + 1)), float(rng.uniform(0.0, 2.0)))
        )
    for _ in range(max(0, num_arcs - num_states)):
        olabel = int(rng.integers(1, num_words + 1)) if rng.random() < 0.5 else 0
        if num_states > 1 and rng.random() < epsilon_frac:
            src, dst = sorted(rng.choice(num_states, size=2, replace=False).tolist())
            arcs.append((src, dst, 0, olabel, float(rng.uniform(0.1, 2.0))))
        else:
            src, dst = (int(x) for x in rng.integers(0, num_states, size=2))
            arcs.append((src, dst, int(rng.integers(1, num_ilabels + 1)), olabel, float(rng.uniform(0.0, 2.0))))
    return build_fst(arcs, finals)


def plant_path(fst: CsrFst, num_frames: int, rng: np.random.Generator, epsilon_prob: float = 0.3) -> list[int]:
    """Random complete path with exactly ``num_frames`` emitting arcs.

    The last emitting arc is the guaranteed arc into a final state.
    """
    state = fst.start_state
    arcs = []
    for t in range(num_frames):
        eps = range(int(fst.emitting_end[state]), int(fst.arc_offsets[state + 1]))
        if len(eps) and rng.random() < epsilon_prob:
            a = int(rng.choice(eps))
            arcs.append(a)
            state = int(fst.arc_next_state[a])
        lo, hi = int(fst.arc_offsets[state]), int(fst.emitting_end[state])
        a = lo if t == num_frames - 1 else int(rng.integers(lo, hi))
        arcs.append(a)
        state = int(fst.arc_next_state[a])
    return arcs


def make_instance(
    seed: int,
    num_states: int = 20,
    num_arcs: int = 60,
    num_frames: int = 10,
    epsilon_frac: float = 0.1,
    sharpness: float = 4.0,
    num_ilabels: int = 10,
    num_words: int = 20,
) -> Instance:
    """Graph plus posteriors that peak on a planted path's input labels."""
    fst = random_fst(num_states, num_arcs, epsilon_frac, seed, num_ilabels, num_words)
    rng = np.random.default_rng([seed, 1])
    arcs = plant_path(fst, num_frames, rng)
    peaks = np.array([fst.arc_ilabel[a] for a in arcs if fst.arc_ilabel[a] != 0], dtype=np.int64)
    post = generate_synthetic(num_frames, num_ilabels + 1, int(rng.integers(1 << 31)), sharpness, peaks)
    words = [int(fst.arc_olabel[a]) for a in arcs if fst.arc_olabel[a] != 0]
    return Instance(fst, post, words, arcs)


def adversarial_fst(branches: int = 2) -> CsrFst:
    """Graph that duplicates tokens every frame at identical cost.

    The hub state (start, final) emits into ``branches`` states, each of which
    returns to the hub over a zero-cost epsilon arc, so the hub gets
    ``branches`` epsilon in-arcs and ``branches`` tied tokens per frame.
    """
    if branches < 2:
        raise ValueError("need at least two branches")
    arcs = [(0, b, 1, 0, 0.0) for b in range(1, branches + 1)]
    arcs += [(b, 0, 0, b, 0.0) for b in range(1, branches + 1)]
    return build_fst(arcs, {0: 0.0})


def write_corpus(
    out_dir: str | Path,
    num_states: int,
    num_arcs: int,
    epsilon_frac: float,
    num_frames: int,
    num_utts: int,
    seed: int,
    num_ilabels: int = 10,
    num_words: int = 20,
    sharpness: float = 4.0,
) -> Path:
    """Write ``graph.fst``, one ``.lxp`` per utterance, ``refs.txt`` and ``manifest.txt``.

    All utterances share one graph; each gets its own planted path.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fst = random_fst(num_states, num_arcs, epsilon_frac, seed, num_ilabels, num_words)
    (out / "graph.fst").write_text(write_fst(fst))
    manifest, refs = [], []
    for i in range(num_utts):
        utt = f"utt{i:04d}"
        rng = np.random.default_rng([seed, i, 7])
        arcs = plant_path(fst, num_frames, rng)
        peaks = np.array([fst.arc_ilabel[a] for a in arcs if fst.arc_ilabel[a] != 0], dtype=np.int64)
        post = generate_synthetic(num_frames, num_ilabels + 1, int(rng.integers(1 << 31)), sharpness, peaks)
        save_posteriors(post, out / f"{utt}.lxp")
        manifest.append(f"{utt} {utt}.lxp")
        refs.append(" ".join([utt] + [str(int(fst.arc_olabel[a])) for a in arcs if fst.arc_olabel[a] != 0]))
    (out / "manifest.txt").write_text("".join(line + "\n" for line in manifest))
    (out / "refs.txt").write_text("".join(line + "\n" for line in refs))
    (out / "corpus.json").write_text(
        json.dumps(
            {
                "states": num_states,
                "arcs": num_arcs,
                "epsilon_frac": epsilon_frac,
                "frames": num_frames,
                "utts": num_utts,
                "seed": seed,
                "ilabels": num_ilabels,
                "words": num_words,
                "sharpness": sharpness,
            },
            indent=2,
        )
    )
    return out


@dataclass
class Corpus:
    fst: CsrFst
    utt_ids: list[str]
    posteriors: list[PosteriorMatrix]
    references: dict[str, list[int]]


def read_manifest(path: str | Path) -> list[tuple[str, Path]]:
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'utt_id path'")
        p = Path(fields[1])
        entries.append((fields[0], p if p.is_absolute() else path.parent / p))
    return entries


def read_refs(path: str | Path) -> dict[str, list[int]]:
    refs = {}
    for line in Path(path).read_text().splitlines():
        fields = line.split()
        if fields:
            refs[fields[0]] = [int(w) for w in fields[1:]]
    return refs


def load_corpus(corpus_dir: str | Path) -> Corpus:
    d = Path(corpus_dir)
    fst = load_fst((d / "graph.fst").read_text())
    entries = read_manifest(d / "manifest.txt")
    refs = read_refs(d / "refs.txt") if (d / "refs.txt").exists() else {}
    return Corpus(fst, [u for u, _ in entries], [load_posteriors(p) for _, p in entries], refs)
