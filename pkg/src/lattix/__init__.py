"""Batched streaming WFST Viterbi decoding with lattice generation."""

from .decoder import BatchedDecoder, DecoderConfig, Token, TokenBatch, decoder_state_bytes
from .fst import CsrFst, build_fst, fst_memory_bytes, load_fst, write_fst
from .lattice import Lattice, LatticeSegment, finalize_lattice, read_lattice, write_lattice
from .metrics import best_path, lattice_density, oracle_wer, wer
from .posteriors import PosteriorMatrix, generate_synthetic, load_posteriors, save_posteriors
from .reference import exhaustive_paths, serial_decode
from .scheduler import Scheduler, decode_utterances

__version__ = "0.1.0"

__all__ = [
    "BatchedDecoder",
    "CsrFst",
    "DecoderConfig",
    "Lattice",
    "LatticeSegment",
    "PosteriorMatrix",
    "Scheduler",
    "Token",
    "TokenBatch",
    "best_path",
    "build_fst",
    "decode_utterances",
    "decoder_state_bytes",
    "exhaustive_paths",
    "finalize_lattice",
    "fst_memory_bytes",
    "generate_synthetic",
    "lattice_density",
    "load_fst",
    "load_posteriors",
    "oracle_wer",
    "read_lattice",
    "save_posteriors",
    "serial_decode",
    "wer",
    "write_fst",
    "write_lattice",
]
