"""Per-frame acoustic log-likelihood matrices.

Binary layout (little endian)::

    b"LXP1" | num_frames: u32 | num_ilabels: u32 | float32[num_frames * num_ilabels]

Column ``j`` holds the log-likelihood of input label ``j``; column 0 is
unused so labels index columns directly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

import numpy as np

MAGIC = b"LXP1"
_HEADER = struct.Struct("<4sII")


class PosteriorFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PosteriorMatrix:
    loglikes: np.ndarray  # (num_frames, num_ilabels) float32

    def __post_init__(self):
        if self.loglikes.ndim != 2:
            raise ValueError("loglikes must be a 2-D frame x ilabel matrix")
        bad = ~np.isfinite(self.loglikes)
        if bad.any():
            t, j = np.argwhere(bad)[0]
            raise PosteriorFormatError(f"non-finite log-likelihood at frame {t}, column {j}")

    @property
    def num_frames(self) -> int:
        return self.loglikes.shape[0]

    @property
    def num_ilabels(self) -> int:
        return self.loglikes.shape[1]

    def __len__(self) -> int:
        return self.num_frames

    def __getitem__(self, frames: slice) -> "PosteriorMatrix":
        if not isinstance(frames, slice):
            raise TypeError("index a PosteriorMatrix with a frame slice")
        return PosteriorMatrix(self.loglikes[frames])

    def to_bytes(self) -> bytes:
        t, n = self.loglikes.shape
        return _HEADER.pack(MAGIC, t, n) + self.loglikes.astype("<f4", copy=False).tobytes()


def load_posteriors(source: bytes | BinaryIO | str | Path) -> PosteriorMatrix:
    """Read a matrix from bytes, a binary stream, or a file path."""
    if isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    elif isinstance(source, (bytes, bytearray, memoryview)):
        data = bytes(source)
    else:
        data = source.read()

    if len(data) < _HEADER.size:
        raise PosteriorFormatError(f"truncated header: {len(data)} bytes")
    magic, t, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise PosteriorFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    expected = _HEADER.size + 4 * t * n
    if len(data) < expected:
        raise PosteriorFormatError(
            f"truncated payload: expected {t * n} values, got {(len(data) - _HEADER.size) // 4}"
        )
    if len(data) > expected:
        raise PosteriorFormatError(f"{len(data) - expected} trailing bytes after payload")
    values = np.frombuffer(data, dtype="<f4", count=t * n, offset=_HEADER.size)
    return PosteriorMatrix(values.reshape(t, n).astype(np.float32))


def save_posteriors(matrix: PosteriorMatrix, path: str | Path) -> None:
    Path(path).write_bytes(matrix.to_bytes())


def generate_synthetic(
    num_frames: int,
    num_ilabels: int,
    seed: int,
    sharpness: float,
    peaks: np.ndarray | None = None,
) -> PosteriorMatrix:
    """Random log-likelihoods with one peaked label per frame.

    Every entry is standard normal noise; one label per frame (drawn from the
    seed unless ``peaks`` pins it) is raised by ``sharpness``. Larger
    sharpness makes the matrix more confident and prunes harder.
    """
    if sharpness <= 0:
        raise ValueError("sharpness must be positive")
    rng = np.random.default_rng(seed)
    loglikes = rng.standard_normal((num_frames, num_ilabels))
    if peaks is None:
        peaks = rng.integers(1, max(num_ilabels, 2), size=num_frames)
    else:
        peaks = np.asarray(peaks, dtype=np.int64)
        if peaks.shape != (num_frames,):
            raise ValueError("need one peak label per frame")
    if num_ilabels > 1:
        loglikes[np.arange(num_frames), peaks] += sharpness
    loglikes[:, 0] = 0.0
    return PosteriorMatrix(loglikes.astype(np.float32))
