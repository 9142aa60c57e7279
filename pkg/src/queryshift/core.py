"""Core data types and on-disk formats.

Everything downstream (shifting, matching, decoding, metrics) works on the
four array types defined here.  All numeric payloads are float64 and every
wrapped array is frozen after validation, so a constructed value can be shared
freely between threads and between pipeline stages without defensive copies.

On-disk formats:

``.qtn`` -- clip query tensor, little-endian binary::

    bytes 0..8    magic "QTNv0001"
    bytes 8..20   three uint32: T, N, D   (all >= 1)
    then          T*N*D float64 values, frame-major, then query, then channel
    trailing      8 bytes "QTNEND\\0\\0"

  The smallest legal file (a 1x1x1 tensor) is therefore 36 bytes.

``.pgm`` -- label maps as binary PGM (P5), maxval 255.  The pixel value IS the
  class index, which caps the usable class count at 256.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterator, Union

import numpy as np

__all__ = [
    "TensorFormatError",
    "WrongMagicError",
    "TruncatedTensorError",
    "NonFiniteTensorError",
    "FrameQuerySet",
    "ClipQueryTensor",
    "PixelEmbeddingMap",
    "LabelMap",
    "write_tensor",
    "read_tensor",
    "write_labelmap",
    "read_labelmap",
]

QTN_MAGIC = b"QTNv0001"
QTN_TRAILER = b"QTNEND\x00\x00"

PathOrIO = Union[str, Path, BinaryIO]


class TensorFormatError(ValueError):
    """A byte stream does not satisfy the .qtn or .pgm contract."""


class WrongMagicError(TensorFormatError):
    """Leading or trailing magic bytes are absent or wrong."""


class TruncatedTensorError(TensorFormatError):
    """The stream ended before the declared payload was complete."""


class NonFiniteTensorError(TensorFormatError):
    """A payload value is NaN or infinite."""


def _frozen_f64(data, shape_rank: int, what: str) -> np.ndarray:
    arr = np.array(data, dtype=np.float64, copy=True)
    if arr.ndim != shape_rank:
        raise ValueError(f"{what} must be {shape_rank}-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{what} must be non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteTensorError(f"{what} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FrameQuerySet:
    """N query vectors of one frame, as an (N, D) float64 matrix."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen_f64(self.data, 2, "query matrix"))

    @property
    def n_queries(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ClipQueryTensor:
    """T frames of query sets sharing one (N, D) shape."""

    frames: tuple[FrameQuerySet, ...]

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) < 1:
            raise ValueError("a clip needs at least one frame")
        shape0 = frames[0].data.shape
        for i, f in enumerate(frames):
            if not isinstance(f, FrameQuerySet):
                raise TypeError("clip frames must be FrameQuerySet instances")
            if f.data.shape != shape0:
                raise ValueError(
                    f"frame {i} has shape {f.data.shape}, expected {shape0}"
                )
        object.__setattr__(self, "frames", frames)

    @classmethod
    def from_array(cls, arr) -> "ClipQueryTensor":
        """Build from a (T, N, D) array."""
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim != 3:
            raise ValueError(f"expected a (T, N, D) array, got shape {a.shape}")
        return cls(tuple(FrameQuerySet(a[t]) for t in range(a.shape[0])))

    def to_array(self) -> np.ndarray:
        """Stack to a fresh, writable (T, N, D) array."""
        return np.stack([f.data for f in self.frames]).copy()

    @property
    def t_len(self) -> int:
        return len(self.frames)

    @property
    def n_queries(self) -> int:
        return self.frames[0].n_queries

    @property
    def dim(self) -> int:
        return self.frames[0].dim

    def __iter__(self) -> Iterator[FrameQuerySet]:
        return iter(self.frames)


@dataclass(frozen=True)
class PixelEmbeddingMap:
    """Per-pixel embedding grid of one frame, (H, W, D) float64."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen_f64(self.data, 3, "pixel embedding map"))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class LabelMap:
    """Integer class labels on an (H, W) grid; values lie in [0, num_classes)."""

    labels: np.ndarray
    num_classes: int = field(default=0)

    def __post_init__(self):
        arr = np.array(self.labels, copy=True)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"label grid must be non-empty 2-D, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError("labels must be integers")
        arr = arr.astype(np.int64)
        c = int(self.num_classes)
        if c < 1:
            raise ValueError("num_classes must be >= 1")
        lo, hi = int(arr.min()), int(arr.max())
        if lo < 0 or hi >= c:
            raise ValueError(f"labels must lie in [0, {c}), found range [{lo}, {hi}]")
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)
        object.__setattr__(self, "num_classes", c)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.labels.shape[0], self.labels.shape[1])


# ---------------------------------------------------------------------------
# .qtn read/write
# ---------------------------------------------------------------------------


def _open_for(dest: PathOrIO, mode: str):
    if isinstance(dest, (str, Path)):
        return open(dest, mode), True
    return dest, False


def write_tensor(clip: ClipQueryTensor, dest: PathOrIO) -> None:
    """Serialize a clip to the .qtn layout described in the module docstring."""
    sink, owns = _open_for(dest, "wb")
    try:
        payload = np.ascontiguousarray(
            np.stack([f.data for f in clip.frames]), dtype="<f8"
        )
        sink.write(QTN_MAGIC)
        sink.write(struct.pack("<III", clip.t_len, clip.n_queries, clip.dim))
        sink.write(payload.tobytes(order="C"))
        sink.write(QTN_TRAILER)
    finally:
        if owns:
            sink.close()


def _read_exact(src: BinaryIO, n: int, what: str) -> bytes:
    buf = src.read(n)
    if len(buf) < n:
        raise TruncatedTensorError(
            f"stream ended inside {what}: wanted {n} bytes, got {len(buf)}"
        )
    return buf


def read_tensor(src: PathOrIO) -> ClipQueryTensor:
    """Parse a .qtn stream, validating magic, dims, payload and trailer."""
    f, owns = _open_for(src, "rb")
    try:
        magic = _read_exact(f, len(QTN_MAGIC), "leading magic")
        if magic != QTN_MAGIC:
            raise WrongMagicError(f"bad leading magic {magic!r}, expected {QTN_MAGIC!r}")
        t_len, n_q, dim = struct.unpack("<III", _read_exact(f, 12, "dimension header"))
        if min(t_len, n_q, dim) < 1:
            raise TensorFormatError(
                f"dimensions must all be >= 1, header declares ({t_len}, {n_q}, {dim})"
            )
        count = t_len * n_q * dim
        raw = _read_exact(f, 8 * count, f"payload of {count} float64 values")
        trailer = _read_exact(f, len(QTN_TRAILER), "trailer")
        if trailer != QTN_TRAILER:
            raise WrongMagicError(f"bad trailer {trailer!r}, expected {QTN_TRAILER!r}")
        values = np.frombuffer(raw, dtype="<f8", count=count).astype(np.float64)
        if not np.all(np.isfinite(values)):
            raise NonFiniteTensorError("payload contains non-finite values")
        return ClipQueryTensor.from_array(values.reshape(t_len, n_q, dim))
    finally:
        if owns:
            f.close()


# ---------------------------------------------------------------------------
# label maps as binary PGM (P5)
# ---------------------------------------------------------------------------


def write_labelmap(lmap: LabelMap, dest: PathOrIO) -> None:
    """Write labels as a binary PGM; pixel value == class index."""
    if lmap.num_classes > 256:
        raise ValueError("PGM label maps support at most 256 classes")
    sink, owns = _open_for(dest, "wb")
    try:
        header = f"P5\n{lmap.width} {lmap.height}\n255\n".encode("ascii")
        sink.write(header)
        sink.write(lmap.labels.astype(np.uint8).tobytes(order="C"))
    finally:
        if owns:
            sink.close()


def read_labelmap(src: PathOrIO, num_classes: int) -> LabelMap:
    """Read a binary PGM written by :func:`write_labelmap`."""
    f, owns = _open_for(src, "rb")
    try:
        data = f.read()
    finally:
        if owns:
            f.close()
    if not data.startswith(b"P5"):
        raise WrongMagicError("not a binary PGM (missing P5 magic)")
    # header = magic, width, height, maxval as whitespace-separated tokens
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedTensorError("PGM header ended early")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise TensorFormatError(f"malformed PGM header tokens {tokens}") from exc
    if maxval != 255:
        raise TensorFormatError(f"expected maxval 255, got {maxval}")
    if width < 1 or height < 1:
        raise TensorFormatError(f"bad PGM size {width}x{height}")
    body = data[pos : pos + width * height]
    if len(body) < width * height:
        raise TruncatedTensorError(
            f"PGM payload holds {len(body)} bytes, needs {width * height}"
        )
    labels = np.frombuffer(body, dtype=np.uint8).reshape(height, width).astype(np.int64)
    return LabelMap(labels, num_classes)
