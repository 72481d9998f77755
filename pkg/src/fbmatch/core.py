"""Tensor and mask types, pixel partitioning, resampling and file I/O.

Embeddings are stored as ``(H, W, C)`` float32 arrays (row-major,
channel-fastest), masks as ``(H, W)`` uint16 label grids where 0 is
background.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    FormatError,
    IoFailure,
    TruncatedFile,
    UnsupportedDtype,
    ZeroFactor,
)

PathLike = Union[str, Path]

FBT_MAGIC = b"FBT1"
FBT_DTYPE_F32 = 1
# magic, dtype code, rank, H, W, C
_FBT_HEADER = struct.Struct("<4sBIIII")
FBT_HEADER_SIZE = _FBT_HEADER.size  # 21

MAX_LABEL = 65535


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Tensor3:
    """Dense ``H x W x C`` float32 feature map."""

    data: np.ndarray

    def __post_init__(self):
        a = np.array(self.data, dtype=np.float32, order="C", copy=True)
        if a.ndim != 3:
            raise DimensionMismatch(f"Tensor3 needs 3 dims, got shape {a.shape}")
        if not np.isfinite(a).all():
            raise ValueError("Tensor3 values must be finite")
        object.__setattr__(self, "data", _frozen(a))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, Tensor3):
            return NotImplemented
        return self.shape == other.shape and self.data.tobytes() == other.data.tobytes()

    def __hash__(self):
        return hash((self.shape, self.data.tobytes()))


@dataclass(frozen=True, eq=False)
class ObjectMask:
    """``H x W`` grid of object ids; 0 is background, ids need not be contiguous."""

    labels: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.labels)
        if raw.ndim != 2:
            raise DimensionMismatch(f"ObjectMask needs 2 dims, got shape {raw.shape}")
        if raw.size and (raw.min() < 0 or raw.max() > MAX_LABEL):
            raise ValueError(f"mask ids must lie in [0, {MAX_LABEL}]")
        a = np.array(raw, dtype=np.uint16, order="C", copy=True)
        object.__setattr__(self, "labels", _frozen(a))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def object_ids(self) -> list[int]:
        """Sorted non-zero ids present in the mask."""
        return [int(v) for v in np.unique(self.labels) if v != 0]

    def binary(self, object_id: int) -> np.ndarray:
        return self.labels == object_id

    def __eq__(self, other):
        if not isinstance(other, ObjectMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.labels, other.labels))

    def __hash__(self):
        return hash((self.shape, self.labels.tobytes()))


@dataclass(frozen=True)
class PixelPartition:
    """FG / relative-BG split of a frame for one object.

    Index arrays have shape ``(n, 2)`` with columns ``(x, y)`` in row-major order.
    """

    object_id: int
    fg_indices: np.ndarray
    bg_indices: np.ndarray


@dataclass(frozen=True)
class FrameSequence:
    """Ordered ``(embedding, mask)`` pairs; position 0 is the reference frame."""

    frames: tuple[tuple[Tensor3, ObjectMask], ...]

    def __post_init__(self):
        frames = tuple((as_tensor3(e), as_mask(m)) for e, m in self.frames)
        for i, (e, m) in enumerate(frames):
            if (e.height, e.width) != m.shape:
                raise DimensionMismatch(f"frame {i}: embedding {e.shape[:2]} vs mask {m.shape}")
            if (e.height, e.width) != (frames[0][0].height, frames[0][0].width):
                raise DimensionMismatch(f"frame {i} dims differ from frame 0")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    def __iter__(self):
        return iter(self.frames)


def as_tensor3(x) -> Tensor3:
    return x if isinstance(x, Tensor3) else Tensor3(x)


def as_mask(x) -> ObjectMask:
    return x if isinstance(x, ObjectMask) else ObjectMask(x)


# --------------------------------------------------------------------------
# FBT tensor container


def save_tensor(t, path: PathLike) -> None:
    t = as_tensor3(t)
    h, w, c = t.shape
    header = _FBT_HEADER.pack(FBT_MAGIC, FBT_DTYPE_F32, 3, h, w, c)
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(t.data.astype("<f4", copy=False).tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write tensor to {path}: {exc}") from exc


def read_tensor_header(buf: bytes) -> dict:
    """Parse and validate an FBT header; returns its fields."""
    if len(buf) < 4:
        raise TruncatedFile(f"magic: need 4 bytes, file has {len(buf)}")
    if buf[:4] != FBT_MAGIC:
        raise BadMagic(f"magic: expected {FBT_MAGIC!r}, got {bytes(buf[:4])!r}")
    if len(buf) < 5:
        raise TruncatedFile("dtype: header ends before dtype code")
    if buf[4] != FBT_DTYPE_F32:
        raise UnsupportedDtype(f"dtype: code {buf[4]} not supported (only 1 = f32)")
    if len(buf) < 9:
        raise TruncatedFile("rank: header ends before rank field")
    (rank,) = struct.unpack_from("<I", buf, 5)
    if rank != 3:
        raise FormatError(f"rank: expected 3, got {rank}")
    if len(buf) < FBT_HEADER_SIZE:
        raise TruncatedFile(f"dims: header needs {FBT_HEADER_SIZE} bytes, file has {len(buf)}")
    _, dtype, rank, h, w, c = _FBT_HEADER.unpack_from(buf, 0)
    return {"magic": FBT_MAGIC.decode(), "dtype": dtype, "rank": rank, "dims": (h, w, c)}


def load_tensor(path: PathLike) -> Tensor3:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read tensor {path}: {exc}") from exc
    hdr = read_tensor_header(buf)
    h, w, c = hdr["dims"]
    need = h * w * c * 4
    payload = buf[FBT_HEADER_SIZE:]
    if len(payload) < need:
        raise TruncatedFile(f"payload: expected {need} bytes, got {len(payload)}")
    if len(payload) > need:
        raise FormatError(f"payload: {len(payload) - need} trailing bytes after {need}")
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    if not np.isfinite(data).all():
        raise FormatError("payload: non-finite values")
    return Tensor3(data)


# --------------------------------------------------------------------------
# PGM masks


def _pgm_tokens(buf: bytes, count: int, pos: int) -> tuple[list[int], int]:
    tokens = []
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and buf[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise TruncatedFile("header: incomplete PGM header")
        tokens.append(int(buf[start:pos]))
    return tokens, pos


def load_mask(path: PathLike) -> ObjectMask:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read mask {path}: {exc}") from exc
    if buf[:2] != b"P5":
        raise BadMagic(f"magic: expected b'P5', got {bytes(buf[:2])!r}")
    (width, height, maxval), pos = _pgm_tokens(buf, 3, 2)
    if not 0 < maxval <= MAX_LABEL:
        raise FormatError(f"maxval: {maxval} outside 1..{MAX_LABEL}")
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise TruncatedFile("header: missing whitespace before raster")
    pos += 1
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    need = width * height * dtype.itemsize
    raster = buf[pos : pos + need]
    if len(raster) < need:
        raise TruncatedFile(f"raster: expected {need} bytes, got {len(raster)}")
    return ObjectMask(np.frombuffer(raster, dtype=dtype).reshape(height, width))


def save_mask(m, path: PathLike) -> None:
    m = as_mask(m)
    maxval = 255 if m.labels.size == 0 or m.labels.max() <= 255 else MAX_LABEL
    raster = m.labels.astype("u1" if maxval == 255 else ">u2").tobytes()
    try:
        with open(path, "wb") as f:
            f.write(b"P5\n%d %d\n%d\n" % (m.width, m.height, maxval))
            f.write(raster)
    except OSError as exc:
        raise IoFailure(f"cannot write mask to {path}: {exc}") from exc


# --------------------------------------------------------------------------
# Partitioning


def partition_pixels(mask, object_id: int) -> PixelPartition:
    if object_id <= 0:
        raise ValueError("object_id must be positive")
    labels = as_mask(mask).labels
    ys, xs = np.nonzero(labels == object_id)
    bys, bxs = np.nonzero(labels != object_id)
    return PixelPartition(
        object_id=object_id,
        fg_indices=np.stack([xs, ys], axis=1),
        bg_indices=np.stack([bxs, bys], axis=1),
    )


# --------------------------------------------------------------------------
# Resampling


def _sample_centers(n_in: int, n_out: int) -> np.ndarray:
    """Source coordinates of output pixel centers (half-pixel convention)."""
    if n_out == 0:
        return np.zeros(0)
    return (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5


def _bilinear_axis(a: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = a.shape[axis]
    if n_in == 0 or n_out == n_in:
        return a
    c = np.clip(_sample_centers(n_in, n_out), 0, n_in - 1)
    i0 = np.floor(c).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = c - i0
    shape = [1] * a.ndim
    shape[axis] = n_out
    w = w.reshape(shape)
    return np.take(a, i0, axis=axis) * (1.0 - w) + np.take(a, i1, axis=axis) * w


def _nearest_index(n_in: int, n_out: int) -> np.ndarray:
    # round half down so exact ties go to the smaller source index
    c = _sample_centers(n_in, n_out)
    return np.clip(np.ceil(c - 0.5), 0, max(n_in - 1, 0)).astype(np.intp)


def resize_embedding(e, height: int, width: int) -> Tensor3:
    """Bilinear resize with half-pixel-centered sampling and edge clamping."""
    e = as_tensor3(e)
    if (height, width) == (e.height, e.width):
        return e
    if e.height == 0 or e.width == 0:
        if height and width:
            raise DimensionMismatch("cannot resize an empty tensor to a non-empty one")
        return Tensor3(np.zeros((height, width, e.channels), np.float32))
    a = e.data.astype(np.float64)
    a = _bilinear_axis(a, height, 0)
    a = _bilinear_axis(a, width, 1)
    return Tensor3(a.astype(np.float32))


def resize_mask(m, height: int, width: int) -> ObjectMask:
    """Nearest-neighbor resize sampling the same centers as :func:`resize_embedding`."""
    m = as_mask(m)
    if (height, width) == m.shape:
        return m
    if m.height == 0 or m.width == 0:
        if height and width:
            raise DimensionMismatch("cannot resize an empty mask to a non-empty one")
        return ObjectMask(np.zeros((height, width), np.uint16))
    iy = _nearest_index(m.height, height)
    ix = _nearest_index(m.width, width)
    return ObjectMask(m.labels[np.ix_(iy, ix)])


def _check_factor(factor: int) -> None:
    if factor < 1:
        raise ZeroFactor(f"factor must be >= 1, got {factor}")


def downsample_embedding(e, factor: int) -> Tensor3:
    _check_factor(factor)
    e = as_tensor3(e)
    return resize_embedding(e, math.ceil(e.height / factor), math.ceil(e.width / factor))


def downsample_mask(m, factor: int) -> ObjectMask:
    _check_factor(factor)
    m = as_mask(m)
    return resize_mask(m, math.ceil(m.height / factor), math.ceil(m.width / factor))


def check_same_hw(*items: Sequence, what: str = "inputs") -> None:
    shapes = [tuple(x.shape[:2]) for x in items]
    if any(s != shapes[0] for s in shapes):
        raise DimensionMismatch(f"{what}: spatial dims differ {shapes}")
