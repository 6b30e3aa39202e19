"""Flat parameter vectors with named segments and a binary checkpoint format."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"FLTL"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Segment:
    """Named contiguous slice of a flat parameter vector."""

    name: str
    offset: int
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        size = 1
        for dim in self.shape:
            size *= dim
        return size

    @property
    def stop(self) -> int:
        return self.offset + self.size


def _check_layout(segments: tuple[Segment, ...], d: int) -> None:
    pos = 0
    for seg in segments:
        if seg.offset != pos:
            raise ValueError(f"segment {seg.name!r} starts at {seg.offset}, expected {pos}")
        if any(dim <= 0 for dim in seg.shape):
            raise ValueError(f"segment {seg.name!r} has non-positive dims {seg.shape}")
        pos = seg.stop
    if pos != d:
        raise ValueError(f"segments cover [0, {pos}) but the vector has length {d}")


class ParameterVector:
    """float64 vector of length d plus an ordered (name, offset, shape) table.

    Segments are disjoint, contiguous and cover [0, d) exactly. The
    constructor aliases the given array when possible; use :meth:`copy` for
    an independent snapshot. All arithmetic helpers preserve both the
    length and the segment table.
    """

    __slots__ = ("values", "segments")

    def __init__(self, values, segments) -> None:
        arr = np.ascontiguousarray(values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("parameter values must be one-dimensional")
        segments = tuple(segments)
        _check_layout(segments, arr.shape[0])
        self.values = arr
        self.segments = segments

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def __repr__(self) -> str:
        return f"ParameterVector(d={len(self)}, segments={len(self.segments)})"

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.values.copy(), self.segments)

    def same_layout(self, other: "ParameterVector") -> bool:
        return self.segments == other.segments

    def segment(self, name: str) -> Segment:
        for seg in self.segments:
            if seg.name == name:
                return seg
        raise KeyError(name)

    def segment_array(self, name: str) -> np.ndarray:
        """View of one segment reshaped to its declared shape."""
        seg = self.segment(name)
        return self.values[seg.offset : seg.stop].reshape(seg.shape)


def linear_combination(a: float, p: ParameterVector, b: float, q: ParameterVector) -> ParameterVector:
    """Return a*p + b*q with the shared segment table preserved."""
    if not p.same_layout(q):
        raise ValueError("parameter vectors have different segment layouts")
    return ParameterVector(a * p.values + b * q.values, p.segments)


def save_checkpoint(params: ParameterVector, path) -> None:
    """Write ``params`` in the FLTL binary format (bit-exact round trip).

    Layout, all little-endian: magic "FLTL", format version u32, d u64,
    then one segment record per segment (name length u32, UTF-8 name,
    offset u64, rank u32, dims u64 * rank), then d float64 values.
    """
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(params)))
        for seg in params.segments:
            name = seg.name.encode("utf-8")
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            fh.write(struct.pack("<Q", seg.offset))
            fh.write(struct.pack("<I", len(seg.shape)))
            for dim in seg.shape:
                fh.write(struct.pack("<Q", dim))
        fh.write(np.ascontiguousarray(params.values, dtype="<f8").tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError("truncated checkpoint file")
    return data


def load_checkpoint(path) -> ParameterVector:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise ValueError("not a FLTL checkpoint (bad magic bytes)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {version}")
        (d,) = struct.unpack("<Q", _read_exact(fh, 8))
        segments = []
        covered = 0
        while covered < d:
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            (offset,) = struct.unpack("<Q", _read_exact(fh, 8))
            (rank,) = struct.unpack("<I", _read_exact(fh, 4))
            dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank)) if rank else ()
            seg = Segment(name, offset, tuple(int(x) for x in dims))
            segments.append(seg)
            covered = seg.stop
        values = np.frombuffer(_read_exact(fh, 8 * d), dtype="<f8").astype(np.float64)
        if fh.read(1):
            raise ValueError("trailing bytes after checkpoint payload")
    return ParameterVector(values, segments)
