"""Binary event-stream codec and temporal aggregation into signed voxel tensors.

Wire format (one event per 8 bytes, little endian):

    u32 timestamp in microseconds
    u16 column index
    u16 row word: bit 15 is the polarity flag (set = +1), bits 0..14 the row

Streams are kept sorted by timestamp, ties broken by (row, column).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import InvalidWindow, OutOfBounds, ShapeMismatch, TruncatedRecord

RECORD_BYTES = 8
_AER_DTYPE = np.dtype([("t", "<u4"), ("x", "<u2"), ("yp", "<u2")])
_POLARITY_BIT = 0x8000
_ROW_MASK = 0x7FFF

TENSOR_MAGIC = b"EVT0"
_TENSOR_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class EventRecord:
    """A single polarity spike: timestamp (µs), column, row, polarity ±1."""

    t: int
    x: int
    y: int
    p: int


@dataclass(eq=False)
class EventStream:
    """Ordered event records plus the sensor resolution they refer to.

    Events are stored as parallel arrays; ``t`` is int64 µs, ``p`` holds ±1.
    """

    resolution: tuple[int, int]  # (H, W)
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray

    @classmethod
    def empty(cls, resolution: tuple[int, int]) -> "EventStream":
        return cls(
            resolution=tuple(resolution),
            t=np.zeros(0, dtype=np.int64),
            x=np.zeros(0, dtype=np.int32),
            y=np.zeros(0, dtype=np.int32),
            p=np.zeros(0, dtype=np.int8),
        )

    @classmethod
    def from_arrays(cls, resolution, t, x, y, p) -> "EventStream":
        stream = cls(
            resolution=tuple(resolution),
            t=np.asarray(t, dtype=np.int64),
            x=np.asarray(x, dtype=np.int32),
            y=np.asarray(y, dtype=np.int32),
            p=np.asarray(p, dtype=np.int8),
        )
        stream._check_bounds()
        return stream.sorted()

    @classmethod
    def from_records(cls, resolution, records: Iterable[EventRecord]) -> "EventStream":
        recs = list(records)
        return cls.from_arrays(
            resolution,
            [r.t for r in recs],
            [r.x for r in recs],
            [r.y for r in recs],
            [r.p for r in recs],
        )

    def _check_bounds(self) -> None:
        h, w = self.resolution
        if len(self.x) and (int(self.x.max()) >= w or int(self.x.min()) < 0):
            raise OutOfBounds(f"column index outside [0, {w})")
        if len(self.y) and (int(self.y.max()) >= h or int(self.y.min()) < 0):
            raise OutOfBounds(f"row index outside [0, {h})")

    def __len__(self) -> int:
        return len(self.t)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.resolution == other.resolution
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    def records(self) -> list[EventRecord]:
        return [
            EventRecord(int(t), int(x), int(y), int(p))
            for t, x, y, p in zip(self.t, self.x, self.y, self.p)
        ]

    def sorted(self) -> "EventStream":
        """Return the stream ordered by (t, y, x); stable for full ties."""
        if self._is_sorted():
            return self
        order = np.lexsort((self.x, self.y, self.t))
        return EventStream(
            self.resolution, self.t[order], self.x[order], self.y[order], self.p[order]
        )

    def _is_sorted(self) -> bool:
        if len(self) < 2:
            return True
        dt = np.diff(self.t)
        if np.any(dt < 0):
            return False
        ties = dt == 0
        if not np.any(ties):
            return True
        dy = np.diff(self.y.astype(np.int64))
        dx = np.diff(self.x.astype(np.int64))
        return not np.any(ties & ((dy < 0) | ((dy == 0) & (dx < 0))))


@dataclass(eq=False)
class EventTensor:
    """Signed per-interval event sums around the exposure midpoint.

    ``data`` has shape (2M, H, W): M leading channels integrate backwards
    from the midpoint, M trailing channels forwards; the all-zero midpoint
    channel is omitted.
    """

    data: np.ndarray
    t_f: int
    T: int
    M: int

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventTensor):
            return NotImplemented
        return (
            (self.t_f, self.T, self.M) == (other.t_f, other.T, other.M)
            and np.array_equal(self.data, other.data)
        )


def parse_aer(data: bytes, resolution: tuple[int, int]) -> EventStream:
    """Decode a binary event payload into a sorted stream.

    Raises ``TruncatedRecord`` when the byte count is not a multiple of the
    record size and ``OutOfBounds`` when coordinates exceed ``resolution``.
    """
    if len(data) % RECORD_BYTES:
        raise TruncatedRecord(
            f"payload of {len(data)} bytes is not a multiple of {RECORD_BYTES}"
        )
    raw = np.frombuffer(data, dtype=_AER_DTYPE)
    t = raw["t"].astype(np.int64)
    x = raw["x"].astype(np.int32)
    yp = raw["yp"]
    y = (yp & _ROW_MASK).astype(np.int32)
    p = np.where(yp & _POLARITY_BIT, 1, -1).astype(np.int8)
    stream = EventStream(tuple(resolution), t, x, y, p)
    stream._check_bounds()
    return stream.sorted()


def serialize_aer(stream: EventStream) -> bytes:
    """Encode a stream to the 8-byte-per-event binary layout."""
    if np.any(stream.t < 0) or np.any(stream.t > 0xFFFFFFFF):
        raise OutOfBounds("timestamp outside unsigned 32-bit range")
    if np.any(stream.y > _ROW_MASK):
        raise OutOfBounds("row index does not fit in 15 bits")
    out = np.empty(len(stream), dtype=_AER_DTYPE)
    out["t"] = stream.t.astype(np.uint32)
    out["x"] = stream.x.astype(np.uint16)
    yp = stream.y.astype(np.uint16)
    yp = yp | np.where(stream.p > 0, _POLARITY_BIT, 0).astype(np.uint16)
    out["yp"] = yp
    return out.tobytes()


def voxelize(stream: EventStream, t_f: int, T: int, M: int) -> EventTensor:
    """Aggregate a stream into the 2M-channel signed tensor around ``t_f``.

    Channel m (of the 2M+1 conceptual ones, the middle omitted) holds the
    signed polarity sum between ``t_f`` and the boundary t_f + (m-M)*T/(2M).
    Boundary conventions: an event exactly at ``t_f`` contributes nowhere;
    an event exactly on an interior boundary counts with the interval nearer
    ``t_f``. Comparisons are exact in integer arithmetic.
    """
    M = int(M)
    T = int(T)
    t_f = int(t_f)
    if M < 1 or T <= 0:
        raise InvalidWindow(f"need M >= 1 and T > 0, got M={M}, T={T}")
    h, w = stream.resolution
    data = np.zeros((2 * M, h, w), dtype=np.float32)
    if len(stream):
        rel = 2 * M * (stream.t - t_f)  # int64, exact
        pol = stream.p.astype(np.float32)
        for m in range(2 * M + 1):
            if m == M:
                continue
            bound = (m - M) * T
            if m > M:
                mask = (rel > 0) & (rel <= bound)
                sign = 1.0
            else:
                mask = (rel < 0) & (rel >= bound)
                sign = -1.0
            if np.any(mask):
                channel = m if m < M else m - 1
                np.add.at(data[channel], (stream.y[mask], stream.x[mask]), sign * pol[mask])
    return EventTensor(data=data, t_f=t_f, T=T, M=M)


def normalize_tensor(tensor: EventTensor) -> EventTensor:
    """Scale entries by the maximum absolute value; all-zero tensors pass through."""
    peak = float(np.max(np.abs(tensor.data))) if tensor.data.size else 0.0
    if peak > 0:
        data = (tensor.data / peak).astype(np.float32)
    else:
        data = tensor.data.copy()
    return EventTensor(data=data, t_f=tensor.t_f, T=tensor.T, M=tensor.M)


def save_tensor(path, array: np.ndarray) -> None:
    """Write a (C, H, W) float tensor: 'EVT0' magic, u32 dims, f32 C-order data."""
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim != 3:
        raise ShapeMismatch(f"expected (C, H, W), got shape {arr.shape}")
    header = _TENSOR_HEADER.pack(TENSOR_MAGIC, arr.shape[0], arr.shape[1], arr.shape[2])
    if hasattr(path, "write"):
        path.write(header)
        path.write(arr.astype("<f4").tobytes())
    else:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(arr.astype("<f4").tobytes())


def load_tensor(path) -> np.ndarray:
    """Read a tensor written by :func:`save_tensor`."""
    if hasattr(path, "read"):
        blob = path.read()
    else:
        with open(path, "rb") as fh:
            blob = fh.read()
    if len(blob) < _TENSOR_HEADER.size:
        raise TruncatedRecord("tensor file shorter than its header")
    magic, c, h, w = _TENSOR_HEADER.unpack_from(blob)
    if magic != TENSOR_MAGIC:
        raise TruncatedRecord(f"bad tensor magic {magic!r}")
    expected = _TENSOR_HEADER.size + 4 * c * h * w
    if len(blob) != expected:
        raise TruncatedRecord(f"tensor payload is {len(blob)} bytes, expected {expected}")
    flat = np.frombuffer(blob, dtype="<f4", offset=_TENSOR_HEADER.size)
    return flat.reshape(c, h, w).astype(np.float32)
