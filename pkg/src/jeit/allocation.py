"""Entropy-driven variable-length symbol mapping and frame assembly.

Each latent grid is a stack of embedding vectors of length C. A vector whose
estimated bit cost is r gets k = min(C, ceil(eta * r)) of its (affine-mapped)
entries transmitted; kept entries are zero-padded to an even count and paired
into complex symbols, so a vector occupies ceil(k / 2) complex uses. Stream
totals count those complex uses, padding included. Per-vector lengths travel
as error-free side information and are not charged to the bandwidth ratio.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import PlanMismatch, ShapeMismatch

FRAME_MAGIC = b"JEIF"


def complex_uses(lengths: np.ndarray) -> int:
    """Complex symbols consumed by vectors keeping ``lengths`` real entries."""
    k = np.asarray(lengths, dtype=np.int64)
    return int(np.sum((k + 1) // 2))


@dataclass(eq=False)
class LengthPlan:
    """Per-vector kept-entry counts for each stream, plus complex-use totals."""

    lengths: tuple[np.ndarray, ...]  # one int array per stream

    def __post_init__(self):
        self.lengths = tuple(np.asarray(k, dtype=np.int64) for k in self.lengths)

    @property
    def totals(self) -> tuple[int, ...]:
        return tuple(complex_uses(k) for k in self.lengths)

    @property
    def total(self) -> int:
        return int(np.sum(self.totals))

    def __eq__(self, other) -> bool:
        if not isinstance(other, LengthPlan):
            return NotImplemented
        return len(self.lengths) == len(other.lengths) and all(
            np.array_equal(a, b) for a, b in zip(self.lengths, other.lengths)
        )


def compute_lengths(rates_bits: np.ndarray, eta: float, cap: int) -> np.ndarray:
    """Per-vector kept-entry counts: k_j = min(cap, ceil(eta * r_j))."""
    r = np.asarray(rates_bits, dtype=np.float64)
    if np.any(r < 0):
        raise ShapeMismatch("per-vector rates must be non-negative")
    k = np.ceil(eta * r).astype(np.int64)
    return np.minimum(k, cap)


def plan_from_rates(per_stream_rates: Sequence[np.ndarray], eta: float, caps: Sequence[int]) -> LengthPlan:
    return LengthPlan(
        lengths=tuple(
            compute_lengths(r, eta, cap) for r, cap in zip(per_stream_rates, caps)
        )
    )


def mask_encode(latents: np.ndarray, lengths: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Map vectors through the shared affine (C -> C), truncate, pad, pair.

    Returns the stream's interleaved real payload (2 * complex uses entries).
    """
    y = np.asarray(latents, dtype=np.float64)
    k = np.asarray(lengths, dtype=np.int64)
    if y.ndim != 2 or y.shape[0] != k.shape[0]:
        raise PlanMismatch(
            f"plan covers {k.shape[0]} vectors but latents have shape {y.shape}"
        )
    if np.any(k < 0) or np.any(k > y.shape[1]):
        raise PlanMismatch("kept-entry counts must lie in [0, C]")
    mapped = y @ w + b
    pieces = []
    for j in range(mapped.shape[0]):
        kj = int(k[j])
        kept = mapped[j, :kj]
        if kj % 2:
            kept = np.append(kept, 0.0)
        pieces.append(kept)
    if not pieces:
        return np.zeros(0, dtype=np.float64)
    return np.concatenate(pieces) if pieces else np.zeros(0)


def mask_decode(payload: np.ndarray, lengths: np.ndarray, dim: int, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Zero-fill each vector past its kept entries, then apply the shared affine."""
    s = np.asarray(payload, dtype=np.float64)
    k = np.asarray(lengths, dtype=np.int64)
    expected = 2 * complex_uses(k)
    if s.size != expected:
        raise PlanMismatch(f"payload holds {s.size} reals, plan expects {expected}")
    out = np.zeros((k.shape[0], dim), dtype=np.float64)
    offset = 0
    for j in range(k.shape[0]):
        kj = int(k[j])
        padded = kj + (kj % 2)
        out[j, :kj] = s[offset : offset + kj]
        offset += padded
    return out @ w + b


def cbr(plan: LengthPlan, n0: int) -> tuple[float, ...]:
    """Bandwidth ratios: total first, then the per-stream shares.

    The total is (k0 + k1 + k2) / n0 computed on the integer sum, so it
    matches physical frame accounting exactly.
    """
    if n0 <= 0:
        raise ShapeMismatch("pixel count must be positive")
    totals = plan.totals
    shares = tuple(float(t / n0) for t in totals)
    return (float(sum(totals) / n0),) + shares


def assemble_frame(segments: Sequence[np.ndarray], plan: LengthPlan, scale: float) -> "SymbolFrame":
    if len(segments) != len(plan.lengths):
        raise PlanMismatch("segment count does not match plan streams")
    for seg, k in zip(segments, plan.lengths):
        if np.asarray(seg).size != 2 * complex_uses(k):
            raise PlanMismatch("segment length does not match its plan")
    payload = (
        np.concatenate([np.asarray(s, dtype=np.float64) for s in segments])
        if segments
        else np.zeros(0)
    )
    return SymbolFrame(payload=payload, plan=plan, scale=float(scale))


@dataclass(eq=False)
class SymbolFrame:
    """One transmitted frame: interleaved payload plus its side information."""

    payload: np.ndarray
    plan: LengthPlan
    scale: float

    @property
    def complex_uses(self) -> int:
        return self.payload.size // 2

    def split(self) -> list[np.ndarray]:
        """Cut the payload back into per-stream segments."""
        sizes = [2 * t for t in self.plan.totals]
        out = []
        offset = 0
        for size in sizes:
            out.append(self.payload[offset : offset + size])
            offset += size
        return out

    def to_bytes(self) -> bytes:
        totals = self.plan.totals
        if len(totals) > 3:
            raise PlanMismatch("frame format carries at most three streams")
        padded_totals = tuple(totals) + (0,) * (3 - len(totals))
        head = [FRAME_MAGIC, struct.pack("<III", *padded_totals), struct.pack("<f", self.scale)]
        for k in self.plan.lengths:
            head.append(np.asarray(k, dtype="<u2").tobytes())
        head.append(np.asarray(self.payload, dtype="<f4").tobytes())
        return b"".join(head)

    @classmethod
    def from_bytes(cls, blob: bytes, vectors_per_stream: Sequence[int]) -> "SymbolFrame":
        if blob[:4] != FRAME_MAGIC:
            raise PlanMismatch("bad frame magic")
        offset = 4
        totals = struct.unpack_from("<III", blob, offset)
        offset += 12
        (scale,) = struct.unpack_from("<f", blob, offset)
        offset += 4
        lengths = []
        for count in vectors_per_stream:
            arr = np.frombuffer(blob, dtype="<u2", count=count, offset=offset).astype(np.int64)
            offset += 2 * count
            lengths.append(arr)
        plan = LengthPlan(lengths=tuple(lengths))
        for declared, derived in zip(totals, plan.totals):
            if declared != derived:
                raise PlanMismatch("frame totals disagree with its length lists")
        n_reals = 2 * plan.total
        payload = np.frombuffer(blob, dtype="<f4", count=n_reals, offset=offset).astype(np.float64)
        offset += 4 * n_reals
        if offset != len(blob):
            raise PlanMismatch("trailing bytes after frame payload")
        return cls(payload=payload, plan=plan, scale=float(scale))
