"""Quality metrics and comma-separated report emission."""

from __future__ import annotations

import csv
import math
from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeMismatch


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs map to +inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"psnr shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def event_mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared difference between two (normalized) event tensors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"event tensors differ in shape: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def format_metric(value: float) -> str:
    if math.isinf(value):
        return "inf"
    return f"{value:.6g}"


def write_report(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Emit a comma-separated table with a one-line header."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [format_metric(v) if isinstance(v, float) else v for v in row]
            )
