"""Input validation helpers used at the public API boundaries."""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch
from .pipeline import Sample
from .transforms import TransformConfig


def as_float_array(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ShapeMismatch(f"{name} contains non-finite values")
    return arr


def check_image(value, channels: int, height: int, width: int, name: str = "image") -> np.ndarray:
    arr = as_float_array(value, name)
    if arr.shape != (channels, height, width):
        raise ShapeMismatch(
            f"{name} has shape {arr.shape}, expected ({channels}, {height}, {width})"
        )
    return arr


def check_sample(sample: Sample, cfg: TransformConfig) -> Sample:
    check_image(sample.x0, cfg.image_channels, cfg.height, cfg.width, "x0")
    check_image(sample.x1, cfg.event_channels, cfg.height, cfg.width, "x1")
    check_image(sample.t, cfg.image_channels, cfg.height, cfg.width, "t")
    return sample


def check_sample_sequence(samples, cfg: TransformConfig) -> list[Sample]:
    out = list(samples)
    if not out:
        raise ShapeMismatch("expected at least one sample")
    for sample in out:
        check_sample(sample, cfg)
    return out
