"""Procedural scenes: latent sharp frames, blur formation, event simulation,
and the analytic event-integral deblurring reference.

Frames are sampled at the midpoints of equal sub-intervals of the exposure,
so with an odd frame count the middle frame sits exactly at the exposure
midpoint. Pattern intensities are drawn from a log-intensity ladder aligned
to the contrast threshold, which makes the generated (blurry, events, sharp)
triple exactly consistent up to timestamp rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import BadConfig, NonPositiveInput
from .events import EventStream

INTENSITY_FLOOR = 0.05


@dataclass(frozen=True)
class Static:
    pass


@dataclass(frozen=True)
class Translate:
    vx: float  # pixels per frame, positive moves content right
    vy: float = 0.0


@dataclass(frozen=True)
class Step:
    dlog: float  # log-intensity jump applied after the exposure midpoint


Motion = Union[Static, Translate, Step]


@dataclass
class SceneConfig:
    height: int = 32
    width: int = 32
    n_frames: int = 9
    pattern: str = "bars"  # bars | checker | noise
    motion: Motion = field(default_factory=Static)
    contrast: float = 0.2  # threshold in log-intensity units
    seed: int = 0
    frame_dt: int = 1000  # µs per frame
    t_start: int = 0


@dataclass(eq=False)
class LatentVideo:
    """Sharp intensity frames (N, H, W) in (0, 1] with their time base."""

    frames: np.ndarray
    frame_dt: int
    t_start: int

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def duration(self) -> int:
        """Full exposure span in µs."""
        return self.n_frames * self.frame_dt

    @property
    def midpoint(self) -> int:
        """Exposure midpoint t_f in µs."""
        return self.t_start + self.duration // 2

    def frame_time(self, i: int) -> float:
        """Sample time of frame i (midpoint of its sub-interval)."""
        return self.t_start + (i + 0.5) * self.frame_dt

    def midpoint_frame(self) -> np.ndarray:
        """The frame at (or nearest after) the exposure midpoint."""
        return self.frames[self.n_frames // 2]


def _level_count(contrast: float) -> int:
    # deepest ladder rung that still respects the intensity floor
    return max(1, int(np.floor(np.log(1.0 / INTENSITY_FLOOR) / contrast)))


def _base_levels(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """Integer ladder indices per pixel; intensity = exp(-index * contrast)."""
    n_levels = _level_count(cfg.contrast)
    h, w = cfg.height, cfg.width
    if cfg.pattern == "bars":
        # odd period so edges wander across any even patch grid
        period = max(3, w // 8 + 1)
        bar_levels = rng.integers(0, n_levels + 1, size=(w + period - 1) // period + 1)
        idx = np.repeat(bar_levels, period)[:w]
        return np.roll(np.tile(idx, (h, 1)), int(rng.integers(0, w)), axis=1)
    if cfg.pattern == "checker":
        block = max(3, h // 8 + 1)
        gh = (h + block - 1) // block + 1
        gw = (w + block - 1) // block + 1
        cells = rng.integers(0, n_levels + 1, size=(gh, gw))
        full = np.repeat(np.repeat(cells, block, axis=0), block, axis=1)[:h, :w]
        shift = rng.integers(0, block, size=2)
        return np.roll(np.roll(full, int(shift[0]), axis=0), int(shift[1]), axis=1)
    if cfg.pattern == "noise":
        field_ = rng.random((h, w))
        # light box blur keeps the per-pixel event load reasonable
        kernel = np.ones(5) / 5.0
        field_ = np.apply_along_axis(
            lambda r: np.convolve(np.pad(r, 2, mode="wrap"), kernel, mode="valid"),
            1,
            field_,
        )
        field_ = np.apply_along_axis(
            lambda c: np.convolve(np.pad(c, 2, mode="wrap"), kernel, mode="valid"),
            0,
            field_,
        )
        lo, hi = field_.min(), field_.max()
        unit = (field_ - lo) / (hi - lo) if hi > lo else np.zeros_like(field_)
        return np.rint(unit * n_levels).astype(np.int64)
    raise BadConfig(f"unknown pattern {cfg.pattern!r}")


def gen_scene(cfg: SceneConfig) -> LatentVideo:
    """Deterministically generate a latent sharp video for ``cfg``."""
    if cfg.height < 8 or cfg.width < 8:
        raise BadConfig("scene needs at least 8x8 pixels")
    if cfg.n_frames < 1:
        raise BadConfig("need at least one frame")
    if cfg.contrast <= 0:
        raise BadConfig("contrast threshold must be positive")
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    base = _base_levels(cfg, rng)
    n_levels = _level_count(cfg.contrast)

    frames = np.empty((cfg.n_frames, cfg.height, cfg.width), dtype=np.float64)
    motion = cfg.motion
    for i in range(cfg.n_frames):
        if isinstance(motion, Static):
            levels = base
        elif isinstance(motion, Translate):
            dx = int(round(i * motion.vx))
            dy = int(round(i * motion.vy))
            levels = np.roll(np.roll(base, dy, axis=0), dx, axis=1)
        elif isinstance(motion, Step):
            # jump by a whole number of ladder rungs right after the midpoint
            rungs = max(1, int(round(abs(motion.dlog) / cfg.contrast)))
            rungs = int(np.sign(motion.dlog)) * rungs
            if i > cfg.n_frames // 2:
                levels = np.clip(base - rungs, 0, n_levels)
            else:
                levels = base
        else:
            raise BadConfig(f"unknown motion {motion!r}")
        frames[i] = np.exp(-levels.astype(np.float64) * cfg.contrast)
    return LatentVideo(frames=frames, frame_dt=cfg.frame_dt, t_start=cfg.t_start)


def render_blurry(video: LatentVideo) -> np.ndarray:
    """Exposure image: the pixel-wise mean over the latent frames."""
    return video.frames.mean(axis=0)


def simulate_events(video: LatentVideo, contrast: float) -> EventStream:
    """Emit threshold-crossing events with linearly interpolated timestamps.

    A per-pixel reference level tracks the last emitted event; each frame
    transition fires one event per crossed multiple of ``contrast``, with the
    crossing time interpolated on the log-intensity segment and rounded to a
    microsecond strictly inside the segment.
    """
    if contrast <= 0:
        raise BadConfig("contrast threshold must be positive")
    h, w = video.frames.shape[1:]
    if np.any(video.frames <= 0):
        raise NonPositiveInput("latent intensities must be strictly positive")
    logs = np.log(video.frames)
    ref = logs[0].copy()
    ys, xs = np.mgrid[0:h, 0:w]
    ts_out: list[np.ndarray] = []
    xs_out: list[np.ndarray] = []
    ys_out: list[np.ndarray] = []
    ps_out: list[np.ndarray] = []
    for i in range(video.n_frames - 1):
        l0, l1 = logs[i], logs[i + 1]
        t0 = video.frame_time(i)
        span = l1 - l0
        for sign in (1.0, -1.0):
            delta = sign * (l1 - ref)
            counts = np.floor(delta / contrast + 1e-9).astype(np.int64)
            counts[delta <= 0] = 0
            max_n = int(counts.max()) if counts.size else 0
            for k in range(1, max_n + 1):
                mask = counts >= k
                if not np.any(mask):
                    break
                level = ref[mask] + sign * k * contrast
                # span can only vanish through rounding dust; park those mid-segment
                safe_span = np.where(span[mask] == 0, 1.0, span[mask])
                frac = np.where(span[mask] == 0, 0.5, (level - l0[mask]) / safe_span)
                t_ev = t0 + frac * video.frame_dt
                t_int = np.rint(t_ev).astype(np.int64)
                t_int = np.clip(t_int, int(t0) + 1, int(t0) + video.frame_dt - 1)
                ts_out.append(t_int)
                xs_out.append(xs[mask])
                ys_out.append(ys[mask])
                ps_out.append(np.full(mask.sum(), int(sign), dtype=np.int8))
            ref = ref + sign * counts * contrast
    if not ts_out:
        return EventStream.empty((h, w))
    return EventStream.from_arrays(
        (h, w),
        np.concatenate(ts_out),
        np.concatenate(xs_out),
        np.concatenate(ys_out),
        np.concatenate(ps_out),
    )


def _signed_counts_at(stream: EventStream, t_f: float, nodes: np.ndarray, shape) -> np.ndarray:
    """Integral of the event signal from t_f to each node, per pixel."""
    h, w = shape
    out = np.zeros((len(nodes), h, w), dtype=np.float64)
    if not len(stream):
        return out
    t = stream.t.astype(np.float64)
    pol = stream.p.astype(np.float64)
    for k, node in enumerate(nodes):
        if node > t_f:
            mask = (t > t_f) & (t <= node)
            sign = 1.0
        elif node < t_f:
            mask = (t >= node) & (t < t_f)
            sign = -1.0
        else:
            continue
        if np.any(mask):
            np.add.at(out[k], (stream.y[mask], stream.x[mask]), sign * pol[mask])
    return out


def edi_deblur(
    blurry: np.ndarray,
    stream: EventStream,
    contrast: float,
    t_f: int,
    T: int,
    steps: int,
) -> np.ndarray:
    """Recover the sharp midpoint frame from a blurry image and its events.

    Uses a midpoint-rule quadrature with ``steps`` uniform nodes over the
    exposure: sharp = blurry * T / sum_k w_k * exp(contrast * E(t_k)), where
    E(t_k) is the signed event count integrated from t_f to node t_k.
    """
    if steps < 2:
        raise BadConfig("need at least two quadrature nodes")
    blurry = np.asarray(blurry, dtype=np.float64)
    if np.any(blurry <= 0):
        raise NonPositiveInput("blurry image must be strictly positive")
    nodes = t_f - T / 2.0 + (np.arange(steps) + 0.5) * (T / steps)
    counts = _signed_counts_at(stream, float(t_f), nodes, blurry.shape)
    weights = T / steps
    denom = np.sum(weights * np.exp(contrast * counts), axis=0)
    sharp = blurry * T / denom
    return np.minimum(sharp, 1.0)
