"""Dataset packaging: on-disk layout, manifest format, synthetic builders.

A dataset directory holds ``manifest.txt`` plus one binary event file and
two tensor files per sample. The manifest is key=value blocks separated by
blank lines; the first block carries the global resolution, every following
block describes one sample (id, file paths, motion label, and the window
parameters used to aggregate its events on load).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import BadConfig, MissingFile, ShapeMismatch
from .events import (
    EventStream,
    load_tensor,
    normalize_tensor,
    parse_aer,
    save_tensor,
    serialize_aer,
    voxelize,
)
from .pipeline import Sample
from .scene import (
    SceneConfig,
    Static,
    Translate,
    gen_scene,
    render_blurry,
    simulate_events,
)

MANIFEST_NAME = "manifest.txt"


@dataclass
class PackedSample:
    """One sample's ground-truth pieces before/after disk round-trip."""

    sample_id: str
    blurry: np.ndarray  # (H, W) intensity in (0, 1]
    stream: EventStream
    sharp: np.ndarray  # (H, W), the exposure-midpoint frame
    motion: str
    t_f: int
    T: int
    M: int
    contrast: float


def _parse_blocks(text: str) -> list[dict[str, str]]:
    blocks: list[dict[str, str]] = []
    current: dict[str, str] = {}
    for raw in text.splitlines() + [""]:
        line = raw.strip()
        if not line:
            if current:
                blocks.append(current)
                current = {}
            continue
        if line.startswith("#"):
            continue
        if "=" not in line:
            raise BadConfig(f"manifest line not key=value: {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        current[key] = value
    return blocks


def write_manifest(path, resolution: tuple[int, int], entries: Sequence[dict]) -> None:
    lines = [f"height = {resolution[0]}", f"width = {resolution[1]}", ""]
    for entry in entries:
        for key, value in entry.items():
            lines.append(f"{key} = {value}")
        lines.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))


def read_manifest(path) -> tuple[tuple[int, int], list[dict[str, str]]]:
    with open(path) as fh:
        blocks = _parse_blocks(fh.read())
    if not blocks:
        raise BadConfig("manifest has no header block")
    header, samples = blocks[0], blocks[1:]
    try:
        resolution = (int(header["height"]), int(header["width"]))
    except KeyError as exc:
        raise BadConfig(f"manifest header missing {exc}") from exc
    return resolution, samples


def pack_dataset(out_dir, samples: Sequence[PackedSample], resolution: tuple[int, int]) -> str:
    """Write sample files plus the manifest; returns the manifest path."""
    out_dir = str(out_dir)
    for sub in ("blurry", "events", "sharp"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    entries = []
    for ps in samples:
        blurry_rel = f"blurry/{ps.sample_id}.evt0"
        events_rel = f"events/{ps.sample_id}.aer"
        sharp_rel = f"sharp/{ps.sample_id}.evt0"
        save_tensor(os.path.join(out_dir, blurry_rel), ps.blurry[None].astype(np.float32))
        save_tensor(os.path.join(out_dir, sharp_rel), ps.sharp[None].astype(np.float32))
        with open(os.path.join(out_dir, events_rel), "wb") as fh:
            fh.write(serialize_aer(ps.stream))
        entries.append(
            {
                "id": ps.sample_id,
                "blurry": blurry_rel,
                "events": events_rel,
                "sharp": sharp_rel,
                "motion": ps.motion,
                "t_f": ps.t_f,
                "T": ps.T,
                "M": ps.M,
                "contrast": ps.contrast,
            }
        )
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    write_manifest(manifest_path, resolution, entries)
    return manifest_path


def _tile_rgb(gray: np.ndarray) -> np.ndarray:
    return np.repeat(gray[None].astype(np.float32), 3, axis=0)


def load_dataset(manifest_path) -> Iterator[Sample]:
    """Yield samples in manifest order, aggregating events on load."""
    base = os.path.dirname(str(manifest_path))
    resolution, entries = read_manifest(manifest_path)
    for entry in entries:
        paths = {key: os.path.join(base, entry[key]) for key in ("blurry", "events", "sharp")}
        for key, path in paths.items():
            if not os.path.exists(path):
                raise MissingFile(f"{entry['id']}: missing {key} file {path}")
        blurry = load_tensor(paths["blurry"])
        sharp = load_tensor(paths["sharp"])
        for name, arr in (("blurry", blurry), ("sharp", sharp)):
            if arr.shape != (1, resolution[0], resolution[1]):
                raise ShapeMismatch(
                    f"{entry['id']}: {name} tensor {arr.shape} does not match manifest resolution"
                )
        with open(paths["events"], "rb") as fh:
            stream = parse_aer(fh.read(), resolution)
        tensor = voxelize(stream, int(entry["t_f"]), int(entry["T"]), int(entry["M"]))
        x1 = normalize_tensor(tensor).data
        yield Sample(
            x0=_tile_rgb(blurry[0]),
            x1=x1,
            t=_tile_rgb(sharp[0]),
            sample_id=entry["id"],
            motion=entry.get("motion", "unknown"),
        )


# ----------------------------------------------------------------------------
# synthetic builders
# ----------------------------------------------------------------------------

_PATTERNS = ("bars", "checker", "noise")


def packed_from_scene(cfg: SceneConfig, sample_id: str, motion_label: str, half_intervals: int) -> PackedSample:
    video = gen_scene(cfg)
    stream = simulate_events(video, cfg.contrast)
    return PackedSample(
        sample_id=sample_id,
        blurry=render_blurry(video),
        stream=stream,
        sharp=video.midpoint_frame(),
        motion=motion_label,
        t_f=video.midpoint,
        T=video.duration,
        M=half_intervals,
        contrast=cfg.contrast,
    )


def sample_from_packed(ps: PackedSample) -> Sample:
    """In-memory equivalent of a pack/load round-trip (float32 files skipped)."""
    tensor = voxelize(ps.stream, ps.t_f, ps.T, ps.M)
    return Sample(
        x0=_tile_rgb(ps.blurry.astype(np.float32)),
        x1=normalize_tensor(tensor).data,
        t=_tile_rgb(ps.sharp.astype(np.float32)),
        sample_id=ps.sample_id,
        motion=ps.motion,
    )


def build_mixed_scenes(
    count: int,
    height: int = 32,
    width: int = 32,
    n_frames: int = 9,
    contrast: float = 0.2,
    seed: int = 0,
    half_intervals: int = 3,
) -> list[PackedSample]:
    """Alternating static and high-motion scenes over the pattern palette."""
    out = []
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 99])))
    for i in range(count):
        static = i % 2 == 0
        if static:
            motion, label = Static(), "static"
        else:
            vx = int(rng.integers(2, 4)) * (1 if rng.random() < 0.5 else -1)
            vy = int(rng.integers(0, 2))
            motion, label = Translate(vx=vx, vy=vy), "high_motion"
        cfg = SceneConfig(
            height=height,
            width=width,
            n_frames=n_frames,
            pattern=_PATTERNS[i % len(_PATTERNS)],
            motion=motion,
            contrast=contrast,
            seed=seed * 10007 + i,
        )
        out.append(packed_from_scene(cfg, f"sample_{i:04d}", label, half_intervals))
    return out


def build_mixed_samples(count: int, **kwargs) -> list[Sample]:
    return [sample_from_packed(ps) for ps in build_mixed_scenes(count, **kwargs)]
