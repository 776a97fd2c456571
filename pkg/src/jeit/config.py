"""Run configuration and its human-readable key=value file format."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

from .errors import BadConfig
from .transforms import TransformConfig


@dataclass
class RunConfig:
    """Everything needed to rebuild a model and reproduce a training run."""

    height: int = 32
    width: int = 32
    patch: int = 4
    image_channels: int = 3
    half_intervals: int = 3
    latent_image: int = 16
    latent_events: int = 16
    latent_shared: int = 16
    hyper_channels: int = 8
    hidden: int = 64
    mode: str = "jeit"
    lambda_image: float = 1.0
    lambda_events: float = 1.0
    lambda_deblur: float = 2.0
    eta: float = 0.24
    epochs: int = 200
    learning_rate: float = 1e-4
    batch_size: int = 0  # 0 = full batch
    snr_db: Optional[float] = 10.0
    seed: int = 0

    def transform_config(self) -> TransformConfig:
        return TransformConfig(
            height=self.height,
            width=self.width,
            patch=self.patch,
            image_channels=self.image_channels,
            half_intervals=self.half_intervals,
            latent_image=self.latent_image,
            latent_events=self.latent_events,
            latent_shared=self.latent_shared,
            hyper_channels=self.hyper_channels,
            hidden=self.hidden,
        )

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "snr_db":
                value = "noiseless" if value is None else value
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise BadConfig(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise BadConfig(f"line {lineno}: unknown key {key!r}")
            kwargs[key] = _parse_value(key, value)
        return cls(**kwargs)

    @classmethod
    def read(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())


def _parse_value(key: str, value: str):
    if key == "snr_db":
        return None if value.lower() == "noiseless" else float(value)
    if key == "mode":
        if value not in ("jeit", "jeit_t"):
            raise BadConfig(f"mode must be 'jeit' or 'jeit_t', got {value!r}")
        return value
    int_keys = {
        "height", "width", "patch", "image_channels", "half_intervals",
        "latent_image", "latent_events", "latent_shared", "hyper_channels",
        "hidden", "epochs", "batch_size", "seed",
    }
    if key in int_keys:
        return int(value)
    return float(value)


def sidecar_path(checkpoint_path) -> str:
    """Configuration file stored next to a checkpoint."""
    text = str(checkpoint_path)
    if text.endswith(".ckpt"):
        return text[: -len(".ckpt")] + ".cfg"
    return text + ".cfg"
