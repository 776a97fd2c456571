"""Learned analysis/synthesis transforms at desk scale.

Images and event tensors are cut into non-overlapping patches; every patch
becomes one embedding vector, so a latent is a (vectors, channels) matrix.
The shared encoder concatenates per-source features, pools the grid one
level, mixes through a sigmoid-gated block, and upsamples with a skip sum.
Decoders standardize and concatenate their input streams, run a mixing stack
next to a parallel two-layer perceptron branch, sum the branches, and map
patches back to pixel space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .entropy import SIGMA_MIN, init_factorized_params
from .errors import BadConfig, ShapeMismatch

_STACK_GAIN = 2.0  # keeps integer-rounded latents informative at init
_HYPER_GAIN = 1.0
_HEAD_GAIN = 0.3  # synthesis outputs start near the mean predictor


@dataclass(frozen=True)
class TransformConfig:
    height: int = 32
    width: int = 32
    patch: int = 4
    image_channels: int = 3
    half_intervals: int = 3  # M; event tensors carry 2M channels
    latent_image: int = 16
    latent_events: int = 16
    latent_shared: int = 16
    hyper_channels: int = 8
    hidden: int = 64

    def __post_init__(self):
        if self.height % self.patch or self.width % self.patch:
            raise BadConfig("image sides must be divisible by the patch size")
        if (self.height // self.patch) % 2 or (self.width // self.patch) % 2:
            raise BadConfig("patch grid must have even sides for pooling")
        if min(
            self.patch,
            self.image_channels,
            self.half_intervals,
            self.latent_image,
            self.latent_events,
            self.latent_shared,
            self.hyper_channels,
            self.hidden,
        ) < 1:
            raise BadConfig("all dimensions must be at least 1")

    @property
    def event_channels(self) -> int:
        return 2 * self.half_intervals

    @property
    def grid_h(self) -> int:
        return self.height // self.patch

    @property
    def grid_w(self) -> int:
        return self.width // self.patch

    @property
    def n_vectors(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def image_patch_dim(self) -> int:
        return self.image_channels * self.patch * self.patch

    @property
    def event_patch_dim(self) -> int:
        return self.event_channels * self.patch * self.patch

    @property
    def latent_dims(self) -> tuple[int, int, int]:
        return (self.latent_image, self.latent_events, self.latent_shared)


def patchify(array: np.ndarray, patch: int) -> np.ndarray:
    """(C, H, W) -> (grid_h * grid_w, C * patch * patch), row-major grid order."""
    c, h, w = array.shape
    if h % patch or w % patch:
        raise ShapeMismatch(f"{h}x{w} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    tiles = array.reshape(c, gh, patch, gw, patch).transpose(1, 3, 0, 2, 4)
    return np.ascontiguousarray(tiles.reshape(gh * gw, c * patch * patch))


def unpatchify(matrix: np.ndarray, channels: int, height: int, width: int, patch: int) -> np.ndarray:
    """Inverse of :func:`patchify`."""
    gh, gw = height // patch, width // patch
    tiles = matrix.reshape(gh, gw, channels, patch, patch).transpose(2, 0, 3, 1, 4)
    return np.ascontiguousarray(tiles.reshape(channels, height, width))


def pooling_indices(batch: int, grid_h: int, grid_w: int):
    """Row-index arrays for 2x2 mean pooling and its replication upsample."""
    ch, cw = grid_h // 2, grid_w // 2
    s = np.arange(batch)[:, None, None]
    ci = np.arange(ch)[None, :, None]
    cj = np.arange(cw)[None, None, :]
    base = s * grid_h * grid_w
    children = []
    for di in (0, 1):
        for dj in (0, 1):
            rows = base + (2 * ci + di) * grid_w + (2 * cj + dj)
            children.append(rows.reshape(-1))
    fi = np.arange(grid_h)[None, :, None]
    fj = np.arange(grid_w)[None, None, :]
    up = s * ch * cw + (fi // 2) * cw + (fj // 2)
    return tuple(children), up.reshape(-1)


def _uniform(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _stack_params(params, prefix, dims, rng, gain, final_gain=None):
    last = len(dims) - 2
    for i, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
        g = final_gain if (final_gain is not None and i == last) else gain
        params[f"{prefix}.{i}.w"] = _uniform(rng, fi, fo, g)
        params[f"{prefix}.{i}.b"] = np.zeros(fo)


def _cafm_params(params, prefix, in_dim, hidden, rng):
    _stack_params(params, f"{prefix}.conv", (in_dim, hidden, hidden), rng, _STACK_GAIN)
    _stack_params(params, f"{prefix}.mlp", (in_dim, hidden, hidden), rng, _STACK_GAIN)


def init_transform_params(cfg: TransformConfig, mode: str, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Fresh parameter dictionary for the full model in the given mode."""
    p: dict[str, np.ndarray] = {}
    hid = cfg.hidden
    _stack_params(p, "enc_image", (cfg.image_patch_dim, hid, hid, cfg.latent_image), rng, _STACK_GAIN)
    _stack_params(p, "enc_events", (cfg.event_patch_dim, hid, hid, cfg.latent_events), rng, _STACK_GAIN)

    p["fuse.feat_image.w"] = _uniform(rng, cfg.image_patch_dim, hid, _STACK_GAIN)
    p["fuse.feat_image.b"] = np.zeros(hid)
    p["fuse.feat_events.w"] = _uniform(rng, cfg.event_patch_dim, hid, _STACK_GAIN)
    p["fuse.feat_events.b"] = np.zeros(hid)
    wide = 2 * hid
    _stack_params(p, "fuse.mix", (wide, wide), rng, _STACK_GAIN)
    _stack_params(p, "fuse.gate", (wide, wide), rng, _HYPER_GAIN)
    _stack_params(p, "fuse.head", (wide, hid, hid, cfg.latent_shared), rng, _STACK_GAIN)

    hyper_hidden = max(4, hid // 2)
    for i, cy in enumerate(cfg.latent_dims):
        _stack_params(p, f"hyper_enc{i}", (cy, hyper_hidden, cfg.hyper_channels), rng, _HYPER_GAIN)
        _stack_params(p, f"hyper_dec{i}", (cfg.hyper_channels, hyper_hidden, 2 * cy), rng, _HYPER_GAIN)
        p.update(init_factorized_params(f"prior_z{i}", cfg.hyper_channels, rng))

    if mode == "jeit":
        _cafm_params(p, "dec_image.fuse", cfg.latent_image + cfg.latent_shared, hid, rng)
        _stack_params(p, "dec_image.head", (hid, hid, cfg.image_patch_dim), rng, _STACK_GAIN, _HEAD_GAIN)
        _cafm_params(p, "dec_events.fuse", cfg.latent_events + cfg.latent_shared, hid, rng)
        _stack_params(p, "dec_events.head", (hid, hid, cfg.event_patch_dim), rng, _STACK_GAIN, _HEAD_GAIN)
        for i, cy in enumerate(cfg.latent_dims):
            p[f"mask_enc{i}.w"] = np.eye(cy)
            p[f"mask_enc{i}.b"] = np.zeros(cy)
            p[f"mask_dec{i}.w"] = np.eye(cy)
            p[f"mask_dec{i}.b"] = np.zeros(cy)
    elif mode == "jeit_t":
        if len(set(cfg.latent_dims)) != 1:
            raise BadConfig("single-stream mode needs equal latent widths")
        cy = cfg.latent_image
        p["mask_enc.w"] = np.eye(cy)
        p["mask_enc.b"] = np.zeros(cy)
        p["mask_dec.w"] = np.eye(cy)
        p["mask_dec.b"] = np.zeros(cy)
    else:
        raise BadConfig(f"unknown mode {mode!r}")

    _cafm_params(p, "dec_deblur.fuse01", cfg.latent_image + cfg.latent_events, hid, rng)
    _cafm_params(p, "dec_deblur.fuse2", hid + cfg.latent_shared, hid, rng)
    _stack_params(p, "dec_deblur.head", (hid, hid, cfg.image_patch_dim), rng, _STACK_GAIN, _HEAD_GAIN)
    return p


# ----------------------------------------------------------------------------
# forward passes (tape)
# ----------------------------------------------------------------------------

def _stack(tape: Tape, get, prefix: str, x: Tensor, n_layers: int) -> Tensor:
    out = x
    for i in range(n_layers):
        out = ad.affine(out, get(f"{prefix}.{i}.w"), get(f"{prefix}.{i}.b"))
        if i < n_layers - 1:
            out = ad.relu_leaky(out)
    return out


def encode_image(tape: Tape, get, x0p: Tensor) -> Tensor:
    return _stack(tape, get, "enc_image", x0p, 3)


def encode_events(tape: Tape, get, x1p: Tensor) -> Tensor:
    return _stack(tape, get, "enc_events", x1p, 3)


def encode_shared(tape: Tape, get, x0p: Tensor, x1p: Tensor, pool) -> Tensor:
    """Fuse both sources: concat features, pool, gated mix, upsample, skip, encode."""
    children, up = pool
    f0 = ad.relu_leaky(ad.affine(x0p, get("fuse.feat_image.w"), get("fuse.feat_image.b")))
    f1 = ad.relu_leaky(ad.affine(x1p, get("fuse.feat_events.w"), get("fuse.feat_events.b")))
    u = ad.concat([f0, f1], axis=1)
    down = ad.gather_rows(u, children[0])
    for idx in children[1:]:
        down = down + ad.gather_rows(u, idx)
    down = down * 0.25
    mixed = ad.relu_leaky(ad.affine(down, get("fuse.mix.0.w"), get("fuse.mix.0.b")))
    gate = ad.sigmoid(ad.affine(down, get("fuse.gate.0.w"), get("fuse.gate.0.b")))
    gated = mixed * gate
    upsampled = ad.gather_rows(gated, up)
    return _stack(tape, get, "fuse.head", u + upsampled, 3)


def hyper_encode(tape: Tape, get, idx: int, y: Tensor) -> Tensor:
    return _stack(tape, get, f"hyper_enc{idx}", y, 2)


def hyper_decode(tape: Tape, get, idx: int, z_hat: Tensor, latent_dim: int) -> tuple[Tensor, Tensor]:
    out = _stack(tape, get, f"hyper_dec{idx}", z_hat, 2)
    mu = ad.slice_cols(out, 0, latent_dim)
    sigma = ad.softplus(ad.slice_cols(out, latent_dim, 2 * latent_dim)) + SIGMA_MIN
    return mu, sigma


def _standardize_rows(x: Tensor) -> Tensor:
    centered = x - ad.mean(x, axis=1)
    var = ad.mean(ad.square(centered), axis=1)
    return centered / ad.sqrt(var + 1e-6)


def cafm_fuse(tape: Tape, get, prefix: str, a: Tensor, b: Tensor) -> Tensor:
    cat = ad.concat([_standardize_rows(a), _standardize_rows(b)], axis=1)
    conv = _stack(tape, get, f"{prefix}.conv", cat, 2)
    mlp = _stack(tape, get, f"{prefix}.mlp", cat, 2)
    return conv + mlp


def decode_image(tape: Tape, get, y0: Tensor, y2: Tensor) -> Tensor:
    fused = cafm_fuse(tape, get, "dec_image.fuse", y0, y2)
    return ad.clamp(_stack(tape, get, "dec_image.head", fused, 2), 0.0, 1.0)


def decode_events(tape: Tape, get, y1: Tensor, y2: Tensor) -> Tensor:
    fused = cafm_fuse(tape, get, "dec_events.fuse", y1, y2)
    return ad.clamp(_stack(tape, get, "dec_events.head", fused, 2), -1.0, 1.0)


def decode_deblur(tape: Tape, get, y0: Tensor, y1: Tensor, y2: Tensor) -> Tensor:
    first = cafm_fuse(tape, get, "dec_deblur.fuse01", y0, y1)
    fused = cafm_fuse(tape, get, "dec_deblur.fuse2", first, y2)
    return ad.clamp(_stack(tape, get, "dec_deblur.head", fused, 2), 0.0, 1.0)
