"""End-to-end orchestration: training objective, channel evaluation,
the training loop, and bandwidth-allocation reporting.

Training substitutes unit-uniform noise for quantization, passes the noisy
latents through the (differentiable) power-constrained channel, and feeds
the decoders directly; variable-length masking is applied at evaluation
time only, where latents are hard-rounded, priced by the entropy models,
truncated to their planned lengths, framed, and sent through the channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import allocation as alloc
from . import autodiff as ad
from . import transforms as tf
from .autodiff import AdamState, Tape, adam_step, backward
from .channel import ChannelConfig, awgn, power_normalize
from .config import RunConfig, sidecar_path
from .entropy import likelihood_conditional, likelihood_factorized, rate_bits, rate_nats
from .errors import BadConfig, EmptyDataset, ShapeMismatch
from .metrics import event_mse, psnr
from .transforms import TransformConfig, patchify, pooling_indices, unpatchify

MODES = ("jeit", "jeit_t")


@dataclass(frozen=True)
class LossWeights:
    """Distortion weights, the symbol-length scale, and the operating mode."""

    lambda_image: float = 1.0
    lambda_events: float = 1.0
    lambda_deblur: float = 2.0
    eta: float = 0.24
    mode: str = "jeit"

    def __post_init__(self):
        if self.mode not in MODES:
            raise BadConfig(f"mode must be one of {MODES}, got {self.mode!r}")
        if min(self.lambda_image, self.lambda_events, self.lambda_deblur) < 0:
            raise BadConfig("distortion weights must be non-negative")


@dataclass
class Sample:
    """One aligned training/evaluation unit.

    ``x0``: blurry image (3, H, W) in [0, 1]; ``x1``: normalized event tensor
    (2M, H, W) in [-1, 1]; ``t``: sharp exposure-midpoint image (3, H, W).
    """

    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray
    sample_id: Optional[str] = None
    motion: Optional[str] = None


@dataclass
class OptimizerConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainForward:
    """One differentiable forward pass: loss node plus itemized terms."""

    tape: Tape
    loss: ad.Tensor
    parts: dict[str, float]
    raw_mse: dict[str, float]

    @property
    def total(self) -> float:
        return float(self.loss.value)


@dataclass
class EvalResult:
    """Receiver-side outputs and accounting for one transmitted sample."""

    x0_hat: Optional[np.ndarray]
    x1_hat: Optional[np.ndarray]
    t_hat: np.ndarray
    plan: alloc.LengthPlan
    rho: tuple[float, float, float, float]  # total, image, events, shared
    metrics: dict[str, float]
    frame: alloc.SymbolFrame

    @property
    def outputs(self) -> tuple[np.ndarray, ...]:
        return tuple(o for o in (self.x0_hat, self.x1_hat, self.t_hat) if o is not None)


class TransmissionModel:
    """Parameter container plus the forward passes defined on it."""

    def __init__(self, cfg: TransformConfig, weights: LossWeights, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.weights = weights
        self.params = params

    @classmethod
    def create(cls, cfg: TransformConfig, weights: LossWeights, seed: int = 0) -> "TransmissionModel":
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0])))
        return cls(cfg, weights, tf.init_transform_params(cfg, weights.mode, rng))

    def save(self, path, run_config: Optional[RunConfig] = None) -> None:
        ad.save_checkpoint(path, self.params)
        if run_config is None:
            run_config = self.to_run_config()
        run_config.write(sidecar_path(path))

    @classmethod
    def load(cls, path) -> "TransmissionModel":
        params = ad.load_checkpoint(path)
        run = RunConfig.read(sidecar_path(path))
        weights = LossWeights(
            lambda_image=run.lambda_image,
            lambda_events=run.lambda_events,
            lambda_deblur=run.lambda_deblur,
            eta=run.eta,
            mode=run.mode,
        )
        return cls(run.transform_config(), weights, params)

    def to_run_config(self) -> RunConfig:
        c = self.cfg
        w = self.weights
        return RunConfig(
            height=c.height, width=c.width, patch=c.patch,
            image_channels=c.image_channels, half_intervals=c.half_intervals,
            latent_image=c.latent_image, latent_events=c.latent_events,
            latent_shared=c.latent_shared, hyper_channels=c.hyper_channels,
            hidden=c.hidden, mode=w.mode, lambda_image=w.lambda_image,
            lambda_events=w.lambda_events, lambda_deblur=w.lambda_deblur, eta=w.eta,
        )


def _check_sample(cfg: TransformConfig, sample: Sample) -> None:
    want_img = (cfg.image_channels, cfg.height, cfg.width)
    want_ev = (cfg.event_channels, cfg.height, cfg.width)
    if sample.x0.shape != want_img:
        raise ShapeMismatch(f"x0 shape {sample.x0.shape}, expected {want_img}")
    if sample.x1.shape != want_ev:
        raise ShapeMismatch(f"x1 shape {sample.x1.shape}, expected {want_ev}")
    if sample.t.shape != want_img:
        raise ShapeMismatch(f"t shape {sample.t.shape}, expected {want_img}")


def _stack_batch(cfg: TransformConfig, samples: Sequence[Sample]):
    x0 = np.concatenate([patchify(np.asarray(s.x0, dtype=np.float64), cfg.patch) for s in samples])
    x1 = np.concatenate([patchify(np.asarray(s.x1, dtype=np.float64), cfg.patch) for s in samples])
    t = np.concatenate([patchify(np.asarray(s.t, dtype=np.float64), cfg.patch) for s in samples])
    return x0, x1, t


def _encode_all(tape: Tape, get, cfg: TransformConfig, x0_rows, x1_rows, batch: int):
    x0 = tape.constant(x0_rows)
    x1 = tape.constant(x1_rows)
    pool = pooling_indices(batch, cfg.grid_h, cfg.grid_w)
    y0 = tf.encode_image(tape, get, x0)
    y1 = tf.encode_events(tape, get, x1)
    y2 = tf.encode_shared(tape, get, x0, x1, pool)
    return x0, x1, (y0, y1, y2)


def forward_train(
    model: TransmissionModel,
    samples: Sequence[Sample],
    rng: np.random.Generator,
    snr_db: Optional[float] = 10.0,
    quant: str = "noise",
) -> TrainForward:
    """Differentiable pass over a batch; returns the loss and its parts.

    ``quant`` selects the quantization surrogate: "noise" adds U(-1/2, 1/2),
    "round" applies straight-through rounding (used for train/eval parity
    checks). Channel noise is injected at ``snr_db`` unless it is None.
    """
    cfg, weights = model.cfg, model.weights
    if not samples:
        raise EmptyDataset("forward pass needs at least one sample")
    for s in samples:
        _check_sample(cfg, s)
    batch = len(samples)
    x0_rows, x1_rows, t_rows = _stack_batch(cfg, samples)

    tape = Tape()
    get = lambda name: tape.param(name, model.params[name])
    x0, x1, latents = _encode_all(tape, get, cfg, x0_rows, x1_rows, batch)
    hypers = [tf.hyper_encode(tape, get, i, y) for i, y in enumerate(latents)]

    if quant == "noise":
        y_hat = [ad.inject_uniform_noise(y, rng) for y in latents]
        z_hat = [ad.inject_uniform_noise(z, rng) for z in hypers]
    elif quant == "round":
        y_hat = [ad.round_ste(y) for y in latents]
        z_hat = [ad.round_ste(z) for z in hypers]
    else:
        raise BadConfig(f"unknown quantization surrogate {quant!r}")

    parts: dict[str, float] = {}
    loss_terms = []
    rate_names = ("Ry0", "Ry1", "Ry2")
    for i, (y, z) in enumerate(zip(y_hat, z_hat)):
        mu, sigma = tf.hyper_decode(tape, get, i, z, cfg.latent_dims[i])
        p_y = likelihood_conditional(mu, sigma, y)
        p_z = likelihood_factorized(tape, get, f"prior_z{i}", z)
        r_y = rate_nats(p_y) * (1.0 / batch)
        r_z = rate_nats(p_z) * (1.0 / batch)
        parts[rate_names[i]] = float(r_y.value)
        parts[f"Rz{i}"] = float(r_z.value)
        loss_terms.extend([r_y, r_z])

    received = _train_channel(tape, y_hat, snr_db, rng)

    t_target = tape.constant(t_rows)
    if weights.mode == "jeit":
        x0_hat = tf.decode_image(tape, get, received[0], received[2])
        x1_hat = tf.decode_events(tape, get, received[1], received[2])
        d0 = ad.sum(ad.square(x0_hat - x0)) * (weights.lambda_image / batch)
        d1 = ad.sum(ad.square(x1_hat - x1)) * (weights.lambda_events / batch)
        parts["D0"] = float(d0.value)
        parts["D1"] = float(d1.value)
        loss_terms.extend([d0, d1])
    t_hat = tf.decode_deblur(tape, get, received[0], received[1], received[2])
    dt = ad.sum(ad.square(t_hat - t_target)) * (weights.lambda_deblur / batch)
    parts["Dt"] = float(dt.value)
    loss_terms.append(dt)

    loss = loss_terms[0]
    for term in loss_terms[1:]:
        loss = loss + term

    raw = {"mse_deblur": float(np.mean((t_hat.value - t_rows) ** 2))}
    if weights.mode == "jeit":
        raw["mse_image"] = float(np.mean((x0_hat.value - x0_rows) ** 2))
        raw["mse_events"] = float(np.mean((x1_hat.value - x1_rows) ** 2))
    return TrainForward(tape=tape, loss=loss, parts=parts, raw_mse=raw)


def _train_channel(tape: Tape, y_hat, snr_db: Optional[float], rng: np.random.Generator):
    """Joint power normalization plus AWGN, as one differentiable step.

    Normalizing by the frame scale and undoing it at the receiver is the
    same as adding noise scaled by the frame's RMS symbol amplitude.
    """
    if snr_db is None:
        return list(y_hat)
    sigma2 = 10.0 ** (-snr_db / 10.0)
    n_reals = sum(int(np.prod(y.value.shape)) for y in y_hat)
    sq_sums = [ad.sum(ad.square(y)) for y in y_hat]
    total = sq_sums[0]
    for term in sq_sums[1:]:
        total = total + term
    scale = ad.sqrt(total * (2.0 / n_reals) + 1e-12)
    out = []
    for y in y_hat:
        noise = rng.normal(0.0, math.sqrt(sigma2 / 2.0), size=y.value.shape)
        out.append(y + scale * tape.constant(noise))
    return out


def forward_train_jeit_t(
    model: TransmissionModel,
    samples: Sequence[Sample],
    rng: np.random.Generator,
    snr_db: Optional[float] = 10.0,
    quant: str = "noise",
) -> TrainForward:
    """Deblurring-only objective; parts carry no image/event distortion terms."""
    if model.weights.mode != "jeit_t":
        raise BadConfig("model is not configured for single-stream mode")
    return forward_train(model, samples, rng, snr_db=snr_db, quant=quant)


def forward_eval(
    model: TransmissionModel,
    sample: Sample,
    channel: ChannelConfig = ChannelConfig(snr_db=None),
    rng: Optional[np.random.Generator] = None,
    mask: bool = True,
    ablate_events: bool = False,
) -> EvalResult:
    """Transmit one sample: round, price, truncate, frame, AWGN, reconstruct."""
    cfg, weights = model.cfg, model.weights
    _check_sample(cfg, sample)
    if rng is None:
        rng = channel.rng()
    x0_rows, x1_rows, t_rows = _stack_batch(cfg, [sample])

    tape = Tape()
    get = lambda name: tape.param(name, model.params[name])
    _, _, latents = _encode_all(tape, get, cfg, x0_rows, x1_rows, 1)
    hypers = [tf.hyper_encode(tape, get, i, y) for i, y in enumerate(latents)]
    y_hat = [ad.quantize(y.value) for y in latents]
    z_hat = [ad.quantize(z.value) for z in hypers]

    per_stream_bits = []
    for i in range(3):
        mu, sigma = tf.hyper_decode(tape, get, i, tape.constant(z_hat[i]), cfg.latent_dims[i])
        p_y = likelihood_conditional(mu, sigma, tape.constant(y_hat[i]))
        _, per_vector = rate_bits(p_y.value)
        per_stream_bits.append(per_vector)

    plan = alloc.plan_from_rates(per_stream_bits, weights.eta, cfg.latent_dims)
    if not mask:
        received = [y.copy() for y in y_hat]
        frame = alloc.assemble_frame(
            [np.zeros(2 * t) for t in plan.totals], plan, 1.0
        )
    else:
        enc_maps, dec_maps = _mask_maps(model)
        segments = [
            alloc.mask_encode(y_hat[i], plan.lengths[i], *enc_maps[i]) for i in range(3)
        ]
        raw_payload = np.concatenate(segments) if segments else np.zeros(0)
        normalized, scale = power_normalize(raw_payload)
        frame = alloc.assemble_frame(list(_resplit(normalized, plan)), plan, scale)
        if channel.noiseless:
            received_payload = raw_payload
        else:
            received_payload = awgn(frame.payload, channel, rng) * frame.scale
        received = []
        offset = 0
        for i in range(3):
            seg_len = 2 * plan.totals[i]
            seg = received_payload[offset : offset + seg_len]
            offset += seg_len
            received.append(
                alloc.mask_decode(seg, plan.lengths[i], cfg.latent_dims[i], *dec_maps[i])
            )
    if ablate_events:
        received[1] = np.zeros_like(received[1])

    rec_nodes = [tape.constant(r) for r in received]
    t_hat_rows = tf.decode_deblur(tape, get, rec_nodes[0], rec_nodes[1], rec_nodes[2]).value
    t_hat = unpatchify(t_hat_rows, cfg.image_channels, cfg.height, cfg.width, cfg.patch)

    n0 = cfg.image_channels * cfg.height * cfg.width
    rho = alloc.cbr(plan, n0)
    metrics = {
        "psnr_deblur": psnr(sample.t, t_hat),
        "mse_deblur": float(np.mean((sample.t - t_hat) ** 2)),
        "rho": rho[0], "rho0": rho[1], "rho1": rho[2], "rho2": rho[3],
    }
    x0_hat = x1_hat = None
    if weights.mode == "jeit":
        x0_rec = tf.decode_image(tape, get, rec_nodes[0], rec_nodes[2]).value
        x1_rec = tf.decode_events(tape, get, rec_nodes[1], rec_nodes[2]).value
        x0_hat = unpatchify(x0_rec, cfg.image_channels, cfg.height, cfg.width, cfg.patch)
        x1_hat = unpatchify(x1_rec, cfg.event_channels, cfg.height, cfg.width, cfg.patch)
        metrics["psnr_image"] = psnr(sample.x0, x0_hat)
        metrics["event_mse"] = event_mse(sample.x1, x1_hat)
    return EvalResult(
        x0_hat=x0_hat, x1_hat=x1_hat, t_hat=t_hat,
        plan=plan, rho=rho, metrics=metrics, frame=frame,
    )


def _mask_maps(model: TransmissionModel):
    """Per-stream (w, b) pairs; single-stream mode shares one map."""
    p = model.params
    if model.weights.mode == "jeit":
        enc = [(p[f"mask_enc{i}.w"], p[f"mask_enc{i}.b"]) for i in range(3)]
        dec = [(p[f"mask_dec{i}.w"], p[f"mask_dec{i}.b"]) for i in range(3)]
    else:
        enc = [(p["mask_enc.w"], p["mask_enc.b"])] * 3
        dec = [(p["mask_dec.w"], p["mask_dec.b"])] * 3
    return enc, dec


def _resplit(payload: np.ndarray, plan: alloc.LengthPlan):
    offset = 0
    for total in plan.totals:
        yield payload[offset : offset + 2 * total]
        offset += 2 * total


@dataclass
class TrainResult:
    model: TransmissionModel
    curve: list[dict[str, float]] = field(default_factory=list)

    @property
    def totals(self) -> list[float]:
        return [step["total"] for step in self.curve]


def train(
    dataset: Sequence[Sample],
    epochs: int,
    weights: LossWeights,
    cfg: TransformConfig,
    optimizer: OptimizerConfig = OptimizerConfig(),
    seed: int = 0,
    snr_db: Optional[float] = 10.0,
    batch_size: Optional[int] = None,
    out_path=None,
    run_config: Optional[RunConfig] = None,
) -> TrainResult:
    """Train a fresh model; deterministic for a fixed seed.

    One epoch is one pass over the data; with the default full-batch setting
    that is exactly one Adam step. The learning rate halves at each third of
    the schedule. Returns the per-step loss curve with itemized parts.
    """
    samples = list(dataset)
    if not samples:
        raise EmptyDataset("training needs at least one sample")
    model = TransmissionModel.create(cfg, weights, seed=seed)
    noise_rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 1])))
    shuffle_rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 2])))
    state = AdamState()
    result = TrainResult(model=model)
    n = len(samples)
    bs = n if not batch_size else min(batch_size, n)
    for epoch in range(epochs):
        lr = optimizer.learning_rate * 0.5 ** ((3 * epoch) // max(epochs, 1))
        order = np.arange(n) if bs == n else shuffle_rng.permutation(n)
        for start in range(0, n, bs):
            batch = [samples[i] for i in order[start : start + bs]]
            fwd = forward_train(model, batch, noise_rng, snr_db=snr_db)
            grads = backward(fwd.tape, fwd.loss)
            adam_step(
                model.params, grads, state, lr,
                optimizer.beta1, optimizer.beta2, optimizer.eps,
            )
            record = {"total": fwd.total, "lr": lr}
            record.update(fwd.parts)
            result.curve.append(record)
    if out_path is not None:
        model.save(out_path, run_config)
    return result


def allocation_report(
    model: TransmissionModel,
    dataset: Sequence[Sample],
    channel: ChannelConfig = ChannelConfig(snr_db=None),
) -> tuple[list[dict], dict[str, dict[str, float]]]:
    """Per-sample bandwidth shares plus per-motion-label medians."""
    rows = []
    for idx, sample in enumerate(dataset):
        res = forward_eval(model, sample, channel=channel)
        rows.append(
            {
                "sample_id": sample.sample_id or f"sample_{idx:04d}",
                "motion": sample.motion or "unknown",
                "rho": res.rho[0],
                "rho0": res.rho[1],
                "rho1": res.rho[2],
                "rho2": res.rho[3],
            }
        )
    medians: dict[str, dict[str, float]] = {}
    for label in sorted({row["motion"] for row in rows}):
        subset = [row for row in rows if row["motion"] == label]
        medians[label] = {
            key: float(np.median([row[key] for row in subset]))
            for key in ("rho", "rho0", "rho1", "rho2")
        }
    return rows, medians
