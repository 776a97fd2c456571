"""Training objective, evaluation path, and training-loop tests."""

import numpy as np
import pytest

from jeit import autodiff as ad
from jeit.channel import ChannelConfig
from jeit.config import RunConfig
from jeit.dataset import build_mixed_samples
from jeit.errors import BadConfig, EmptyDataset
from jeit.pipeline import (
    LossWeights,
    OptimizerConfig,
    Sample,
    TransmissionModel,
    allocation_report,
    forward_eval,
    forward_train,
    forward_train_jeit_t,
    train,
)
from jeit.transforms import TransformConfig

SMALL = TransformConfig(
    height=8, width=8, patch=4, latent_image=6, latent_events=6,
    latent_shared=6, hyper_channels=3, hidden=12,
)

RATE_KEYS = ("Ry0", "Ry1", "Ry2", "Rz0", "Rz1", "Rz2")


def small_samples(n=4, seed=0):
    return build_mixed_samples(n, height=8, width=8, seed=seed)


@pytest.fixture(scope="module")
def small_model():
    return TransmissionModel.create(SMALL, LossWeights(), seed=1)


def test_loss_decomposition(small_model):
    rng = np.random.Generator(np.random.Philox(0))
    fwd = forward_train(small_model, small_samples(3), rng)
    total_from_parts = sum(fwd.parts[k] for k in fwd.parts)
    assert fwd.total == pytest.approx(total_from_parts, rel=1e-5)
    assert set(fwd.parts) == {"D0", "D1", "Dt", *RATE_KEYS}


def test_parts_finite_at_init(small_model):
    rng = np.random.Generator(np.random.Philox(1))
    fwd = forward_train(small_model, small_samples(2), rng)
    for key, value in fwd.parts.items():
        assert np.isfinite(value), key


def test_zero_weights_leave_only_rates():
    model = TransmissionModel.create(
        SMALL, LossWeights(lambda_image=0, lambda_events=0, lambda_deblur=0), seed=2
    )
    rng = np.random.Generator(np.random.Philox(2))
    fwd = forward_train(model, small_samples(2), rng)
    rates = sum(fwd.parts[k] for k in RATE_KEYS)
    assert fwd.total == pytest.approx(rates, rel=1e-9)


def test_forward_train_requires_samples(small_model):
    rng = np.random.Generator(np.random.Philox(3))
    with pytest.raises(EmptyDataset):
        forward_train(small_model, [], rng)


def test_jeit_t_parts_exclude_reconstruction_terms():
    model = TransmissionModel.create(SMALL, LossWeights(mode="jeit_t"), seed=3)
    rng = np.random.Generator(np.random.Philox(4))
    fwd = forward_train_jeit_t(model, small_samples(2), rng)
    assert "D0" not in fwd.parts and "D1" not in fwd.parts
    assert set(fwd.parts) == {"Dt", *RATE_KEYS}


def test_jeit_t_guard(small_model):
    rng = np.random.Generator(np.random.Philox(5))
    with pytest.raises(BadConfig):
        forward_train_jeit_t(small_model, small_samples(1), rng)


def test_mode_output_counts(small_model):
    sample = small_samples(1)[0]
    res = forward_eval(small_model, sample)
    assert len(res.outputs) == 3
    model_t = TransmissionModel.create(SMALL, LossWeights(mode="jeit_t"), seed=4)
    res_t = forward_eval(model_t, sample)
    assert len(res_t.outputs) == 1
    assert res_t.x0_hat is None and res_t.x1_hat is None


def test_eval_rho_matches_frame(small_model):
    sample = small_samples(1)[0]
    res = forward_eval(small_model, sample, channel=ChannelConfig(snr_db=5.0, seed=1))
    n0 = 3 * 8 * 8
    assert res.rho[0] == pytest.approx(res.frame.complex_uses / n0)
    assert res.rho[0] == pytest.approx(res.rho[1] + res.rho[2] + res.rho[3])
    assert res.frame.complex_uses == res.plan.total


def test_eval_noiseless_fullmask_equals_channel_free():
    # a huge length scale forces every vector to keep all entries, and the
    # mask maps start as identities, so the masked path must be exact
    model = TransmissionModel.create(SMALL, LossWeights(eta=1e9), seed=5)
    sample = small_samples(2, seed=3)[1]
    masked = forward_eval(model, sample, channel=ChannelConfig(snr_db=None), mask=True)
    free = forward_eval(model, sample, channel=ChannelConfig(snr_db=None), mask=False)
    assert np.array_equal(masked.t_hat, free.t_hat)
    assert np.array_equal(masked.x0_hat, free.x0_hat)
    assert np.array_equal(masked.x1_hat, free.x1_hat)


def test_train_eval_distortion_consistency(small_model):
    """Rounded quantization + no channel + no masking gives identical distortions."""
    sample = small_samples(2, seed=4)[0]
    rng = np.random.Generator(np.random.Philox(6))
    fwd = forward_train(small_model, [sample], rng, snr_db=None, quant="round")
    res = forward_eval(small_model, sample, channel=ChannelConfig(snr_db=None), mask=False)
    assert fwd.raw_mse["mse_deblur"] == pytest.approx(res.metrics["mse_deblur"], rel=1e-9)
    got = np.mean((res.x0_hat - sample.x0) ** 2)
    assert fwd.raw_mse["mse_image"] == pytest.approx(float(got), rel=1e-9)


def test_eval_ablation_zeroes_event_latent(small_model):
    sample = small_samples(2, seed=5)[1]
    normal = forward_eval(small_model, sample, channel=ChannelConfig(snr_db=None))
    ablated = forward_eval(
        small_model, sample, channel=ChannelConfig(snr_db=None), ablate_events=True
    )
    assert not np.array_equal(normal.t_hat, ablated.t_hat)
    assert normal.plan == ablated.plan  # transmitter side unchanged


def test_end_to_end_gradient_check():
    """Analytic vs finite-difference gradients through the full training loss."""
    model = TransmissionModel.create(SMALL, LossWeights(), seed=6)
    # park the synthesis outputs strictly inside their clamp ranges; the
    # output clamps are kinks where finite differences are undefined
    for head in ("dec_image.head", "dec_deblur.head"):
        model.params[f"{head}.1.w"] = 0.02 * model.params[f"{head}.1.w"]
        model.params[f"{head}.1.b"] = np.full_like(model.params[f"{head}.1.b"], 0.5)
    model.params["dec_events.head.1.w"] = 0.02 * model.params["dec_events.head.1.w"]
    sample = small_samples(1, seed=7)[0]

    def run():
        rng = np.random.Generator(np.random.Philox(1234))  # frozen noise
        return forward_train(model, [sample], rng, snr_db=None, quant="noise")

    fwd = run()
    grads = ad.backward(fwd.tape, fwd.loss)
    picker = np.random.default_rng(11)
    names = picker.choice(sorted(grads), 10, replace=False)
    eps = 1e-4
    for name in names:
        flat = model.params[name].reshape(-1)
        k = int(picker.integers(0, flat.size))
        orig = flat[k]
        vals = []
        for d in (eps, -eps):
            flat[k] = orig + d
            vals.append(run().total)
        flat[k] = orig
        fd = (vals[0] - vals[1]) / (2 * eps)
        an = float(grads[name].reshape(-1)[k])
        rel = abs(fd - an) / max(1e-6, abs(fd) + abs(an))
        assert rel < 1e-3, (name, k, fd, an)


def test_train_records_curve_and_saves(tmp_path):
    samples = small_samples(4, seed=8)
    out = tmp_path / "model.ckpt"
    result = train(
        samples, epochs=5, weights=LossWeights(), cfg=SMALL,
        optimizer=OptimizerConfig(learning_rate=1e-3), seed=9, snr_db=10.0,
        out_path=out,
    )
    assert len(result.curve) == 5
    assert out.exists() and (tmp_path / "model.cfg").exists()
    loaded = TransmissionModel.load(out)
    assert loaded.cfg == SMALL
    assert loaded.weights.mode == "jeit"
    res = forward_eval(loaded, samples[0])
    assert res.t_hat.shape == (3, 8, 8)


def test_train_bitwise_deterministic():
    samples = small_samples(4, seed=10)
    runs = []
    for _ in range(2):
        result = train(
            samples, epochs=4, weights=LossWeights(), cfg=SMALL,
            optimizer=OptimizerConfig(learning_rate=1e-3), seed=11, snr_db=10.0,
        )
        runs.append(result.totals)
    assert runs[0] == runs[1]


def test_train_minibatch_schedule():
    samples = small_samples(4, seed=12)
    result = train(
        samples, epochs=2, weights=LossWeights(), cfg=SMALL,
        optimizer=OptimizerConfig(learning_rate=1e-3), seed=13, batch_size=2,
    )
    assert len(result.curve) == 4  # two steps per epoch


def test_train_empty_dataset():
    with pytest.raises(EmptyDataset):
        train([], epochs=1, weights=LossWeights(), cfg=SMALL)


def test_weight_steering_ablation():
    """With the deblur weight off, reconstruction improves while deblur stalls."""
    samples = small_samples(6, seed=14)
    steered = LossWeights(lambda_image=40.0, lambda_events=40.0, lambda_deblur=0.0)
    result = train(
        samples, epochs=40, weights=steered, cfg=SMALL,
        optimizer=OptimizerConfig(learning_rate=2e-3), seed=15, snr_db=None,
    )
    model = result.model
    rng = np.random.Generator(np.random.Philox(16))
    first = forward_train(model, samples, rng, snr_db=None, quant="round")
    fresh = TransmissionModel.create(SMALL, steered, seed=15)
    rng = np.random.Generator(np.random.Philox(16))
    base = forward_train(fresh, samples, rng, snr_db=None, quant="round")
    assert first.raw_mse["mse_image"] < base.raw_mse["mse_image"]
    assert first.raw_mse["mse_events"] < base.raw_mse["mse_events"]


def test_allocation_report_consistency(small_model):
    samples = small_samples(6, seed=17)
    rows, medians = allocation_report(small_model, samples)
    assert len(rows) == 6
    for row in rows:
        assert row["rho"] == pytest.approx(row["rho0"] + row["rho1"] + row["rho2"])
    assert set(medians) == {"static", "high_motion"}
    rows2, _ = allocation_report(small_model, samples)
    assert rows == rows2


def test_run_config_roundtrip(tmp_path):
    run = RunConfig(height=8, width=8, epochs=7, snr_db=None, mode="jeit_t", eta=0.3)
    path = tmp_path / "run.cfg"
    run.write(path)
    back = RunConfig.read(path)
    assert back == run
    with pytest.raises(BadConfig):
        RunConfig.from_text("nonsense line")
    with pytest.raises(BadConfig):
        RunConfig.from_text("mode = banana")
