"""Transform shape contracts, locality, and composite gradient checks."""

import numpy as np
import pytest

from jeit import autodiff as ad
from jeit import transforms as tf
from jeit.entropy import SIGMA_MIN
from jeit.errors import BadConfig, ShapeMismatch
from jeit.transforms import TransformConfig, patchify, pooling_indices, unpatchify


@pytest.fixture(scope="module")
def desk():
    cfg = TransformConfig()
    rng = np.random.Generator(np.random.Philox(0))
    params = tf.init_transform_params(cfg, "jeit", rng)
    return cfg, params


def _forward(cfg, params, x0_img, x1_img):
    tape = ad.Tape()
    get = lambda name: tape.param(name, params[name])
    x0 = tape.constant(patchify(x0_img, cfg.patch))
    x1 = tape.constant(patchify(x1_img, cfg.patch))
    pool = pooling_indices(1, cfg.grid_h, cfg.grid_w)
    y0 = tf.encode_image(tape, get, x0)
    y1 = tf.encode_events(tape, get, x1)
    y2 = tf.encode_shared(tape, get, x0, x1, pool)
    return tape, get, (y0, y1, y2)


def test_patchify_roundtrip():
    rng = np.random.default_rng(0)
    img = rng.normal(size=(3, 32, 32))
    mat = patchify(img, 4)
    assert mat.shape == (64, 48)
    assert np.array_equal(unpatchify(mat, 3, 32, 32, 4), img)


def test_patchify_bad_shape():
    with pytest.raises(ShapeMismatch):
        patchify(np.zeros((3, 30, 32)), 4)


def test_config_validation():
    with pytest.raises(BadConfig):
        TransformConfig(height=30)
    with pytest.raises(BadConfig):
        TransformConfig(height=8, width=8, patch=8)  # 1x1 grid cannot pool
    with pytest.raises(BadConfig):
        TransformConfig(hidden=0)


def test_encoder_grid_shape(desk):
    cfg, params = desk
    rng = np.random.default_rng(1)
    _, _, (y0, y1, y2) = _forward(
        cfg, params, rng.uniform(0, 1, (3, 32, 32)), rng.uniform(-1, 1, (6, 32, 32))
    )
    assert y0.value.shape == (64, cfg.latent_image)
    assert y1.value.shape == (64, cfg.latent_events)
    assert y2.value.shape == (64, cfg.latent_shared)


def test_zero_input_zero_latent(desk):
    cfg, params = desk
    # biases start at zero, so zero inputs propagate to zero latents
    _, _, (y0, y1, y2) = _forward(cfg, params, np.zeros((3, 32, 32)), np.zeros((6, 32, 32)))
    assert not y0.value.any()
    assert not y1.value.any()
    assert not y2.value.any()


def test_encoder_locality_single_patch(desk):
    cfg, params = desk
    rng = np.random.default_rng(2)
    base = rng.uniform(0, 1, (3, 32, 32))
    bumped = base.copy()
    bumped[:, 8:12, 20:24] += 0.25  # exactly one 4x4 patch
    _, _, (a, _, _) = _forward(cfg, params, base, np.zeros((6, 32, 32)))
    _, _, (b, _, _) = _forward(cfg, params, bumped, np.zeros((6, 32, 32)))
    diff = np.abs(a.value - b.value).sum(axis=1)
    changed = np.nonzero(diff > 1e-12)[0]
    assert changed.tolist() == [2 * 8 + 5]  # grid row 2, column 5


def test_shared_fusion_asymmetric(desk):
    cfg, params = desk
    rng = np.random.default_rng(3)
    a = rng.uniform(0, 1, (3, 32, 32))
    bpad = np.zeros((6, 32, 32))
    bpad[:3] = rng.uniform(0, 1, (3, 32, 32))
    apad = np.zeros((6, 32, 32))
    apad[:3] = a
    _, _, (_, _, y2_ab) = _forward(cfg, params, a, bpad)
    _, _, (_, _, y2_ba) = _forward(cfg, params, bpad[:3], apad)
    assert not np.allclose(y2_ab.value, y2_ba.value)


def test_hyper_shapes_and_sigma_floor(desk):
    cfg, params = desk
    rng = np.random.default_rng(4)
    tape, get, (y0, _, _) = _forward(
        cfg, params, rng.uniform(0, 1, (3, 32, 32)), rng.uniform(-1, 1, (6, 32, 32))
    )
    z0 = tf.hyper_encode(tape, get, 0, y0)
    assert z0.value.shape == (64, cfg.hyper_channels)
    mu, sigma = tf.hyper_decode(tape, get, 0, z0, cfg.latent_image)
    assert mu.value.shape == (64, cfg.latent_image)
    assert sigma.value.shape == (64, cfg.latent_image)
    assert np.all(sigma.value >= SIGMA_MIN)


def test_hyper_decode_deterministic(desk):
    cfg, params = desk
    z = np.random.default_rng(5).normal(size=(64, cfg.hyper_channels))
    outs = []
    for _ in range(2):
        tape = ad.Tape()
        get = lambda name: tape.param(name, params[name])
        mu, sigma = tf.hyper_decode(tape, get, 1, tape.constant(z), cfg.latent_events)
        outs.append((mu.value.copy(), sigma.value.copy()))
    assert np.array_equal(outs[0][0], outs[1][0])
    assert np.array_equal(outs[0][1], outs[1][1])


def test_decoder_shapes_and_ranges(desk):
    cfg, params = desk
    rng = np.random.default_rng(6)
    tape = ad.Tape()
    get = lambda name: tape.param(name, params[name])
    y0 = tape.constant(rng.normal(0, 2, (64, cfg.latent_image)))
    y1 = tape.constant(rng.normal(0, 2, (64, cfg.latent_events)))
    y2 = tape.constant(rng.normal(0, 2, (64, cfg.latent_shared)))
    x0 = tf.decode_image(tape, get, y0, y2).value
    x1 = tf.decode_events(tape, get, y1, y2).value
    t = tf.decode_deblur(tape, get, y0, y1, y2).value
    assert unpatchify(x0, 3, 32, 32, 4).shape == (3, 32, 32)
    assert unpatchify(x1, 6, 32, 32, 4).shape == (6, 32, 32)
    assert unpatchify(t, 3, 32, 32, 4).shape == (3, 32, 32)
    assert x0.min() >= 0.0 and x0.max() <= 1.0
    assert x1.min() >= -1.0 and x1.max() <= 1.0
    assert t.min() >= 0.0 and t.max() <= 1.0


def test_zero_latents_give_constant_bias_output(desk):
    cfg, params = desk
    biased = dict(params)
    biased["dec_image.head.1.b"] = np.full(cfg.image_patch_dim, 0.25)
    tape = ad.Tape()
    get = lambda name: tape.param(name, biased[name])
    zeros = tape.constant(np.zeros((64, cfg.latent_image)))
    zeros2 = tape.constant(np.zeros((64, cfg.latent_shared)))
    out = tf.decode_image(tape, get, zeros, zeros2).value
    assert np.allclose(out, 0.25)


def test_pooling_indices_batched():
    children, up = pooling_indices(2, 4, 4)
    assert len(children) == 4
    assert children[0].shape == (2 * 2 * 2,)
    assert up.shape == (2 * 16,)
    # second sample's rows are offset by one grid
    assert children[0][4] == 16
    assert up[16] == 4  # first fine cell of sample 1 -> its coarse grid start


def test_composite_gradient_check_small_config():
    """End-to-end finite differences on the 8x8, patch-4 configuration."""
    cfg = TransformConfig(
        height=8, width=8, patch=4, latent_image=4, latent_events=4,
        latent_shared=4, hyper_channels=2, hidden=8,
    )
    rng = np.random.Generator(np.random.Philox(7))
    params = tf.init_transform_params(cfg, "jeit", rng)
    # keep synthesis outputs strictly inside (0, 1): the output clamp is a
    # kink, and finite differences are only meaningful where it is inactive
    params["dec_deblur.head.1.w"] = 0.02 * params["dec_deblur.head.1.w"]
    params["dec_deblur.head.1.b"] = np.full(cfg.image_patch_dim, 0.5)
    data_rng = np.random.default_rng(8)
    x0_img = data_rng.uniform(0.1, 0.9, (3, 8, 8))
    x1_img = data_rng.uniform(-0.8, 0.8, (6, 8, 8))
    target = data_rng.uniform(0.1, 0.9, (4, 48))

    def run(values):
        tape = ad.Tape()
        get = lambda name: tape.param(name, values[name])
        x0 = tape.constant(patchify(x0_img, 4))
        x1 = tape.constant(patchify(x1_img, 4))
        pool = pooling_indices(1, 2, 2)
        y0 = tf.encode_image(tape, get, x0)
        y1 = tf.encode_events(tape, get, x1)
        y2 = tf.encode_shared(tape, get, x0, x1, pool)
        t_hat = tf.decode_deblur(tape, get, y0, y1, y2)
        return tape, ad.sum(ad.square(t_hat - tape.constant(target)))

    tape, loss = run(params)
    grads = ad.backward(tape, loss)
    picker = np.random.default_rng(9)
    names = picker.choice(sorted(grads), 8, replace=False)
    eps = 1e-4
    for name in names:
        flat = params[name].reshape(-1)
        k = int(picker.integers(0, flat.size))
        orig = flat[k]
        vals = []
        for d in (eps, -eps):
            flat[k] = orig + d
            _, l2 = run(params)
            vals.append(float(l2.value))
        flat[k] = orig
        fd = (vals[0] - vals[1]) / (2 * eps)
        an = grads[name].reshape(-1)[k]
        rel = abs(fd - an) / max(1e-7, abs(fd) + abs(an))
        assert rel < 1e-3, (name, k, fd, an)
