"""Likelihood model tests: normalization, oracle values, rate accounting."""

import numpy as np
import pytest
from scipy import integrate, stats

from jeit import autodiff as ad
from jeit.entropy import (
    P_MIN,
    SIGMA_MIN,
    conditional_bin_probability,
    factorized_bin_probability,
    init_factorized_params,
    likelihood_conditional,
    likelihood_factorized,
    rate_bits,
    rate_nats,
)
from jeit.errors import DomainError


@pytest.fixture(scope="module")
def prior_params():
    rng = np.random.Generator(np.random.Philox(2024))
    return init_factorized_params("prior", 6, rng)


def test_factorized_cdf_monotone(prior_params):
    grid = np.linspace(-20, 20, 401)
    tape = ad.Tape()
    get = lambda n: tape.param(n, prior_params[n])
    from jeit.entropy import _factorized_cdf

    for c in range(6):
        vals = _factorized_cdf(tape, get, "prior", c, tape.constant(grid[:, None])).value[:, 0]
        assert np.all(np.diff(vals) >= -1e-12)
        assert vals[0] < 0.05 and vals[-1] > 0.95


def test_factorized_probabilities_nonnegative(prior_params):
    rng = np.random.default_rng(1)
    vals = rng.normal(0, 3, (50, 6))
    probs = factorized_bin_probability(prior_params, "prior", vals)
    assert np.all(probs >= P_MIN)
    assert np.all(probs <= 1.0)


def test_factorized_integer_grid_sum(prior_params):
    grid = np.arange(-30, 31, dtype=np.float64)
    probs = factorized_bin_probability(prior_params, "prior", np.tile(grid[:, None], (1, 6)))
    sums = probs.sum(axis=0)
    assert np.all(sums >= 0.99)
    assert np.all(sums <= 1.0 + 1e-6)


def test_factorized_tail_clamps(prior_params):
    far = np.full((1, 6), 1e4)
    probs = factorized_bin_probability(prior_params, "prior", far)
    assert np.allclose(probs, P_MIN)


def test_conditional_center_value_vs_quadrature():
    p = conditional_bin_probability(np.array([0.0]), 0.0, 1.0)[0]
    oracle, err = integrate.quad(stats.norm.pdf, -0.5, 0.5)
    assert err < 1e-10
    assert p == pytest.approx(oracle, abs=1e-12)
    assert p == pytest.approx(0.38292, abs=1e-4)


def test_conditional_concentrates_at_sigma_min():
    p = conditional_bin_probability(np.array([0.0]), 0.0, SIGMA_MIN)[0]
    assert p > 1 - 1e-9


def test_conditional_integer_grid_sum():
    grid = np.arange(-20, 21, dtype=np.float64) + 0.7
    total = conditional_bin_probability(grid, 0.7, 1.0).sum()
    assert abs(total - 1.0) < 1e-6


def test_conditional_translation_invariance():
    rng = np.random.default_rng(2)
    y = rng.normal(0, 2, 40)
    mu = rng.normal(0, 1, 40)
    shift = 13.0
    a = conditional_bin_probability(y, mu, 0.8)
    b = conditional_bin_probability(y + shift, mu + shift, 0.8)
    assert np.allclose(a, b, rtol=1e-10)


def test_conditional_matches_tape_version():
    rng = np.random.default_rng(3)
    y = rng.normal(0, 1.5, (7, 4))
    mu = rng.normal(0, 0.5, (7, 4))
    sigma = np.full((7, 4), 0.9)
    tape = ad.Tape()
    node = likelihood_conditional(tape.constant(mu), tape.constant(sigma), tape.constant(y))
    assert np.allclose(node.value, conditional_bin_probability(y, mu, 0.9))


def test_rate_bits_values():
    total, per_vec = rate_bits(np.array([[1.0, 1.0], [0.5, 1.0]]))
    assert total == 1.0
    assert per_vec.tolist() == [0.0, 1.0]
    total2, _ = rate_bits(np.array([[0.25, 0.5]]))
    assert total2 == 3.0


def test_rate_bits_domain_error():
    with pytest.raises(DomainError):
        rate_bits(np.array([0.5, 0.0]))
    with pytest.raises(DomainError):
        rate_bits(np.array([0.5, 1.2]))


def test_rate_decreases_with_matched_scale():
    y = np.zeros(16)
    wide = rate_bits(conditional_bin_probability(y, 0.0, 2.0))[0]
    narrow = rate_bits(conditional_bin_probability(y, 0.0, 0.2))[0]
    assert narrow < wide


def test_rate_nats_matches_bits():
    probs = np.array([[0.5, 0.25]])
    tape = ad.Tape()
    nats = float(rate_nats(tape.constant(probs)).value)
    bits, _ = rate_bits(probs)
    assert nats == pytest.approx(bits * np.log(2.0))


def test_likelihoods_differentiable(prior_params):
    rng = np.random.Generator(np.random.Philox(4))
    tape = ad.Tape()
    get = lambda n: tape.param(n, prior_params[n])
    z = tape.param("z", rng.normal(0, 1.0, (10, 6)))
    pz = likelihood_factorized(tape, get, "prior", z)
    mu = tape.param("mu", rng.normal(0, 0.3, (10, 6)))
    sraw = tape.param("sraw", rng.normal(0, 0.2, (10, 6)))
    sigma = ad.softplus(sraw) + SIGMA_MIN
    y = tape.param("y", rng.normal(0, 1.2, (10, 6)))
    py = likelihood_conditional(mu, sigma, y)
    loss = rate_nats(pz) + rate_nats(py)
    grads = ad.backward(tape, loss)
    for name in ("z", "mu", "sraw", "y", "prior.c0.w0", "prior.c2.b1"):
        assert np.isfinite(grads[name]).all()
        assert np.abs(grads[name]).max() > 0, name


def test_factorized_gradient_finite_difference(prior_params):
    values = np.array([[0.4, -1.2, 0.9, 0.1, -0.5, 1.7]])

    def run(params):
        tape = ad.Tape()
        get = lambda n: tape.param(n, params[n])
        probs = likelihood_factorized(tape, get, "prior", tape.constant(values))
        return tape, rate_nats(probs)

    tape, loss = run(prior_params)
    grads = ad.backward(tape, loss)
    eps = 1e-4
    name = "prior.c1.w1"
    flat = prior_params[name].reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        vals = []
        for d in (eps, -eps):
            flat[k] = orig + d
            _, l2 = run(prior_params)
            vals.append(float(l2.value))
        flat[k] = orig
        fd = (vals[0] - vals[1]) / (2 * eps)
        an = grads[name].reshape(-1)[k]
        assert abs(fd - an) / max(1e-6, abs(fd) + abs(an)) < 1e-4
