"""Discrete likelihood models that price integer-valued latents in bits.

Two models: a per-channel learned monotone CDF for hyper-latents (positive
weights via softplus, tanh-gated residual layers, final sigmoid) and a
Gaussian-with-unit-uniform bin model whose mean/scale come from the hyper
decoder. Bin probability of value v is cdf(v + 1/2) - cdf(v - 1/2).
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import DomainError

SIGMA_MIN = 0.05  # lower bound on predicted scales
P_MIN = 1e-9  # likelihood clamp, keeps rates finite

FACTORIZED_DIMS = (1, 3, 3, 3, 1)  # univariate chain per channel
_FACTORIZED_INIT_SCALE = 1.5  # matches the hyper-latent spread at init


def init_factorized_params(
    prefix: str, channels: int, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    """Fresh per-channel CDF parameters spreading mass over roughly ±4 bins."""
    params: dict[str, np.ndarray] = {}
    n_layers = len(FACTORIZED_DIMS) - 1
    scale = _FACTORIZED_INIT_SCALE ** (1.0 / n_layers)
    for c in range(channels):
        for k in range(n_layers):
            r_in, r_out = FACTORIZED_DIMS[k], FACTORIZED_DIMS[k + 1]
            base = math.log(math.expm1(1.0 / (scale * r_out)))
            w = np.full((r_in, r_out), base) + 0.01 * rng.standard_normal((r_in, r_out))
            b = rng.uniform(-0.5, 0.5, size=(r_out,))
            params[f"{prefix}.c{c}.w{k}"] = w
            params[f"{prefix}.c{c}.b{k}"] = b
            if k < n_layers - 1:
                params[f"{prefix}.c{c}.a{k}"] = np.zeros(r_out)
    return params


def _factorized_cdf(tape: Tape, get, prefix: str, c: int, v: Tensor) -> Tensor:
    """Monotone CDF of channel ``c`` evaluated at the (N, 1) column ``v``."""
    n_layers = len(FACTORIZED_DIMS) - 1
    u = v
    for k in range(n_layers):
        w = ad.softplus(get(f"{prefix}.c{c}.w{k}"))
        u = ad.affine(u, w, get(f"{prefix}.c{c}.b{k}"))
        if k < n_layers - 1:
            gate = ad.tanh(get(f"{prefix}.c{c}.a{k}"))
            u = u + gate * ad.tanh(u)
    return ad.sigmoid(u)


def likelihood_factorized(tape: Tape, get, prefix: str, z: Tensor) -> Tensor:
    """Per-element bin probabilities of ``z`` (N, C) under the channel CDFs."""
    channels = z.value.shape[1]
    cols = []
    for c in range(channels):
        v = ad.slice_cols(z, c, c + 1)
        upper = _factorized_cdf(tape, get, prefix, c, v + 0.5)
        lower = _factorized_cdf(tape, get, prefix, c, v - 0.5)
        cols.append(upper - lower)
    probs = ad.concat(cols, axis=1)
    return ad.clamp_min(probs, P_MIN)


def likelihood_conditional(mu: Tensor, sigma: Tensor, y: Tensor) -> Tensor:
    """Bin probabilities of ``y`` under N(mu, sigma^2) convolved with U(-1/2, 1/2).

    Evaluated on the negative half-line for tail accuracy; symmetric in
    (y - mu), so jointly shifting ``y`` and ``mu`` leaves the result unchanged.
    """
    d = y - mu
    # |d| via two rectifiers; the composition is smooth at d = 0
    mag = ad.relu_leaky(d, 0.0) + ad.relu_leaky(-d, 0.0)
    upper = ad.gaussian_cdf((0.5 - mag) / sigma)
    lower = ad.gaussian_cdf((-0.5 - mag) / sigma)
    return ad.clamp_min(upper - lower, P_MIN)


def rate_nats(probs: Tensor) -> Tensor:
    """Total -ln p over all elements (tape node), for training losses."""
    return ad.sum(-ad.log(probs))


def rate_bits(probs: np.ndarray) -> tuple[float, np.ndarray]:
    """Total bits and per-row bit sums of a (N, C) probability array."""
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p <= 0):
        raise DomainError("probabilities must be strictly positive")
    if np.any(p > 1.0):
        raise DomainError("probabilities must not exceed one")
    bits = -np.log2(p)
    per_vector = bits.sum(axis=1) if bits.ndim == 2 else bits
    return float(bits.sum()), per_vector


def conditional_bin_probability(values, mu, sigma) -> np.ndarray:
    """Plain-numpy mirror of :func:`likelihood_conditional` for analysis code."""
    from scipy import special as sp

    d = np.abs(np.asarray(values, dtype=np.float64) - mu)
    p = sp.ndtr((0.5 - d) / sigma) - sp.ndtr((-0.5 - d) / sigma)
    return np.maximum(p, P_MIN)


def factorized_bin_probability(
    params: dict[str, np.ndarray], prefix: str, values: np.ndarray
) -> np.ndarray:
    """Plain-numpy factorized bin probabilities for a (N, C) array."""
    tape = Tape()
    get = lambda name: tape.param(name, params[name])
    z = tape.constant(np.asarray(values, dtype=np.float64))
    return likelihood_factorized(tape, get, prefix, z).value
