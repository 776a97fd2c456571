"""Power-constrained complex AWGN channel.

Symbols are stored as interleaved real pairs (re0, im0, re1, im1, ...);
``k`` complex uses therefore occupy 2k reals. SNR is defined against unit
average complex-symbol power: noise variance sigma^2 = 10^(-snr_db / 10),
split evenly across the two real components.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ShapeMismatch


@dataclass(frozen=True)
class ChannelConfig:
    """AWGN setting; ``snr_db=None`` means the noiseless sentinel."""

    snr_db: Optional[float] = 10.0
    seed: int = 0

    @property
    def noiseless(self) -> bool:
        return self.snr_db is None

    def noise_variance(self) -> float:
        if self.noiseless:
            return 0.0
        return float(10.0 ** (-self.snr_db / 10.0))

    def rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.seed))


def symbol_power(symbols: np.ndarray) -> float:
    """Average power per complex symbol of an interleaved real vector."""
    s = np.asarray(symbols, dtype=np.float64)
    if s.size % 2:
        raise ShapeMismatch("interleaved symbol vector must have even length")
    if s.size == 0:
        return 0.0
    return float(2.0 * np.mean(s * s))


def power_normalize(symbols: np.ndarray) -> tuple[np.ndarray, float]:
    """Scale to unit average complex power; returns (scaled, scale factor).

    The scale is conveyed to the receiver as error-free side information.
    An all-zero input is returned unchanged with scale 1.
    """
    s = np.asarray(symbols, dtype=np.float64)
    power = symbol_power(s)
    if power == 0.0:
        return s.copy(), 1.0
    scale = float(np.sqrt(power))
    return s / scale, scale


def awgn(symbols: np.ndarray, cfg: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    """Add complex Gaussian noise of variance sigma^2 per complex use."""
    s = np.asarray(symbols, dtype=np.float64)
    if cfg.noiseless:
        return s.copy()
    sigma2 = cfg.noise_variance()
    noise = rng.normal(0.0, np.sqrt(sigma2 / 2.0), size=s.shape)
    return s + noise


def channel_roundtrip(
    symbols: np.ndarray, cfg: ChannelConfig, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """normalize -> AWGN -> undo the scale. Noiseless input passes through exactly."""
    s = np.asarray(symbols, dtype=np.float64)
    if cfg.noiseless:
        return s.copy()
    if rng is None:
        rng = cfg.rng()
    normalized, scale = power_normalize(s)
    return awgn(normalized, cfg, rng) * scale


def measure_snr_db(sent: np.ndarray, received: np.ndarray) -> float:
    """Empirical SNR of a received vector against what was sent."""
    sent = np.asarray(sent, dtype=np.float64)
    noise = np.asarray(received, dtype=np.float64) - sent
    p_sig = np.mean(sent * sent)
    p_noise = np.mean(noise * noise)
    if p_noise == 0:
        return float("inf")
    return float(10.0 * np.log10(p_sig / p_noise))
