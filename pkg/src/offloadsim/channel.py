"""PHY link model: TGax indoor path loss, Rayleigh power fading, Shannon rate.

All power arithmetic is done in milliwatts after converting from dBm.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateLinkError, DomainError


@dataclass(frozen=True)
class ChannelParams:
    bandwidth: float = 40e6  # Hz
    noise_density: float = -169.0  # dBm/Hz
    center_freq: float = 5.0  # GHz
    walls: int = 2
    breakpoint: float = 10.0  # m

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ConfigurationError("bandwidth must be > 0")
        if self.breakpoint <= 0:
            raise ConfigurationError("breakpoint must be > 0")
        if self.center_freq <= 0:
            raise ConfigurationError("center_freq must be > 0")
        if self.walls < 0:
            raise ConfigurationError("walls must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelParams":
        return cls(**d)


@dataclass(frozen=True)
class FadingSample:
    """Small-scale power gain multiplying the received SNR."""

    xi: float = 1.0

    def __post_init__(self):
        if not self.xi >= 0:
            raise DomainError(f"fading gain must be >= 0, got {self.xi}")


NO_FADING = FadingSample(1.0)


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def path_loss_db(d: float, cp: ChannelParams) -> float:
    """TGax indoor path loss in dB at distance ``d`` metres.

    Below the breakpoint the loss follows free-space slope (20 dB/decade);
    beyond it an extra 35 dB/decade term is added. Each wall costs 7 dB.
    """
    if not d > 0:
        raise DomainError(f"distance must be > 0, got {d}")
    near = 20.0 * math.log10(min(d, cp.breakpoint) * cp.center_freq / 2.4)
    far = 35.0 * math.log10(d / cp.breakpoint) if d > cp.breakpoint else 0.0
    return 40.05 + near + far + 7.0 * cp.walls


def path_gain(d: float, cp: ChannelParams) -> float:
    return 10.0 ** (-path_loss_db(d, cp) / 10.0)


def snr(d: float, tx_power: float, xi: FadingSample, cp: ChannelParams) -> float:
    """Linear SNR of a link with transmit power ``tx_power`` in dBm."""
    noise_mw = dbm_to_mw(cp.noise_density) * cp.bandwidth
    return xi.xi * dbm_to_mw(tx_power) * path_gain(d, cp) / noise_mw


def rate_bps(d: float, tx_power: float, xi: FadingSample, cp: ChannelParams) -> float:
    return cp.bandwidth * math.log1p(snr(d, tx_power, xi, cp)) / math.log(2.0)


def tx_delay(
    bits: float, d: float, tx_power: float, xi: FadingSample, cp: ChannelParams
) -> float:
    """Seconds needed to push ``bits`` over the link at its Shannon rate."""
    if bits < 0:
        raise DomainError(f"bits must be >= 0, got {bits}")
    rate = rate_bps(d, tx_power, xi, cp)
    if rate <= 0:
        raise DegenerateLinkError(f"zero-rate link (xi={xi.xi}, d={d})")
    if bits == 0:
        return 0.0
    return bits / rate


def sample_fading(rng: np.random.Generator) -> FadingSample:
    """Draw an independent Rayleigh power gain (exponential, mean 1)."""
    return FadingSample(float(rng.standard_exponential()))
