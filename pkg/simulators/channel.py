"""
Multipath fading channels for the burst simulator.

Profiles follow the WG4 TDD cases used in the link-level comparisons: Case 2 and
its modified variant are exact (equal-power taps at chip delays 1, 5, 47 or
1, 5, 9); Case 1 and Case 3 are stand-ins with the short delay spread those
cases are known for. Gains are block fading: constant within a burst and
Doppler-correlated from burst to burst through a sum of Gaussian-weighted
Doppler oscillators, which keeps every marginal exactly complex Gaussian.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.special
from pydantic import BaseModel, ConfigDict, Field, model_validator

from detectors.errors import InvalidConfigError, InvalidInputError

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0
ROLL_OFF = 0.22
N_OSCILLATORS = 16


class ChannelProfile(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    delays: tuple[int, ...]
    powers: tuple[float, ...]
    doppler_speed: float = Field(3.0, ge=0.0, description="Mobile speed in km/h")
    stand_in: bool = Field(False, description="True when the tap table is not the published one")

    @model_validator(mode="after")
    def _check_taps(self):
        if not self.delays or len(self.delays) != len(self.powers):
            raise ValueError("delays and powers must be nonempty and of equal length")
        if any(d < 0 for d in self.delays):
            raise ValueError("tap delays must be non-negative")
        if any(b <= a for a, b in zip(self.delays, self.delays[1:])):
            raise ValueError(f"tap delays {self.delays} must be strictly increasing")
        if any(p < 0 for p in self.powers):
            raise ValueError("tap powers must be non-negative")
        if abs(sum(self.powers) - 1.0) > 1e-12:
            raise ValueError(f"tap powers sum to {sum(self.powers)!r}, expected 1")
        return self

    @property
    def max_delay(self):
        return self.delays[-1]


@dataclass(frozen=True)
class ChannelRealization:
    """Per-phase complex tap vectors h of shape (n_over, w) plus the gains and seed they came from."""

    h: np.ndarray
    gains: np.ndarray
    seed: int
    burst_index: int

    @property
    def n_over(self):
        return self.h.shape[0]

    def scaled(self, alpha):
        return ChannelRealization(h=alpha * self.h, gains=alpha * self.gains, seed=self.seed,
                                  burst_index=self.burst_index)


@dataclass(frozen=True)
class Reception:
    """Received samples r_1..r_N (shape (n_over, n_samples)) and the noise variance used."""

    r: np.ndarray
    sigma2: float


def _equal(delays, speed, name, stand_in=False):
    n = len(delays)
    # Exact thirds etc. so the powers sum to one within rounding.
    powers = tuple([1.0 / n] * (n - 1) + [1.0 - (n - 1) * (1.0 / n)])
    return ChannelProfile(name=name, delays=tuple(delays), powers=powers,
                          doppler_speed=speed, stand_in=stand_in)


PROFILE_NAMES = ("case1", "case2", "case2mod", "case3", "custom")


def make_profile(case_name, delays=None, powers=None, speed_kmh=3.0):
    """Returns the named multipath profile; `custom` takes explicit delays/powers."""
    name = case_name.lower()
    if name == "case1":
        return ChannelProfile(name="case1", delays=(0, 4), powers=(0.5, 0.5),
                              doppler_speed=3.0, stand_in=True)
    if name == "case2":
        return _equal((1, 5, 47), 3.0, "case2")
    if name == "case2mod":
        return _equal((1, 5, 9), 3.0, "case2mod")
    if name == "case3":
        return _equal((0, 2, 4, 6), 120.0, "case3", stand_in=True)
    if name == "custom":
        if delays is None or powers is None:
            raise InvalidConfigError("custom profile needs both delays and powers")
        try:
            return ChannelProfile(name="custom", delays=tuple(int(d) for d in delays),
                                  powers=tuple(float(p) for p in powers),
                                  doppler_speed=float(speed_kmh))
        except ValueError as e:
            raise InvalidConfigError(f"Invalid custom profile: {e}") from e
    raise InvalidConfigError(f"Unknown channel profile '{case_name}'. Valid names are: {list(PROFILE_NAMES)}")


def doppler_hz(speed_kmh, carrier_hz):
    return speed_kmh / 3.6 * carrier_hz / SPEED_OF_LIGHT


def expected_correlation(profile, carrier_hz, lag_s):
    """Clarke/Jakes autocorrelation J0(2 pi f_d tau) the burst-to-burst gains approximate."""
    return scipy.special.j0(2.0 * np.pi * doppler_hz(profile.doppler_speed, carrier_hz) * np.asarray(lag_s))


def raised_cosine(t, beta=ROLL_OFF):
    """End-to-end response of matched root-raised-cosine filters, unit value at t=0, zero at nonzero integers."""
    t = np.asarray(t, dtype=float)
    denom = 1.0 - (2.0 * beta * t) ** 2
    singular = np.isclose(denom, 0.0)
    safe = np.where(singular, 1.0, denom)
    out = np.sinc(t) * np.cos(np.pi * beta * t) / safe
    if beta > 0:
        out = np.where(singular, (np.pi / 4.0) * np.sinc(1.0 / (2.0 * beta)), out)
    return out


def _tap_gains(profile, carrier_hz, burst_index, seed, burst_period_s):
    rng = np.random.default_rng([seed, 0x4A414B])
    n_taps = len(profile.delays)
    powers = np.asarray(profile.powers)[:, None]
    amps = (rng.standard_normal((n_taps, N_OSCILLATORS))
            + 1j * rng.standard_normal((n_taps, N_OSCILLATORS))) * np.sqrt(powers / (2 * N_OSCILLATORS))
    offsets = rng.uniform(0.0, 2.0 * np.pi, size=(n_taps, 1))
    angles = 2.0 * np.pi * (np.arange(N_OSCILLATORS) + 0.5) / N_OSCILLATORS + offsets
    fd = doppler_hz(profile.doppler_speed, carrier_hz)
    t = burst_index * burst_period_s
    return (amps * np.exp(2j * np.pi * fd * np.cos(angles) * t)).sum(axis=1)


def realize(profile, carrier_hz, burst_index, seed, config, burst_period_s=0.01):
    """
    Draws the channel of one burst.

    Every tap gain is complex Gaussian with variance equal to its average power, constant within
    the burst. Bursts sharing a seed follow a Jakes-like Doppler process at the profile speed;
    phase n of an oversampled receiver samples the same channel (n/N) chip later.
    """
    if profile.max_delay + 1 > config.w:
        raise InvalidConfigError(
            f"Profile '{profile.name}' has a tap at delay {profile.max_delay} but w={config.w}"
        )
    gains = _tap_gains(profile, carrier_hz, burst_index, seed, burst_period_s)
    delays = np.asarray(profile.delays)
    lags = np.arange(config.w)
    h = np.zeros((config.n_over, config.w), dtype=complex)
    h[0, delays] = gains
    for n in range(1, config.n_over):
        offset = n / config.n_over
        kernel = raised_cosine(lags[:, None] + offset - delays[None, :])
        h[n] = kernel @ gains
    return ChannelRealization(h=h, gains=gains, seed=seed, burst_index=burst_index)


def noise_variance(snr_db, sf):
    """
    Complex noise variance per sample for a given Eb/N0 in dB.

    Eb/N0 is measured per user after despreading: a unit-energy QPSK symbol spread over sf
    unit-modulus chips carries sf/2 chip energy per bit.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return sf / (2.0 * 10.0 ** (snr_db / 10.0))


def propagate(chips, realization, config, snr_db, noise_seed):
    """
    Convolves the burst with each phase's channel (full length, len(chips)+w-1) and adds
    circular-symmetric white Gaussian noise.
    """
    chips = np.asarray(chips, dtype=complex)
    if chips.size < config.n_c:
        raise InvalidInputError(f"Burst of {chips.size} chips is shorter than one field window ({config.n_c})")
    sigma2 = noise_variance(snr_db, config.sf)
    r = np.stack([np.convolve(chips, taps) for taps in realization.h])
    if sigma2 > 0:
        rng = np.random.default_rng([noise_seed, 0x4E4F495345])
        r = r + np.sqrt(sigma2 / 2.0) * (rng.standard_normal(r.shape) + 1j * rng.standard_normal(r.shape))
    return Reception(r=r, sigma2=sigma2)
