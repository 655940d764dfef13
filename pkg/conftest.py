import numpy as np
import pytest

from simulators.channel import ChannelRealization, propagate
from simulators.signal_model import (
    SlotConfig,
    build_transfer_blocks,
    generate_codes,
    generate_midamble,
    random_frame,
    spread_and_assemble,
)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    """sf=4, three codes, twelve symbols per field, six-chip channel (L = 2)."""
    return SlotConfig(sf=4, k=3, n_s=12, w=6, midamble_len=16, guard_len=8)


@pytest.fixture
def burst_factory(rng):
    """Builds (codes, midamble, realization, frame, reception) for a config at one SNR."""

    def make(config, snr_db=10.0, noise_seed=7):
        codes = generate_codes(config.sf, config.k)
        midamble = generate_midamble(config.midamble_len, 99)
        frame = random_frame(config, rng)
        h = crandn(rng, config.n_over, config.w) / np.sqrt(config.w)
        realization = ChannelRealization(h=h, gains=h[0].copy(), seed=0, burst_index=0)
        reception = propagate(spread_and_assemble(frame, codes, midamble, config), realization, config,
                              snr_db, noise_seed)
        return codes, midamble, realization, frame, reception

    return make


@pytest.fixture
def small_blocks(small_config, rng):
    h = crandn(rng, 1, small_config.w) / np.sqrt(small_config.w)
    return build_transfer_blocks(h, generate_codes(small_config.sf, small_config.k), small_config)
