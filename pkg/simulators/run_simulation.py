"""
Timeslot simulation: one fading realization and one random frame per slot, received at
every SNR point with the same noise lineage, then run through every selected detector.

All detectors of one slot and SNR see identical received samples (paired comparison).
Per-slot generators are derived from (master_seed, slot, stream), so any subset of
slots can run in any order or process and still reproduce the same tallies.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from detectors.baseline_detectors import (
    build_chip_model,
    dense_mmse_oracle,
    jd_chol,
    matched_filter_detector,
    sd_chol,
    sd_fft,
)
from detectors.errors import InvalidConfigError
from detectors.jdfft_detector import (
    detect,
    extend_window,
    field_windows,
    hard_decisions,
    matched_filter_direct,
)
from detectors.structured_matrices import correlation_bands
from simulators.channel import make_profile, propagate, realize
from simulators.signal_model import (
    N_FIELDS,
    build_system_matrix,
    build_transfer_blocks,
    generate_codes,
    generate_midamble,
    random_frame,
    spread_and_assemble,
)

logger = logging.getLogger(__name__)

CHANNEL_STREAM = 0
DATA_STREAM = 1
NOISE_STREAM = 2


def derived_seed(master_seed, slot, stream):
    """Deterministic 32-bit seed for one (slot, stream) pair."""
    return int(np.random.SeedSequence([master_seed, slot, stream]).generate_state(1)[0])


class SlotContext:
    """Everything a detector may look at for one slot at one SNR point."""

    def __init__(self, scenario, codes, midamble, realization, frame, reception):
        self.scenario = scenario
        self.config = scenario.slot
        self.codes = codes
        self.midamble = midamble
        self.realization = realization
        self.frame = frame
        self.r = reception.r
        self.sigma2 = reception.sigma2

    @cached_property
    def tb(self):
        return build_transfer_blocks(self.realization.h, self.codes, self.config)

    @cached_property
    def windows(self):
        """Per-field windows of N_s*sf + w - 1 samples after midamble cancellation."""
        cancelled = extend_window(self.r, self.midamble, self.realization, self.config)
        return field_windows(cancelled, self.config, self.config.n_s, self.scenario.jdfft.window_extension)

    @cached_property
    def chip_model(self):
        return build_chip_model(self.realization.h, self.codes, self.config)

    @property
    def transmitted(self):
        """Transmitted symbols per field, (N_FIELDS, K*n_s)."""
        return self.frame.d.reshape(N_FIELDS, -1)


def _per_field(ctx, fn):
    return np.stack([fn(ctx.windows[f]) for f in range(N_FIELDS)])


def run_jdfft(ctx, p=None):
    options = ctx.scenario.jdfft if p is None else ctx.scenario.jdfft.model_copy(update={"p": p})
    result = detect(ctx.r, ctx.realization, ctx.codes, ctx.sigma2, ctx.config, options, ctx.midamble)
    return result.soft


def run_jdchol(ctx):
    bands = correlation_bands(ctx.tb, ctx.sigma2)
    depth = ctx.scenario.cholesky_depth
    return _per_field(ctx, lambda w: jd_chol(bands, matched_filter_direct(ctx.tb, w, ctx.config.n_s), depth))


def run_sdchol(ctx):
    depth = ctx.scenario.cholesky_depth
    return _per_field(ctx, lambda w: sd_chol(ctx.chip_model, w, ctx.sigma2, depth))


def run_sdfft(ctx):
    return _per_field(ctx, lambda w: sd_fft(ctx.chip_model, w, ctx.sigma2))


def run_mf(ctx):
    return _per_field(ctx, lambda w: matched_filter_detector(ctx.tb, w, ctx.config.n_s))


def run_oracle(ctx):
    a = build_system_matrix(ctx.tb, ctx.config)
    return _per_field(ctx, lambda w: dense_mmse_oracle(a, w[:, :a.shape[1]], ctx.sigma2))


DETECTORS = {
    "jdfft": run_jdfft,
    "jdchol": run_jdchol,
    "sdchol": run_sdchol,
    "sdfft": run_sdfft,
    "mf": run_mf,
    "oracle": run_oracle,
}


def resolve_detector(name, extra=None):
    """Looks a detector up by name; `jdfft_p<N>` runs the block-FFT detector at processing length N."""
    if extra and name in extra:
        return extra[name]
    if name in DETECTORS:
        return DETECTORS[name]
    if name.startswith("jdfft_p") and name[len("jdfft_p"):].isdigit():
        p = int(name[len("jdfft_p"):])
        return lambda ctx: run_jdfft(ctx, p)
    raise InvalidConfigError(f"Unknown detector '{name}'. Valid detectors are: {list(DETECTORS)}")


@dataclass
class SlotOutcome:
    slot: int
    bits: int
    errors: dict = field(default_factory=dict)


def count_errors(soft, ctx):
    """Bit errors of one detector output over both fields and every user."""
    sent = hard_decisions(ctx.transmitted, ctx.config)
    received = hard_decisions(soft, ctx.config)
    return int(sum(np.count_nonzero(sent[u] != received[u]) for u in sent))


def simulate_slot(scenario, slot, extra_detectors=None):
    """Runs every detector on one slot at every SNR point; returns the error tallies."""
    config = scenario.slot
    codes = generate_codes(config.sf, config.k, scenario.scramble_seed)
    midamble = generate_midamble(config.midamble_len, scenario.master_seed)
    profile = make_profile(scenario.channel, scenario.custom_delays, scenario.custom_powers, scenario.speed_kmh)
    if scenario.correlated:
        # One Doppler process shared by all slots, sampled at successive bursts.
        realization = realize(profile, scenario.carrier_hz, slot, scenario.master_seed, config,
                              scenario.burst_period_s)
    else:
        realization = realize(profile, scenario.carrier_hz, 0, derived_seed(scenario.master_seed, slot, CHANNEL_STREAM),
                              config, scenario.burst_period_s)
    frame = random_frame(config, np.random.default_rng([scenario.master_seed, slot, DATA_STREAM]))
    burst = spread_and_assemble(frame, codes, midamble, config)
    noise_seed = derived_seed(scenario.master_seed, slot, NOISE_STREAM)

    names = list(scenario.detector_names())
    if extra_detectors:
        names.extend(n for n in extra_detectors if n not in names)
    runners = {name: resolve_detector(name, extra_detectors) for name in names}

    outcome = SlotOutcome(slot=slot, bits=2 * N_FIELDS * config.k * config.n_s)
    for snr_db in scenario.snr_grid:
        reception = propagate(burst, realization, config, snr_db, noise_seed)
        ctx = SlotContext(scenario, codes, midamble, realization, frame, reception)
        for name, runner in runners.items():
            outcome.errors[(name, snr_db)] = count_errors(runner(ctx), ctx)
    logger.debug(f"Slot {slot} done: {sum(outcome.errors.values())} errors over {len(outcome.errors)} runs")
    return outcome


def _simulate(args):
    scenario, slot = args
    return simulate_slot(scenario, slot)


def run_slots(scenario, extra_detectors=None, workers=1):
    """
    Simulates slots 0..n_slots-1, in worker processes when workers > 1. Outcomes come back
    sorted by slot index.
    """
    slots = range(scenario.n_slots)
    if workers > 1:
        if extra_detectors:
            raise InvalidConfigError("Extra detectors can only run in-process (workers=1)")
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_simulate, [(scenario, s) for s in slots]))
    else:
        outcomes = []
        for s in slots:
            outcomes.append(simulate_slot(scenario, s, extra_detectors))
            if (s + 1) % 10 == 0:
                logger.info(f"{s + 1}/{scenario.n_slots} slots simulated")
    return sorted(outcomes, key=lambda o: o.slot)
