import numpy as np
import pytest

from detectors.errors import InvalidConfigError
from detectors.jdfft_detector import JdfftOptions
from harness.scenario import ScenarioConfig, paired_comparison
from simulators.run_simulation import (
    CHANNEL_STREAM,
    NOISE_STREAM,
    derived_seed,
    resolve_detector,
    run_slots,
    simulate_slot,
)
from simulators.signal_model import SlotConfig

SMALL = SlotConfig(sf=4, k=3, n_s=12, w=6, midamble_len=16, guard_len=8)


def small_scenario(**changes):
    values = dict(
        name="unit",
        slot=SMALL,
        channel="custom",
        custom_delays=(0, 2),
        custom_powers=(0.5, 0.5),
        snr_grid=(0.0, 40.0),
        n_slots=3,
        detectors=("jdfft", "oracle", "mf"),
        master_seed=11,
    )
    values.update(changes)
    return ScenarioConfig(**values)


def echo(ctx):
    return ctx.transmitted


def one_flip(ctx):
    soft = ctx.transmitted.copy()
    soft[0, 0] = -np.conj(soft[0, 0])
    return soft


def test_derived_seeds_are_stable_and_distinct():
    assert derived_seed(1, 0, CHANNEL_STREAM) == derived_seed(1, 0, CHANNEL_STREAM)
    seeds = {derived_seed(1, s, stream) for s in range(5) for stream in (CHANNEL_STREAM, NOISE_STREAM)}
    assert len(seeds) == 10


def test_slot_outcome_counts_bits():
    outcome = simulate_slot(small_scenario(), 0)
    assert outcome.bits == 2 * 2 * SMALL.k * SMALL.n_s
    assert set(outcome.errors) == {(d, s) for d in ("jdfft", "oracle", "mf") for s in (0.0, 40.0)}


def test_simulation_is_reproducible():
    first = simulate_slot(small_scenario(), 2)
    second = simulate_slot(small_scenario(), 2)
    assert first.errors == second.errors


def test_slots_do_not_depend_on_run_order():
    scenario = small_scenario()
    together = run_slots(scenario)
    assert [o.slot for o in together] == [0, 1, 2]
    assert simulate_slot(scenario, 1).errors == together[1].errors


def test_error_counting_with_reference_detectors():
    outcome = simulate_slot(small_scenario(), 0, {"echo": echo, "flip": one_flip})
    for snr_db in (0.0, 40.0):
        assert outcome.errors[("echo", snr_db)] == 0
        assert outcome.errors[("flip", snr_db)] == 1


def test_detectors_share_received_samples():
    seen = []

    def spy(ctx):
        seen.append((ctx.sigma2, ctx.r.copy()))
        return ctx.transmitted

    simulate_slot(small_scenario(detectors=("mf",)), 0, {"spy_a": spy, "spy_b": spy})
    assert len(seen) == 4
    # Same SNR: identical samples; different SNR: same noise lineage, rescaled.
    assert np.array_equal(seen[0][1], seen[1][1])
    assert np.array_equal(seen[2][1], seen[3][1])
    assert seen[0][0] > seen[2][0]


def test_oracle_is_error_free_at_high_snr():
    outcomes = run_slots(small_scenario(n_slots=4))
    assert sum(o.errors[("oracle", 40.0)] for o in outcomes) == 0


def test_named_processing_lengths_and_unknown_detectors():
    assert callable(resolve_detector("jdfft_p64"))
    with pytest.raises(InvalidConfigError):
        resolve_detector("turbo")


def test_extra_detectors_need_a_single_process():
    with pytest.raises(InvalidConfigError):
        run_slots(small_scenario(), {"echo": echo}, workers=2)


@pytest.mark.slow
def test_errors_fall_with_snr_on_burst_type_one():
    scenario = ScenarioConfig(name="trend", channel="case1", snr_grid=(0.0, 14.0), n_slots=2,
                              detectors=("jdfft", "jdchol", "oracle"), master_seed=5)
    outcomes = run_slots(scenario)
    for name in ("jdfft", "jdchol", "oracle"):
        low = sum(o.errors[(name, 0.0)] for o in outcomes)
        high = sum(o.errors[(name, 14.0)] for o in outcomes)
        assert high <= low


def total_errors(outcomes, name, snr_db):
    return sum(o.errors[(name, snr_db)] for o in outcomes)


@pytest.mark.slow
def test_long_delay_channel_orders_detectors():
    scenario = ScenarioConfig(name="case2", channel="case2", snr_grid=(12.0,), n_slots=20,
                              detectors=("jdfft", "jdchol", "mf"), master_seed=21)
    outcomes = run_slots(scenario)
    assert total_errors(outcomes, "jdfft", 12.0) > total_errors(outcomes, "jdchol", 12.0)
    assert total_errors(outcomes, "mf", 12.0) > total_errors(outcomes, "jdchol", 12.0)


def ber(outcomes, name, snr_db):
    return total_errors(outcomes, name, snr_db) / sum(o.bits for o in outcomes)


@pytest.mark.slow
@pytest.mark.parametrize("channel", ["case1", "case3"])
def test_extended_fft_detector_tracks_cholesky_detector(channel):
    scenario = ScenarioConfig(name=channel, channel=channel, snr_grid=(6.0, 10.0), n_slots=20,
                              detectors=("jdfft", "jdchol"), jdfft=JdfftOptions(p=64), master_seed=31)
    outcomes = run_slots(scenario)
    for snr_db in scenario.snr_grid:
        comparison = paired_comparison(outcomes, "jdfft", "jdchol", snr_db)
        # Equal within the paired interval, or less than 5% relative BER apart.
        assert comparison.equivalent or comparison.mean_difference <= 0.05 * ber(outcomes, "jdchol", snr_db)


@pytest.mark.slow
def test_chip_equalizers_on_long_delay_channel():
    scenario = ScenarioConfig(name="case2", channel="case2", snr_grid=(10.0,), n_slots=20,
                              detectors=("jdchol", "sdchol", "sdfft"), master_seed=77)
    outcomes = run_slots(scenario)
    assert paired_comparison(outcomes, "sdchol", "jdchol", 10.0).first_significantly_worse
    assert not paired_comparison(outcomes, "sdchol", "sdfft", 10.0).first_significantly_worse


@pytest.mark.slow
@pytest.mark.parametrize("channel", ["case1", "case2", "case2mod", "case3"])
def test_matched_filter_is_worst(channel):
    scenario = ScenarioConfig(name=channel, channel=channel, snr_grid=(10.0,), n_slots=5,
                              detectors=("jdfft", "jdchol", "sdchol", "sdfft", "mf"), master_seed=13)
    outcomes = run_slots(scenario)
    mf = total_errors(outcomes, "mf", 10.0)
    for name in ("jdfft", "jdchol", "sdchol", "sdfft"):
        assert mf > total_errors(outcomes, name, 10.0)


def fft_gap(channel):
    scenario = ScenarioConfig(name=channel, channel=channel, snr_grid=(10.0,), n_slots=20,
                              detectors=("jdfft", "jdchol"), master_seed=41)
    return paired_comparison(run_slots(scenario), "jdfft", "jdchol", 10.0).mean_difference


@pytest.mark.slow
def test_shorter_delay_spread_narrows_fft_gap():
    assert fft_gap("case2mod") < fft_gap("case2")


@pytest.mark.slow
def test_radix2_processing_length_is_not_worse():
    scenario = ScenarioConfig(name="case2", channel="case2", snr_grid=(8.0, 12.0), n_slots=20,
                              detectors=("jdchol",), compare_p=True, master_seed=21)
    outcomes = run_slots(scenario)
    for snr_db in scenario.snr_grid:
        assert not paired_comparison(outcomes, "jdfft_p64", "jdfft_p61", snr_db).first_significantly_worse
    assert sum(total_errors(outcomes, "jdfft_p64", s) for s in scenario.snr_grid) <= \
        sum(total_errors(outcomes, "jdfft_p61", s) for s in scenario.snr_grid)
