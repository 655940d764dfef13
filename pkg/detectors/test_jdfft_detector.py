import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from conftest import crandn
from detectors.baseline_detectors import dense_mmse_oracle
from detectors.counters import BIN_APPLY, BIN_INVERSE, BIN_LU, MF_DIRECT, OpCounter
from detectors.errors import InvalidConfigError, InvalidInputError, SingularBinError
from detectors.jdfft_detector import (
    JdfftOptions,
    detect,
    edge_discrepancy,
    extend_window,
    factor_bin,
    field_windows,
    fold_window,
    group_multicode,
    matched_filter_direct,
    matched_filter_fft,
    per_bin_solve,
    prepare_burst,
    solve_circulant,
    window_length,
)
from detectors.structured_matrices import block_dft, dense_circulant_extension, transfer_spectrum
from simulators.channel import make_profile, propagate, realize
from simulators.signal_model import (
    SlotConfig,
    SymbolFrame,
    build_system_matrix,
    build_transfer_blocks,
    generate_codes,
    generate_midamble,
    random_frame,
    spread_and_assemble,
)


def circulant_problem(config, rng, sigma2=0.05):
    codes = generate_codes(config.sf, config.k)
    tb = build_transfer_blocks(crandn(rng, config.n_over, config.w) / np.sqrt(config.w), codes, config)
    p = config.n_s
    a_c = dense_circulant_extension(tb, p)
    d = crandn(rng, config.k * p)
    r_c = np.einsum("nij,j->ni", a_c, d) + np.sqrt(sigma2) * crandn(rng, config.n_over, p * config.sf)
    return tb, a_c, r_c


def case1_burst(config, seed=3, snr_db=10.0):
    codes = generate_codes(config.sf, config.k, scramble_seed=1)
    midamble = generate_midamble(config.midamble_len, 5)
    frame = random_frame(config, np.random.default_rng(seed))
    realization = realize(make_profile("case1"), 2.0e9, 0, seed, config)
    reception = propagate(spread_and_assemble(frame, codes, midamble, config), realization, config, snr_db, seed)
    return codes, midamble, realization, frame, reception


# --- Options ---

def test_processing_length_choices():
    config = SlotConfig()
    assert JdfftOptions().resolve_p(config) == 61
    assert JdfftOptions(p=64).resolve_p(config) == 64
    with pytest.raises(InvalidConfigError):
        JdfftOptions(p=62).resolve_p(config)
    with pytest.raises(ValidationError):
        JdfftOptions(matched_filter="wavelet")


# --- Exactness on circulant-consistent observations ---

@pytest.mark.parametrize("n_over", [1, 2])
@pytest.mark.parametrize("bin_solve", ["lu", "explicit_inverse"])
def test_circulant_observation_matches_dense_mmse(small_config, rng, n_over, bin_solve):
    config = small_config.with_updates(n_over=n_over)
    sigma2 = 0.05
    tb, a_c, r_c = circulant_problem(config, rng, sigma2)
    gram = np.einsum("nij,nik->jk", a_c.conj(), a_c) + sigma2 * np.eye(a_c.shape[2])
    reference = np.linalg.solve(gram, np.einsum("nij,ni->j", a_c.conj(), r_c))
    fast = solve_circulant(r_c, tb, sigma2, config.n_s, JdfftOptions(bin_solve=bin_solve))
    assert np.linalg.norm(fast - reference) / np.linalg.norm(reference) < 1e-9


def test_fft_matched_filter_equals_block_dft_of_dense_product(small_config, rng):
    config = small_config.with_updates(n_over=2)
    tb, a_c, r_c = circulant_problem(config, rng)
    dense = np.einsum("nij,ni->j", a_c.conj(), r_c)
    mf = matched_filter_fft(transfer_spectrum(tb, config.n_s), r_c, config.n_s)
    assert_allclose(mf, block_dft(dense, config.n_s), atol=1e-9 * np.linalg.norm(dense))


def test_fold_window_wraps_tail():
    window = np.arange(11, dtype=complex)[None, :]
    folded = fold_window(window, 2, 4)
    assert_allclose(folded[0], [0 + 8, 1 + 9, 2 + 10, 3, 4, 5, 6, 7])


# --- Matched filters ---

def test_direct_matched_filter_equals_dense_product(small_config, small_blocks, rng):
    a = build_system_matrix(small_blocks, small_config)[0]
    r = crandn(rng, 1, a.shape[0])
    assert_allclose(matched_filter_direct(small_blocks, r, small_config.n_s), a.conj().T @ r[0], atol=1e-12)


def test_matched_filters_agree_away_from_edges(small_config, small_blocks, rng):
    options = JdfftOptions()
    ops = prepare_burst(small_blocks, 0.1, small_config.n_s, options)
    window = crandn(rng, 1, window_length(small_config, small_config.n_s))
    gap = edge_discrepancy(ops, window)
    assert gap.shape == (small_config.n_s,)
    assert np.max(gap[3:9]) < 1e-12
    assert gap[0] > 1e-6


# --- Per-bin solves ---

def test_lu_and_inverse_bin_solves_agree(rng):
    m = crandn(rng, 4, 4)
    lam = m @ m.conj().T + np.eye(4)
    rhs = crandn(rng, 4)
    lu = per_bin_solve(lam, rhs, "lu")
    inv = per_bin_solve(lam, rhs, "explicit_inverse")
    assert_allclose(lu, inv, rtol=1e-10)
    assert_allclose(lam @ lu, rhs, atol=1e-12)


def test_singular_bin_is_reported():
    with pytest.raises(SingularBinError) as info:
        factor_bin(np.ones((3, 3), dtype=complex), "lu", bin_index=7)
    assert info.value.bin_index == 7


def test_unknown_bin_mode(rng):
    with pytest.raises(InvalidConfigError):
        factor_bin(np.eye(2, dtype=complex), "qr")


# --- Window handling ---

def test_midamble_cancellation_leaves_only_data(small_config, rng):
    codes = generate_codes(small_config.sf, small_config.k)
    midamble = generate_midamble(small_config.midamble_len, 1)
    frame = random_frame(small_config, rng)
    silent = SymbolFrame(d=np.zeros_like(frame.d), bits=frame.bits)
    realization = realize(make_profile("custom", [0, 3], [0.5, 0.5]), 2.0e9, 0, 4, small_config)
    r = propagate(spread_and_assemble(silent, codes, midamble, small_config), realization, small_config,
                  float("inf"), 0).r
    assert np.max(np.abs(extend_window(r, midamble, realization, small_config))) < 1e-12
    plain = field_windows(extend_window(r, midamble, realization, small_config), small_config,
                          small_config.n_s, window_extension=False)
    # The midamble tail reaches into the head of field 2 even without extension.
    assert np.max(np.abs(r[:, small_config.field_start(1):small_config.field_start(1) + 2])) > 1e-3
    assert np.max(np.abs(plain[1, :, :small_config.w - 1])) < 1e-12


def test_extension_errors(small_config):
    realization = realize(make_profile("case1"), 2.0e9, 0, 4, small_config)
    with pytest.raises(InvalidInputError):
        extend_window(np.zeros((1, 10)), np.zeros(small_config.midamble_len), realization, small_config)
    with pytest.raises(InvalidInputError):
        extend_window(np.zeros((1, 200)), np.zeros(3), realization, small_config)


def test_field_windows_with_and_without_extension(small_config, rng):
    r = crandn(rng, 1, small_config.burst_chips + small_config.w - 1)
    extended = field_windows(r, small_config, small_config.n_s, True)
    plain = field_windows(r, small_config, small_config.n_s, False)
    length = window_length(small_config, small_config.n_s)
    assert extended.shape == plain.shape == (2, 1, length)
    start = small_config.field_start(1)
    assert_allclose(extended[1, 0], r[0, start:start + length])
    assert_allclose(plain[1, 0, :small_config.field_chips], r[0, start:start + small_config.field_chips])
    assert np.all(plain[:, :, small_config.field_chips:] == 0)


# --- Full detector ---

def test_interior_symbols_track_dense_oracle():
    config = SlotConfig()
    codes, midamble, realization, _, reception = case1_burst(config)
    result = detect(reception.r, realization, codes, reception.sigma2, config, JdfftOptions(), midamble)
    tb = build_transfer_blocks(realization.h, codes, config)
    a = build_system_matrix(tb, config)
    window = field_windows(extend_window(reception.r, midamble, realization, config), config, config.n_s)[0]
    oracle = dense_mmse_oracle(a, window[:, :config.n_c], reception.sigma2).reshape(config.n_s, config.k)
    fast = result.soft[0].reshape(config.n_s, config.k)
    interior = slice(8, config.n_s - 8)
    assert np.linalg.norm(fast[interior] - oracle[interior]) / np.linalg.norm(oracle[interior]) < 1e-2


def test_oversampled_interior_symbols_track_dense_oracle():
    config = SlotConfig(w=16, n_over=2)
    codes, midamble, realization, _, reception = case1_burst(config, seed=8)
    result = detect(reception.r, realization, codes, reception.sigma2, config,
                    JdfftOptions(matched_filter="fft"), midamble)
    a = build_system_matrix(build_transfer_blocks(realization.h, codes, config), config)
    window = field_windows(extend_window(reception.r, midamble, realization, config), config, config.n_s)[1]
    oracle = dense_mmse_oracle(a, window[:, :config.n_c], reception.sigma2).reshape(config.n_s, config.k)
    fast = result.soft[1].reshape(config.n_s, config.k)
    interior = slice(8, config.n_s - 8)
    assert np.linalg.norm(fast[interior] - oracle[interior]) / np.linalg.norm(oracle[interior]) < 1e-2


def test_detect_output_shapes_and_counts():
    config = SlotConfig()
    codes, midamble, realization, _, reception = case1_burst(config)
    counter = OpCounter()
    options = JdfftOptions(bin_solve="explicit_inverse")
    result = detect(reception.r, realization, codes, reception.sigma2, config, options, midamble, counter)
    assert result.soft.shape == (2, config.k * config.n_s)
    assert set(result.hard_bits) == set(range(1, 9))
    assert all(bits.size == 2 * 2 * config.n_s for bits in result.hard_bits.values())
    assert counter[BIN_INVERSE] == config.n_s * config.k ** 3 == 31232
    assert counter[MF_DIRECT] == 2 * 35136
    assert counter[BIN_APPLY] == 2 * 3904
    assert result.diagnostics["p"] == 61


def test_lu_counts_and_agreement():
    config = SlotConfig()
    codes, midamble, realization, _, reception = case1_burst(config)
    counter = OpCounter()
    lu = detect(reception.r, realization, codes, reception.sigma2, config, JdfftOptions(), midamble, counter)
    inv = detect(reception.r, realization, codes, reception.sigma2, config,
                 JdfftOptions(bin_solve="explicit_inverse"), midamble)
    assert counter[BIN_LU] == 5856
    assert_allclose(lu.soft, inv.soft, atol=1e-9)


def test_radix2_processing_length_runs():
    config = SlotConfig()
    codes, midamble, realization, _, reception = case1_burst(config)
    result = detect(reception.r, realization, codes, reception.sigma2, config,
                    JdfftOptions(p=64, matched_filter="fft"), midamble)
    assert result.soft.shape == (2, config.k * config.n_s)
    assert result.diagnostics["p"] == 64


def test_detect_is_deterministic(small_config, burst_factory):
    codes, midamble, realization, _, reception = burst_factory(small_config)
    runs = [detect(reception.r, realization, codes, reception.sigma2, small_config, JdfftOptions(), midamble)
            for _ in range(2)]
    assert np.array_equal(runs[0].soft, runs[1].soft)


def test_scaled_problem_gives_same_estimates(small_config, burst_factory):
    codes, midamble, realization, _, reception = burst_factory(small_config)
    alpha = 0.4 - 1.1j
    base = detect(reception.r, realization, codes, reception.sigma2, small_config, JdfftOptions(), midamble)
    scaled = detect(alpha * reception.r, realization.scaled(alpha), codes, abs(alpha) ** 2 * reception.sigma2,
                    small_config, JdfftOptions(), midamble)
    assert_allclose(scaled.soft, base.soft, atol=1e-9)


def test_noise_variance_must_be_positive(small_config, burst_factory):
    codes, midamble, realization, _, reception = burst_factory(small_config)
    with pytest.raises(InvalidInputError):
        detect(reception.r, realization, codes, 0.0, small_config, JdfftOptions(), midamble)


# --- Multicode grouping ---

def test_group_multicode_orders_codes_per_user():
    config = SlotConfig(sf=4, k=3, n_s=2, w=2, code_allocation=(1, 2, 1))
    soft = np.arange(12).reshape(2, 6)
    streams = group_multicode(soft, config)
    # field 0 holds symbols [s0c0 s0c1 s0c2 s1c0 s1c1 s1c2] = 0..5
    assert list(streams[1]) == [0, 3, 2, 5, 6, 9, 8, 11]
    assert list(streams[2]) == [1, 4, 7, 10]
