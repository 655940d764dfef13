"""
Invariant suite run by `main.py selftest`: structural identities of the block DFT,
the circulant extension and the detector, each checked on small seeded instances.
"""

import logging
from dataclasses import dataclass

import numpy as np

from detectors.jdfft_detector import (
    JdfftOptions,
    detect,
    detect_field,
    extend_window,
    field_windows,
    matched_filter_fft,
    per_bin_solve,
    prepare_burst,
    solve_circulant,
)
from detectors.structured_matrices import (
    BlockBandSet,
    block_dft,
    correlation_bands,
    correlation_spectrum,
    dense_block_dft_matrix,
    dense_circulant_extension,
    transfer_spectrum,
)
from simulators.channel import ChannelRealization, propagate
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

logger = logging.getLogger(__name__)

SEED = 20240601
SMALL = SlotConfig(sf=4, k=3, n_s=12, w=6, midamble_len=16, guard_len=8)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    metric: float
    tolerance: float


def _result(name, metric, tolerance):
    return CheckResult(name=name, passed=bool(metric <= tolerance), metric=float(metric), tolerance=tolerance)


def _crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_realization(config, rng):
    h = _crandn(rng, config.n_over, config.w) / np.sqrt(config.w)
    return ChannelRealization(h=h, gains=h[0].copy(), seed=0, burst_index=0)


def random_bands(rng, k, l, sigma2=1.0):
    r0 = _crandn(rng, k, k)
    r0 = r0 @ r0.conj().T + sigma2 * np.eye(k)
    return BlockBandSet(r0=r0, bands=_crandn(rng, l, k, k), sigma2=sigma2)


def _burst(config, rng, snr_db=10.0):
    codes = generate_codes(config.sf, config.k)
    midamble = generate_midamble(config.midamble_len, SEED)
    frame = random_frame(config, rng)
    realization = random_realization(config, rng)
    reception = propagate(spread_and_assemble(frame, codes, midamble, config), realization, config,
                          snr_db, SEED)
    return codes, midamble, realization, reception


def check_parseval():
    """||F x||^2 = P ||x||^2 for radix-2 and direct-DFT lengths."""
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for p in (61, 64):
        x = _crandn(rng, p, 4)
        y = block_dft(x, p)
        worst = max(worst, abs(np.vdot(y, y).real - p * np.vdot(x, x).real) / (p * np.vdot(x, x).real))
    return _result("parseval", worst, 1e-12)


def check_hermitian_bins():
    """Every Lambda^(k) of a physical channel is Hermitian."""
    rng = np.random.default_rng(SEED + 1)
    tb = build_transfer_blocks(random_realization(SMALL, rng).h, generate_codes(SMALL.sf, SMALL.k), SMALL)
    lam = correlation_spectrum(correlation_bands(tb, 0.1), SMALL.n_s).lam
    metric = np.max(np.linalg.norm(lam - lam.conj().transpose(0, 2, 1), axis=(1, 2))
                    / np.linalg.norm(lam, axis=(1, 2)))
    return _result("hermitian_bins", metric, 1e-12)


def check_diagonalization():
    """R_c = (1/P) D Lambda D^H and D^H D = P I for random band sets."""
    rng = np.random.default_rng(SEED + 2)
    worst = 0.0
    for k, l, p in ((1, 1, 5), (2, 3, 16), (4, 2, 32), (3, 3, 7)):
        bands = random_bands(rng, k, l)
        r_c = dense_circulant_extension(bands, p)
        d = dense_block_dft_matrix(p, k)
        lam = correlation_spectrum(bands, p).lam
        big = np.zeros((p * k, p * k), dtype=complex)
        for j in range(p):
            big[j * k:(j + 1) * k, j * k:(j + 1) * k] = lam[j]
        rebuilt = d @ big @ d.conj().T / p
        worst = max(worst, np.linalg.norm(r_c - rebuilt) / np.linalg.norm(r_c),
                    np.linalg.norm(d.conj().T @ d - p * np.eye(p * k)) / p)
    return _result("diagonalization", worst, 1e-9)


def check_lu_inverse_equivalence():
    """LU and explicit-inverse bin solves agree."""
    rng = np.random.default_rng(SEED + 3)
    bands = random_bands(rng, 4, 2)
    lam = correlation_spectrum(bands, 16).lam
    worst = 0.0
    for k in range(lam.shape[0]):
        rhs = _crandn(rng, 4)
        a = per_bin_solve(lam[k], rhs, "lu", k)
        b = per_bin_solve(lam[k], rhs, "explicit_inverse", k)
        worst = max(worst, np.linalg.norm(a - b) / np.linalg.norm(a))
    return _result("lu_inverse_equivalence", worst, 1e-10)


def check_scaling_equivariance():
    """
    Linear in the window at fixed operators, and invariant when r and h scale by alpha and
    sigma2 by |alpha|^2.
    """
    rng = np.random.default_rng(SEED + 4)
    config = SMALL
    options = JdfftOptions()
    codes, midamble, realization, reception = _burst(config, rng)
    alpha = 1.7 * np.exp(0.6j)

    tb = build_transfer_blocks(realization.h, codes, config)
    ops = prepare_burst(tb, reception.sigma2, config.n_s, options)
    window = field_windows(extend_window(reception.r, midamble, realization, config), config, config.n_s)[0]
    base = detect_field(window, ops, config.n_s, options)
    linear = np.linalg.norm(detect_field(alpha * window, ops, config.n_s, options) - alpha * base)

    first = detect(reception.r, realization, codes, reception.sigma2, config, options, midamble).soft
    second = detect(alpha * reception.r, realization.scaled(alpha), codes, abs(alpha) ** 2 * reception.sigma2,
                    config, options, midamble).soft
    invariant = np.linalg.norm(first - second)
    scale = np.linalg.norm(first)
    return _result("scaling_equivariance", max(linear / (abs(alpha) * scale), invariant / scale), 1e-9)


def check_window_extension_energy():
    """
    The last symbol's received energy lies fully inside the extended window; the
    un-extended window loses its multipath tail.
    """
    config = SMALL
    rng = np.random.default_rng(SEED + 5)
    codes = generate_codes(config.sf, config.k)
    realization = random_realization(config, rng)
    frame = random_frame(config, rng)
    d = np.zeros_like(frame.d)
    last = (config.n_s - 1) * config.k
    d[last:last + config.k] = frame.d[last:last + config.k]
    silent = np.zeros(config.midamble_len, dtype=complex)
    burst = spread_and_assemble(SymbolFrame(d=d, bits=frame.bits), codes, silent, config)
    r = propagate(burst, realization, config, float("inf"), SEED).r
    total = np.sum(np.abs(r) ** 2)
    cancelled = extend_window(r, silent, realization, config)
    extended = np.sum(np.abs(field_windows(cancelled, config, config.n_s, True)[0]) ** 2) / total
    truncated = np.sum(np.abs(field_windows(cancelled, config, config.n_s, False)[0]) ** 2) / total
    metric = abs(1.0 - extended)
    passed = metric <= 1e-12 and truncated < extended
    return CheckResult(name="window_extension_energy", passed=bool(passed), metric=float(metric), tolerance=1e-12)


def check_determinism():
    """Identical inputs give bit-identical soft outputs."""
    rng = np.random.default_rng(SEED + 6)
    codes, midamble, realization, reception = _burst(SMALL, rng)
    runs = [detect(reception.r, realization, codes, reception.sigma2, SMALL, JdfftOptions(), midamble).soft
            for _ in range(2)]
    metric = 0.0 if np.array_equal(runs[0], runs[1]) else float(np.max(np.abs(runs[0] - runs[1])))
    return _result("determinism", metric, 0.0)


def check_circulant_exactness():
    """
    On a wrapped (circulant-consistent) observation the detector equals the dense circulant
    MMSE solution, and the FFT matched filter equals the block DFT of A_c^H r.
    """
    rng = np.random.default_rng(SEED + 7)
    config = SMALL.with_updates(n_over=2)
    p = config.n_s
    codes = generate_codes(config.sf, config.k)
    tb = build_transfer_blocks(random_realization(config, rng).h, codes, config)
    a_c = dense_circulant_extension(tb, p)
    d = _crandn(rng, config.k * p)
    sigma2 = 0.05
    r_c = np.einsum("nij,j->ni", a_c, d) + np.sqrt(sigma2) * _crandn(rng, config.n_over, p * config.sf)

    gram = np.einsum("nij,nik->jk", a_c.conj(), a_c) + sigma2 * np.eye(config.k * p)
    rhs = np.einsum("nij,ni->j", a_c.conj(), r_c)
    reference = np.linalg.solve(gram, rhs)
    fast = solve_circulant(r_c, tb, sigma2, p, JdfftOptions())
    solve_gap = np.linalg.norm(fast - reference) / np.linalg.norm(reference)

    mf = matched_filter_fft(transfer_spectrum(tb, p), r_c, p)
    mf_gap = np.linalg.norm(mf - block_dft(rhs, p)) / np.linalg.norm(mf)
    return _result("circulant_exactness", max(solve_gap, mf_gap), 1e-9)


def check_oversampled_bands():
    """Bands summed over two phases rebuild sum_n A_n^H A_n + sigma2 I exactly."""
    rng = np.random.default_rng(SEED + 8)
    config = SMALL.with_updates(n_over=2)
    tb = build_transfer_blocks(random_realization(config, rng).h, generate_codes(config.sf, config.k), config)
    sigma2 = 0.3
    a = build_system_matrix(tb, config)
    dense = np.einsum("nij,nik->jk", a.conj(), a) + sigma2 * np.eye(config.k * config.n_s)
    banded = correlation_bands(tb, sigma2).to_dense(config.n_s)
    return _result("oversampled_bands", np.linalg.norm(banded - dense) / np.linalg.norm(dense), 1e-10)


CHECKS = (
    check_parseval,
    check_hermitian_bins,
    check_diagonalization,
    check_lu_inverse_equivalence,
    check_scaling_equivariance,
    check_window_extension_energy,
    check_determinism,
    check_circulant_exactness,
    check_oversampled_bands,
)


def run_selftest():
    results = []
    for check in CHECKS:
        result = check()
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, f"[selftest] {result.name:<26} {'PASS' if result.passed else 'FAIL'} "
                          f"metric {result.metric:.3e} (tolerance {result.tolerance:.0e})")
        results.append(result)
    failed = [r.name for r in results if not r.passed]
    logger.info(f"[selftest] {len(results) - len(failed)}/{len(results)} checks passed")
    return results
