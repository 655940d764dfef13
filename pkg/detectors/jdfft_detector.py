"""
Block-FFT joint detector.

Per burst the banded correlation R = sum_n A_n^H A_n + sigma^2 I is replaced by its
block-circulant extension, which the block DFT turns into P independent K x K
systems. Per data field:

    extend window (cancel the known midamble) -> matched filter (direct or FFT)
    -> block DFT -> per-bin solve -> inverse block DFT -> keep the first N_s symbols

The bands, spectra and per-bin factors are computed once per burst; the matched
filter and the per-bin solves run once per data field.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict

from detectors.counters import (
    BIN_APPLY,
    BIN_INVERSE,
    BIN_LU,
    MF_DIRECT,
    MF_FFT_PRODUCT,
    OpCounter,
    runtime_counters,
    tally,
)
from detectors.errors import InvalidConfigError, InvalidInputError, SingularBinError
from detectors.structured_matrices import (
    block_dft,
    correlation_bands,
    correlation_spectrum,
    dft,
    transfer_spectrum,
)
from simulators.signal_model import N_FIELDS, build_transfer_blocks, qpsk_demodulate

logger = logging.getLogger(__name__)

PIVOT_TOLERANCE = 1e-12
RCOND_WARNING = 1e-8
RADIX2_LENGTH = 64


class JdfftOptions(BaseModel):
    model_config = ConfigDict(frozen=True)

    p: int | None = None
    matched_filter: Literal["direct", "fft"] = "direct"
    bin_solve: Literal["lu", "explicit_inverse"] = "lu"
    window_extension: bool = True

    def resolve_p(self, config):
        """Processing length for this slot: n_s, or 64 when the field fits in it."""
        p = self.p if self.p is not None else config.processing_length
        if p not in (config.n_s, RADIX2_LENGTH):
            raise InvalidConfigError(f"Processing length p={p} must be n_s={config.n_s} or {RADIX2_LENGTH}")
        if p < config.n_s:
            raise InvalidConfigError(f"p={p} requires n_s <= {p}, got n_s={config.n_s}")
        return p


@dataclass
class DetectionResult:
    """Soft estimates (N_FIELDS, K*n_s), hard bits per user and per-run diagnostics."""

    soft: np.ndarray
    hard_bits: dict
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BurstOperators:
    """Everything computed once per burst and shared by both data fields."""

    tb: object
    spectrum: object
    transfer: object
    factors: list
    mode: str
    rcond: np.ndarray


def window_length(config, p):
    return p * config.sf + config.w - 1


def midamble_contribution(midamble, realization, config):
    """Received (noiseless) samples produced by the midamble alone, per phase."""
    chips = np.zeros(config.burst_chips, dtype=complex)
    start = config.field_chips
    chips[start:start + config.midamble_len] = midamble
    return np.stack([np.convolve(chips, taps) for taps in realization.h])


def extend_window(r, known_midamble, realization, config):
    """
    Cancels the known midamble from the received burst. The multipath tail of the midamble
    overlaps the first w - 1 chips of field 2, so the cancellation applies whether or not the
    windows are later extended past each field.
    """
    r = np.atleast_2d(r)
    needed = config.field_chips + config.w - 1
    if r.shape[1] < needed:
        raise InvalidInputError(
            f"Received burst has {r.shape[1]} samples; window extension needs at least {needed}"
        )
    if len(known_midamble) != config.midamble_len:
        raise InvalidInputError(
            f"Known midamble has {len(known_midamble)} chips, expected {config.midamble_len}"
        )
    contribution = midamble_contribution(known_midamble, realization, config)
    n = min(r.shape[1], contribution.shape[1])
    out = r.astype(complex, copy=True)
    out[:, :n] -= contribution[:, :n]
    return out


def field_windows(r, config, p, window_extension=True):
    """
    Cuts the detection window of each data field, shape (N_FIELDS, n_over, p*sf + w - 1).

    With extension the window covers the field, the extra p - n_s symbol periods and the w - 1
    chip multipath tail; without it only the field's own sf*n_s samples are kept.
    """
    r = np.atleast_2d(r)
    length = window_length(config, p)
    keep = length if window_extension else config.field_chips
    windows = np.zeros((N_FIELDS, r.shape[0], length), dtype=complex)
    for f in range(N_FIELDS):
        start = config.field_start(f)
        chunk = r[:, start:start + keep]
        windows[f, :, :chunk.shape[1]] = chunk
    return windows


def matched_filter_direct(tb, window, n_symbols, counter=None):
    """v = sum_n A_n^H r_n over the window, K*n_symbols long, symbol by symbol."""
    window = np.atleast_2d(window)
    sf, k = tb.sf, tb.k
    support = sf * (tb.l + 1)
    v = np.zeros((n_symbols, k), dtype=complex)
    for n in range(tb.n_over):
        stacked = tb.stacked(n)
        for i in range(n_symbols):
            segment = window[n, i * sf:i * sf + support]
            if segment.size == 0:
                break
            v[i] += stacked[:segment.size].conj().T @ segment
    _count_matched_filter(tb, window.shape[1], n_symbols, counter)
    return v.ravel()


def _count_matched_filter(tb, n_samples, n_symbols, counter):
    if counter is None:
        return
    # Structural support of conv(code, h): sf + w - 1 chips, clipped by the window.
    support = tb.support
    total = sum(max(0, min(support, n_samples - i * tb.sf)) for i in range(n_symbols))
    tally(counter, MF_DIRECT, tb.n_over * tb.k * total)


def fold_window(window, p, sf):
    """Wraps samples beyond p*sf back onto the start: exact for circulant-consistent inputs."""
    window = np.atleast_2d(window)
    period = p * sf
    n_periods = -(-window.shape[1] // period)
    padded = np.zeros((window.shape[0], n_periods * period), dtype=complex)
    padded[:, :window.shape[1]] = window
    return padded.reshape(window.shape[0], n_periods, period).sum(axis=1)


def matched_filter_fft(ts, window, p, counter=None):
    """
    Per-bin matched filter [F(A_c^H r)]_k = sum_n Lambda_1,n^(k)H [F(r_n)]_k, shape (p, K).

    F(r_n) is the block DFT over sf-chip blocks; no extra scale appears with the
    conventions of ``structured_matrices``.
    """
    folded = fold_window(window, p, ts.lam1.shape[2])
    sf = ts.lam1.shape[2]
    spectra = dft(folded.reshape(folded.shape[0], p, sf), axis=1, counter=counter)
    tally(counter, MF_FFT_PRODUCT, ts.lam1.shape[0] * p * sf * ts.lam1.shape[3])
    return np.einsum("nksj,nks->kj", ts.lam1.conj(), spectra)


def _check_pivots(lu, lam_k, bin_index):
    scale = np.linalg.norm(lam_k)
    pivot = np.min(np.abs(np.diag(lu)))
    if pivot < PIVOT_TOLERANCE * scale:
        raise SingularBinError(bin_index, pivot, scale)


def factor_bin(lam_k, mode, bin_index=0, counter=None):
    """Factors one bin once per burst: partial-pivoted LU or an explicit inverse."""
    k = lam_k.shape[0]
    lu, piv = scipy.linalg.lu_factor(lam_k, check_finite=False)
    _check_pivots(lu, lam_k, bin_index)
    if mode == "lu":
        tally(counter, BIN_LU, k * k * (k + 1) / 6)
        return ("lu", (lu, piv))
    if mode == "explicit_inverse":
        tally(counter, BIN_INVERSE, k ** 3)
        return ("explicit_inverse", scipy.linalg.inv(lam_k, check_finite=False))
    raise InvalidConfigError(f"Unknown bin solve mode '{mode}'")


def apply_bin(factor, rhs_k, counter=None):
    kind, payload = factor
    tally(counter, BIN_APPLY, rhs_k.size ** 2)
    if kind == "lu":
        # Forward then backward substitution.
        return scipy.linalg.lu_solve(payload, rhs_k, check_finite=False)
    return payload @ rhs_k


def per_bin_solve(lambda_k, rhs_k, mode="lu", bin_index=0, counter=None):
    """Solves Lambda^(k) x = rhs_k for one frequency bin."""
    return apply_bin(factor_bin(lambda_k, mode, bin_index, counter), rhs_k, counter)


def reciprocal_condition(spectrum):
    return 1.0 / np.linalg.cond(spectrum.lam)


def prepare_burst(tb, sigma2, p, options, counter=None):
    """Bands, spectra and per-bin factors: the once-per-burst part of the detector."""
    bands = correlation_bands(tb, sigma2)
    spectrum = correlation_spectrum(bands, p, counter=counter)
    transfer = transfer_spectrum(tb, p, counter=counter) if options.matched_filter == "fft" else None
    factors = [factor_bin(spectrum.lam[k], options.bin_solve, k, counter) for k in range(p)]
    rcond = reciprocal_condition(spectrum)
    worst = int(np.argmin(rcond))
    if rcond[worst] < RCOND_WARNING:
        logger.warning(f"Bin {worst} is ill-conditioned: reciprocal condition {rcond[worst]:.2e}")
    logger.debug(f"Per-bin reciprocal condition: min {rcond.min():.3e}, max {rcond.max():.3e}")
    return BurstOperators(tb=tb, spectrum=spectrum, transfer=transfer, factors=factors,
                          mode=options.bin_solve, rcond=rcond)


def detect_field(window, ops, n_s, options, counter=None):
    """Runs the per-field half of the detector on one extended window; returns K*n_s soft symbols."""
    p = ops.spectrum.p
    tb = ops.tb
    if options.matched_filter == "fft":
        rhs = matched_filter_fft(ops.transfer, window, p, counter=counter)
    else:
        v = matched_filter_direct(tb, window, p, counter=counter)
        rhs = block_dft(v, p, "forward", counter=counter)
    x = np.stack([apply_bin(ops.factors[k], rhs[k], counter) for k in range(p)])
    d = block_dft(x, p, "inverse", counter=counter)
    # Estimates for the zero-padded symbol slots beyond n_s are discarded.
    return d[:n_s].ravel()


def solve_circulant(r_c, tb, sigma2, p, options, counter=None):
    """
    Detector applied to a p*sf-sample observation through the FFT matched filter: equals
    R_c^{-1} A_c^H r exactly (the circulant MMSE solution). Returns all K*p estimates.
    """
    options = options.model_copy(update={"matched_filter": "fft"})
    ops = prepare_burst(tb, sigma2, p, options, counter)
    return detect_field(np.atleast_2d(r_c), ops, p, options, counter)


def edge_discrepancy(ops, window):
    """Largest difference between the FFT and direct matched filters, per symbol slot."""
    p = ops.spectrum.p
    transfer = ops.transfer if ops.transfer is not None else transfer_spectrum(ops.tb, p)
    via_fft = block_dft(matched_filter_fft(transfer, window, p), p, "inverse")
    direct = matched_filter_direct(ops.tb, window, p).reshape(p, -1)
    return np.max(np.abs(via_fft - direct), axis=1)


def group_multicode(soft_fields, config):
    """
    Regroups soft symbols per user: for every field, the symbols of the user's codes in
    code-index order, fields concatenated. Returns {user: complex stream}.
    """
    soft_fields = np.atleast_2d(soft_fields)
    streams = {}
    for user in range(1, config.num_users + 1):
        codes = config.codes_of_user(user)
        parts = []
        for f in range(soft_fields.shape[0]):
            per_code = soft_fields[f].reshape(config.n_s, config.k)
            parts.extend(per_code[:, c] for c in codes)
        streams[user] = np.concatenate(parts)
    return streams


def hard_decisions(soft_fields, config):
    return {user: qpsk_demodulate(stream) for user, stream in group_multicode(soft_fields, config).items()}


def detect(r, realization, codes, sigma2, config, options, midamble, counter=None):
    """
    Full block-FFT joint detection of one burst.

    `r` holds the received phases (n_over, n_samples) of the whole burst; the channel
    realization is assumed known. Deterministic for given inputs.
    """
    if sigma2 <= 0:
        raise InvalidInputError(f"Noise variance must be positive, got {sigma2}")
    started = time.perf_counter()
    p = options.resolve_p(config)
    counter = counter if counter is not None else OpCounter()
    tb = build_transfer_blocks(realization.h, codes, config)
    cancelled = extend_window(r, midamble, realization, config)
    windows = field_windows(cancelled, config, p, options.window_extension)
    ops = prepare_burst(tb, sigma2, p, options, counter)
    soft = np.stack([detect_field(windows[f], ops, config.n_s, options, counter) for f in range(N_FIELDS)])
    if logger.isEnabledFor(logging.DEBUG):
        gap = edge_discrepancy(ops, windows[0])
        logger.debug(f"FFT vs direct matched filter: interior max {gap[1:-1].max():.3e}, "
                     f"edge max {max(gap[0], gap[-1]):.3e}")
    diagnostics = {
        "p": p,
        "rcond": ops.rcond,
        "ops": runtime_counters(counter),
        "elapsed_s": time.perf_counter() - started,
    }
    return DetectionResult(soft=soft, hard_bits=hard_decisions(soft, config), diagnostics=diagnostics)
