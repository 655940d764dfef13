"""
Reference detectors the block-FFT joint detector is compared against.

* dense MMSE oracle: exact solve of (sum_n A_n^H A_n + sigma^2 I) d = sum_n A_n^H r_n
* JDChol: approximate block Cholesky of the banded correlation (leading rows factored
  exactly, the settled last row replicated), banded forward/backward substitution
* SDChol: chip-level MMSE equalization with the same approximate Cholesky on scalar
  bands, followed by despreading
* SDFFT: chip-level circulant (scalar FFT) equalization followed by despreading
* MF: matched filter normalized by the per-code energy
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.linalg

from detectors.errors import (
    CholeskyBreakdownError,
    InvalidConfigError,
    NumericalError,
    OracleSizeError,
    SpectralNullError,
)
from detectors.jdfft_detector import matched_filter_direct
from detectors.structured_matrices import correlation_bands

logger = logging.getLogger(__name__)

ORACLE_GUARD = 1024
SPECTRAL_FLOOR = 1e-12
SETTLE_TOLERANCE = 1e-10


@dataclass(frozen=True)
class ChipEqualizerModel:
    """
    Chip-level downlink model r_n = H_n s + noise, common to every code.

    `bands` holds t_0..t_{W-1} of R~ = sum_n H_n^H H_n (no noise), t_m = sum_d conj(h[d]) h[d+m].
    """

    h: np.ndarray
    codes: np.ndarray
    n_chips: int
    bands: np.ndarray

    @property
    def w(self):
        return self.h.shape[1]

    def channel_matrices(self, n_rows=None):
        """Dense Toeplitz H_n (n_rows x n_chips), first column h_n zero-padded."""
        n_rows = self.n_chips + self.w - 1 if n_rows is None else n_rows
        mats = []
        for taps in self.h:
            col = np.zeros(n_rows, dtype=complex)
            col[:min(self.w, n_rows)] = taps[:n_rows]
            row = np.zeros(self.n_chips, dtype=complex)
            row[0] = col[0]
            mats.append(scipy.linalg.toeplitz(col, row))
        return np.stack(mats)

    def dense_correlation(self, sigma2=0.0):
        seq = self.bands
        col = np.zeros(self.n_chips, dtype=complex)
        col[:min(seq.size, self.n_chips)] = seq[:self.n_chips]
        return scipy.linalg.toeplitz(col, col.conj()) + sigma2 * np.eye(self.n_chips)


def build_chip_model(h, codes, config):
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    w = h.shape[1]
    bands = np.array([
        sum(np.vdot(taps[:w - m], taps[m:]) for taps in h) for m in range(w)
    ], dtype=complex)
    return ChipEqualizerModel(h=h, codes=codes.codes, n_chips=config.field_chips, bands=bands)


def dense_mmse_oracle(a, r, sigma2):
    """
    Ground-truth MMSE estimate: (sum A_n^H A_n + sigma2 I) d = sum A_n^H r_n via a dense
    Hermitian (Cholesky) factorization. Raises NumericalError when the Gram matrix is not
    positive definite.
    """
    a = np.asarray(a)
    if a.ndim == 2:
        a = a[None]
    r = np.atleast_2d(r)
    n_unknowns = a.shape[2]
    if n_unknowns > ORACLE_GUARD:
        raise OracleSizeError(f"Oracle refuses {n_unknowns} unknowns (guard {ORACLE_GUARD})")
    gram = np.einsum("nij,nik->jk", a.conj(), a) + sigma2 * np.eye(n_unknowns)
    rhs = np.einsum("nij,ni->j", a.conj(), r[:, :a.shape[1]])
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"Oracle Gram matrix is not positive definite: {e}") from e
    return scipy.linalg.cho_solve(factor, rhs)


def _window_factor(g, first, i):
    """Dense lower block-triangular factor of block rows first..i-1, columns first..i-1."""
    n_w = i - first
    k = g.shape[2]
    a = np.arange(n_w)
    lag = a[:, None] - a[None, :]
    blocks = g[first + a[:, None], np.clip(lag, 0, None)]
    blocks[lag < 0] = 0
    return blocks.transpose(0, 2, 1, 3).reshape(n_w * k, n_w * k)


def _row_settled(g, i, l, tol):
    # Rows before L+1 are narrower than the band.
    if i < l + 1:
        return False
    return np.linalg.norm(g[i] - g[i - 1]) <= tol * np.linalg.norm(g[i])


def approximate_block_cholesky(sequence, n_blocks, depth=None, tol=SETTLE_TOLERANCE):
    """
    Banded lower block Cholesky factor G (R = G G^H) of a banded block-Toeplitz matrix.

    `sequence` holds R_0..R_L (shape (L+1, K, K), R_0 Hermitian positive definite). With an
    explicit `depth` the first `depth` block rows are factored exactly. By default at least
    L+2 rows are factored and factoring continues until a row differs from the previous one
    by less than `tol` (relative Frobenius norm). Every later row repeats the last factored
    one. Returns G with G[i, t] = block (i, i-t), shape (n_blocks, L+1, K, K).
    """
    seq = np.asarray(sequence, dtype=complex)
    l = seq.shape[0] - 1
    k = seq.shape[1]
    if depth is not None and depth < l + 1 and depth < n_blocks:
        raise InvalidConfigError(f"Cholesky depth {depth} must cover at least L+1={l + 1} block rows")
    limit = n_blocks if depth is None else min(depth, n_blocks)
    g = np.zeros((n_blocks, l + 1, k, k), dtype=complex)
    exact = limit
    for i in range(limit):
        first = max(0, i - l)
        n_w = i - first
        diag = seq[0]
        if n_w:
            # X M^H = [R_{i-first} .. R_1] with M the factor of the window rows; X = G[i, window].
            lags = n_w - np.arange(n_w)
            rhs = seq[lags].transpose(1, 0, 2).reshape(k, n_w * k)
            x_h = scipy.linalg.solve_triangular(_window_factor(g, first, i), rhs.conj().T, lower=True)
            x = x_h.conj().T
            g[i, lags] = x.reshape(k, n_w, k).transpose(1, 0, 2)
            diag = seq[0] - x @ x_h
        try:
            g[i, 0] = scipy.linalg.cholesky(0.5 * (diag + diag.conj().T), lower=True)
        except np.linalg.LinAlgError as e:
            raise CholeskyBreakdownError(i, str(e)) from e
        if depth is None and _row_settled(g, i, l, tol):
            exact = i + 1
            break
    if exact < n_blocks:
        g[exact:] = g[exact - 1]
    logger.debug(f"Block Cholesky: {exact} of {n_blocks} rows factored exactly")
    return g


def banded_cholesky_solve(g, rhs):
    """Solves G G^H x = rhs with banded block forward and backward substitution."""
    n_blocks, width, k, _ = g.shape
    l = width - 1
    v = np.asarray(rhs, dtype=complex).reshape(n_blocks, k)
    y = np.zeros_like(v)
    for i in range(n_blocks):
        t = np.arange(1, min(i, l) + 1)
        acc = v[i] - np.einsum("tab,tb->a", g[i, t], y[i - t])
        y[i] = scipy.linalg.solve_triangular(g[i, 0], acc, lower=True)
    x = np.zeros_like(v)
    for i in range(n_blocks - 1, -1, -1):
        t = np.arange(1, min(n_blocks - 1 - i, l) + 1)
        acc = y[i] - np.einsum("tba,tb->a", g[i + t, t].conj(), x[i + t])
        x[i] = scipy.linalg.solve_triangular(g[i, 0], acc, lower=True, trans="C")
    return x.ravel()


def jd_chol(bands, matched, depth=None):
    """Approximate-Cholesky joint detector on the banded correlation R."""
    n_blocks = np.asarray(matched).size // bands.k
    g = approximate_block_cholesky(bands.sequence, n_blocks, depth)
    return banded_cholesky_solve(g, matched)


def chip_matched_filter(model, window):
    """sum_n H_n^H r_n over the field's chips."""
    window = np.atleast_2d(window)
    span = model.n_chips + model.w - 1
    out = np.zeros(model.n_chips, dtype=complex)
    for taps, r_n in zip(model.h, window):
        padded = np.zeros(span, dtype=complex)
        padded[:min(span, r_n.size)] = r_n[:span]
        out += np.correlate(padded, taps, mode="valid")
    return out


def despread(chips, codes):
    """d_hat[i, k] = sum_c conj(code_k[c]) chips[i*sf + c], code-major interleaved."""
    sf = codes.shape[1]
    return (np.asarray(chips).reshape(-1, sf) @ codes.conj().T).ravel()


def sd_chol(model, window, sigma2, depth=None):
    """
    Chip-level MMSE equalizer via approximate banded Cholesky, then despreading. The chip
    factor is grown until its rows settle unless an explicit depth is given.
    """
    sequence = model.bands.reshape(-1, 1, 1).copy()
    sequence[0] += sigma2
    g = approximate_block_cholesky(sequence, model.n_chips, depth)
    s_hat = banded_cholesky_solve(g, chip_matched_filter(model, window))
    return despread(s_hat, model.codes)


def chip_fft_length(model):
    """Next power of two covering the field plus the channel tail."""
    return 1 << int(np.ceil(np.log2(model.n_chips + model.w - 1)))


def chip_spectrum(model, sigma2, nfft):
    """Scalar FFT of the central column of R~ + sigma2 I, laid out circularly."""
    col = np.zeros(nfft, dtype=complex)
    col[0] = model.bands[0] + sigma2
    for m in range(1, model.w):
        col[m] = model.bands[m]
        col[nfft - m] = np.conj(model.bands[m])
    return scipy.fft.fft(col)


def sd_fft(model, window, sigma2):
    """Chip-level circulant equalization per frequency bin, then despreading."""
    nfft = chip_fft_length(model)
    spectrum = chip_spectrum(model, sigma2, nfft)
    scale = np.max(np.abs(spectrum))
    weakest = int(np.argmin(np.abs(spectrum)))
    if np.abs(spectrum[weakest]) < SPECTRAL_FLOOR * scale:
        raise SpectralNullError(weakest, np.abs(spectrum[weakest]), scale)
    v = np.zeros(nfft, dtype=complex)
    v[:model.n_chips] = chip_matched_filter(model, window)
    s_hat = scipy.fft.ifft(scipy.fft.fft(v) / spectrum)[:model.n_chips]
    return despread(s_hat, model.codes)


def matched_filter_detector(tb, window, n_symbols):
    """Matched filter normalized by diag(R_0) of the noiseless correlation."""
    v = matched_filter_direct(tb, window, n_symbols).reshape(n_symbols, tb.k)
    energy = np.real(np.diag(correlation_bands(tb, 0.0).r0))
    return (v / energy[None, :]).ravel()
