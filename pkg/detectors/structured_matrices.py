"""
Banded block-Toeplitz correlation bands, their block-circulant extension and the
block DFT that diagonalizes it.

Conventions used throughout:

* Block (i, j) of R is R_{i-j} for 0 <= i-j <= L and R_{j-i}^H for 0 <= j-i <= L,
  with R_m = sum_n sum_i B_n(i)^H B_n(i+m).
* The block-circulant extension R_c of P blocks has block (a, b) equal to entry
  (a - b) mod P of the two-sided sequence [R_0, R_1, ..., R_L, 0, ..., R_L^H, ..., R_1^H].
* D = F kron I_K with F[a, k] = exp(+2j pi a k / P); D^H D = P I. The forward block DFT
  applies D^H (a plain FFT over the block index) and the inverse applies D / P.
* With those choices R_c = (1/P) D Lambda D^H and A_c = (1/P) D_1 Lambda_1 D_2^H, where
  Lambda^(k) and Lambda_1^(k) are FFTs of the band and transfer-block sequences.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.linalg

from detectors.counters import FFT, is_radix2, tally, transform_cost
from detectors.errors import InvalidConfigError, InvalidInputError, OracleSizeError

logger = logging.getLogger(__name__)

DENSE_GUARD_ROWS = 512


@dataclass(frozen=True)
class BlockBandSet:
    """R_0 (noise variance folded in) and the lower bands R_1..R_L, each K x K."""

    r0: np.ndarray
    bands: np.ndarray
    sigma2: float

    @property
    def l(self):
        return self.bands.shape[0]

    @property
    def k(self):
        return self.r0.shape[0]

    @property
    def sequence(self):
        """R_0..R_L stacked, shape (L+1, K, K)."""
        return np.concatenate([self.r0[None], self.bands], axis=0)

    def to_dense(self, n_blocks):
        """Dense banded block-Toeplitz R with n_blocks block rows."""
        k = self.k
        seq = self.sequence
        dense = np.zeros((n_blocks * k, n_blocks * k), dtype=complex)
        for i in range(n_blocks):
            for m in range(min(self.l, i) + 1):
                j = i - m
                dense[i * k:(i + 1) * k, j * k:(j + 1) * k] = seq[m]
                if m:
                    dense[j * k:(j + 1) * k, i * k:(i + 1) * k] = seq[m].conj().T
        return dense


@dataclass(frozen=True)
class BlockSpectrum:
    """Per-bin K x K blocks Lambda^(1..P), shape (P, K, K)."""

    lam: np.ndarray

    @property
    def p(self):
        return self.lam.shape[0]


@dataclass(frozen=True)
class TransferSpectrum:
    """Per-phase, per-bin SF x K blocks Lambda_1^(1..P), shape (n_over, P, sf, K)."""

    lam1: np.ndarray

    @property
    def p(self):
        return self.lam1.shape[1]


def correlation_bands(tb, sigma2=0.0):
    """R_m = sum over phases of sum_i B(i)^H B(i+m), m = 0..L, with sigma2*I added to R_0."""
    b = tb.blocks
    n_blocks = tb.l + 1
    seq = np.stack([
        np.einsum("nisk,nisj->kj", b[:, :n_blocks - m].conj(), b[:, m:])
        for m in range(n_blocks)
    ])
    r0 = seq[0] + sigma2 * np.eye(tb.k)
    # Exact Hermitian symmetry for R_0.
    r0 = 0.5 * (r0 + r0.conj().T)
    return BlockBandSet(r0=r0, bands=seq[1:], sigma2=float(sigma2))


def dft(x, axis=0, inverse=False, counter=None):
    """
    Length-P DFT along `axis` (P = x.shape[axis]).

    Radix-2 lengths go through scipy.fft; any other length falls back to a direct O(P^2)
    product with the DFT matrix, which covers P = 61 without a prime-factor kernel.
    """
    x = np.asarray(x, dtype=complex)
    n = x.shape[axis]
    tally(counter, FFT, transform_cost(n) * (x.size // max(n, 1)))
    if is_radix2(n):
        return scipy.fft.ifft(x, axis=axis) if inverse else scipy.fft.fft(x, axis=axis)
    f = scipy.linalg.dft(n)
    if inverse:
        f = f.conj() / n
    moved = np.moveaxis(x, axis, 0)
    out = np.tensordot(f, moved, axes=(1, 0))
    return np.moveaxis(out, 0, axis)


def block_dft(x, p, direction="forward", counter=None):
    """
    Block DFT of P blocks of length K: K independent scalar P-point transforms.

    `forward` applies D^H, `inverse` applies D / P. Returns shape (P, K).
    """
    x = np.asarray(x, dtype=complex)
    if x.size % p:
        raise InvalidInputError(f"Vector of {x.size} entries does not hold {p} equal blocks")
    blocks = x.reshape(p, -1)
    if direction not in ("forward", "inverse"):
        raise InvalidConfigError(f"Unknown block DFT direction '{direction}'")
    return dft(blocks, axis=0, inverse=direction == "inverse", counter=counter)


def two_sided_sequence(bands, p):
    """Zero-padded two-sided band sequence: R_0 at 0, R_m at m, R_m^H at p-m."""
    if p < 2 * bands.l + 1:
        raise InvalidConfigError(
            f"Processing length p={p} is below 2L+1={2 * bands.l + 1}: bands would alias"
        )
    seq = np.zeros((p, bands.k, bands.k), dtype=complex)
    seq[0] = bands.r0
    for m in range(1, bands.l + 1):
        seq[m] = bands.bands[m - 1]
        seq[p - m] = bands.bands[m - 1].conj().T
    return seq


def correlation_spectrum(bands, p, counter=None):
    """
    Lambda^(k) = R_0 + sum_m [R_m e^{-j2pi m(k-1)/p} + R_m^H e^{+j2pi m(k-1)/p}], computed as K^2
    scalar p-point FFTs of the two-sided band sequence.
    """
    lam = dft(two_sided_sequence(bands, p), axis=0, counter=counter)
    # Every bin is Hermitian; remove rounding asymmetry.
    lam = 0.5 * (lam + lam.conj().transpose(0, 2, 1))
    return BlockSpectrum(lam=lam)


def transfer_spectrum(tb, p, counter=None):
    """Lambda_1^(k) = sum_i B(i) e^{-j2pi i(k-1)/p} per phase, as SF*K scalar FFTs."""
    if p < tb.l + 1:
        raise InvalidConfigError(f"Processing length p={p} is below L+1={tb.l + 1}")
    padded = np.zeros((tb.n_over, p, tb.sf, tb.k), dtype=complex)
    padded[:, :tb.l + 1] = tb.blocks
    return TransferSpectrum(lam1=dft(padded, axis=1, counter=counter))


def _guard(rows):
    if rows > DENSE_GUARD_ROWS:
        raise OracleSizeError(
            f"Dense circulant extension with {rows} rows exceeds the {DENSE_GUARD_ROWS}-row guard"
        )


def dense_circulant_extension(obj, p):
    """
    Dense wrap-around matrix for tests and oracles.

    A BlockBandSet gives R_c (pK x pK); TransferBlocks give A_c per phase (n_over, p*sf, p*K).
    """
    if isinstance(obj, BlockBandSet):
        k = obj.k
        _guard(p * k)
        seq = two_sided_sequence(obj, p)
        r_c = np.zeros((p * k, p * k), dtype=complex)
        for a in range(p):
            for b in range(p):
                r_c[a * k:(a + 1) * k, b * k:(b + 1) * k] = seq[(a - b) % p]
        return r_c
    if p < obj.l + 1:
        raise InvalidConfigError(f"Processing length p={p} is below L+1={obj.l + 1}")
    sf, k = obj.sf, obj.k
    _guard(p * sf)
    a_c = np.zeros((obj.n_over, p * sf, p * k), dtype=complex)
    for n in range(obj.n_over):
        for a in range(p):
            for b in range(p):
                i = (a - b) % p
                if i <= obj.l:
                    a_c[n, a * sf:(a + 1) * sf, b * k:(b + 1) * k] = obj.blocks[n, i]
    return a_c


def dense_block_dft_matrix(p, k):
    """D = F kron I_K with F[a, k] = exp(+2j pi a k / p)."""
    return np.kron(scipy.linalg.dft(p).conj(), np.eye(k))


def spectrum_from_block_row(dense, p, k, row):
    """
    Recovers the per-bin blocks by equating block row `row` of dense*D with D*Lambda.

    Interior rows of the banded R (at least L block rows from either edge) give the same
    blocks as the circulant extension.
    """
    d = dense_block_dft_matrix(p, k)
    prod = dense[row * k:(row + 1) * k] @ d
    f_row = np.exp(2j * np.pi * row * np.arange(p) / p)
    return np.stack([prod[:, j * k:(j + 1) * k] / f_row[j] for j in range(p)])


def noncirculant_fraction(l, p):
    """Fraction of block rows of the P-block banded matrix outside the circulant pattern."""
    return 2.0 * l / p


def circulant_edge_gap(bands, p):
    """
    Frobenius gap between the banded R and its circulant extension, both with p blocks.

    Returns (absolute gap, gap relative to ||R_c||_F). The absolute gap depends only on the
    bands; the relative gap shrinks as p grows.
    """
    seq = bands.sequence
    corner = sum(m * np.linalg.norm(seq[m]) ** 2 for m in range(1, bands.l + 1))
    full = np.linalg.norm(seq[0]) ** 2 + 2.0 * sum(np.linalg.norm(seq[m]) ** 2 for m in range(1, bands.l + 1))
    gap = np.sqrt(2.0 * corner)
    return gap, gap / np.sqrt(p * full)
