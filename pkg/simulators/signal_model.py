"""
Burst-level signal model for short-code CDMA timeslots.

Builds the spreading codes, QPSK symbol frames, the transmitted burst
(data field 1 | midamble | data field 2 | guard), the per-phase transfer
blocks B_n(0)..B_n(L) and, for reference computations only, the dense
block-Toeplitz system matrix A.

Symbols inside a data field are stored code-major interleaved: symbol i of
code k sits at position i*K + k, so every group of K entries lines up with
one K x K block of the correlation matrix.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field, model_validator

from detectors.errors import InvalidConfigError, InvalidInputError

logger = logging.getLogger(__name__)

QPSK_SCALE = 1.0 / math.sqrt(2.0)
# Gray mapping: first bit -> sign of I, second bit -> sign of Q.
QPSK_POINTS = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) * QPSK_SCALE

N_FIELDS = 2


class SlotConfig(BaseModel):
    """All burst-level parameters of one TDD timeslot."""

    model_config = ConfigDict(frozen=True)

    sf: int = Field(16, ge=1, description="Spreading factor (chips per symbol)")
    k: int = Field(8, ge=1, description="Number of active codes")
    n_s: int = Field(61, ge=2, description="Symbols per data field")
    w: int = Field(57, ge=1, description="Channel length in chips")
    n_over: int = Field(1, ge=1, description="Oversampling factor N")
    p: int | None = Field(None, description="FFT processing length; defaults to n_s")
    code_allocation: tuple[int, ...] | None = Field(
        None, description="User index (1-based) of every code; defaults to one user per code"
    )
    midamble_len: int = Field(512, ge=0)
    guard_len: int = Field(96, ge=0)

    @model_validator(mode="after")
    def _check_invariants(self):
        if self.k > self.sf:
            raise ValueError(f"k={self.k} exceeds sf={self.sf}")
        if self.p is not None and self.p < self.n_s:
            raise ValueError(f"processing length p={self.p} is shorter than n_s={self.n_s}")
        if self.code_allocation is not None:
            alloc = self.code_allocation
            if len(alloc) != self.k:
                raise ValueError(f"code_allocation has {len(alloc)} entries for k={self.k} codes")
            users = set(alloc)
            if users != set(range(1, max(users) + 1)):
                raise ValueError("code_allocation must map onto users 1..num_users without gaps")
        return self

    @property
    def processing_length(self):
        return self.p if self.p is not None else self.n_s

    @property
    def allocation(self):
        if self.code_allocation is None:
            return tuple(range(1, self.k + 1))
        return self.code_allocation

    @property
    def num_users(self):
        return max(self.allocation)

    @property
    def l(self):
        """Delay spread in symbols: number of possibly nonzero blocks beyond B(0)."""
        return math.ceil((self.sf + self.w - 1) / self.sf) - 1

    @property
    def field_chips(self):
        return self.sf * self.n_s

    @property
    def n_c(self):
        """Received-field length: the data field plus the w-1 chip multipath tail."""
        return self.sf * self.n_s + self.w - 1

    @property
    def burst_chips(self):
        return N_FIELDS * self.field_chips + self.midamble_len + self.guard_len

    def field_start(self, field):
        return field * (self.field_chips + self.midamble_len)

    def codes_of_user(self, user):
        return [k for k, u in enumerate(self.allocation) if u == user]

    def with_updates(self, **changes):
        # model_copy skips validation, so rebuild instead.
        return SlotConfig(**{**self.model_dump(), **changes})


@dataclass(frozen=True)
class CodeSet:
    """K spreading codes, one per row, each of length sf with unit-modulus chips."""

    codes: np.ndarray

    @property
    def k(self):
        return self.codes.shape[0]

    @property
    def sf(self):
        return self.codes.shape[1]

    def gram(self):
        return self.codes.conj() @ self.codes.T


@dataclass(frozen=True)
class TransferBlocks:
    """Per oversampling phase, the SF x K blocks B_n(0)..B_n(L), shape (n_over, L+1, sf, k)."""

    blocks: np.ndarray
    w: int | None = None

    @property
    def l(self):
        return self.blocks.shape[1] - 1

    @property
    def support(self):
        """Chips spanned by one symbol's response: sf + w - 1, or the whole stack when w is unknown."""
        if self.w is None:
            return self.blocks.shape[1] * self.sf
        return self.sf + self.w - 1

    @property
    def n_over(self):
        return self.blocks.shape[0]

    @property
    def sf(self):
        return self.blocks.shape[2]

    @property
    def k(self):
        return self.blocks.shape[3]

    def stacked(self, phase=0):
        """Vertically stacked {B(0); ...; B(L)} of one phase, ((L+1)*sf, k)."""
        return self.blocks[phase].reshape(-1, self.k)


@dataclass(frozen=True)
class SymbolFrame:
    """Transmitted QPSK symbols for both data fields and the bits they carry."""

    d: np.ndarray
    bits: np.ndarray

    def field(self, index, config):
        n = config.k * config.n_s
        return self.d[index * n:(index + 1) * n]


def _is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


def scrambling_sequence(sf, scramble_seed):
    """Common unit-modulus QPSK scrambling overlay; None means no scrambling."""
    if scramble_seed is None:
        return np.ones(sf, dtype=complex)
    rng = np.random.default_rng([scramble_seed, sf])
    return np.exp(0.5j * np.pi * rng.integers(0, 4, size=sf))


def generate_codes(sf, k, scramble_seed=None):
    """
    Returns k orthogonal Walsh-Hadamard codes of length sf overlaid with a common scrambling sequence.

    The all-ones row is skipped whenever k < sf leaves room for it.
    """
    if not _is_power_of_two(sf):
        raise InvalidConfigError(f"Spreading factor {sf} is not a power of two")
    if not 1 <= k <= sf:
        raise InvalidConfigError(f"Number of codes k={k} must lie in 1..{sf}")
    first = 1 if k < sf else 0
    walsh = scipy.linalg.hadamard(sf).astype(complex)[first:first + k]
    return CodeSet(codes=walsh * scrambling_sequence(sf, scramble_seed)[None, :])


def qpsk_modulate(bits):
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1, 2)
    return ((1 - 2.0 * bits[:, 0]) + 1j * (1 - 2.0 * bits[:, 1])) * QPSK_SCALE


def qpsk_demodulate(soft):
    soft = np.asarray(soft)
    bits = np.empty((soft.size, 2), dtype=np.uint8)
    bits[:, 0] = soft.real < 0
    bits[:, 1] = soft.imag < 0
    return bits.ravel()


def random_frame(config, rng):
    """Draws a random QPSK frame for both data fields."""
    bits = rng.integers(0, 2, size=N_FIELDS * config.k * config.n_s * 2, dtype=np.uint8)
    return SymbolFrame(d=qpsk_modulate(bits), bits=bits)


def generate_midamble(length, seed):
    """Pseudo-random QPSK midamble chips known to the receiver."""
    rng = np.random.default_rng([seed, length, 0x4D4944])
    return QPSK_POINTS[rng.integers(0, 4, size=length)]


def spread(field_symbols, codes):
    """Spreads one data field (code-major interleaved symbols) into sf*n_s chips."""
    symbols = np.asarray(field_symbols).reshape(-1, codes.k)
    return (symbols @ codes.codes).ravel()


def spread_and_assemble(frame, codes, midamble, config):
    """Builds the transmitted burst [D1 | midamble | D2 | guard] at chip rate."""
    n_field = config.k * config.n_s
    if frame.d.size != N_FIELDS * n_field:
        raise InvalidConfigError(
            f"Frame holds {frame.d.size} symbols, expected {N_FIELDS * n_field} for two data fields"
        )
    if len(midamble) != config.midamble_len:
        raise InvalidConfigError(
            f"Midamble has {len(midamble)} chips, expected {config.midamble_len}"
        )
    if codes.k != config.k or codes.sf != config.sf:
        raise InvalidConfigError(
            f"Code set is {codes.k}x{codes.sf}, configuration needs {config.k}x{config.sf}"
        )
    return np.concatenate([
        spread(frame.field(0, config), codes),
        np.asarray(midamble, dtype=complex),
        spread(frame.field(1, config), codes),
        np.zeros(config.guard_len, dtype=complex),
    ])


def build_transfer_blocks(h, codes, config):
    """
    Convolves every code with every phase's channel and cuts the result into SF-chip blocks.

    `h` has shape (n_over, w) (a 1-D vector is taken as a single phase).
    """
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    if h.shape[1] != config.w:
        raise InvalidInputError(f"Channel vectors have length {h.shape[1]}, expected w={config.w}")
    n_blocks = config.l + 1
    span = n_blocks * config.sf
    blocks = np.zeros((h.shape[0], span, codes.k), dtype=complex)
    for n, taps in enumerate(h):
        for k, code in enumerate(codes.codes):
            column = np.convolve(code, taps)
            blocks[n, :column.size, k] = column
    return TransferBlocks(blocks=blocks.reshape(h.shape[0], n_blocks, config.sf, codes.k), w=config.w)


def build_system_matrix(tb, config, n_symbols=None, n_rows=None):
    """
    Dense block-Toeplitz system matrix A per phase, shape (n_over, n_rows, k*n_symbols).

    Block column j holds B(0)..B(L) starting at chip row j*sf; rows past `n_rows` are cut.
    Only reference computations and tests use it.
    """
    n_symbols = config.n_s if n_symbols is None else n_symbols
    n_rows = n_symbols * config.sf + config.w - 1 if n_rows is None else n_rows
    k = tb.k
    a = np.zeros((tb.n_over, n_rows, k * n_symbols), dtype=complex)
    for n in range(tb.n_over):
        stacked = tb.stacked(n)
        for j in range(n_symbols):
            start = j * config.sf
            if start >= n_rows:
                break
            stop = min(start + stacked.shape[0], n_rows)
            a[n, start:stop, j * k:(j + 1) * k] = stacked[:stop - start]
    return a
