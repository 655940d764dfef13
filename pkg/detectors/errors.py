"""
Exception hierarchy shared by the simulator, the detectors and the harness.

Configuration problems are ``ValueError`` subclasses so pydantic validation
failures and our own checks can be handled together by the CLI; numerical
breakdowns are ``ArithmeticError`` subclasses and carry the failing index.
"""


class JdfftError(Exception):
    """Base class for every error raised by this project."""


class InvalidConfigError(JdfftError, ValueError):
    """A configuration value violates a documented invariant."""


class InvalidInputError(JdfftError, ValueError):
    """Array inputs have inconsistent shapes or are missing samples."""


class OracleSizeError(InvalidInputError):
    """A dense reference computation was asked for a problem above its size guard."""


class NumericalError(JdfftError, ArithmeticError):
    """A numerical kernel could not produce a trustworthy result."""


class SingularBinError(NumericalError):
    def __init__(self, bin_index, pivot, scale):
        self.bin_index = bin_index
        self.pivot = pivot
        self.scale = scale
        super().__init__(
            f"Frequency bin {bin_index} is singular: smallest pivot {pivot:.3e} "
            f"below 1e-12 x {scale:.3e}"
        )


class SpectralNullError(NumericalError):
    def __init__(self, bin_index, value, scale):
        self.bin_index = bin_index
        self.value = value
        self.scale = scale
        super().__init__(
            f"Chip-level spectrum has a near-zero bin {bin_index}: |{value:.3e}| "
            f"below 1e-12 x {scale:.3e}"
        )


class CholeskyBreakdownError(NumericalError):
    def __init__(self, block_index, detail=""):
        self.block_index = block_index
        msg = f"Cholesky breakdown at block row {block_index}: pivot block is not positive definite"
        if detail:
            msg = f"{msg} ({detail})"
        super().__init__(msg)
