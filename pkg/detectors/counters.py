"""
Runtime operation counters.

Kernels accept an optional ``OpCounter`` and tally the complex operations they
execute under a label. The labels match the entries of
``analysis.complexity_model`` so measured and closed-form counts can be put
side by side.
"""

import math
from collections import defaultdict

MF_DIRECT = "matched_filter_direct"
MF_FFT_PRODUCT = "matched_filter_fft_product"
FFT = "fft"
BIN_INVERSE = "bin_inverse"
BIN_LU = "bin_lu"
BIN_APPLY = "bin_apply"


class OpCounter:
    def __init__(self):
        self.tallies = defaultdict(int)

    def add(self, label, count):
        self.tallies[label] += int(round(count))

    def __getitem__(self, label):
        return self.tallies.get(label, 0)

    def total(self):
        return sum(self.tallies.values())

    def as_dict(self):
        return dict(sorted(self.tallies.items()))

    def reset(self):
        self.tallies.clear()


def tally(counter, label, count):
    if counter is not None:
        counter.add(label, count)


def is_radix2(n):
    return n >= 1 and (n & (n - 1)) == 0


def transform_cost(n):
    """Complex operations charged for one length-n transform."""
    if is_radix2(n):
        return n * int(math.log2(n)) if n > 1 else 0
    # Direct DFT fallback.
    return n * n


def runtime_counters(counter):
    """Return the measured complex-operation tallies of a detector run."""
    return counter.as_dict() if counter is not None else {}
