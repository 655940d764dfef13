import pytest

from harness.selftest import CHECKS, run_selftest


@pytest.mark.parametrize("check", CHECKS, ids=lambda c: c.__name__)
def test_check_passes(check):
    result = check()
    assert result.passed, f"{result.name}: metric {result.metric:.3e} above {result.tolerance:.0e}"


def test_run_selftest_reports_every_check():
    results = run_selftest()
    assert [r.name for r in results] == [
        "parseval",
        "hermitian_bins",
        "diagonalization",
        "lu_inverse_equivalence",
        "scaling_equivariance",
        "window_extension_energy",
        "determinism",
        "circulant_exactness",
        "oversampled_bands",
    ]
    assert all(r.passed for r in results)
