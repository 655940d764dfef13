import pytest

from detectors.counters import FFT, OpCounter, is_radix2, runtime_counters, tally, transform_cost


def test_counter_accumulates_and_resets():
    counter = OpCounter()
    counter.add(FFT, 10)
    tally(counter, FFT, 2.4)
    tally(counter, "other", 5)
    assert counter[FFT] == 12
    assert counter.total() == 17
    assert list(counter.as_dict()) == [FFT, "other"]
    counter.reset()
    assert counter[FFT] == 0


def test_tally_without_counter_is_a_no_op():
    tally(None, FFT, 100)
    assert runtime_counters(None) == {}


@pytest.mark.parametrize("n,expected", [(1, True), (2, True), (64, True), (61, False), (0, False), (96, False)])
def test_radix2_detection(n, expected):
    assert is_radix2(n) is expected


def test_transform_cost():
    assert transform_cost(64) == 384
    assert transform_cost(1024) == 10240
    assert transform_cost(61) == 3721
    assert transform_cost(1) == 0
