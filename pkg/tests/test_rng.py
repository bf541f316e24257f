import numpy as np
import pytest

from sparseht.rng import BLOCK_STREAM_BASE, philox_rng


def test_same_key_same_draws():
    a = philox_rng(42, 7).standard_normal(100)
    b = philox_rng(42, 7).standard_normal(100)
    np.testing.assert_array_equal(a, b)


def test_streams_differ():
    a = philox_rng(42, 0).standard_normal(100)
    b = philox_rng(42, 1).standard_normal(100)
    assert not np.array_equal(a, b)


def test_seeds_differ():
    a = philox_rng(0, 3).standard_normal(100)
    b = philox_rng(1, 3).standard_normal(100)
    assert not np.array_equal(a, b)


def test_block_stream_base_clears_round_range():
    # rounds index streams from 0 upward; block streams start at 2^63
    assert BLOCK_STREAM_BASE == 2**63
    a = philox_rng(5, 10).standard_normal(8)
    b = philox_rng(5, BLOCK_STREAM_BASE + 10).standard_normal(8)
    assert not np.array_equal(a, b)


def test_full_64bit_range_accepted():
    philox_rng(2**64 - 1, 2**64 - 1).standard_normal(4)


@pytest.mark.parametrize("seed,stream", [(-1, 0), (0, -1), (2**64, 0), (0, 2**64)])
def test_out_of_range_rejected(seed, stream):
    with pytest.raises(ValueError):
        philox_rng(seed, stream)
