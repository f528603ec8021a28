import numpy as np
import pytest

from app.exceptions import InputError
from app.service.random_streams import chunk_sizes, map_chunks, run_parallel, substream


def test_substream_is_deterministic():
    a = substream(3, 1, 2).standard_normal(5)
    b = substream(3, 1, 2).standard_normal(5)
    np.testing.assert_array_equal(a, b)


def test_substream_keys_are_distinct():
    a = substream(3, 1, 2).standard_normal(5)
    assert not np.array_equal(a, substream(3, 2, 1).standard_normal(5))
    assert not np.array_equal(a, substream(4, 1, 2).standard_normal(5))


def test_negative_seed():
    with pytest.raises(InputError):
        substream(-1)


def test_chunk_sizes():
    assert chunk_sizes(60_000, 25_000) == [25_000, 25_000, 10_000]
    assert chunk_sizes(50_000, 25_000) == [25_000, 25_000]
    assert chunk_sizes(10, 25_000) == [10]


def test_chunk_size_must_be_positive():
    with pytest.raises(InputError):
        chunk_sizes(10, 0)


def test_run_parallel_keeps_order():
    assert run_parallel(lambda i: i * i, 20, threads=4) == [i * i for i in range(20)]


def test_map_chunks_independent_of_threads():
    def draw(stream, size):
        return stream.gamma(0.5, 2.0, size=size)

    one = np.concatenate(map_chunks(draw, 7_000, seed=11, key=(5,), threads=1, chunk_size=1_000))
    many = np.concatenate(map_chunks(draw, 7_000, seed=11, key=(5,), threads=4, chunk_size=1_000))
    assert one.shape == (7_000,)
    np.testing.assert_array_equal(one, many)
