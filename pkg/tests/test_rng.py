import numpy as np
from hypothesis import given, strategies as st

from sysrisk import rng


def test_same_key_same_numbers():
    a = rng.normals(7, rng.stream_code(rng.BROWNIAN, 3), 0, 10, 5)
    b = rng.normals(7, rng.stream_code(rng.BROWNIAN, 3), 0, 10, 5)
    assert np.array_equal(a, b)


def test_streams_differ():
    a = rng.uniforms(7, rng.stream_code(rng.BROWNIAN, 0), 0, 4, 4)
    b = rng.uniforms(7, rng.stream_code(rng.BROWNIAN, 1), 0, 4, 4)
    c = rng.uniforms(8, rng.stream_code(rng.BROWNIAN, 0), 0, 4, 4)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


@given(start=st.integers(0, 200), n=st.integers(1, 30), row_len=st.integers(1, 13))
def test_row_blocks_are_slices_of_one_sequence(start, n, row_len):
    whole = rng.uniforms(3, rng.stream_code(rng.AUX, 1), 0, start + n, row_len)
    block = rng.uniforms(3, rng.stream_code(rng.AUX, 1), start, n, row_len)
    assert np.array_equal(whole[start:], block)


def test_uniforms_open_interval_and_moments():
    u = rng.uniforms(1, 0, 0, 20000, 5)
    assert u.min() > 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 0.01


def test_normals_moments():
    z = rng.normals(1, 5, 0, 50000, 4).ravel()
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 0.02


def test_stream_code_range():
    import pytest

    with pytest.raises(ValueError):
        rng.stream_code(rng.AUX, 1 << 24)
    assert rng.stream_code(rng.TYPES, 2, 3) == (rng.TYPES << 48) | (3 << 24) | 2
