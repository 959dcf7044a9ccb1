import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualmetric.numerics import Rng, euclid, euclid_grad, logsumexp, matvec, pairwise_dist, \
    relu, softmax


@pytest.mark.parametrize("v, expected", [
    ((-1, 0, 2), (0, 0, 2)),
    ((0, 0), (0, 0)),
    ((3.5, -0.1, -7), (3.5, 0, 0)),
])
def test_relu(v, expected):
    np.testing.assert_array_equal(relu(v), expected)


@pytest.mark.parametrize("a, b, expected", [
    ((0, 0), (3, 4), 5.0),
    ((1, 2, 3), (1, 2, 3), 0.0),
    ((1, 0), (0, 1), 1.4142135623730951),
])
def test_euclid_examples(a, b, expected):
    assert euclid(a, b) == expected
    assert euclid(b, a) == expected


def test_euclid_dimension_mismatch():
    with pytest.raises(ValueError):
        euclid((1, 2), (1, 2, 3))


def test_euclid_grad_zero_at_coincidence():
    d, g = euclid_grad((1.0, 2.0), (1.0, 2.0))
    assert d == 0.0
    np.testing.assert_array_equal(g, 0.0)


def test_pairwise_dist_matches_euclid(rng):
    x, p = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    dist, unit = pairwise_dist(x, p)
    for i in range(5):
        for k in range(4):
            assert dist[i, k] == pytest.approx(euclid(x[i], p[k]), abs=1e-14)
            np.testing.assert_allclose(unit[i, k], euclid_grad(x[i], p[k])[1], atol=1e-14)


def test_softmax_examples():
    np.testing.assert_array_equal(softmax((0, 0)), (0.5, 0.5))
    np.testing.assert_allclose(softmax((1000, 1000, 1000)), (1 / 3,) * 3, rtol=0, atol=1e-15)
    np.testing.assert_allclose(softmax((math.log(1), math.log(3))), (0.25, 0.75), atol=1e-15)


def test_softmax_empty():
    with pytest.raises(ValueError):
        softmax(())


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12))
def test_softmax_normalised(v):
    s = softmax(v)
    assert abs(s.sum() - 1.0) <= 1e-12


def test_logsumexp_matches_direct(rng):
    v = rng.normal(size=7)
    assert logsumexp(v) == pytest.approx(math.log(sum(math.exp(t) for t in v)), abs=1e-13)


@pytest.mark.parametrize("m, v, expected", [
    (np.eye(2), (5, -2), (5, -2)),
    ([[1, 1], [0, 2]], (1, 1), (2, 2)),
    (np.zeros((3, 2)), (7.0, -3.0), (0, 0, 0)),
])
def test_matvec(m, v, expected):
    np.testing.assert_array_equal(matvec(m, v), expected)


def test_matvec_mismatch():
    with pytest.raises(ValueError):
        matvec(np.eye(3), (1, 2))


def test_triangle_inequality(rng):
    pts = rng.normal(size=(1000, 3, 6)) * rng.uniform(0.01, 10, size=(1000, 1, 1))
    for a, b, c in pts:
        assert euclid(a, c) <= euclid(a, b) + euclid(b, c) + 1e-12


def test_rng_streams_reproducible():
    a = Rng(42).uniform(size=100_000)
    b = Rng(42).uniform(size=100_000)
    assert a.tobytes() == b.tobytes()
    assert Rng(42, stream=1).uniform(size=10).tobytes() != Rng(42).uniform(size=10).tobytes()


def test_rng_state_roundtrip():
    r = Rng(7, 3)
    r.normal(size=13)
    st_ = r.get_state()
    expect = r.normal(size=50)
    r2 = Rng.from_state(st_)
    assert r2.normal(size=50).tobytes() == expect.tobytes()
