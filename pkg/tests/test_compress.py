"""Compression operators: unbiasedness, conic variance, wire format."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedsim.compress import (
    CertificationError,
    Compressor,
    certify_variance,
    compress,
    decompress,
    identity,
    rand_k,
)


def _enumerated_moments(c, x):
    """Exact E[Q(x)] and E||Q(x)-x||^2 over all k-subsets (oracle)."""
    scale = c.d / c.k
    mean = np.zeros(c.d)
    second = 0.0
    subsets = list(itertools.combinations(range(c.d), c.k))
    for subset in subsets:
        q = np.zeros(c.d)
        q[list(subset)] = x[list(subset)] * scale
        mean += q
        second += float((q - x) @ (q - x))
    return mean / len(subsets), second / len(subsets)


def test_descriptor_validation():
    with pytest.raises(ValueError, match="unknown compressor kind"):
        Compressor(kind="topk", d=4, k=2, omega=1.0)
    with pytest.raises(ValueError, match="1 <= k <= d"):
        rand_k(4, 5)
    with pytest.raises(ValueError, match="omega mismatch"):
        Compressor(kind="rand_k", d=4, k=2, omega=0.0)
    assert identity(7).omega == 0.0
    assert rand_k(10, 4).omega == pytest.approx(10 / 4 - 1)


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, 6, elements=st.floats(-100, 100, allow_nan=False)),
    st.integers(1, 6),
)
def test_rand_k_enumerated_unbiasedness_and_variance(x, k):
    c = rand_k(6, k)
    mean, second = _enumerated_moments(c, x)
    np.testing.assert_allclose(mean, x, atol=1e-12 * (1 + np.abs(x).max()))
    np.testing.assert_allclose(
        second, c.omega * float(x @ x), atol=1e-12 * (1 + float(x @ x))
    )


def test_identity_round_trips_exactly(rng):
    x = rng.standard_normal(9)
    c = identity(9)
    msg = compress(c, x, rng)
    assert msg.payload_floats == 9
    np.testing.assert_array_equal(decompress(msg, 9), x)


def test_rand_k_wire_format(rng):
    c = rand_k(12, 3)
    x = rng.standard_normal(12)
    msg = compress(c, x, rng)
    assert msg.payload_floats == 3
    assert len(msg.indices) == 3
    assert (np.diff(msg.indices) > 0).all()  # strictly increasing
    np.testing.assert_allclose(msg.values, x[msg.indices] * 4.0)
    dec = decompress(msg, 12)
    zero = np.setdiff1d(np.arange(12), msg.indices)
    assert (dec[zero] == 0.0).all()


def test_compress_shape_check_and_decompress_range_check(rng):
    with pytest.raises(ValueError, match="expected vector"):
        compress(rand_k(5, 2), np.zeros(4), rng)
    msg = compress(rand_k(5, 2), np.arange(5.0), rng)
    with pytest.raises(ValueError, match="out of range"):
        decompress(msg, 2)


def test_rand_k_subset_marginals_uniform(rng):
    # each coordinate is kept with probability k/d (Monte Carlo oracle)
    d, k, trials = 7, 3, 20_000
    c = rand_k(d, k)
    counts = np.zeros(d)
    x = np.ones(d)
    for _ in range(trials):
        counts[compress(c, x, rng).indices] += 1
    freq = counts / trials
    assert np.abs(freq - k / d).max() < 5 * np.sqrt((k / d) * (1 - k / d) / trials)


def test_compress_determinism_per_stream():
    c = rand_k(20, 4)
    x = np.arange(20.0)
    a = compress(c, x, np.random.default_rng(5))
    b = compress(c, x, np.random.default_rng(5))
    np.testing.assert_array_equal(a.indices, b.indices)
    np.testing.assert_array_equal(a.values, b.values)


def test_certify_variance_accepts_correct_compressors():
    for d, k in [(4, 1), (6, 3), (8, 8)]:
        worst, ok = certify_variance(rand_k(d, k))
        assert ok and worst == pytest.approx(d / k - 1, abs=1e-12)
    worst, ok = certify_variance(identity(30))
    assert ok and worst == 0.0
    # Monte Carlo branch for d > 8
    worst, ok = certify_variance(rand_k(50, 5), trials=2000)
    assert ok


def test_certify_variance_rejects_wrong_omega():
    # a descriptor built by hand with an inconsistent omega cannot exist, so
    # corrupt one structurally to exercise the failure path
    c = rand_k(5, 2)
    object.__setattr__(c, "omega", 0.1)
    with pytest.raises(CertificationError, match="exact variance"):
        certify_variance(c)
    with pytest.raises(ValueError):
        certify_variance(rand_k(4, 2), trials=0)
