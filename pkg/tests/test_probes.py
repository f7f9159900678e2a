import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hessmatch import probes as probes_mod
from hessmatch.errors import DimensionMismatch, ZeroVector
from hessmatch.numerics import GOLDEN, MASK64
from hessmatch.probes import frobenius_estimate, generate_probes, stream_seed


@settings(max_examples=50, deadline=None)
@given(st.integers(0, MASK64), st.integers(0, 10**9), st.integers(1, 12), st.integers(1, 30))
def test_probes_are_unit_and_deterministic(seed, t, K, d):
    a = generate_probes(seed, t, K, d)
    b = generate_probes(seed, t, K, d)
    assert a.vectors.shape == (K, d)
    np.testing.assert_allclose(np.linalg.norm(a.vectors, axis=1), 1.0, atol=1e-12)
    assert np.array_equal(a.vectors, b.vectors)
    assert a.seed == stream_seed(seed, t)


def test_stream_seed_mixing():
    assert stream_seed(0, 0) == 0
    assert stream_seed(5, 1) == 5 ^ GOLDEN
    assert stream_seed(0, 3) == (3 * GOLDEN) & MASK64


def test_d1_probes_are_signs():
    p = generate_probes(1, 2, 64, 1)
    assert set(np.unique(p.vectors)) <= {-1.0, 1.0}


def test_high_dimensional_probes_nearly_orthogonal():
    dots = []
    for t in range(100):
        a = generate_probes(17, 2 * t, 2, 10_000).vectors
        b = generate_probes(17, 2 * t + 1, 2, 10_000).vectors
        dots.append(abs(a[0] @ b[0]))
    assert np.mean(dots) < 0.05


def test_bad_arguments():
    with pytest.raises(ValueError):
        generate_probes(0, 0, 0, 3)
    with pytest.raises(ValueError):
        generate_probes(0, 0, 3, 0)


def test_zero_block_retries_then_fails(monkeypatch):
    calls = []
    real = probes_mod.standard_normals

    def zeros_then_real(state, count):
        calls.append(state)
        if len(calls) < 3:
            return state + 1, np.zeros(count)
        return real(state, count)

    monkeypatch.setattr(probes_mod, "standard_normals", zeros_then_real)
    p = generate_probes(0, 0, 2, 3)
    assert len(calls) == 3
    np.testing.assert_allclose(np.linalg.norm(p.vectors, axis=1), 1.0)

    monkeypatch.setattr(probes_mod, "standard_normals", lambda s, c: (s + 1, np.zeros(c)))
    with pytest.raises(ZeroVector):
        generate_probes(0, 0, 2, 3)


def test_frobenius_examples():
    V = generate_probes(3, 0, 8, 5).vectors
    assert frobenius_estimate(np.eye(5), V) == pytest.approx(5.0, abs=1e-13)
    H = np.diag([2.0, 0.0])
    assert frobenius_estimate(H, [[1.0, 0.0]]) == 8.0
    assert frobenius_estimate(H, [[0.0, 1.0]]) == 0.0
    assert frobenius_estimate(H, [[1.0, 0.0], [0.0, 1.0]]) == 4.0


def test_frobenius_dimension_checks():
    with pytest.raises(DimensionMismatch):
        frobenius_estimate(np.ones((2, 3)), [[1.0, 0.0, 0.0]])
    with pytest.raises(DimensionMismatch):
        frobenius_estimate(np.eye(3), [[1.0, 0.0]])


def test_frobenius_random_matrix(np_rng):
    H = np_rng.normal(size=(5, 5))
    # streams of nearby frame indices overlap with a one-draw lag, so frames
    # are spaced further apart than the 500 draws each one consumes
    V = np.concatenate([generate_probes(8, 1000 * t, 100, 5).vectors for t in range(1000)])
    assert frobenius_estimate(H, V) == pytest.approx(np.sum(H * H), rel=0.01)


def _per_frame_estimates(H, frames, seed):
    d = H.shape[0]
    return np.array([frobenius_estimate(H, generate_probes(seed, t, 8, d).vectors)
                     for t in range(frames)])


def test_unbiasedness_and_error_scaling(np_rng):
    H = np_rng.normal(size=(5, 5))
    est = _per_frame_estimates(H, 16_384, 21)
    exact = np.sum(H * H)
    sizes = np.array([4, 16, 64, 256])
    spreads = []
    for M in sizes:
        means = est[: (len(est) // M) * M].reshape(-1, M).mean(axis=1)
        spreads.append(means.std(ddof=1))
        # batch means centred on the exact value
        assert abs(means.mean() - exact) < 4 * means.std(ddof=1) / np.sqrt(len(means))
    slope = np.polyfit(np.log(sizes), np.log(spreads), 1)[0]
    assert abs(slope + 0.5) <= 0.1


def test_rotational_invariance_in_distribution(np_rng):
    H = np_rng.normal(size=(4, 4))
    Q, _ = np.linalg.qr(np_rng.normal(size=(4, 4)))
    a = _per_frame_estimates(H, 4000, 31)
    b = _per_frame_estimates(Q @ H @ Q.T, 4000, 32)
    se = np.sqrt(a.var() / len(a) + b.var() / len(b))
    assert abs(a.mean() - b.mean()) < 4 * se
    assert a.std() == pytest.approx(b.std(), rel=0.1)
