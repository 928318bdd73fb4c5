import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pamc.errors import InvalidArgument
from pamc.linalg import (
    exact_svd,
    jacobi_svd,
    randomized_svd,
    singular_value_threshold,
    soft_threshold,
    svt_factors,
)
from pamc.tensor_core import SeededRng, numerical_rank


def _low_rank(gen, n, m, r):
    return gen.normal(size=(n, r)) @ gen.normal(size=(r, m))


# The Jacobi SVD is the oracle for every derived kernel, so it is checked
# first against hand-computed decompositions and against LAPACK.

def test_jacobi_known_values():
    s = jacobi_svd(np.array([[3.0, 0.0], [4.0, 5.0]])).singular_values
    assert s == pytest.approx([np.sqrt(45.0), np.sqrt(5.0)], abs=1e-12)
    s = jacobi_svd(np.array([[2.0, 0.0, 0.0], [0.0, -7.0, 0.0]])).singular_values
    assert s == pytest.approx([7.0, 2.0], abs=1e-14)


@pytest.mark.parametrize("shape", [(5, 5), (12, 7), (7, 12), (30, 30), (1, 6)])
def test_jacobi_matches_lapack_and_reconstructs(shape):
    m = np.random.default_rng(sum(shape)).normal(size=shape)
    res = jacobi_svd(m)
    assert res.singular_values == pytest.approx(np.linalg.svd(m, compute_uv=False), abs=1e-10)
    assert np.allclose(res.reconstruct(), m, atol=1e-10)
    k = min(shape)
    assert np.allclose(res.left_vectors.T @ res.left_vectors, np.eye(k), atol=1e-10)
    assert np.allclose(res.right_vectors.T @ res.right_vectors, np.eye(k), atol=1e-10)


def test_randomized_identity_and_zero():
    assert randomized_svd(np.eye(5), 5, rng=SeededRng(0)).singular_values == pytest.approx(np.ones(5))
    z = randomized_svd(np.zeros((6, 4)), 2, rng=SeededRng(0)).singular_values
    assert np.array_equal(z, np.zeros(2))


def test_randomized_recovers_rank_three_against_jacobi():
    m = _low_rank(np.random.default_rng(11), 50, 40, 3)
    res = randomized_svd(m, 3, rng=SeededRng(1))
    assert np.linalg.norm(res.reconstruct() - m) <= 1e-6 * np.linalg.norm(m)
    assert res.singular_values == pytest.approx(jacobi_svd(m).singular_values[:3], rel=1e-9)


def test_randomized_rank_budget_checked():
    with pytest.raises(InvalidArgument):
        randomized_svd(np.ones((4, 3)), 4)


def test_randomized_deterministic_and_warm_start():
    m = np.random.default_rng(2).normal(size=(40, 30))
    a = randomized_svd(m, 4, rng=SeededRng(5))
    b = randomized_svd(m, 4, rng=SeededRng(5))
    assert np.array_equal(a.singular_values, b.singular_values)
    warm = randomized_svd(m, 4, rng=SeededRng(6), warm_start=a)
    assert warm.singular_values == pytest.approx(a.singular_values, rel=1e-2)


def test_soft_threshold_examples():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-0.5, 1.0) == 0.0
    assert soft_threshold(0.0, 0.7) == 0.0
    with pytest.raises(InvalidArgument):
        soft_threshold(1.0, -1.0)


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(0, 1e3))
def test_soft_threshold_odd_and_lipschitz(x, y, tau):
    assert soft_threshold(-x, tau) == -soft_threshold(x, tau)
    assert abs(soft_threshold(x, tau) - soft_threshold(y, tau)) <= abs(x - y) * (1 + 1e-12) + 1e-9


def test_svt_diagonal():
    out = singular_value_threshold(np.diag([5.0, 1.0]), 2.0)
    assert np.allclose(out, np.diag([3.0, 0.0]), atol=1e-12)


def test_svt_zero_threshold_is_identity():
    m = np.random.default_rng(4).normal(size=(9, 6))
    out = singular_value_threshold(m, 0.0)
    assert np.linalg.norm(out - m) <= 1e-6 * np.linalg.norm(m)


def test_svt_at_second_singular_value_leaves_rank_one():
    m = np.random.default_rng(8).normal(size=(20, 15))
    tau = jacobi_svd(m).singular_values[1]
    assert numerical_rank(singular_value_threshold(m, tau)) == 1


@given(st.integers(0, 2**32 - 1), st.integers(2, 30), st.integers(2, 30), st.floats(0.0, 3.0))
def test_svt_singular_values_are_soft_thresholded(seed, n, m, tau):
    mat = np.random.default_rng(seed).normal(size=(n, m))
    out = singular_value_threshold(mat, tau, rng=SeededRng(seed))
    expected = np.maximum(jacobi_svd(mat).singular_values - tau, 0.0)
    got = jacobi_svd(out).singular_values
    assert got == pytest.approx(expected, abs=1e-6)


@pytest.mark.parametrize("tau", [0.5, 5.0, 20.0])
def test_randomized_svt_path_is_exact_on_large_matrices(tau):
    # min dimension above the dense cutoff, so rank doubling is exercised
    gen = np.random.default_rng(21)
    mat = _low_rank(gen, 80, 60, 6) + 0.3 * gen.normal(size=(80, 60))
    res = svt_factors(mat, tau, rank_hint=1, rng=SeededRng(3))
    expected = np.maximum(exact_svd(mat).singular_values - tau, 0.0)
    got = np.zeros_like(expected)
    got[: len(res.singular_values)] = res.singular_values
    assert got == pytest.approx(expected, abs=1e-6)
