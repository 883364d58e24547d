import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mdpretrain.errors import DegenerateInput, ShapeError
from mdpretrain.metrics import (correlations, davies_bouldin, least_squares_fit, pca_project,
                                ranking_metrics, rmse, space_shift)


def brute_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def sort_ranks(values):
    """Average 1-based ranks by explicit sorting."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    k = 0
    while k < len(order):
        end = k
        while end + 1 < len(order) and values[order[end + 1]] == values[order[k]]:
            end += 1
        for m in range(k, end + 1):
            ranks[order[m]] = (k + end) / 2 + 1
        k = end + 1
    return ranks


def plain_pearson(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.corrcoef(a, b)[0, 1])


class TestRmse:
    def test_identical(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_hand(self):
        assert rmse([0, 0], [3, 4]) == pytest.approx(math.sqrt(12.5))

    @given(st.integers(0, 2**31 - 1))
    def test_joint_shuffle(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=20), rng.normal(size=20)
        p = rng.permutation(20)
        assert rmse(a[p], b[p]) == pytest.approx(rmse(a, b), rel=1e-14)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            rmse([1, 2], [1])


class TestCorrelations:
    def test_affine(self):
        x = np.array([0.3, 1.0, -2.0, 5.0])
        assert correlations(x, 2 * x + 1) == pytest.approx((1.0, 1.0))
        assert correlations(x, -x) == pytest.approx((-1.0, -1.0))

    def test_tied_ranks_hand_case(self):
        a, b = [1, 2, 2, 3], [4, 1, 1, 0]
        assert correlations(a, b)[1] == plain_pearson(sort_ranks(a), sort_ranks(b))

    def test_constant(self):
        with pytest.raises(DegenerateInput):
            correlations([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


class TestRanking:
    def test_separated(self):
        assert ranking_metrics([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == (1.0, 1.0)

    def test_hand_auroc(self):
        assert ranking_metrics([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])[0] == 0.75

    def test_hand_auprc(self):
        # ranking: 0.8 (+), 0.4 (-), 0.35 (+), 0.1 (-) -> AP = (1 + 2/3) / 2
        assert ranking_metrics([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])[1] == pytest.approx(5 / 6)

    @given(st.integers(0, 2**31 - 1), st.floats(-100, 100))
    def test_shift_invariant(self, seed, c):
        rng = np.random.default_rng(seed)
        s = rng.integers(0, 4, size=12).astype(float)
        y = np.array([0, 1] * 6)
        a, b = ranking_metrics(s, y), ranking_metrics(s + c, y)
        assert a[0] == b[0] and a[1] == pytest.approx(b[1], abs=1e-15)

    def test_single_class(self):
        with pytest.raises(DegenerateInput):
            ranking_metrics([0.1, 0.2], [1, 1])

    @given(st.integers(0, 2**31 - 1))
    def test_brute_force_with_ties(self, seed):
        rng = np.random.default_rng(seed)
        s = rng.integers(0, 5, size=15).astype(float)
        y = rng.integers(0, 2, size=15)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        assert abs(ranking_metrics(s, y)[0] - brute_auroc(s, y)) < 1e-12


class TestDaviesBouldin:
    def test_singletons(self):
        assert davies_bouldin([[0.0], [10.0]], [0, 1]) == 0.0

    def test_line(self):
        assert davies_bouldin([[0.0], [1.0], [10.0], [11.0]], [0, 0, 1, 1]) == pytest.approx(0.1)

    @given(st.integers(0, 2**31 - 1), st.floats(0.01, 100))
    def test_scale_invariant(self, seed, c):
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(12, 3))
        lab = np.arange(12) % 3
        assert davies_bouldin(pts * c, lab) == pytest.approx(davies_bouldin(pts, lab), rel=1e-10)

    def test_single_cluster(self):
        with pytest.raises(DegenerateInput):
            davies_bouldin([[0.0], [1.0]], [0, 0])


class TestSpaceShift:
    def test_zero(self):
        x = np.ones((3, 3))
        assert space_shift(x, x) == 0.0

    def test_hand(self):
        x = np.zeros((2, 3))
        assert space_shift(x, x + [1.0, 0, 0], 1, 1) == 1.0

    def test_quadratic(self, rng):
        x, d = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        assert space_shift(x, x + 2 * d) == pytest.approx(4 * space_shift(x, x + d))

    def test_count_mismatch(self):
        with pytest.raises(ShapeError):
            space_shift(np.zeros((3, 3)), np.zeros((3, 3)), 1, 1)


class TestFitAndPca:
    def test_exact_line(self):
        assert least_squares_fit([0, 1, 2, 3], [1, 3, 5, 7]) == pytest.approx((2.0, 1.0, 1.0))

    def test_constant_y(self):
        slope, _, r2 = least_squares_fit([0, 1, 2], [4, 4, 4])
        assert slope == 0.0 and r2 == 0.0

    def test_normal_equations(self):
        slope, intercept, _ = least_squares_fit([0, 1, 2], [0, 1, 3])
        assert slope == pytest.approx(1.5) and intercept == pytest.approx(-1 / 6)

    def test_collinear_variance(self):
        pts = np.outer(np.arange(6.0), [1.0, 2.0, -1.0])
        _, ratio = pca_project(pts, 2, return_variance=True)
        assert ratio[0] == pytest.approx(1.0)

    @given(st.integers(0, 2**31 - 1))
    def test_centred_output(self, seed):
        pts = np.random.default_rng(seed).normal(loc=5.0, size=(10, 4))
        assert np.abs(pca_project(pts, 3).mean(axis=0)).max() < 1e-12

    def test_eigen_oracle(self):
        pts = np.array([[2.0, 0.0, 1.0], [0.0, 1.0, 3.0], [1.0, 4.0, 0.0]])
        centred = pts - pts.mean(0)
        evals, evecs = np.linalg.eig(np.cov(pts.T))
        top = evecs[:, np.argsort(-evals.real)[:2]].real
        expected = centred @ top
        got = pca_project(pts, 2)
        for k in range(2):
            sign = np.sign(got[:, k] @ expected[:, k])
            np.testing.assert_allclose(got[:, k], sign * expected[:, k], atol=1e-12)
