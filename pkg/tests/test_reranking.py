import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import expanded_reciprocal, naive_jaccard
from past.embeddings import pairwise_euclidean
from past.errors import InvalidK
from past.reranking import (
    clamp_k,
    jaccard_from_encoding,
    jaccard_matrix,
    k_reciprocal_set,
    neighbor_order,
    ranking_matrix,
    write_jaccard_csv,
)


def _points(seed, n=8, d=3):
    return pairwise_euclidean(np.random.default_rng(seed).normal(size=(n, d)))


def test_two_points_are_mutual():
    D = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert set(k_reciprocal_set(D, 0, 1)) == {0, 1}
    assert set(k_reciprocal_set(D, 1, 1)) == {0, 1}


def test_far_point_is_singleton():
    x = np.vstack([np.random.default_rng(0).normal(0, 0.01, (6, 2)), [[50.0, 50.0]]])
    D = pairwise_euclidean(x)
    assert list(k_reciprocal_set(D, 6, 2)) == [6]
    assert set(expanded_reciprocal(D.tolist(), 6, 2)) == {6}


def test_sets_stay_inside_blobs():
    rng = np.random.default_rng(4)
    x = np.vstack([rng.normal(0, 0.1, (5, 2)), rng.normal(10, 0.1, (5, 2))])
    D = pairwise_euclidean(x)
    for i in range(10):
        got = set(k_reciprocal_set(D, i, 3).tolist())
        assert got == expanded_reciprocal(D.tolist(), i, 3)
        assert got <= (set(range(5)) if i < 5 else set(range(5, 10)))


@pytest.mark.parametrize("k1", [0, 8, 9])
def test_invalid_k1(k1):
    with pytest.raises(InvalidK):
        k_reciprocal_set(_points(0), 0, k1)


def test_invalid_k2():
    with pytest.raises(InvalidK):
        jaccard_matrix(_points(0), 3, 4)


def test_identical_and_disjoint_encodings():
    V = np.array([[0.5, 0.5, 0, 0], [0.5, 0.5, 0, 0], [0, 0, 0.3, 0.7]])
    J = jaccard_from_encoding(V)
    assert J[0, 1] == 0.0
    assert J[0, 2] == 1.0


def test_eight_points_match_naive_oracle():
    D = _points(5)
    np.testing.assert_allclose(jaccard_matrix(D, 4, 2), naive_jaccard(D.tolist(), 4, 2), atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 14))
def test_jaccard_properties(seed, n):
    D = _points(seed, n)
    k1, k2 = clamp_k(n, 5, 3)
    J = jaccard_matrix(D, k1, k2)
    np.testing.assert_allclose(J, J.T, atol=1e-9)
    assert np.all(np.diag(J) == 0)
    assert J.min() >= 0 and J.max() <= 1


def test_blend_mixes_original_distance():
    D = _points(6)
    J = jaccard_matrix(D, 4, 2)
    np.testing.assert_allclose(jaccard_matrix(D, 4, 2, blend=0.3), 0.7 * J + 0.3 * D, atol=1e-12)


def test_ranking_self_first_and_tie_order():
    J = np.array([[0.0, 0.5, 0.5, 0.2], [0.5, 0.0, 0.0, 0.5], [0.5, 0.0, 0.0, 0.5], [0.2, 0.5, 0.5, 0.0]])
    R = ranking_matrix(J)
    assert list(R.order[:, 0]) == [0, 1, 2, 3]
    assert list(R.order[0]) == [0, 3, 1, 2]
    assert list(R.order[2]) == [2, 1, 0, 3]


def test_ranking_matches_sort_oracle():
    A = np.random.default_rng(7).random((6, 6))
    J = (A + A.T) / 2
    np.fill_diagonal(J, 0)
    R = ranking_matrix(J)
    for i in range(6):
        assert list(R.order[i]) == sorted(range(6), key=lambda j: (j != i, J[i, j], j))
        np.testing.assert_array_equal(R.scores[i], np.sort(J[i]))


def test_neighbor_order_keeps_self_first_under_zero_ties():
    D = np.zeros((3, 3))
    assert list(neighbor_order(D)[2]) == [2, 0, 1]


def test_clamp_k():
    assert clamp_k(10, 20, 6) == (9, 6)
    assert clamp_k(4, 20, 6) == (3, 3)


def test_jaccard_csv_upper_triangle(tmp_path):
    J = jaccard_matrix(_points(8, 5), 3, 2)
    write_jaccard_csv(J, tmp_path / "j.csv")
    lines = (tmp_path / "j.csv").read_text().splitlines()
    assert lines[0] == "i,j,value" and len(lines) == 1 + 10
    i, j, v = lines[1].split(",")
    assert (i, j) == ("0", "1") and float(v) == J[0, 1]
