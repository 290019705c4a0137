"""k-reciprocal encoding: Jaccard distance matrix and per-sample rankings."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidK, InvalidSpec


@dataclass
class RankingIndex:
    """``order[i]`` lists sample ids by ascending Jaccard distance to ``i``;
    ``scores[i]`` holds the matching sorted distances."""

    order: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return self.order.shape[0]


def neighbor_order(dist: np.ndarray) -> np.ndarray:
    """Row-wise argsort of ``dist`` with the sample itself always first and
    remaining ties broken by ascending id."""
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    cols = np.broadcast_to(np.arange(n), (n, n))
    not_self = cols != np.arange(n)[:, None]
    return np.lexsort((cols, not_self, dist), axis=-1)


def _reciprocal(rank: np.ndarray, i: int, k: int) -> np.ndarray:
    forward = rank[i, : k + 1]
    backward = rank[forward, : k + 1]
    return np.sort(forward[np.any(backward == i, axis=1)])


def _check_k1(n: int, k1: int) -> None:
    if k1 <= 0 or k1 >= n:
        raise InvalidK(f"k1={k1} must satisfy 0 < k1 < N={n}")


def k_reciprocal_set(dist: np.ndarray, i: int, k1: int, *, rank: np.ndarray | None = None) -> np.ndarray:
    """Expanded k-reciprocal neighbor set of sample ``i`` (sorted ids, ``i`` included)."""
    n = dist.shape[0]
    _check_k1(n, k1)
    if rank is None:
        rank = neighbor_order(dist)
    half = math.ceil(k1 / 2)
    return _expand(_reciprocal(rank, i, k1), lambda q: _reciprocal(rank, q, half))


def _expand(base, half_set) -> np.ndarray:
    # absorb a neighbor's half-size reciprocal set when >= 2/3 of it is already in base
    expanded = [base]
    for q in base:
        cand = half_set(int(q))
        if 3 * len(np.intersect1d(cand, base)) >= 2 * len(cand):
            expanded.append(cand)
    return np.unique(np.concatenate(expanded))


def encode(dist: np.ndarray, k1: int, k2: int) -> np.ndarray:
    """Sparse neighborhood encodings V (one row per sample, dense storage).

    Row ``i`` carries Gaussian weights exp(-dist) on its expanded reciprocal
    set, normalized to unit sum, then averaged over its ``k2`` nearest
    neighbors (self included) as local query expansion.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    _check_k1(n, k1)
    if k2 <= 0 or k2 > k1:
        raise InvalidK(f"k2={k2} must satisfy 0 < k2 <= k1={k1}")
    rank = neighbor_order(dist)
    half = math.ceil(k1 / 2)
    half_sets = [_reciprocal(rank, q, half) for q in range(n)]
    V = np.zeros((n, n))
    for i in range(n):
        members = _expand(_reciprocal(rank, i, k1), half_sets.__getitem__)
        w = np.exp(-dist[i, members])
        V[i, members] = w / w.sum()
    if k2 > 1:
        V = V[rank[:, :k2]].mean(axis=1)
    return V


def jaccard_from_encoding(V: np.ndarray) -> np.ndarray:
    n = V.shape[0]
    totals = V.sum(axis=1)
    out = np.empty((n, n))
    for i in range(n):
        support = np.flatnonzero(V[i])
        shared = np.minimum(V[:, support], V[i, support]).sum(axis=1)
        union = totals[i] + totals - shared
        out[i] = 1.0 - shared / union
    np.fill_diagonal(out, 0.0)
    return np.clip(out, 0.0, 1.0)


def jaccard_matrix(dist: np.ndarray, k1: int = 20, k2: int = 6, blend: float = 0.0) -> np.ndarray:
    """Pairwise fuzzy Jaccard distance between k-reciprocal encodings.

    ``blend`` mixes in the original distance: (1 - blend) * jaccard + blend * dist.
    """
    if not 0.0 <= blend <= 1.0:
        raise InvalidSpec("blend must lie in [0, 1]")
    jac = jaccard_from_encoding(encode(dist, k1, k2))
    if blend:
        jac = (1.0 - blend) * jac + blend * np.asarray(dist, dtype=np.float64)
        np.fill_diagonal(jac, 0.0)
    return jac


def clamp_k(n: int, k1: int, k2: int) -> tuple[int, int]:
    """Shrink (k1, k2) so that k2 <= k1 <= N - 1."""
    k1 = max(1, min(k1, n - 1))
    return k1, max(1, min(k2, k1))


def ranking_matrix(jaccard: np.ndarray) -> RankingIndex:
    order = neighbor_order(jaccard)
    scores = np.take_along_axis(np.asarray(jaccard, dtype=np.float64), order, axis=1)
    return RankingIndex(order=order, scores=scores)


def write_jaccard_csv(jaccard: np.ndarray, path) -> None:
    n = jaccard.shape[0]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["i", "j", "value"])
        for i in range(n):
            for j in range(i + 1, n):
                writer.writerow([i, j, repr(float(jaccard[i, j]))])
