"""PK mini-batch construction and ranking-based triplet selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import PseudoLabeling
from .errors import EtaTooLarge, InvalidSpec, NotEnoughClusters
from .reranking import RankingIndex


@dataclass
class PKBatch:
    ids: np.ndarray  # P*K sample ids, grouped cluster by cluster
    labels: np.ndarray  # pseudo label of each entry
    P: int
    K: int

    def __len__(self) -> int:
        return self.ids.shape[0]


@dataclass
class RankedTriplets:
    """Column-wise triplets: ``positive = order[anchor, pos_rank]`` and
    ``negative = order[anchor, neg_rank]``."""

    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    pos_rank: np.ndarray
    neg_rank: np.ndarray

    def __len__(self) -> int:
        return self.anchor.shape[0]


def pk_sample(labeling: PseudoLabeling, P: int, K: int, rng_seed) -> PKBatch:
    """Draw P clusters without replacement and K members from each.

    Clusters smaller than K are sampled with replacement so the batch keeps
    its P x K shape. ``rng_seed`` may be an int or a numpy Generator.
    """
    if P < 1 or K < 2:
        raise InvalidSpec(f"need P >= 1 and K >= 2, got P={P}, K={K}")
    C = labeling.num_clusters
    if C < P:
        raise NotEnoughClusters(f"{C} clusters available, batch needs P={P}")
    rng = np.random.default_rng(rng_seed)
    clusters = np.sort(rng.choice(C, size=P, replace=False))
    ids, labels = [], []
    for c in clusters:
        members = np.flatnonzero(labeling.labels == c)
        pick = rng.choice(members, size=K, replace=len(members) < K)
        ids.append(pick)
        labels.append(np.full(K, c))
    return PKBatch(np.concatenate(ids), np.concatenate(labels), P, K)


def select_rtl_triplets(anchors, ranking: RankingIndex, eta: int, rng_seed) -> RankedTriplets:
    """For each anchor draw a positive uniformly from ranks 1..eta and a
    negative uniformly from ranks eta+1..2*eta of its ranking row."""
    anchors = np.asarray(getattr(anchors, "ids", anchors), dtype=np.int64)
    n = len(ranking)
    if eta < 1 or 2 * eta >= n:
        raise EtaTooLarge(f"eta={eta} needs 2*eta < N={n}")
    rng = np.random.default_rng(rng_seed)
    pos_rank = rng.integers(1, eta + 1, size=anchors.shape[0])
    neg_rank = rng.integers(eta + 1, 2 * eta + 1, size=anchors.shape[0])
    return RankedTriplets(
        anchor=anchors,
        positive=ranking.order[anchors, pos_rank],
        negative=ranking.order[anchors, neg_rank],
        pos_rank=pos_rank,
        neg_rank=neg_rank,
    )
