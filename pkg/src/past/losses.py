"""Training objectives with analytic gradients.

All triplet losses use plain (non-squared) Euclidean distance and are summed
over anchors. Hinges exactly at zero, and distances between coincident
points, contribute zero gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBatch, LabelOutOfRange, ShapeMismatch
from .sampling import RankedTriplets


@dataclass
class LossResult:
    value: float
    grad: np.ndarray  # w.r.t. batch features (B x d) or logits (B x C)


def _distance_and_unit(X: np.ndarray, i: np.ndarray, j: np.ndarray):
    diff = X[i] - X[j]
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    unit = np.zeros_like(diff)
    nz = d > 0
    unit[nz] = diff[nz] / d[nz, None]
    return d, unit


def triplet_hinge(X: np.ndarray, a, p, n, margins) -> LossResult:
    """sum_k [margin_k + |x_a - x_p| - |x_a - x_n|]_+ over index triples."""
    X = np.asarray(X, dtype=np.float64)
    a, p, n = (np.asarray(v, dtype=np.int64) for v in (a, p, n))
    d_ap, u_ap = _distance_and_unit(X, a, p)
    d_an, u_an = _distance_and_unit(X, a, n)
    arg = np.asarray(margins, dtype=np.float64) + d_ap - d_an
    active = arg > 0
    grad = np.zeros_like(X)
    ua, un = u_ap[active], u_an[active]
    np.add.at(grad, a[active], ua - un)
    np.add.at(grad, p[active], -ua)
    np.add.at(grad, n[active], un)
    return LossResult(float(arg[active].sum()), grad)


def hardest_pairs(X: np.ndarray, labels: np.ndarray):
    """Batch-hard mining: farthest same-label and nearest other-label partner
    of every anchor (first index on ties)."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    diff = X[:, None, :] - X[None, :, :]
    D = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    same = labels[:, None] == labels[None, :]
    pos_d = np.where(same & ~np.eye(len(labels), dtype=bool), D, -np.inf)
    neg_d = np.where(~same, D, np.inf)
    return np.argmax(pos_d, axis=1), np.argmin(neg_d, axis=1)


def ctl_loss(features: np.ndarray, labels, m: float = 0.3) -> LossResult:
    labels = np.asarray(labels)
    uniq, counts = np.unique(labels, return_counts=True)
    if len(uniq) < 2 or np.any(counts < 2):
        raise DegenerateBatch("each label needs >= 2 instances and >= 2 labels are required")
    if features.shape[0] != labels.shape[0]:
        raise ShapeMismatch("features and labels differ in length")
    pos, neg = hardest_pairs(features, labels)
    anchors = np.arange(labels.shape[0])
    return triplet_hinge(features, anchors, pos, neg, np.full(labels.shape[0], m))


def rtl_margins(pos_rank, neg_rank, m: float, eta: int) -> np.ndarray:
    return np.abs(np.asarray(pos_rank) - np.asarray(neg_rank)) / eta * m


def rtl_loss(features: np.ndarray, triplets: RankedTriplets, m: float = 0.3, eta: int = 20, rows=None) -> LossResult:
    """Ranking-based triplet loss with rank-gap scaled margins.

    ``rows`` maps sample ids to rows of ``features`` (array indexed by id or a
    dict); by default the sample id is the row.
    """
    if rows is None:
        lookup = lambda ids: np.asarray(ids)  # noqa: E731
    elif isinstance(rows, dict):
        lookup = lambda ids: np.array([rows[int(i)] for i in ids], dtype=np.int64)  # noqa: E731
    else:
        rows = np.asarray(rows)
        lookup = lambda ids: rows[np.asarray(ids)]  # noqa: E731
    margins = rtl_margins(triplets.pos_rank, triplets.neg_rank, m, eta)
    return triplet_hinge(
        features, lookup(triplets.anchor), lookup(triplets.positive), lookup(triplets.negative), margins
    )


def conservative_loss(ctl: LossResult, rtl: LossResult, lam: float = 0.5) -> LossResult:
    if ctl.grad.shape != rtl.grad.shape:
        raise ShapeMismatch(f"CTL grad {ctl.grad.shape} vs RTL grad {rtl.grad.shape}")
    return LossResult(rtl.value + lam * ctl.value, rtl.grad + lam * ctl.grad)


def softmax_ce_loss(logits: np.ndarray, labels) -> LossResult:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    B, C = logits.shape
    if labels.shape[0] != B:
        raise ShapeMismatch("logits and labels differ in length")
    if np.any(labels < 0) or np.any(labels >= C):
        raise LabelOutOfRange(f"labels must lie in [0, {C})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_prob = shifted[np.arange(B), labels] - log_norm
    grad = np.exp(shifted - log_norm[:, None])
    grad[np.arange(B), labels] -= 1.0
    return LossResult(float(-log_prob.sum()), grad)


def init_classifier(means: np.ndarray) -> np.ndarray:
    """Classifier weights (d x C) whose column c is the mean feature of cluster c."""
    return np.array(np.asarray(means, dtype=np.float64).T, order="C")


def classifier_loss(features: np.ndarray, W: np.ndarray, labels):
    """Softmax cross-entropy of ``features @ W``. Returns (loss, d_features, d_W)."""
    res = softmax_ce_loss(features @ W, labels)
    return res.value, res.grad @ W.T, features.T @ res.grad
