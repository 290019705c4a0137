"""Source pretraining and the alternating conservative/promoting self-training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import clustering
from .clustering import PseudoLabeling
from .embeddings import Dataset, pairwise_euclidean
from .errors import EmptySelection, InvalidSpec, MissingLabels
from .losses import LossResult, classifier_loss, conservative_loss, ctl_loss, init_classifier, rtl_loss
from .metrics import evaluate, pseudo_label_accuracy, selection_ratio
from .model import SGD, Embedder, StageLearningRates, normalize_backward, normalize_forward, per_param_lr
from .reranking import RankingIndex, clamp_k, jaccard_matrix, ranking_matrix
from .sampling import pk_sample, select_rtl_triplets

log = logging.getLogger(__name__)

CLUSTERING_METHODS = ("hdbscan", "dbscan", "kmeans")


@dataclass
class AdaptConfig:
    margin: float = 0.3
    lam: float = 0.5
    eta: int = 20
    s_min: int = 10
    P: int = 16
    K: int = 4
    max_iter: int = 4
    epochs_conservative: int = 2
    epochs_promoting: int = 2
    k1: int = 20
    k2: int = 6
    jaccard_blend: float = 0.0
    clustering: str = "hdbscan"
    kmeans_k: int = 0  # 0: number of source identities
    dbscan_eps: float = 0.0  # 0: percentile heuristic
    dbscan_percentile: float = 90.0
    promoting: bool = True
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    rates: StageLearningRates = field(default_factory=StageLearningRates)

    def validate(self) -> None:
        if self.clustering not in CLUSTERING_METHODS:
            raise InvalidSpec(f"clustering must be one of {CLUSTERING_METHODS}")
        for name in ("eta", "s_min", "P", "K", "k1", "k2"):
            if getattr(self, name) <= 0:
                raise InvalidSpec(f"{name} must be positive")
        if self.margin < 0 or self.lam < 0:
            raise InvalidSpec("margin and lambda must be non-negative")
        if self.max_iter < 0 or self.epochs_conservative < 0 or self.epochs_promoting < 0:
            raise InvalidSpec("iteration and epoch counts must be >= 0")

    @property
    def batch_size(self) -> int:
        return self.P * self.K


@dataclass
class PretrainConfig:
    epochs: int = 40
    lr: float = 0.05
    batch_size: int = 64
    hidden: tuple[int, ...] = (64, 64)
    dim: int = 32
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0


@dataclass
class IterationLog:
    iteration: int
    num_clusters: int
    selected: int
    selection_ratio: float
    label_accuracy: float
    rank1: float
    mAP: float
    conservative_loss: float
    promoting_loss: float


# --------------------------------------------------------------------------


def extract_features(model: Embedder, dataset: Dataset) -> np.ndarray:
    return model.embed(dataset.features)


def _classifier_epochs(model, X, labels, W, epochs, batch_size, rng, lr, opt) -> float:
    """Mini-batch softmax training of ``model`` + classifier ``W`` (in place)."""
    n = X.shape[0]
    losses = []
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            rows = perm[start : start + batch_size]
            Z, cache = model.forward(X[rows])
            F, ncache = normalize_forward(Z)
            value, gF, gW = classifier_loss(F, W, labels[rows])
            grads = model.backward(cache, normalize_backward(ncache, gF))
            grads["classifier"] = gW
            params = dict(model.params, classifier=W)
            opt.step(params, grads, lr)
            model.touch()
            losses.append(value / len(rows))
    return float(np.mean(losses)) if losses else math.nan


def pretrain_source(source: Dataset, config: PretrainConfig | None = None) -> Embedder:
    """Supervised softmax training on source identities; the classifier is
    dropped afterwards."""
    config = config or PretrainConfig()
    if not source.has_identities:
        raise MissingLabels("source pretraining needs ground-truth identities")
    model = Embedder.create(source.dim, config.hidden, config.dim, seed=config.seed)
    if config.epochs == 0:
        return model
    labeling = PseudoLabeling.from_assignments(source.identities)
    W = init_classifier(clustering.cluster_means(model.embed(source.features), labeling))
    rng = np.random.default_rng(config.seed + 1)
    opt = SGD(config.momentum, config.weight_decay)
    lr = {name: config.lr for name in model.params}
    lr["classifier"] = config.lr
    _classifier_epochs(model, source.features, labeling.labels, W, config.epochs, config.batch_size, rng, lr, opt)
    return model


def pseudo_label(features: np.ndarray, jaccard: np.ndarray, config: AdaptConfig, num_source_ids: int = 0) -> PseudoLabeling:
    if config.clustering == "hdbscan":
        return clustering.hdbscan(jaccard, config.s_min)
    if config.clustering == "dbscan":
        eps = config.dbscan_eps or clustering.default_eps(jaccard, config.s_min, config.dbscan_percentile)
        return clustering.dbscan(jaccard, eps, config.s_min)
    k = config.kmeans_k or num_source_ids
    if k <= 0:
        raise InvalidSpec("k-means needs kmeans_k or the number of source identities")
    return clustering.kmeans(features, min(k, features.shape[0]), config.seed)


def conservative_stage(
    model: Embedder,
    target: Dataset,
    labeling: PseudoLabeling,
    ranking: RankingIndex,
    config: AdaptConfig,
    iteration: int,
    rng: np.random.Generator,
) -> float:
    n = len(target)
    P = min(config.P, labeling.num_clusters)
    eta = min(config.eta, (n - 1) // 2)
    batches = math.ceil(len(labeling.selected) / (P * config.K))
    lr = per_param_lr(model, config.rates.conservative(iteration))
    opt = SGD(config.momentum, config.weight_decay)
    losses = []
    for _ in range(config.epochs_conservative * batches):
        batch = pk_sample(labeling, P, config.K, rng)
        triplets = select_rtl_triplets(batch, ranking, eta, rng)
        uniq = np.unique(np.concatenate([batch.ids, triplets.positive, triplets.negative]))
        row_of = np.full(n, -1, dtype=np.int64)
        row_of[uniq] = np.arange(len(uniq))

        Z, cache = model.forward(target.features[uniq])
        F, ncache = normalize_forward(Z)
        rtl = rtl_loss(F, triplets, config.margin, eta, rows=row_of)
        ctl_grad = np.zeros_like(F)
        ctl_value = 0.0
        if P >= 2:
            anchor_rows = row_of[batch.ids]
            ctl = ctl_loss(F[anchor_rows], batch.labels, config.margin)
            np.add.at(ctl_grad, anchor_rows, ctl.grad)
            ctl_value = ctl.value
        total = conservative_loss(LossResult(ctl_value, ctl_grad), rtl, config.lam)
        grads = model.backward(cache, normalize_backward(ncache, total.grad))
        opt.step(model.params, grads, lr)
        model.touch()
        losses.append(total.value / len(batch))
    return float(np.mean(losses)) if losses else math.nan


def promoting_stage(
    model: Embedder,
    target: Dataset,
    labeling: PseudoLabeling,
    config: AdaptConfig,
    iteration: int,
    rng: np.random.Generator,
) -> float:
    selected = labeling.selected
    X = target.features[selected]
    labels = labeling.labels[selected]
    feats_u = model.embed(X)
    W = init_classifier(clustering.cluster_means(feats_u, PseudoLabeling(labels, labeling.num_clusters)))
    lr = per_param_lr(model, config.rates.promoting(iteration), {"classifier": "classifier"})
    opt = SGD(config.momentum, config.weight_decay)
    return _classifier_epochs(model, X, labels, W, config.epochs_promoting, config.batch_size, rng, lr, opt)


def run_past(
    model: Embedder,
    target: Dataset,
    config: AdaptConfig | None = None,
    query: Dataset | None = None,
    gallery: Dataset | None = None,
    num_source_ids: int = 0,
) -> tuple[Embedder, list[IterationLog]]:
    """Alternate conservative and promoting stages for ``config.max_iter``
    iterations, re-clustering the target set at the start of each one.

    ``model`` is left untouched; the adapted copy is returned. Target
    identities, when present, only feed the pseudo-label accuracy log.
    """
    config = config or AdaptConfig()
    config.validate()
    model = model.copy()
    rng = np.random.default_rng(config.seed)
    logs: list[IterationLog] = []
    n = len(target)
    for it in range(1, config.max_iter + 1):
        feats = extract_features(model, target)
        k1, k2 = clamp_k(n, config.k1, config.k2)
        jac = jaccard_matrix(pairwise_euclidean(feats), k1, k2, config.jaccard_blend)
        ranking = ranking_matrix(jac)
        labeling = pseudo_label(feats, jac, config, num_source_ids)
        if labeling.num_clusters == 0:
            raise EmptySelection(f"iteration {it}: clustering kept no samples (N={n}, s_min={config.s_min})")
        accuracy = pseudo_label_accuracy(labeling, target.identities) if target.has_identities else math.nan

        c_loss = conservative_stage(model, target, labeling, ranking, config, it, rng)
        p_loss = promoting_stage(model, target, labeling, config, it, rng) if config.promoting else math.nan

        rank1 = mean_ap = math.nan
        if query is not None and gallery is not None:
            res = evaluate(query, gallery, model, ranks=(1,))
            rank1, mean_ap = res.cmc[1], res.map_score
        entry = IterationLog(
            iteration=it,
            num_clusters=labeling.num_clusters,
            selected=len(labeling.selected),
            selection_ratio=selection_ratio(labeling),
            label_accuracy=accuracy,
            rank1=rank1,
            mAP=mean_ap,
            conservative_loss=c_loss,
            promoting_loss=p_loss,
        )
        log.info("iteration %d: C=%d |T_U|=%d acc=%.4f rank1=%.4f mAP=%.4f", it, entry.num_clusters,
                 entry.selected, accuracy, rank1, mean_ap)
        logs.append(entry)
    return model, logs


def write_iterations_csv(logs: list[IterationLog], path) -> None:
    names = list(IterationLog.__dataclass_fields__)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for entry in logs:
            writer.writerow([_fmt(v) for v in asdict(entry).values()])


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else v
