"""Retrieval evaluation (CMC / mAP) and pseudo-label quality."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import PseudoLabeling
from .embeddings import Dataset, cosine_distance
from .errors import MissingLabels, NoClusteredSamples, NoValidGallery


@dataclass
class RetrievalResult:
    cmc: dict[int, float]
    map_score: float
    num_valid: int
    skipped: int = 0
    ap: list[float] = field(default_factory=list, repr=False)

    def rank(self, r: int) -> float:
        return self.cmc[r]


def average_precision(hits: np.ndarray) -> float:
    """AP of a ranked boolean relevance vector."""
    pos = np.flatnonzero(hits)
    return float(np.mean((np.arange(len(pos)) + 1) / (pos + 1)))


def evaluate_distances(distmat, q_ids, g_ids, q_cams=None, g_cams=None, ranks=(1, 5, 10)) -> RetrievalResult:
    """Rank the gallery for each query by ascending distance (ties by gallery
    index). When camera tags are given, gallery entries sharing both identity
    and camera with the query are dropped."""
    distmat = np.asarray(distmat, dtype=np.float64)
    q_ids, g_ids = np.asarray(q_ids), np.asarray(g_ids)
    use_cams = q_cams is not None and g_cams is not None
    ranks = sorted(int(r) for r in ranks)
    first_hit, aps = [], []
    skipped = 0
    for qi in range(distmat.shape[0]):
        order = np.argsort(distmat[qi], kind="stable")
        if use_cams:
            junk = (g_ids[order] == q_ids[qi]) & (np.asarray(g_cams)[order] == q_cams[qi])
            order = order[~junk]
        hits = g_ids[order] == q_ids[qi]
        if not hits.any():
            skipped += 1
            continue
        first_hit.append(int(np.argmax(hits)))
        aps.append(average_precision(hits))
    if not aps:
        raise NoValidGallery("no query has a valid gallery match")
    first_hit = np.array(first_hit)
    cmc = {r: float(np.mean(first_hit < r)) for r in ranks}
    return RetrievalResult(cmc=cmc, map_score=float(np.mean(aps)), num_valid=len(aps), skipped=skipped, ap=aps)


def evaluate_features(q_feats, g_feats, query: Dataset, gallery: Dataset, ranks=(1, 5, 10)) -> RetrievalResult:
    if not (query.has_identities and gallery.has_identities):
        raise MissingLabels("query and gallery need ground-truth identities")
    cams = query.has_cameras and gallery.has_cameras
    return evaluate_distances(
        cosine_distance(q_feats, g_feats),
        query.identities,
        gallery.identities,
        query.cameras if cams else None,
        gallery.cameras if cams else None,
        ranks,
    )


def evaluate(query: Dataset, gallery: Dataset, model, ranks=(1, 5, 10)) -> RetrievalResult:
    """Embed both sets with ``model`` (None = use stored features as is) and rank by cosine distance."""
    if model is None:
        qf, gf = query.features, gallery.features
    else:
        qf, gf = model.embed(query.features), model.embed(gallery.features)
    return evaluate_features(qf, gf, query, gallery, ranks)


def write_results_csv(result: RetrievalResult, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "rank", "value"])
        for r, v in sorted(result.cmc.items()):
            writer.writerow(["cmc", r, repr(v)])
        writer.writerow(["mAP", "", repr(result.map_score)])
        writer.writerow(["valid_queries", "", result.num_valid])
        writer.writerow(["skipped_queries", "", result.skipped])


def pseudo_label_accuracy(labeling: PseudoLabeling, truth) -> float:
    """Share of clustered samples whose true identity is the majority identity
    of their cluster. Noise samples are ignored."""
    truth = np.asarray(truth)
    keep = labeling.labels >= 0
    if not keep.any():
        raise NoClusteredSamples("every sample is noise")
    correct = 0
    for c in range(labeling.num_clusters):
        members = truth[labeling.labels == c]
        _, counts = np.unique(members, return_counts=True)
        correct += counts.max()
    return correct / int(keep.sum())


def selection_ratio(labeling: PseudoLabeling) -> float:
    return float(np.mean(labeling.labels >= 0)) if len(labeling) else 0.0
