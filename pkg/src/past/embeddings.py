"""Embedding datasets, CSV storage and basic distance computations."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidSpec, ShapeMismatch, ZeroVectorRow

MISSING = -1


@dataclass
class Dataset:
    """Rows of ``features`` are samples ``0..N-1``.

    ``identities`` and ``cameras`` hold -1 where a sample carries no tag.
    """

    features: np.ndarray
    identities: np.ndarray
    cameras: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ShapeMismatch("features must be a 2-d array")
        n = self.features.shape[0]
        self.identities = _tags(self.identities, n, "identities")
        self.cameras = _tags(self.cameras, n, "cameras")
        if not np.all(np.isfinite(self.features)):
            raise InvalidSpec("features contain non-finite values")

    @classmethod
    def unlabeled(cls, features) -> "Dataset":
        n = len(features)
        return cls(features, np.full(n, MISSING), np.full(n, MISSING))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def ids(self) -> np.ndarray:
        return np.arange(len(self))

    @property
    def has_identities(self) -> bool:
        return len(self) > 0 and bool(np.all(self.identities >= 0))

    @property
    def has_cameras(self) -> bool:
        return len(self) > 0 and bool(np.all(self.cameras >= 0))

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.features[rows], self.identities[rows], self.cameras[rows])

    def with_features(self, features) -> "Dataset":
        return Dataset(features, self.identities.copy(), self.cameras.copy())


def _tags(values, n, name):
    if values is None:
        return np.full(n, MISSING, dtype=np.int64)
    arr = np.asarray(values, dtype=np.int64).reshape(-1)
    if arr.shape[0] != n:
        raise ShapeMismatch(f"{name} has {arr.shape[0]} entries for {n} samples")
    return arr


def l2_normalize(features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        bad = int(np.flatnonzero(norms[:, 0] < 1e-12)[0])
        raise ZeroVectorRow(f"row {bad} has (near) zero norm")
    return features / norms


def pairwise_euclidean(features: np.ndarray) -> np.ndarray:
    """Exact N x N Euclidean distances.

    Computed from explicit differences rather than the Gram expansion so that
    near-coincident rows do not suffer cancellation; the result is exactly
    symmetric with a zero diagonal.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    out = np.empty((n, n))
    for i in range(n):
        diff = features - features[i]
        out[i] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    np.fill_diagonal(out, 0.0)
    return out


def cosine_distance(query: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """1 - cosine similarity, clipped to [0, 2]."""
    q = l2_normalize(query)
    g = l2_normalize(gallery)
    if q.shape[1] != g.shape[1]:
        raise ShapeMismatch("query and gallery dimensions differ")
    return np.clip(1.0 - q @ g.T, 0.0, 2.0)


def write_csv(dataset: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "identity", "camera"] + [f"f{j}" for j in range(dataset.dim)])
        for i in range(len(dataset)):
            ident = dataset.identities[i]
            cam = dataset.cameras[i]
            writer.writerow(
                [i, "" if ident < 0 else int(ident), "" if cam < 0 else int(cam)]
                + [repr(float(v)) for v in dataset.features[i]]
            )


def read_csv(path) -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["id", "identity", "camera"]:
            raise InvalidSpec(f"{path}: expected header id,identity,camera,f0,...")
        dim = len(header) - 3
        if header[3:] != [f"f{j}" for j in range(dim)]:
            raise InvalidSpec(f"{path}: feature columns must be f0..f{dim - 1}")
        rows = list(reader)
    try:
        ids = [int(r[0]) for r in rows]
        identities = [int(r[1]) if r[1] != "" else MISSING for r in rows]
        cameras = [int(r[2]) if r[2] != "" else MISSING for r in rows]
        if any(len(r) != dim + 3 for r in rows):
            raise ValueError("ragged row")
        feats = np.array([[float(v) for v in r[3:]] for r in rows], dtype=np.float64).reshape(len(rows), dim)
    except (ValueError, IndexError) as exc:
        raise InvalidSpec(f"{path}: malformed row ({exc})") from None
    if ids != list(range(len(rows))):
        raise InvalidSpec(f"{path}: ids must be dense 0..N-1 in order")
    return Dataset(feats, identities, cameras)
