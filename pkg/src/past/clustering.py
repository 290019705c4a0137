"""Pseudo-label generation: HDBSCAN, DBSCAN and k-means on target samples."""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyCluster, InvalidEps, InvalidK, InvalidMinSamples

NOISE = -1


@dataclass
class PseudoLabeling:
    labels: np.ndarray
    num_clusters: int

    @classmethod
    def from_assignments(cls, raw) -> "PseudoLabeling":
        """Renumber arbitrary cluster keys to 0..C-1, ordered by each cluster's
        smallest member id. Negative keys are noise."""
        raw = np.asarray(raw, dtype=np.int64)
        labels = np.full(raw.shape[0], NOISE, dtype=np.int64)
        mapping: dict[int, int] = {}
        for i, key in enumerate(raw):
            if key < 0:
                continue
            if key not in mapping:
                mapping[int(key)] = len(mapping)
            labels[i] = mapping[int(key)]
        return cls(labels, len(mapping))

    @property
    def selected(self) -> np.ndarray:
        """Ids of clustered (non-noise) samples, i.e. the selected training set."""
        return np.flatnonzero(self.labels >= 0)

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.labels[self.labels >= 0], minlength=self.num_clusters)

    def __len__(self) -> int:
        return self.labels.shape[0]


def write_labels_csv(labeling: PseudoLabeling, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "pseudo_label"])
        for i, lab in enumerate(labeling.labels):
            writer.writerow([i, int(lab)])


# --------------------------------------------------------------------------
# HDBSCAN
# --------------------------------------------------------------------------


def core_distances(dist: np.ndarray, s_min: int) -> np.ndarray:
    """Distance to the ``s_min``-th nearest neighbor, counting the point itself."""
    n = dist.shape[0]
    k = min(s_min, n) - 1
    return np.partition(dist, k, axis=1)[:, k]


def mutual_reachability(dist: np.ndarray, s_min: int) -> np.ndarray:
    core = core_distances(dist, s_min)
    return np.maximum(np.maximum(core[:, None], core[None, :]), dist)


def prim_mst(weights: np.ndarray) -> np.ndarray:
    """Minimum spanning tree of a dense complete graph as an (N-1) x 3 array
    of (a, b, weight) rows in insertion order."""
    n = weights.shape[0]
    edges = np.zeros((max(n - 1, 0), 3))
    if n < 2:
        return edges
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = weights[0].astype(np.float64).copy()
    source = np.zeros(n, dtype=np.int64)
    for step in range(n - 1):
        cand = np.where(in_tree, np.inf, best)
        j = int(np.argmin(cand))
        edges[step] = (source[j], j, best[j])
        in_tree[j] = True
        better = (weights[j] < best) & ~in_tree
        best[better] = weights[j][better]
        source[better] = j
    return edges


def single_linkage(mst: np.ndarray, n: int) -> np.ndarray:
    """Merge list in scipy linkage layout: row k joins nodes (left, right) at
    height ``dist`` into node ``n + k`` of ``size`` points."""
    order = np.argsort(mst[:, 2], kind="stable")
    parent = np.arange(2 * n - 1)
    size = np.ones(2 * n - 1, dtype=np.int64)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    Z = np.zeros((max(n - 1, 0), 4))
    for k, e in enumerate(order):
        a, b, w = mst[e]
        ra, rb = find(int(a)), find(int(b))
        node = n + k
        parent[ra] = parent[rb] = node
        size[node] = size[ra] + size[rb]
        Z[k] = (ra, rb, w, size[node])
    return Z


@dataclass
class CondensedTree:
    """Condensed cluster hierarchy.

    Entry ``k`` of the parallel arrays records ``child`` leaving ``parent`` at
    density level ``lam[k]`` (1 / distance). Cluster nodes are numbered from
    ``n`` (the root) upward; children below ``n`` are single points dropping
    out of a cluster.
    """

    n: int
    parent: np.ndarray
    child: np.ndarray
    lam: np.ndarray
    child_size: np.ndarray
    stability: dict = field(default_factory=dict)
    selected: list = field(default_factory=list)

    @property
    def root(self) -> int:
        return self.n

    def cluster_ids(self) -> list[int]:
        return sorted({self.n} | {int(c) for c in self.child if c >= self.n})


def _leaves(Z: np.ndarray, n: int, node: int) -> list[int]:
    out, stack = [], [node]
    while stack:
        x = stack.pop()
        if x < n:
            out.append(x)
        else:
            row = Z[x - n]
            stack.extend((int(row[0]), int(row[1])))
    return out


def _lambda(d: float) -> float:
    return 1.0 / d if d > 0 else np.inf


def _split(Z: np.ndarray, n: int, node: int) -> list[int]:
    """Children of ``node`` after flattening merges made at the same height,
    so tied edges split a cluster in one step whatever their order."""
    height = Z[node - n, 2]
    out, stack = [], [int(Z[node - n, 1]), int(Z[node - n, 0])]
    while stack:
        c = stack.pop()
        if c >= n and Z[c - n, 2] == height:
            stack.extend((int(Z[c - n, 1]), int(Z[c - n, 0])))
        else:
            out.append(c)
    return out


def condense_tree(Z: np.ndarray, n: int, min_size: int) -> CondensedTree:
    rows: list[tuple[int, int, float, int]] = []
    if n >= 2:
        root = 2 * n - 2
        label = {root: n}
        next_label = n + 1
        queue = deque([root])
        while queue:
            node = queue.popleft()
            lam = _lambda(float(Z[node - n, 2]))
            parts = _split(Z, n, node)
            sizes = [1 if c < n else int(Z[c - n, 3]) for c in parts]
            big = [s >= min_size for s in sizes]
            cur = label[node]
            for c, s, keep in zip(parts, sizes, big):
                if not keep:
                    rows.extend((cur, p, lam, 1) for p in sorted(_leaves(Z, n, c)))
                elif sum(big) == 1:
                    label[c] = cur
                    queue.append(c)
                else:
                    label[c] = next_label
                    rows.append((cur, next_label, lam, s))
                    next_label += 1
                    queue.append(c)
    arr = np.array(rows, dtype=np.float64).reshape(-1, 4)
    tree = CondensedTree(
        n=n,
        parent=arr[:, 0].astype(np.int64),
        child=arr[:, 1].astype(np.int64),
        lam=arr[:, 2],
        child_size=arr[:, 3].astype(np.int64),
    )
    tree.stability = cluster_stability(tree)
    return tree


def cluster_stability(tree: CondensedTree) -> dict[int, float]:
    """Excess of mass per cluster: sum over departing children of
    (lambda_departure - lambda_birth) * size."""
    birth = {tree.root: 0.0}
    for c, lam in zip(tree.child, tree.lam):
        if c >= tree.n:
            birth[int(c)] = float(lam)
    stability = {c: 0.0 for c in birth}
    for p, lam, s in zip(tree.parent, tree.lam, tree.child_size):
        b = birth[int(p)]
        if lam != b:
            stability[int(p)] += (lam - b) * s
    return stability


def select_clusters(tree: CondensedTree) -> list[int]:
    """Excess-of-mass selection; the root is never a candidate."""
    stability = dict(tree.stability)
    children: dict[int, list[int]] = {c: [] for c in stability}
    for p, c in zip(tree.parent, tree.child):
        if c >= tree.n:
            children[int(p)].append(int(c))
    chosen = {c: True for c in stability if c != tree.root}
    for c in sorted(chosen, reverse=True):
        sub = sum(stability[ch] for ch in children[c])
        if sub > stability[c]:
            chosen[c] = False
            stability[c] = sub
        else:
            stack = list(children[c])
            while stack:
                d = stack.pop()
                chosen[d] = False
                stack.extend(children[d])
    return sorted(c for c, ok in chosen.items() if ok)


def label_points(tree: CondensedTree, selected) -> np.ndarray:
    up = {int(c): int(p) for p, c in zip(tree.parent, tree.child)}
    selected = set(selected)
    raw = np.full(tree.n, NOISE, dtype=np.int64)
    for point in range(tree.n):
        node = up.get(point)
        while node is not None:
            if node in selected:
                raw[point] = node
                break
            node = up.get(node)
    return raw


def hdbscan_tree(dist: np.ndarray, s_min: int) -> CondensedTree:
    if s_min < 2:
        raise InvalidMinSamples(f"s_min={s_min} must be >= 2")
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    mr = mutual_reachability(dist, s_min)
    Z = single_linkage(prim_mst(mr), n)
    tree = condense_tree(Z, n, s_min)
    tree.selected = select_clusters(tree)
    return tree


def hdbscan(dist: np.ndarray, s_min: int) -> PseudoLabeling:
    """HDBSCAN on a precomputed distance matrix with min_samples and
    min_cluster_size both equal to ``s_min``."""
    if s_min < 2:
        raise InvalidMinSamples(f"s_min={s_min} must be >= 2")
    n = np.asarray(dist).shape[0]
    if n < s_min:
        return PseudoLabeling(np.full(n, NOISE, dtype=np.int64), 0)
    tree = hdbscan_tree(dist, s_min)
    return PseudoLabeling.from_assignments(label_points(tree, tree.selected))


# --------------------------------------------------------------------------
# DBSCAN
# --------------------------------------------------------------------------


def default_eps(dist: np.ndarray, min_samples: int, percentile: float = 90.0) -> float:
    """Percentile of every sample's core distance (self counted)."""
    return float(np.percentile(core_distances(np.asarray(dist, dtype=np.float64), min_samples), percentile))


def dbscan(dist: np.ndarray, eps: float, min_samples: int) -> PseudoLabeling:
    if not eps > 0:
        raise InvalidEps(f"eps={eps} must be > 0")
    if min_samples < 1:
        raise InvalidMinSamples(f"min_samples={min_samples} must be >= 1")
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    neighbors = [np.flatnonzero(dist[i] <= eps) for i in range(n)]
    core = np.array([len(nb) >= min_samples for nb in neighbors], dtype=bool)
    raw = np.full(n, NOISE, dtype=np.int64)
    current = 0
    for i in range(n):
        if raw[i] != NOISE or not core[i]:
            continue
        raw[i] = current
        queue = deque([i])
        while queue:
            p = queue.popleft()
            if not core[p]:
                continue
            for q in neighbors[p]:
                if raw[q] == NOISE:
                    raw[q] = current
                    queue.append(q)
        current += 1
    return PseudoLabeling.from_assignments(raw)


# --------------------------------------------------------------------------
# k-means
# --------------------------------------------------------------------------


@dataclass
class KMeansResult:
    labeling: PseudoLabeling
    centroids: np.ndarray
    inertia_trace: list[float]
    iterations: int


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    return X[chosen].copy()


def _assign(X, centroids):
    d2 = np.sum((X[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(X.shape[0]), labels]


def kmeans_fit(features, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-6) -> KMeansResult:
    """Lloyd iterations from k-means++ seeds. ``inertia_trace`` records the
    inertia after every assignment step."""
    X = np.asarray(features, dtype=np.float64)
    n = X.shape[0]
    if k < 1 or k > n:
        raise InvalidK(f"k={k} must satisfy 1 <= k <= N={n}")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(X, k, rng)
    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        labels, d2 = _assign(X, centroids)
        trace.append(float(d2.sum()))
        new = centroids.copy()
        counts = np.bincount(labels, minlength=k)
        for c in range(k):
            if counts[c]:
                new[c] = X[labels == c].mean(axis=0)
        for c in np.flatnonzero(counts == 0):
            # reseed an empty cluster at the point worst served by its centroid
            far = int(np.argmax(d2))
            new[c] = X[far]
            d2[far] = 0.0
        shift = float(np.max(np.linalg.norm(new - centroids, axis=1)))
        centroids = new
        if shift < tol:
            break
    labels, d2 = _assign(X, centroids)
    trace.append(float(d2.sum()))
    labeling = PseudoLabeling.from_assignments(labels)
    centroids = cluster_means(X, labeling)
    return KMeansResult(labeling, centroids, trace, it)


def kmeans(features, k: int, seed: int = 0) -> PseudoLabeling:
    return kmeans_fit(features, k, seed).labeling


def cluster_means(features, labeling: PseudoLabeling) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    C = labeling.num_clusters
    if C < 1:
        raise EmptyCluster("no clusters to average")
    counts = labeling.cluster_sizes()
    if np.any(counts == 0):
        raise EmptyCluster(f"cluster {int(np.flatnonzero(counts == 0)[0])} has no members")
    sums = np.zeros((C, X.shape[1]))
    keep = labeling.labels >= 0
    np.add.at(sums, labeling.labels[keep], X[keep])
    return sums / counts[:, None]
