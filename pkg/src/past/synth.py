"""Synthetic source/target embedding data with a controllable domain shift.

Identity centres vary only inside a low-dimensional signal subspace while
camera offsets live in the complementary nuisance subspace. An embedder
trained on the source therefore learns to discard the nuisance directions.
The target domain is passed through a random linear map (rotation mix,
per-dimension gain and bias) that moves identity signal into those discarded
directions, which is what makes direct transfer degrade.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embeddings import Dataset
from .errors import InvalidSpec


@dataclass
class ShiftSpec:
    mix: float = 1.0  # 0 = no rotation, 1 = full random orthogonal map
    scale_range: tuple[float, float] = (0.5, 2.0)  # log-uniform per-dimension gain
    bias_scale: float = 1.0

    @classmethod
    def identity(cls) -> "ShiftSpec":
        return cls(mix=0.0, scale_range=(1.0, 1.0), bias_scale=0.0)


@dataclass
class SynthSpec:
    num_identities_source: int = 20
    num_identities_target: int = 15
    samples_per_identity: tuple[int, int] = (20, 20)
    holdout_per_identity: int = 8
    queries_per_identity: int = 2
    input_dim: int = 32
    signal_dims: int = 8
    identity_scale: float = 1.0
    noise_scale: float = 0.3
    camera_scale: float = 1.0
    camera_strength: tuple[float, float] = (1.0, 1.0)  # per-sample multiplier on the camera offset, uniform
    num_cameras: int = 4
    cameras_per_identity: int = 3
    shift: ShiftSpec = field(default_factory=ShiftSpec)
    seed: int = 0

    def validate(self) -> None:
        if self.num_identities_source < 2 or self.num_identities_target < 2:
            raise InvalidSpec("each domain needs at least 2 identities")
        if not self.noise_scale > 0:
            raise InvalidSpec("noise_scale must be > 0")
        lo, hi = self.samples_per_identity
        if lo < 1 or hi < lo:
            raise InvalidSpec("samples_per_identity must be a range lo <= hi with lo >= 1")
        if not 0 < self.signal_dims <= self.input_dim:
            raise InvalidSpec("signal_dims must lie in 1..input_dim")
        if not 0 <= self.camera_strength[0] <= self.camera_strength[1]:
            raise InvalidSpec("camera_strength must satisfy 0 <= lo <= hi")
        if not 1 <= self.cameras_per_identity <= self.num_cameras:
            raise InvalidSpec("cameras_per_identity must lie in 1..num_cameras")
        if not 0 <= self.queries_per_identity < self.holdout_per_identity:
            raise InvalidSpec("queries_per_identity must be smaller than holdout_per_identity")
        lo_s, hi_s = self.shift.scale_range
        if not 0 < lo_s <= hi_s:
            raise InvalidSpec("shift scale_range must satisfy 0 < lo <= hi")
        if not 0.0 <= self.shift.mix <= 1.0:
            raise InvalidSpec("shift mix must lie in [0, 1]")


@dataclass
class DomainShift:
    matrix: np.ndarray
    gain: np.ndarray
    bias: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (X * self.gain) @ self.matrix + self.bias


def random_orthogonal(dim: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    return q * np.sign(np.diag(r))


def draw_shift(spec: SynthSpec, rng: np.random.Generator) -> DomainShift:
    d = spec.input_dim
    Q = random_orthogonal(d, rng)
    # blend towards identity, then re-orthonormalize so the map stays well conditioned
    M = (1.0 - spec.shift.mix) * np.eye(d) + spec.shift.mix * Q
    if 0.0 < spec.shift.mix < 1.0:
        u, _, vt = np.linalg.svd(M)
        M = u @ vt
    lo, hi = spec.shift.scale_range
    gain = np.exp(rng.uniform(np.log(lo), np.log(hi), d))
    bias = rng.normal(0.0, spec.shift.bias_scale, d) if spec.shift.bias_scale > 0 else np.zeros(d)
    return DomainShift(M, gain, bias)


def _domain(spec: SynthSpec, n_ids: int, rng: np.random.Generator, extra: int = 0):
    d, s = spec.input_dim, spec.signal_dims
    camera_offsets = np.zeros((spec.num_cameras, d))
    camera_offsets[:, s:] = rng.normal(0.0, spec.camera_scale, (spec.num_cameras, d - s))
    feats, ids, cams, holdout = [], [], [], []
    lo, hi = spec.samples_per_identity
    for ident in range(n_ids):
        centre = np.zeros(d)
        centre[:s] = rng.normal(0.0, spec.identity_scale, s)
        seen = rng.choice(spec.num_cameras, size=spec.cameras_per_identity, replace=False)
        count = int(rng.integers(lo, hi + 1)) + extra
        cam = rng.choice(seen, size=count)
        lo_c, hi_c = spec.camera_strength
        # a fixed strength draws nothing so the random stream matches fixed offsets
        strength = rng.uniform(lo_c, hi_c, size=(count, 1)) if hi_c > lo_c else lo_c
        x = centre + strength * camera_offsets[cam] + rng.normal(0.0, spec.noise_scale, (count, d))
        feats.append(x)
        ids.append(np.full(count, ident))
        cams.append(cam)
        holdout.append(np.arange(count) >= count - extra)
    return np.concatenate(feats), np.concatenate(ids), np.concatenate(cams), np.concatenate(holdout)


def generate(spec: SynthSpec):
    """Return (source, target, query, gallery, shift).

    ``target`` is the unlabeled-in-use training split (identities kept for
    diagnostics only); query/gallery are disjoint held-out target samples.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    shift = draw_shift(spec, rng)
    sx, sid, scam, _ = _domain(spec, spec.num_identities_source, rng)
    tx, tid, tcam, held = _domain(spec, spec.num_identities_target, rng, extra=spec.holdout_per_identity)
    tx = shift.apply(tx)
    source = Dataset(sx, sid, scam)
    target = Dataset(tx[~held], tid[~held], tcam[~held])

    held_rows = np.flatnonzero(held)
    query_rows, gallery_rows = [], []
    for ident in range(spec.num_identities_target):
        rows = held_rows[tid[held_rows] == ident]
        # queries from distinct cameras where possible
        picked: list[int] = []
        for r in rows:
            if len(picked) < spec.queries_per_identity and tcam[r] not in tcam[picked]:
                picked.append(int(r))
        for r in rows:
            if len(picked) < spec.queries_per_identity and r not in picked:
                picked.append(int(r))
        query_rows.extend(picked)
        gallery_rows.extend(int(r) for r in rows if r not in picked)
    query = Dataset(tx[query_rows], tid[query_rows], tcam[query_rows])
    gallery = Dataset(tx[gallery_rows], tid[gallery_rows], tcam[gallery_rows])
    return source, target, query, gallery, shift
