"""Experiment configuration, parameter sweeps and the fixed synthetic benchmark."""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .embeddings import Dataset
from .errors import ConfigError, InvalidSpec
from .model import Embedder, StageLearningRates
from .synth import ShiftSpec, SynthSpec
from .trainer import AdaptConfig, PretrainConfig, run_past

# config keys that differ from the dataclass field names
ALIASES = {
    "adapt": {"lambda": "lam", "m": "margin", "i_max": "max_iter", "clustering_method": "clustering"},
}


@dataclass
class ExperimentConfig:
    synth: SynthSpec = field(default_factory=SynthSpec)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)

    def set_seed(self, seed: int) -> None:
        self.synth.seed = self.pretrain.seed = self.adapt.seed = seed


def _section_target(cfg: ExperimentConfig, section: str):
    return {
        "synth": cfg.synth,
        "shift": cfg.synth.shift,
        "pretrain": cfg.pretrain,
        "adapt": cfg.adapt,
        "rates": cfg.adapt.rates,
    }.get(section)


def _coerce(raw: str, current, key: str):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            kind = type(current[0]) if current else float
            return tuple(kind(v) for v in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(current).__name__}") from None


def apply_setting(cfg: ExperimentConfig, key: str, value: str) -> None:
    """Set ``section.name`` from its string form, e.g. ``adapt.lambda``."""
    section, _, name = key.strip().partition(".")
    target = _section_target(cfg, section)
    if target is None or not name:
        raise ConfigError(f"unknown config key {key!r}")
    name = ALIASES.get(section, {}).get(name.lower(), name)
    if name not in {f.name for f in dataclasses.fields(target)} or name in ("shift", "rates"):
        raise ConfigError(f"unknown config key {key!r}")
    setattr(target, name, _coerce(value, getattr(target, name), key))


def parse_config(text: str, cfg: ExperimentConfig | None = None) -> ExperimentConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    cfg = cfg or ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        apply_setting(cfg, key, value)
    return cfg


def load_config(path=None, overrides=(), seed: int | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        parse_config(text, cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        apply_setting(cfg, *item.split("=", 1))
    if seed is not None:
        cfg.set_seed(seed)
    cfg.adapt.validate()
    return cfg


# -- sweeps ----------------------------------------------------------------

SWEEP_FIELDS = {"lambda": "lam", "s_min": "s_min", "eta": "eta"}
SWEEP_DEFAULTS = {
    "lambda": (0.1, 0.2, 0.5, 1.0, 2.0),
    "s_min": (5, 10, 15, 20),
    "eta": (5, 10, 15, 20, 25, 30, 35),
}


@dataclass
class SweepSpec:
    parameter: str
    values: tuple
    base: AdaptConfig = field(default_factory=AdaptConfig)

    def __post_init__(self):
        if self.parameter not in SWEEP_FIELDS:
            raise InvalidSpec(f"sweep parameter must be one of {sorted(SWEEP_FIELDS)}")
        if not self.values:
            raise InvalidSpec("sweep needs at least one value")
        cast = float if self.parameter == "lambda" else int
        self.values = tuple(cast(v) for v in self.values)


@dataclass
class SweepRow:
    value: float
    rank1: float
    mAP: float
    num_clusters: int


def run_sweep(sweep: SweepSpec, model: Embedder, target: Dataset, query: Dataset, gallery: Dataset,
              num_source_ids: int = 0) -> list[SweepRow]:
    """One full adaptation per value, all from the same model and seed.
    C is the cluster count of the last iteration."""
    rows = []
    for value in sweep.values:
        cfg = dataclasses.replace(sweep.base, **{SWEEP_FIELDS[sweep.parameter]: value},
                                  rates=dataclasses.replace(sweep.base.rates))
        _, logs = run_past(model, target, cfg, query, gallery, num_source_ids)
        last = logs[-1] if logs else None
        rows.append(SweepRow(value, last.rank1 if last else float("nan"), last.mAP if last else float("nan"),
                             last.num_clusters if last else 0))
    return rows


def write_sweep_csv(parameter: str, rows: list[SweepRow], path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([parameter, "rank1", "mAP", "C"])
        for r in rows:
            writer.writerow([r.value, repr(float(r.rank1)), repr(float(r.mAP)), r.num_clusters])


# -- benchmark -------------------------------------------------------------

BENCHMARK_SEED = 0


def benchmark_spec(seed: int = BENCHMARK_SEED) -> SynthSpec:
    """Synthetic domain-shift benchmark used by the end-to-end checks.

    Camera offsets are scaled per sample, so each identity is a connected
    arm-shaped cloud rather than a few separate camera blobs.
    """
    return SynthSpec(
        noise_scale=0.2,
        camera_scale=0.7,
        camera_strength=(0.0, 1.0),
        holdout_per_identity=12,
        queries_per_identity=4,
        shift=ShiftSpec(mix=0.5, bias_scale=1.0),
        seed=seed,
    )


def benchmark_adapt_config(seed: int = BENCHMARK_SEED, **overrides) -> AdaptConfig:
    """Default hyperparameters, S_min scaled to the 20-sample blobs, and the
    stage learning rates multiplied up for the small MLP."""
    base = dict(s_min=5, seed=seed, rates=StageLearningRates(scale=100.0))
    base.update(overrides)
    return AdaptConfig(**base)


def benchmark_config(seed: int = BENCHMARK_SEED) -> ExperimentConfig:
    return ExperimentConfig(benchmark_spec(seed), PretrainConfig(seed=seed), benchmark_adapt_config(seed))
