"""Small rectified MLP embedder with hand-written backprop and SGD."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import l2_normalize
from .errors import InvalidSpec, ShapeMismatch, StaleCache

CHECKPOINT_MAGIC = "# past-embedder-checkpoint v1"


@dataclass
class Cache:
    inputs: list  # input to each linear layer
    pre: list  # pre-activation of each hidden layer
    version: int


class Embedder:
    """input_dim -> hidden... -> dim. Hidden layers use ReLU, the final
    projection is linear.

    Parameters are ``W{i}`` (fan_in x fan_out) and ``b{i}``. The last layer
    forms the ``embedding`` group, every earlier layer the ``backbone`` group.
    """

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.num_layers = len(self.params) // 2
        for i in range(self.num_layers):
            if f"W{i}" not in self.params or f"b{i}" not in self.params:
                raise ShapeMismatch(f"missing parameters for layer {i}")
            if self.params[f"W{i}"].shape[1] != self.params[f"b{i}"].shape[0]:
                raise ShapeMismatch(f"layer {i}: weight/bias shapes disagree")
            if i and self.params[f"W{i}"].shape[0] != self.params[f"W{i - 1}"].shape[1]:
                raise ShapeMismatch(f"layer {i}: fan-in does not match previous layer")
        self.version = 0

    @classmethod
    def create(cls, input_dim: int, hidden=(64, 64), dim: int = 32, seed: int = 0) -> "Embedder":
        rng = np.random.default_rng(seed)
        sizes = [input_dim, *hidden, dim]
        params = {}
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            params[f"W{i}"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out))
            params[f"b{i}"] = np.zeros(fan_out)
        return cls(params)

    @property
    def input_dim(self) -> int:
        return self.params["W0"].shape[0]

    @property
    def dim(self) -> int:
        return self.params[f"W{self.num_layers - 1}"].shape[1]

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim] + [self.params[f"W{i}"].shape[1] for i in range(self.num_layers)]

    def group_of(self, name: str) -> str:
        return "embedding" if int(name[1:]) == self.num_layers - 1 else "backbone"

    def copy(self) -> "Embedder":
        return Embedder({k: v.copy() for k, v in self.params.items()})

    def touch(self) -> None:
        """Mark parameters as changed; caches from earlier forwards go stale."""
        self.version += 1

    def forward(self, X: np.ndarray):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ShapeMismatch(f"expected inputs of width {self.input_dim}, got {X.shape}")
        inputs, pre = [], []
        h = X
        for i in range(self.num_layers):
            inputs.append(h)
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            if i < self.num_layers - 1:
                pre.append(z)
                h = np.maximum(z, 0.0)
            else:
                h = z
        return h, Cache(inputs, pre, self.version)

    def backward(self, cache: Cache, grad_out: np.ndarray) -> dict[str, np.ndarray]:
        if cache.version != self.version:
            raise StaleCache("parameters changed since this forward pass")
        g = np.asarray(grad_out, dtype=np.float64)
        if g.shape != (cache.inputs[0].shape[0], self.dim):
            raise ShapeMismatch(f"upstream gradient has shape {g.shape}")
        grads = {}
        for i in reversed(range(self.num_layers)):
            grads[f"W{i}"] = cache.inputs[i].T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            if i:
                g = (g @ self.params[f"W{i}"].T) * (cache.pre[i - 1] > 0)
        return grads

    def embed(self, X: np.ndarray) -> np.ndarray:
        """L2-normalized embeddings, no cache kept."""
        return l2_normalize(self.forward(X)[0])


def normalize_forward(Z: np.ndarray):
    F = l2_normalize(Z)
    return F, (F, np.linalg.norm(Z, axis=1, keepdims=True))


def normalize_backward(cache, grad_F: np.ndarray) -> np.ndarray:
    F, norms = cache
    return (grad_F - F * np.sum(grad_F * F, axis=1, keepdims=True)) / norms


class SGD:
    """Momentum SGD with coupled weight decay:
    v <- mu * v + (g + wd * w);  w <- w - lr * v."""

    def __init__(self, momentum: float = 0.9, weight_decay: float = 5e-4):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: dict[str, float]) -> None:
        for name, g in grads.items():
            w = params[name]
            if g.shape != w.shape:
                raise ShapeMismatch(f"{name}: gradient {g.shape} vs parameter {w.shape}")
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(w)
            elif v.shape != w.shape:
                raise ShapeMismatch(f"{name}: momentum buffer {v.shape} vs parameter {w.shape}")
            v = self.momentum * v + (g + self.weight_decay * w)
            self.velocity[name] = v
            w -= lr[name] * v


@dataclass
class StageLearningRates:
    conservative_backbone: float = 1e-4
    conservative_embedding: float = 2e-4
    promoting_classifier: float = 1e-3
    promoting_other: float = 5e-5
    decay: float = 0.1
    decay_after: int = 3
    scale: float = 1.0  # common multiplier on all four rates

    def __post_init__(self):
        for name in ("conservative_backbone", "conservative_embedding", "promoting_classifier", "promoting_other"):
            if getattr(self, name) <= 0 or self.scale <= 0:
                raise InvalidSpec(f"learning rate {name} must be > 0")

    def factor(self, iteration: int) -> float:
        """Multiplier for 1-based ``iteration``."""
        return self.scale * (self.decay if iteration > self.decay_after else 1.0)

    def conservative(self, iteration: int) -> dict[str, float]:
        f = self.factor(iteration)
        return {"backbone": self.conservative_backbone * f, "embedding": self.conservative_embedding * f}

    def promoting(self, iteration: int) -> dict[str, float]:
        f = self.factor(iteration)
        return {
            "backbone": self.promoting_other * f,
            "embedding": self.promoting_other * f,
            "classifier": self.promoting_classifier * f,
        }


def per_param_lr(model: Embedder, group_lr: dict[str, float], extra: dict[str, str] | None = None) -> dict[str, float]:
    lr = {name: group_lr[model.group_of(name)] for name in model.params}
    for name, group in (extra or {}).items():
        lr[name] = group_lr[group]
    return lr


def save_checkpoint(model: Embedder, path) -> None:
    """Plain-text checkpoint; floats are written with repr() so loading is exact.

    Layout::

        # past-embedder-checkpoint v1
        layers <L>
        tensor <name> <rows> <cols>
        <cols floats>            (rows lines)
        ...
    Biases are stored as 1 x n tensors.
    """
    lines = [CHECKPOINT_MAGIC, f"layers {model.num_layers}"]
    for i in range(model.num_layers):
        for name in (f"W{i}", f"b{i}"):
            arr = np.atleast_2d(model.params[name])
            lines.append(f"tensor {name} {arr.shape[0]} {arr.shape[1]}")
            lines.extend(" ".join(repr(float(v)) for v in row) for row in arr)
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> Embedder:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != CHECKPOINT_MAGIC:
        raise InvalidSpec(f"{path}: not a v1 embedder checkpoint")
    params = {}
    try:
        layers = int(text[1].split()[1])
        pos = 2
        for _ in range(2 * layers):
            _, name, rows, cols = text[pos].split()
            rows, cols = int(rows), int(cols)
            block = [[float(v) for v in line.split()] for line in text[pos + 1 : pos + 1 + rows]]
            arr = np.array(block, dtype=np.float64).reshape(rows, cols)
            params[name] = arr[0] if name.startswith("b") else arr
            pos += 1 + rows
    except (IndexError, ValueError) as exc:
        raise InvalidSpec(f"{path}: corrupt checkpoint ({exc})") from None
    return Embedder(params)
