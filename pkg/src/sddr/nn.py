"""Small dense networks with hand-written backward passes.

The layer menu is fixed: dense layers (relu or identity) followed by either a
linear head or a cosine-normalised head with a learnable scale. Everything is
float64 so analytic gradients can be checked tightly against finite
differences.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import kernels
from ._rng import STREAM_INIT, generator
from .errors import ConfigurationError, TrainingError

EPS = 1e-12
ETA_INIT = 10.0
ETA_FLOOR = 0.01


def as_tensor(x, name: str = "tensor") -> np.ndarray:
    """Copy external data into a C-contiguous float64 array; reject NaN/Inf."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} contains non-finite values")
    return arr


def glorot_uniform(fan_in: int, fan_out: int, shape: tuple[int, ...], *key: int) -> np.ndarray:
    bound = np.sqrt(6.0 / max(fan_in + fan_out, 1))
    return generator(STREAM_INIT, *key).uniform(-bound, bound, size=shape)


@dataclass
class DenseLayer:
    weight: np.ndarray  # [in, out]
    bias: np.ndarray  # [out]
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ("relu", "identity"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ConfigurationError("dense layer weight/bias shapes do not chain")

    @property
    def relu(self) -> bool:
        return self.activation == "relu"


@dataclass
class LinearHead:
    weight: np.ndarray  # [num_classes, feature_dim]
    bias: np.ndarray  # [num_classes]
    kind: str = field(default="linear", init=False)

    def parameters(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, F):
        return F @ self.weight.T + self.bias, None

    def backward(self, F, cos, grad_logits, grad_cos):
        dF = grad_logits @ self.weight
        return dF, {"weight": grad_logits.T @ F, "bias": grad_logits.sum(axis=0)}

    def append_rows(self, rows: np.ndarray) -> None:
        self.weight = np.vstack([self.weight, rows])
        self.bias = np.concatenate([self.bias, np.zeros(rows.shape[0])])

    def apply_constraints(self) -> None:
        pass


@dataclass
class CosineHead:
    """Scores ``eta * cos(f, w_c)``; norms carry a 1e-12 guard."""

    weight: np.ndarray  # [num_classes, feature_dim]
    eta: np.ndarray = field(default_factory=lambda: np.array([ETA_INIT]))
    kind: str = field(default="cosine", init=False)

    def __post_init__(self):
        self._check_rows(self.weight)

    @staticmethod
    def _check_rows(w):
        if w.shape[0] and np.any(np.sqrt((w * w).sum(axis=1)) == 0.0):
            raise ConfigurationError("cosine head weight rows must have nonzero norm")

    def parameters(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "eta": self.eta}

    def forward(self, F):
        cos = kernels.cosine_forward(F, self.weight, EPS)
        return self.eta[0] * cos, cos

    def backward(self, F, cos, grad_logits, grad_cos):
        dcos = self.eta[0] * grad_logits
        if grad_cos is not None:
            dcos = dcos + grad_cos
        dF, dW = kernels.cosine_backward(F, self.weight, cos, dcos, EPS)
        return dF, {"weight": dW, "eta": np.array([float((grad_logits * cos).sum())])}

    def append_rows(self, rows: np.ndarray) -> None:
        self._check_rows(rows)
        self.weight = np.vstack([self.weight, rows])

    def apply_constraints(self) -> None:
        if self.eta[0] < ETA_FLOOR:
            self.eta[0] = ETA_FLOOR


class Forward(NamedTuple):
    features: np.ndarray
    logits: np.ndarray
    cos: np.ndarray | None
    cache: tuple


class Network:
    def __init__(self, layers: list[DenseLayer], head: LinearHead | CosineHead):
        for a, b in zip(layers, layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise ConfigurationError("consecutive layer dimensions do not chain")
        if head.weight.shape[1] != layers[-1].weight.shape[1]:
            raise ConfigurationError("head width does not match feature dimension")
        self.layers = layers
        self.head = head

    @classmethod
    def build(
        cls,
        in_dim: int,
        hidden: list[int] | tuple[int, ...],
        num_classes: int = 0,
        head: str = "cosine",
        seed: int = 0,
        feature_activation: str | None = None,
    ) -> "Network":
        """Glorot-initialised network; layer ``i`` is seeded by ``(seed, i)``.

        The last hidden layer is the feature layer. Its activation defaults to
        identity under a cosine head (signed features) and relu otherwise.
        """
        if not hidden:
            raise ConfigurationError("at least one hidden layer is required")
        if head not in ("cosine", "linear"):
            raise ConfigurationError(f"unknown head {head!r}")
        if feature_activation is None:
            feature_activation = "identity" if head == "cosine" else "relu"
        dims = [in_dim, *hidden]
        layers = []
        for i, (a, b) in enumerate(zip(dims, dims[1:])):
            act = feature_activation if i == len(hidden) - 1 else "relu"
            layers.append(DenseLayer(glorot_uniform(a, b, (a, b), seed, i), np.zeros(b), act))
        F = dims[-1]
        h = CosineHead(np.zeros((0, F))) if head == "cosine" else LinearHead(np.zeros((0, F)), np.zeros(0))
        net = cls(layers, h)
        net._seed = seed
        if num_classes:
            net.extend_head(num_classes)
        return net

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def num_classes(self) -> int:
        return self.head.weight.shape[0]

    def extend_head(self, n_new: int, seed: int | None = None) -> None:
        """Append ``n_new`` class rows; existing rows are left untouched."""
        if n_new <= 0:
            return
        seed = getattr(self, "_seed", 0) if seed is None else seed
        F = self.feature_dim
        start = self.num_classes
        rows = glorot_uniform(F, n_new, (n_new, F), seed, len(self.layers), start)
        self.head.append_rows(rows)

    def parameters(self) -> dict[str, np.ndarray]:
        params = {}
        for i, layer in enumerate(self.layers):
            params[f"layers.{i}.weight"] = layer.weight
            params[f"layers.{i}.bias"] = layer.bias
        for k, v in self.head.parameters().items():
            params[f"head.{k}"] = v
        return params

    def forward(self, X) -> Forward:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.in_dim:
            raise ConfigurationError(
                f"batch width {X.shape[-1] if X.ndim else 0} does not match network input {self.in_dim}"
            )
        cache = []
        A = X
        for layer in self.layers:
            Z, A_next = kernels.dense_forward(A, layer.weight, layer.bias, layer.relu)
            cache.append((A, Z))
            A = A_next
        logits, cos = self.head.forward(A)
        return Forward(A, logits, cos, tuple(cache))

    def backward(self, fwd: Forward, grad_logits=None, grad_cos=None, grad_features=None):
        """Parameter gradients given upstream gradients on the outputs."""
        B = fwd.features.shape[0]
        if grad_logits is None:
            grad_logits = np.zeros((B, self.num_classes))
        dF, head_grads = self.head.backward(fwd.features, fwd.cos, grad_logits, grad_cos)
        if grad_features is not None:
            dF = dF + grad_features
        grads = {f"head.{k}": v for k, v in head_grads.items()}
        dA = np.ascontiguousarray(dF)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            X, Z = fwd.cache[i]
            dA, dW, db = kernels.dense_backward(X, layer.weight, Z, dA, layer.relu)
            grads[f"layers.{i}.weight"] = dW
            grads[f"layers.{i}.bias"] = db
        return grads

    def apply_constraints(self) -> None:
        self.head.apply_constraints()

    def copy(self) -> "Network":
        return copy.deepcopy(self)


@dataclass
class SgdConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    schedule: list[tuple[int, float]] = field(default_factory=lambda: [(25, 0.1), (35, 0.1)])

    def lr_at(self, epoch: int) -> float:
        lr = self.learning_rate
        for e, mult in self.schedule:
            if e <= epoch:
                lr *= mult
        return lr


@dataclass
class SgdState:
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(params: dict, grads: dict, cfg: SgdConfig, state: SgdState, epoch: int):
    """In-place momentum SGD: ``v = mu*v + g + wd*p``, ``p -= lr*v``."""
    lr = cfg.lr_at(epoch)
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise TrainingError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
        v = state.velocity.get(name)
        if v is None or v.shape != p.shape:
            v = np.zeros_like(p)
        v = cfg.momentum * v + g
        if cfg.weight_decay:
            v = v + cfg.weight_decay * p
        state.velocity[name] = v
        p -= lr * v
    return params, state


def finite_diff_check(net, loss_fn: Callable, batch, h: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(net, batch)`` must return ``(loss, grads)`` with ``grads`` keyed
    like ``net.parameters()``. Relative error uses the denominator
    ``max(|analytic|, |numeric|, 1e-8)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    _, grads = loss_fn(net, batch)
    worst = 0.0
    for name, p in net.parameters().items():
        g = grads[name]
        flat = p.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn(net, batch)[0]
            flat[i] = orig - h
            lm = loss_fn(net, batch)[0]
            flat[i] = orig
            num = (lp - lm) / (2.0 * h)
            ana = gflat[i]
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
