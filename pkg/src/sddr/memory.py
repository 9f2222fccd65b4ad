"""Growing replay memory of real exemplars, filled by herding."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import kernels
from ._rng import STREAM_MEMORY, generator
from .errors import ConfigurationError
from .losses import EXEMPLAR, REAL
from .nn import EPS

POLICIES = ("herding", "random")


@dataclass
class LabeledBatch:
    X: np.ndarray
    y: np.ndarray  # class ids
    origin: np.ndarray  # REAL / EXEMPLAR / SYNTHETIC
    index: np.ndarray  # row in the source dataset or synthetic store
    with_replacement: bool = False

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class ReplayMemory:
    """Per-class lists of train-set sample indices; at most ``m`` per class."""

    m: int
    policy: str = "herding"
    per_class: dict[int, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if self.m < 0:
            raise ConfigurationError("memory size m must be >= 0")
        if self.policy not in POLICIES:
            raise ConfigurationError(f"unknown memory policy {self.policy!r}")

    def __len__(self) -> int:
        return sum(len(v) for v in self.per_class.values())

    def indices(self) -> np.ndarray:
        out = [i for c in sorted(self.per_class) for i in self.per_class[c]]
        return np.asarray(out, dtype=np.int64)

    def to_json(self) -> dict:
        return {str(c): list(map(int, v)) for c, v in sorted(self.per_class.items())}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=False)

    @classmethod
    def from_json(cls, obj: dict, m: int, policy: str = "herding") -> "ReplayMemory":
        return cls(m, policy, {int(c): [int(i) for i in v] for c, v in obj.items()})


def normalize_rows(F: np.ndarray) -> np.ndarray:
    return F / (np.sqrt((F * F).sum(axis=1, keepdims=True)) + EPS)


def herding(features: np.ndarray, k: int) -> np.ndarray:
    """Greedy picks keeping the running mean closest to the class mean.

    ``features`` are used as given (normalise them first). Ties resolve to
    the lowest row index. Returns row positions in pick order.
    """
    features = np.ascontiguousarray(features, dtype=np.float64)
    k = min(k, len(features))
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    return kernels.herding_select(features, k)


def update_memory(mem: ReplayMemory, dataset, class_ids, net, seed: int = 0) -> ReplayMemory:
    """Add exemplars for each new class; existing classes are never touched."""
    for c in class_ids:
        if c in mem.per_class:
            raise ConfigurationError(f"class {c} is already in memory")
    for c in class_ids:
        idx = np.flatnonzero(dataset.y == c)
        if idx.size == 0:
            raise ConfigurationError(f"class {c} has no training samples")
        k = min(mem.m, idx.size)
        if k == 0:
            mem.per_class[int(c)] = []
            continue
        if mem.policy == "herding":
            feats = normalize_rows(net.forward(dataset.X[idx]).features)
            picks = herding(feats, k)
        else:
            picks = generator(STREAM_MEMORY, seed, int(c)).choice(idx.size, size=k, replace=False)
        mem.per_class[int(c)] = idx[picks].tolist()
    return mem


def real_epoch(
    dataset,
    step_indices: np.ndarray,
    mem: ReplayMemory | None,
    k: int,
    rng: np.random.Generator,
) -> Iterator[LabeledBatch]:
    """One shuffled pass over ``D_t`` plus the memory, in batches of ``k``.

    The final batch may be short. Samples from ``D_t`` carry origin REAL and
    memory exemplars carry EXEMPLAR.
    """
    if k <= 0:
        raise ConfigurationError("batch size must be positive")
    mem_idx = mem.indices() if mem is not None else np.zeros(0, dtype=np.int64)
    pool = np.concatenate([np.asarray(step_indices, dtype=np.int64), mem_idx])
    origin = np.concatenate(
        [np.full(len(step_indices), REAL, dtype=np.int8), np.full(len(mem_idx), EXEMPLAR, dtype=np.int8)]
    )
    if pool.size == 0:
        raise ConfigurationError("no real samples: D_t and memory are both empty")
    perm = rng.permutation(pool.size)
    for start in range(0, pool.size, k):
        sel = perm[start : start + k]
        idx = pool[sel]
        yield LabeledBatch(dataset.X[idx], dataset.y[idx], origin[sel], idx)


def sample_real_batch(dataset, step_indices, mem, k, rng) -> LabeledBatch:
    """First batch of a fresh epoch over ``D_t`` and the memory."""
    return next(real_epoch(dataset, step_indices, mem, k, rng))
