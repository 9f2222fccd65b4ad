"""Incremental trainers and the distillation-and-replay training loop.

Per step: extend the head, train for ``epochs`` passes over ``D_t`` plus the
replay memory (mixing in a synthetic half-batch after the base step), then
update the memory, then extend the synthetic store, then evaluate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._rng import STREAM_AUGMENT, STREAM_BATCH, STREAM_SYNTH_BATCH, generator
from .data import augment
from .errors import ConfigurationError, TrainingError
from .evaluation import RunReport, StepMetrics, evaluate_step
from .losses import (
    SDDR_MODES,
    SYNTHETIC,
    LossBreakdown,
    LucirParams,
    finetune_loss,
    icarl_loss,
    lucir_loss,
    mode_masks,
)
from .memory import LabeledBatch, ReplayMemory, real_epoch, update_memory
from .nn import Network, SgdConfig, SgdState, sgd_step
from .synthetic import GenerationParams, SyntheticStore, sample_synthetic_batch, update_synthetic

log = logging.getLogger(__name__)

METHODS = ("icarl", "lucir", "finetune")
CLASSIFIERS = ("auto", "softmax", "nme")
# modes that add a synthetic half-batch after the base step
HALF_BATCH_MODES = ("distill", "distill_wo_new", "replay", "both")


@dataclass
class TrainerConfig:
    method: str = "lucir"
    sddr_mode: str = "off"
    epochs: int = 40
    real_batch_size: int = 128
    synth_batch_size: int = 128
    hidden: tuple[int, ...] = (32, 16)
    lucir: LucirParams = field(default_factory=LucirParams)
    sgd: SgdConfig = field(default_factory=SgdConfig)
    classifier: str = "auto"
    augment: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}")
        if self.sddr_mode not in SDDR_MODES:
            raise ConfigurationError(f"unknown sddr_mode {self.sddr_mode!r}")
        if self.classifier not in CLASSIFIERS:
            raise ConfigurationError(f"unknown classifier {self.classifier!r}")
        if self.epochs < 1 or self.real_batch_size < 1 or self.synth_batch_size < 1:
            raise ConfigurationError("epochs and batch sizes must be >= 1")

    @property
    def head(self) -> str:
        return "cosine" if self.method == "lucir" else "linear"

    @property
    def eval_classifier(self) -> str:
        if self.classifier != "auto":
            return self.classifier
        return "nme" if self.method == "icarl" else "softmax"

    @property
    def uses_store(self) -> bool:
        return self.sddr_mode != "off"


@dataclass
class MixedBatch:
    real: LabeledBatch
    synthetic: LabeledBatch | None = None

    @property
    def X(self) -> np.ndarray:
        if self.synthetic is None:
            return self.real.X
        return np.concatenate([self.real.X, self.synthetic.X])

    @property
    def y(self) -> np.ndarray:
        if self.synthetic is None:
            return self.real.y
        return np.concatenate([self.real.y, self.synthetic.y])

    @property
    def origin(self) -> np.ndarray:
        if self.synthetic is None:
            return self.real.origin
        return np.concatenate([self.real.origin, self.synthetic.origin])

    @property
    def n_synthetic(self) -> int:
        return int((self.origin == SYNTHETIC).sum())

    @property
    def n_real(self) -> int:
        return len(self.y) - self.n_synthetic


def assemble_batch(real: LabeledBatch, store: SyntheticStore | None, cfg: TrainerConfig, t: int, rng) -> MixedBatch:
    """Attach a synthetic half-batch when the mode uses it and ``t > 0``."""
    if t == 0 or cfg.sddr_mode not in HALF_BATCH_MODES:
        return MixedBatch(real)
    if store is None or len(store) == 0:
        raise ConfigurationError(f"sddr_mode {cfg.sddr_mode!r} at step {t} needs a nonempty synthetic store")
    return MixedBatch(real, sample_synthetic_batch(store, cfg.synth_batch_size, rng))


def epoch_batches(train, step_indices, memory, store, cfg: TrainerConfig, t: int, rng, synth_rng):
    """One epoch of mixed batches.

    In ``synthetic_memory`` mode stored synthetic samples stand in for the
    replay memory inside the shuffled pass instead of forming a half-batch.
    """
    if cfg.sddr_mode == "synthetic_memory" and t > 0 and store is not None and len(store):
        SX, Sy = store.flat()
        n_real = len(step_indices)
        pool_X = np.concatenate([train.X[step_indices], SX])
        pool_y = np.concatenate([train.y[step_indices], Sy])
        origin = np.concatenate([np.zeros(n_real, dtype=np.int8), np.full(len(Sy), SYNTHETIC, dtype=np.int8)])
        index = np.concatenate([np.asarray(step_indices, dtype=np.int64), np.arange(len(Sy))])
        perm = rng.permutation(len(pool_y))
        k = cfg.real_batch_size
        for s in range(0, len(perm), k):
            sel = perm[s : s + k]
            yield MixedBatch(LabeledBatch(pool_X[sel], pool_y[sel], origin[sel], index[sel]))
        return
    for real in real_epoch(train, step_indices, memory, cfg.real_batch_size, rng):
        yield assemble_batch(real, store, cfg, t, synth_rng)


def compute_loss(net: Network, snapshot: Network | None, X, cols, origin, cfg: TrainerConfig, t: int, old_count: int):
    """Forward pass plus the method loss; returns ``(forward, breakdown)``."""
    cls, dist, margin = mode_masks(cfg.sddr_mode, origin, t)
    fwd = net.forward(X)
    if cfg.method == "finetune":
        lb = finetune_loss(fwd.logits, cols, cls)
    elif cfg.method == "icarl":
        old = snapshot.forward(X).logits if t > 0 else None
        lb = icarl_loss(fwd.logits, old, cols, old_count if t > 0 else 0, cls, dist)
    else:
        old = snapshot.forward(X).features if t > 0 else None
        lb = lucir_loss(
            fwd.features, old, fwd.cos, net.head.eta[0], cols, cls, dist, margin,
            old_count if t > 0 else 0, cfg.lucir,
        )
    return fwd, lb


def train_step(
    net: Network,
    snapshot: Network | None,
    batch: MixedBatch,
    cfg: TrainerConfig,
    t: int,
    epoch: int,
    old_count: int,
    column_of: np.ndarray,
    state: SgdState,
) -> LossBreakdown:
    """One SGD update on a mixed batch."""
    if (snapshot is None) != (t == 0):
        raise ConfigurationError("a previous-step snapshot is required exactly when t > 0")
    cols = column_of[batch.y]
    fwd, lb = compute_loss(net, snapshot, batch.X, cols, batch.origin, cfg, t, old_count)
    grads = net.backward(fwd, lb.grad_logits, lb.grad_cos, lb.grad_features)
    sgd_step(net.parameters(), grads, cfg.sgd, state, epoch)
    net.apply_constraints()
    return lb


@dataclass
class RunResult:
    report: RunReport
    snapshots: list[Network]
    memory: ReplayMemory
    store: SyntheticStore | None


def run_incremental(
    scenario,
    train,
    test,
    cfg: TrainerConfig,
    *,
    m: int = 20,
    memory_policy: str = "herding",
    source=None,
    n: int = 500,
    gen_params: GenerationParams | None = None,
    seed: int = 0,
    workers: int | None = None,
    on_batch: Callable | None = None,
) -> RunResult:
    """Train through every step of ``scenario`` and evaluate after each one."""
    if train.dim != test.dim:
        raise ConfigurationError("train and test dimensions differ")
    unknown = set(scenario.class_order) - {s.class_id for s in train.labels}
    if unknown:
        raise ConfigurationError(f"scenario classes {sorted(unknown)} are not in the dataset")
    if cfg.sddr_mode == "synthetic_memory" and m != 0:
        raise ConfigurationError("synthetic_memory mode requires m = 0 real exemplars")
    if cfg.uses_store and source is None:
        raise ConfigurationError(f"sddr_mode {cfg.sddr_mode!r} needs a generative source")
    gen_params = gen_params or GenerationParams(seed=seed)

    column_of = np.full(max(scenario.class_order) + 1, -1, dtype=np.int64)
    for c, col in scenario.column_of().items():
        column_of[c] = col

    net = Network.build(train.dim, list(cfg.hidden), 0, head=cfg.head, seed=seed)
    memory = ReplayMemory(m, memory_policy)
    store = SyntheticStore(train.dim) if cfg.uses_store else None
    snapshots: list[Network] = []
    metrics: list[StepMetrics] = []
    snapshot = None

    for t, step in enumerate(scenario.steps):
        try:
            old_count = scenario.cumulative_count(t - 1) if t > 0 else 0
            net.extend_head(len(step.class_ids), seed)
            step_idx = scenario.train_indices(train, t)
            state = SgdState()
            rng = generator(STREAM_BATCH, seed, t)
            synth_rng = generator(STREAM_SYNTH_BATCH, seed, t)
            aug_rng = generator(STREAM_AUGMENT, seed, t)
            for epoch in range(cfg.epochs):
                for batch in epoch_batches(train, step_idx, memory, store, cfg, t, rng, synth_rng):
                    if cfg.augment and train.image_shape is not None:
                        batch = _augmented(batch, train.image_shape, aug_rng)
                    lb = train_step(net, snapshot, batch, cfg, t, epoch, old_count, column_of, state)
                    if on_batch is not None:
                        on_batch(t, epoch, batch, lb)
            update_memory(memory, train, step.class_ids, net, seed)
            if store is not None:
                specs = [train.label(c) for c in step.class_ids]
                update_synthetic(store, source, specs, n, gen_params, workers)
            metrics.append(
                evaluate_step(net, test, scenario, t, cfg.eval_classifier, memory, train)
            )
        except (ConfigurationError, TrainingError) as exc:
            raise type(exc)(f"step {t}: {exc}") from exc
        snapshot = net.copy()
        snapshots.append(snapshot)
        log.info("step %d: top1=%.4f", t, metrics[-1].top1_overall)

    report = RunReport(metrics, len(scenario.steps))
    return RunResult(report, snapshots, memory, store)


def _augmented(batch: MixedBatch, image_shape, rng) -> MixedBatch:
    def aug(b):
        if b is None:
            return None
        return LabeledBatch(augment(b.X, image_shape, rng), b.y, b.origin, b.index, b.with_replacement)

    return MixedBatch(aug(batch.real), aug(batch.synthetic))
