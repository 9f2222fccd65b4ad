"""iCaRL-style and LUCIR-style incremental losses with per-term sample masks.

Every loss returns a :class:`LossBreakdown` holding the term values, the masks
that selected the contributing samples, and the gradients with respect to
the network outputs (logits, raw cosines, features).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigurationError, TrainingError
from .nn import EPS

REAL = 0
EXEMPLAR = 1
SYNTHETIC = 2

SDDR_MODES = ("off", "distill", "distill_wo_new", "replay", "both", "synthetic_memory")


@dataclass
class LossBreakdown:
    classification: float
    distillation: float
    margin: float
    total: float
    cls_mask: np.ndarray
    dist_mask: np.ndarray
    margin_mask: np.ndarray
    grad_logits: np.ndarray | None = None
    grad_cos: np.ndarray | None = None
    grad_features: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def check_finite(self) -> None:
        for name in ("classification", "distillation", "margin", "total"):
            if not math.isfinite(getattr(self, name)):
                raise TrainingError(f"non-finite {name} loss")


def mode_masks(mode: str, origin: np.ndarray, t: int):
    """Classification, distillation and margin masks for an ablation mode.

    ``origin`` holds REAL / EXEMPLAR / SYNTHETIC codes per sample. At t = 0
    synthetic samples never enter any term and nothing is distilled.
    """
    if mode not in SDDR_MODES:
        raise ConfigurationError(f"unknown sddr_mode {mode!r}")
    origin = np.asarray(origin)
    real = origin != SYNTHETIC
    synth = origin == SYNTHETIC
    exemplar = origin == EXEMPLAR
    every = real | synth
    none = np.zeros_like(real)
    if t == 0:
        return real.copy(), none, none.copy()
    if mode == "off":
        cls, dist = real, real
    elif mode == "distill":
        cls, dist = real, every
    elif mode == "distill_wo_new":
        cls, dist = real, exemplar | synth
    elif mode == "replay":
        cls, dist = every, real
    else:  # both, synthetic_memory
        cls, dist = every, every
    return cls.copy(), dist.copy(), exemplar.copy()


def _log_sigmoid_pair(z):
    """Return (softplus(z), sigmoid(z)) computed stably."""
    return np.logaddexp(0.0, z), 0.5 * (1.0 + np.tanh(0.5 * z))


def icarl_loss(logits, old_logits, labels, old_class_count, cls_mask, dist_mask) -> LossBreakdown:
    """Per-class sigmoid BCE with soft old-model targets on old columns.

    For each sample in the distillation mask, columns ``j < old_class_count``
    are pulled to ``sigmoid(old_logit_j)``; remaining columns of samples in
    the classification mask get one-hot targets. Terms are summed over
    columns and averaged over the samples present in either mask.
    """
    B, C = logits.shape
    cls_mask = np.asarray(cls_mask, dtype=bool)
    dist_mask = np.asarray(dist_mask, dtype=bool)
    if old_logits is None:
        if old_class_count:
            raise ConfigurationError("old_class_count > 0 requires old logits")
        dist_mask = np.zeros(B, dtype=bool)
    elif old_logits.shape != (B, old_class_count):
        raise ConfigurationError("old logits shape does not match old class count")

    onehot = np.zeros((B, C))
    onehot[np.arange(B), labels] = 1.0
    target = onehot.copy()
    distilled = np.zeros((B, C), dtype=bool)
    if old_class_count and dist_mask.any():
        _, q = _log_sigmoid_pair(old_logits)
        distilled[:, :old_class_count] = dist_mask[:, None]
        target[:, :old_class_count] = np.where(dist_mask[:, None], q, target[:, :old_class_count])
    classified = cls_mask[:, None] & ~distilled

    sp, sig = _log_sigmoid_pair(logits)
    bce = sp - target * logits
    count = int((cls_mask | dist_mask).sum())
    denom = max(count, 1)
    cls_term = float(np.where(classified, bce, 0.0).sum()) / denom
    dist_term = float(np.where(distilled, bce, 0.0).sum()) / denom
    grad = np.where(classified | distilled, sig - target, 0.0) / denom
    out = LossBreakdown(
        classification=cls_term,
        distillation=dist_term,
        margin=0.0,
        total=cls_term + dist_term,
        cls_mask=cls_mask.copy(),
        dist_mask=dist_mask.copy(),
        margin_mask=np.zeros(B, dtype=bool),
        grad_logits=grad,
    )
    out.check_finite()
    return out


def softmax_ce(logits, labels, mask):
    """Mean cross-entropy over masked rows and its gradient on the logits."""
    B, C = logits.shape
    grad = np.zeros_like(logits)
    n = int(mask.sum())
    if n == 0 or C == 0:
        return 0.0, grad
    z = logits[mask]
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    y = labels[mask]
    loss = float((lse - z[np.arange(n), y]).sum()) / n
    p = np.exp(z - lse[:, None])
    p[np.arange(n), y] -= 1.0
    grad[mask] = p / n
    return loss, grad


@dataclass
class LucirParams:
    lambda_base: float = 5.0
    margin: float = 0.5
    top_k: int = 2


def lucir_lambda(lambda_base: float, n_old: int, n_new: int) -> float:
    return lambda_base * math.sqrt(n_old / n_new)


def lucir_loss(
    features,
    old_features,
    cos,
    eta,
    labels,
    cls_mask,
    dist_mask,
    margin_mask,
    old_class_count: int,
    params: LucirParams,
) -> LossBreakdown:
    """Cosine-softmax CE + feature distillation + margin ranking.

    ``total = CE + lambda_t * mean(1 - cos(f, f_old)) + margin`` where the
    margin term averages the hinge over (exemplar, hardest new negative)
    pairs. ``cos`` holds the unscaled cosines; logits are ``eta * cos``.
    """
    B, C = cos.shape
    cls_mask = np.asarray(cls_mask, dtype=bool)
    dist_mask = np.asarray(dist_mask, dtype=bool)
    margin_mask = np.asarray(margin_mask, dtype=bool)
    if old_features is None:
        if old_class_count:
            raise ConfigurationError("old_class_count > 0 requires old features")
        dist_mask = np.zeros(B, dtype=bool)
        margin_mask = np.zeros(B, dtype=bool)

    ce, grad_logits = softmax_ce(eta * cos, labels, cls_mask)

    grad_features = np.zeros_like(features)
    dist = 0.0
    lam = 0.0
    n_dist = int(dist_mask.sum())
    n_new = C - old_class_count
    if n_dist and old_class_count:
        if n_new <= 0:
            raise ConfigurationError("distillation requires at least one new class")
        lam = lucir_lambda(params.lambda_base, old_class_count, n_new)
        f = features[dist_mask]
        g = old_features[dist_mask]
        rf = np.sqrt((f * f).sum(axis=1))
        rg = np.sqrt((g * g).sum(axis=1))
        nf = rf + EPS
        ng = rg + EPS
        c = (f * g).sum(axis=1) / nf / ng
        dist = float((1.0 - c).sum()) / n_dist
        # d(1 - c)/df = -(g/(nf ng) - c f/(nf |f|))
        uf = np.divide(f, (nf * rf)[:, None], out=np.zeros_like(f), where=rf[:, None] > 0)
        dc = g / (nf * ng)[:, None] - c[:, None] * uf
        grad_features[dist_mask] = -lam * dc / n_dist

    margin = 0.0
    grad_cos = np.zeros_like(cos)
    if margin_mask.any() and old_class_count:
        if np.any(labels[margin_mask] >= old_class_count):
            raise ConfigurationError("margin ranking applies to old-class exemplars only")
        loss_sum, pairs, g = kernels.margin_ranking(
            cos, labels.astype(np.int64), margin_mask, old_class_count, params.margin, params.top_k
        )
        if pairs:
            margin = loss_sum / pairs
            grad_cos = g / pairs

    out = LossBreakdown(
        classification=ce,
        distillation=dist,
        margin=margin,
        total=ce + lam * dist + margin,
        cls_mask=cls_mask.copy(),
        dist_mask=dist_mask.copy(),
        margin_mask=margin_mask.copy(),
        grad_logits=grad_logits,
        grad_cos=grad_cos,
        grad_features=grad_features,
        extras={"lambda": lam},
    )
    out.check_finite()
    return out


def finetune_loss(logits, labels, cls_mask) -> LossBreakdown:
    ce, grad = softmax_ce(logits, labels, np.asarray(cls_mask, dtype=bool))
    B = logits.shape[0]
    out = LossBreakdown(
        classification=ce,
        distillation=0.0,
        margin=0.0,
        total=ce,
        cls_mask=np.asarray(cls_mask, dtype=bool).copy(),
        dist_mask=np.zeros(B, dtype=bool),
        margin_mask=np.zeros(B, dtype=bool),
        grad_logits=grad,
    )
    out.check_finite()
    return out
