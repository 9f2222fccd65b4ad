"""Top-1 accuracy with base/new breakdown and average incremental accuracy."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import kernels
from .errors import EvaluationError
from .memory import normalize_rows


@dataclass(frozen=True)
class Accuracy:
    correct: int
    total: int

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.correct, self.total) if self.total else Fraction(0)

    @property
    def value(self) -> float:
        return float(self.fraction)

    def __add__(self, other: "Accuracy") -> "Accuracy":
        return Accuracy(self.correct + other.correct, self.total + other.total)


@dataclass
class StepMetrics:
    step: int
    n_classes_seen: int
    overall: Accuracy
    base: Accuracy
    new: Accuracy
    per_class: dict[int, Accuracy] = field(default_factory=dict)

    @property
    def top1_overall(self) -> float:
        return self.overall.value

    @property
    def top1_base(self) -> float:
        return self.base.value

    @property
    def top1_new(self) -> float:
        return self.new.value


def average_incremental_accuracy(step_accuracies) -> float:
    """Mean of per-step top-1 accuracies, correctly rounded."""
    vals = list(step_accuracies)
    if not vals:
        raise EvaluationError("average incremental accuracy of an empty list")
    exact = sum((v.fraction if isinstance(v, Accuracy) else Fraction(v) for v in vals), Fraction(0))
    return float(exact / len(vals))


class RunReport:
    def __init__(self, steps: list[StepMetrics], num_steps: int | None = None):
        if num_steps is not None and len(steps) != num_steps:
            raise EvaluationError(f"report has {len(steps)} steps, scenario has {num_steps}")
        if not steps:
            raise EvaluationError("report needs at least one step")
        idx = [s.step for s in steps]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise EvaluationError("report steps must be strictly increasing")
        self.steps = list(steps)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def average_incremental_accuracy(self) -> float:
        return average_incremental_accuracy(s.overall for s in self.steps)

    def aia_so_far(self, t: int) -> float:
        return average_incremental_accuracy(s.overall for s in self.steps[: t + 1])

    @property
    def final_accuracy(self) -> float:
        return self.steps[-1].top1_overall


def score(step: int, y_true, y_pred, base_classes, n_classes_seen: int) -> StepMetrics:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        raise EvaluationError("empty test set")
    hit = y_true == y_pred
    per_class = {}
    for c in np.unique(y_true).tolist():
        sel = y_true == c
        per_class[int(c)] = Accuracy(int(hit[sel].sum()), int(sel.sum()))
    base_set = set(int(c) for c in base_classes)
    base = Accuracy(0, 0)
    new = Accuracy(0, 0)
    for c, acc in per_class.items():
        if c in base_set:
            base = base + acc
        else:
            new = new + acc
    return StepMetrics(step, n_classes_seen, Accuracy(int(hit.sum()), int(hit.size)), base, new, per_class)


def class_means(net, dataset, memory):
    """Normalised mean exemplar feature per class; classes without exemplars are skipped."""
    ids, means = [], []
    for c in sorted(memory.per_class):
        idx = memory.per_class[c]
        if not idx:
            continue
        f = normalize_rows(net.forward(dataset.X[np.asarray(idx)]).features)
        mu = f.mean(axis=0, keepdims=True)
        ids.append(c)
        means.append(normalize_rows(mu)[0])
    if not ids:
        raise EvaluationError("NME classifier has no class with exemplars")
    return np.asarray(ids, dtype=np.int64), np.ascontiguousarray(means)


def nme_classify(features, ids, means) -> np.ndarray:
    """Nearest normalised class mean; ties go to the lowest class id."""
    order = np.argsort(ids, kind="stable")
    ids = np.asarray(ids)[order]
    means = np.ascontiguousarray(np.asarray(means, dtype=np.float64)[order])
    F = np.ascontiguousarray(normalize_rows(np.atleast_2d(np.asarray(features, dtype=np.float64))))
    return ids[kernels.nearest_mean(F, means)]


def predict(net, X, class_order, classifier: str = "softmax", means=None) -> np.ndarray:
    fwd = net.forward(X)
    if classifier == "nme":
        if means is None:
            raise EvaluationError("NME classifier requires exemplar means")
        return nme_classify(fwd.features, *means)
    if classifier != "softmax":
        raise EvaluationError(f"unknown classifier {classifier!r}")
    cols = np.argmax(fwd.logits, axis=1)
    return np.asarray(class_order, dtype=np.int64)[cols]


def evaluate_step(
    net,
    test,
    scenario,
    t: int,
    classifier: str = "softmax",
    memory=None,
    train=None,
) -> StepMetrics:
    """Top-1 on the test samples of every class seen up to step ``t``."""
    seen = scenario.classes_up_to(t)
    idx = test.indices_of(seen)
    if idx.size == 0:
        raise EvaluationError(f"no test samples for classes seen by step {t}")
    means = class_means(net, train, memory) if classifier == "nme" else None
    pred = predict(net, test.X[idx], scenario.class_order, classifier, means)
    return score(t, test.y[idx], pred, scenario.base_classes, len(seen))
