"""Incremental class partition: a base step followed by T incremental steps."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._rng import fisher_yates
from .errors import ConfigurationError

DEFAULT_SEED = 1993


@dataclass(frozen=True)
class StepSpec:
    index: int
    class_ids: tuple[int, ...]


@dataclass(frozen=True)
class Scenario:
    seed: int
    class_order: tuple[int, ...]
    steps: tuple[StepSpec, ...]

    @property
    def num_classes(self) -> int:
        return len(self.class_order)

    @property
    def num_incremental_steps(self) -> int:
        return len(self.steps) - 1

    def cumulative_count(self, t: int) -> int:
        """Number of classes seen up to and including step ``t``."""
        return sum(len(s.class_ids) for s in self.steps[: t + 1])

    def classes_up_to(self, t: int) -> tuple[int, ...]:
        return self.class_order[: self.cumulative_count(t)]

    @property
    def base_classes(self) -> tuple[int, ...]:
        return self.steps[0].class_ids

    def column_of(self) -> dict[int, int]:
        """Map class id to its output column (position in the class order)."""
        return {c: i for i, c in enumerate(self.class_order)}

    def train_indices(self, dataset, t: int) -> np.ndarray:
        return dataset.indices_of(self.steps[t].class_ids)

    def step_sizes(self) -> list[int]:
        return [len(s.class_ids) for s in self.steps]


def build_scenario(
    num_classes: int,
    num_incremental_steps: int,
    seed: int = DEFAULT_SEED,
    base_fraction: float | Fraction = Fraction(1, 2),
) -> Scenario:
    """Shuffle class ids, take ``ceil(C * base_fraction)`` as the base step and
    split the rest into T consecutive groups, the first ``r`` groups taking one
    extra class when the split is uneven."""
    C, T = num_classes, num_incremental_steps
    if C < 2 or T < 1:
        raise ConfigurationError(f"infeasible scenario: C={C}, T={T} (need C >= 2, T >= 1)")
    frac = Fraction(base_fraction).limit_denominator(10**6)
    base = math.ceil(C * frac)
    rest = C - base
    if base < 1 or rest < T:
        raise ConfigurationError(
            f"infeasible scenario: C={C}, T={T} leaves {rest} classes for {T} incremental steps"
        )
    order = tuple(fisher_yates(C, seed))
    q, r = divmod(rest, T)
    sizes = [base] + [q + 1 if i < r else q for i in range(T)]
    steps = []
    start = 0
    for t, size in enumerate(sizes):
        steps.append(StepSpec(t, order[start : start + size]))
        start += size
    return Scenario(seed, order, tuple(steps))


def format_table(scenario: Scenario) -> str:
    lines = ["step  n_classes  N_t  classes"]
    for s in scenario.steps:
        lines.append(
            f"{s.index:>4}  {len(s.class_ids):>9}  {scenario.cumulative_count(s.index):>3}  "
            + " ".join(str(c) for c in s.class_ids)
        )
    return "\n".join(lines)
