"""Class-incremental learning with synthetic-data distillation and replay."""

from .data import Dataset, LabelSpec, load_cifar100, make_gaussian_task, make_glyph_task
from .evaluation import RunReport, StepMetrics, average_incremental_accuracy, evaluate_step
from .memory import ReplayMemory, update_memory
from .nn import Network, SgdConfig, finite_diff_check, sgd_step
from .scenario import Scenario, build_scenario
from .synthetic import (
    GenerationParams,
    OfflineSource,
    OracleSource,
    RemoteSource,
    SyntheticStore,
    build_prompt,
    update_synthetic,
)
from .trainers import TrainerConfig, run_incremental

__version__ = "0.1.0"
