"""Experiment configuration: JSON in, validated and fully defaulted.

Validation collects every problem before reporting, each one naming its key
path (``synthetic.params.guidance_scale``). Unknown keys are errors.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .losses import SDDR_MODES, LucirParams
from .memory import POLICIES
from .nn import SgdConfig
from .synthetic import GenerationParams
from .trainers import CLASSIFIERS, METHODS, TrainerConfig

TASK_KINDS = ("gaussian", "glyph", "cifar100")
BACKENDS = ("oracle", "offline", "remote")

_INT = (int,)
_NUM = (int, float)

# section -> key -> (default, accepted types, nullable)
SCHEMA: dict = {
    "task": {
        "kind": ("gaussian", (str,), False),
        "dim": (8, _INT, False),
        "separation": (6.0, _NUM, False),
        "per_class_train": (500, _INT, False),
        "per_class_test": (100, _INT, False),
        "seed": (None, _INT, True),
        "image_side": (16, _INT, False),
        "shift": (0.15, _NUM, False),
        "rotation_deg": (10.0, _NUM, False),
        "noise": (0.1, _NUM, False),
        "train_path": (None, (str,), True),
        "test_path": (None, (str,), True),
        "labels_path": (None, (str,), True),
    },
    "scenario": {
        "num_classes": (10, _INT, False),
        "num_steps": (5, _INT, False),
        "seed": (1993, _INT, False),
        "base_fraction": (0.5, _NUM, False),
    },
    "trainer": {
        "method": ("lucir", (str,), False),
        "sddr_mode": ("off", (str,), False),
        "epochs": (40, _INT, False),
        "real_batch_size": (128, _INT, False),
        "synth_batch_size": (128, _INT, False),
        "hidden": ([32, 16], (list,), False),
        "classifier": ("auto", (str,), False),
        "augment": (False, (bool,), False),
        "lucir": {
            "lambda_base": (5.0, _NUM, False),
            "margin": (0.5, _NUM, False),
            "top_k": (2, _INT, False),
        },
        "sgd": {
            "learning_rate": (0.05, _NUM, False),
            "momentum": (0.9, _NUM, False),
            "weight_decay": (1e-4, _NUM, False),
            "schedule": ([[25, 0.1], [35, 0.1]], (list,), False),
        },
    },
    "memory": {
        "m": (20, _INT, False),
        "policy": ("herding", (str,), False),
    },
    "synthetic": {
        "backend": ("oracle", (str,), False),
        "n": (500, _INT, False),
        "sigma": (0.0, _NUM, False),
        "root": (None, (str,), True),
        "endpoint": (None, (str,), True),
        "timeout": (60.0, _NUM, False),
        "retries": (2, _INT, False),
        "params": {
            "guidance_scale": (2.0, _NUM, False),
            "num_steps": (50, _INT, False),
            "width": (512, _INT, False),
            "height": (512, _INT, False),
            "seed": (None, _INT, True),
        },
    },
    "output": ("runs", (str,), False),
    "seeds": ([1993], (list,), False),
}


def _merge(schema: dict, given, path: str, errors: list[str]) -> dict:
    out = {}
    if not isinstance(given, dict):
        errors.append(f"{path or '<root>'}: expected an object")
        given = {}
    for key in given:
        if key not in schema:
            errors.append(f"{path + '.' if path else ''}{key}: unknown key")
    for key, spec in schema.items():
        kpath = f"{path}.{key}" if path else key
        if isinstance(spec, dict):
            out[key] = _merge(spec, given.get(key, {}), kpath, errors)
            continue
        default, types, nullable = spec
        if key not in given:
            out[key] = copy.deepcopy(default)
            continue
        value = given[key]
        if value is None and nullable:
            out[key] = None
        elif not isinstance(value, types) or (isinstance(value, bool) and bool not in types):
            errors.append(f"{kpath}: expected {'/'.join(t.__name__ for t in types)}, got {type(value).__name__}")
            # keep checking the rest against the default
            out[key] = copy.deepcopy(default)
        else:
            out[key] = float(value) if types is _NUM else value
    return out


def _semantic(cfg: dict, errors: list[str]) -> None:
    def need(cond, key, msg):
        if not cond:
            errors.append(f"{key}: {msg}")

    t, s, tr, mem, syn = cfg["task"], cfg["scenario"], cfg["trainer"], cfg["memory"], cfg["synthetic"]
    need(t["kind"] in TASK_KINDS, "task.kind", f"must be one of {TASK_KINDS}")
    need(t["dim"] >= 2, "task.dim", "must be >= 2")
    need(t["separation"] >= 0, "task.separation", "must be >= 0")
    need(t["per_class_train"] >= 0, "task.per_class_train", "must be >= 0")
    need(t["per_class_test"] >= 1, "task.per_class_test", "must be >= 1")
    need(t["image_side"] >= 4, "task.image_side", "must be >= 4")
    if t["kind"] == "cifar100":
        for k in ("train_path", "test_path", "labels_path"):
            need(t[k] is not None, f"task.{k}", "required for cifar100")
        need(s["num_classes"] == 100, "scenario.num_classes", "must be 100 for cifar100")
    need(s["num_classes"] >= 2, "scenario.num_classes", "must be >= 2")
    need(s["num_steps"] >= 1, "scenario.num_steps", "must be >= 1")
    need(0 < s["base_fraction"] < 1, "scenario.base_fraction", "must be in (0, 1)")
    need(tr["method"] in METHODS, "trainer.method", f"must be one of {METHODS}")
    need(tr["sddr_mode"] in SDDR_MODES, "trainer.sddr_mode", f"must be one of {SDDR_MODES}")
    need(tr["classifier"] in CLASSIFIERS, "trainer.classifier", f"must be one of {CLASSIFIERS}")
    need(tr["epochs"] >= 1, "trainer.epochs", "must be >= 1")
    need(tr["real_batch_size"] >= 1, "trainer.real_batch_size", "must be >= 1")
    need(tr["synth_batch_size"] >= 1, "trainer.synth_batch_size", "must be >= 1")
    need(
        len(tr["hidden"]) >= 1 and all(isinstance(h, int) and not isinstance(h, bool) and h >= 1 for h in tr["hidden"]),
        "trainer.hidden",
        "must be a nonempty list of positive integers",
    )
    need(tr["lucir"]["lambda_base"] >= 0, "trainer.lucir.lambda_base", "must be >= 0")
    need(tr["lucir"]["margin"] >= 0, "trainer.lucir.margin", "must be >= 0")
    need(tr["lucir"]["top_k"] >= 1, "trainer.lucir.top_k", "must be >= 1")
    sgd = tr["sgd"]
    need(sgd["learning_rate"] >= 0, "trainer.sgd.learning_rate", "must be >= 0")
    need(0 <= sgd["momentum"] < 1, "trainer.sgd.momentum", "must be in [0, 1)")
    need(sgd["weight_decay"] >= 0, "trainer.sgd.weight_decay", "must be >= 0")
    need(
        all(isinstance(p, list) and len(p) == 2 and all(isinstance(v, (int, float)) for v in p) for p in sgd["schedule"]),
        "trainer.sgd.schedule",
        "must be a list of [epoch, multiplier] pairs",
    )
    need(mem["m"] >= 0, "memory.m", "must be >= 0")
    need(mem["policy"] in POLICIES, "memory.policy", f"must be one of {POLICIES}")
    if tr["sddr_mode"] == "synthetic_memory":
        need(mem["m"] == 0, "memory.m", "must be 0 when trainer.sddr_mode is synthetic_memory")
        if tr["method"] == "icarl" and tr["classifier"] in ("auto", "nme"):
            errors.append("trainer.classifier: NME needs real exemplars; use softmax with synthetic_memory")
    need(syn["backend"] in BACKENDS, "synthetic.backend", f"must be one of {BACKENDS}")
    need(syn["n"] >= 0, "synthetic.n", "must be >= 0")
    need(syn["sigma"] >= 0, "synthetic.sigma", "must be >= 0")
    need(syn["timeout"] > 0, "synthetic.timeout", "must be > 0")
    need(syn["retries"] >= 0, "synthetic.retries", "must be >= 0")
    if syn["backend"] == "offline":
        need(syn["root"] is not None, "synthetic.root", "required for the offline backend")
    if syn["backend"] == "remote":
        need(syn["endpoint"] is not None, "synthetic.endpoint", "required for the remote backend")
        need(t["kind"] != "gaussian", "synthetic.backend", "remote generation needs an image task")
    p = syn["params"]
    need(p["guidance_scale"] > 0, "synthetic.params.guidance_scale", "must be > 0")
    need(p["num_steps"] >= 1, "synthetic.params.num_steps", "must be >= 1")
    need(p["width"] >= 1, "synthetic.params.width", "must be >= 1")
    need(p["height"] >= 1, "synthetic.params.height", "must be >= 1")
    need(
        len(cfg["seeds"]) >= 1 and all(isinstance(v, int) and not isinstance(v, bool) for v in cfg["seeds"]),
        "seeds",
        "must be a nonempty list of integers",
    )


@dataclass
class ExperimentConfig:
    """Validated configuration; ``raw`` is the fully defaulted JSON tree."""

    raw: dict = field(default_factory=dict)

    @property
    def task(self) -> dict:
        return self.raw["task"]

    @property
    def scenario(self) -> dict:
        return self.raw["scenario"]

    @property
    def memory(self) -> dict:
        return self.raw["memory"]

    @property
    def synthetic(self) -> dict:
        return self.raw["synthetic"]

    @property
    def seeds(self) -> list[int]:
        return list(self.raw["seeds"])

    @property
    def output(self) -> str:
        return self.raw["output"]

    def trainer(self, **overrides) -> TrainerConfig:
        tr = {**self.raw["trainer"], **overrides}
        return TrainerConfig(
            method=tr["method"],
            sddr_mode=tr["sddr_mode"],
            epochs=tr["epochs"],
            real_batch_size=tr["real_batch_size"],
            synth_batch_size=tr["synth_batch_size"],
            hidden=tuple(tr["hidden"]),
            lucir=LucirParams(**tr["lucir"]),
            sgd=SgdConfig(
                learning_rate=tr["sgd"]["learning_rate"],
                momentum=tr["sgd"]["momentum"],
                weight_decay=tr["sgd"]["weight_decay"],
                schedule=[(int(e), float(m)) for e, m in tr["sgd"]["schedule"]],
            ),
            classifier=tr["classifier"],
            augment=tr["augment"],
        )

    def generation_params(self, run_seed: int) -> GenerationParams:
        p = self.synthetic["params"]
        return GenerationParams(
            guidance_scale=p["guidance_scale"],
            num_steps=p["num_steps"],
            width=p["width"],
            height=p["height"],
            seed=run_seed if p["seed"] is None else p["seed"],
        )

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def dumps(self) -> str:
        return json.dumps(self.raw, indent=2)


def validate(obj, *, extra_errors: list[str] | None = None) -> ExperimentConfig:
    errors: list[str] = list(extra_errors or [])
    merged = _merge(SCHEMA, obj, "", errors)
    _semantic(merged, errors)
    if errors:
        raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(errors))
    return ExperimentConfig(merged)


def loads(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{source}: JSON parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return validate(obj)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return loads(text, str(path))
