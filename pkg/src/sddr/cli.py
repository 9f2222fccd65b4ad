"""Command line entry point: run, ablate, gen, gradcheck, scenario."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .config import ExperimentConfig, load_config
from .data import load_cifar100, make_gaussian_task, make_glyph_task
from .errors import SddrError
from .gradcheck import run_suite
from .losses import SDDR_MODES
from .scenario import build_scenario, format_table
from .synthetic import OfflineSource, OracleSource, RemoteSource, SyntheticStore, update_synthetic, write_offline_store
from .trainers import RunResult, run_incremental

log = logging.getLogger("sddr")

RESULT_COLUMNS = (
    "run_id", "method", "sddr_mode", "n", "m", "T", "seed", "step",
    "n_classes_seen", "top1_overall", "top1_base", "top1_new", "aia_so_far",
)
GRADCHECK_TOL = 1e-5


def write_atomic(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".partial")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def build_task(cfg: ExperimentConfig, seed: int):
    t, C = cfg.task, cfg.scenario["num_classes"]
    task_seed = seed if t["seed"] is None else t["seed"]
    if t["kind"] == "gaussian":
        return make_gaussian_task(C, t["dim"], t["separation"], t["per_class_train"], t["per_class_test"], task_seed)
    if t["kind"] == "glyph":
        return make_glyph_task(
            C, t["image_side"], t["per_class_train"], t["per_class_test"], task_seed,
            t["shift"], t["rotation_deg"], t["noise"],
        )
    return load_cifar100(t["train_path"], t["test_path"], t["labels_path"])


def build_source(cfg: ExperimentConfig, train, backend: str | None = None):
    syn = cfg.synthetic
    backend = backend or syn["backend"]
    if backend == "oracle":
        if train.task is None:
            raise SddrError("the oracle backend needs a procedural task (gaussian or glyph)")
        return OracleSource(train.task, syn["sigma"])
    if backend == "offline":
        return OfflineSource(syn["root"], train.image_shape)
    return RemoteSource(syn["endpoint"], train.image_shape, syn["timeout"], syn["retries"])


@dataclass
class RunSpec:
    method: str
    sddr_mode: str
    n: int
    m: int
    seed: int

    @property
    def run_id(self) -> str:
        return f"{self.method}-{self.sddr_mode}-n{self.n}-m{self.m}-s{self.seed}"


def execute_run(cfg: ExperimentConfig, spec: RunSpec, workers: int | None = None) -> RunResult:
    sc = cfg.scenario
    scenario = build_scenario(sc["num_classes"], sc["num_steps"], sc["seed"], sc["base_fraction"])
    train, test = build_task(cfg, spec.seed)
    trainer = cfg.trainer(sddr_mode=spec.sddr_mode)
    source = build_source(cfg, train) if trainer.uses_store else None
    return run_incremental(
        scenario, train, test, trainer,
        m=spec.m, memory_policy=cfg.memory["policy"], source=source, n=spec.n,
        gen_params=cfg.generation_params(spec.seed), seed=spec.seed, workers=workers,
    )


def result_rows(spec: RunSpec, num_steps: int, result: RunResult) -> list[list[str]]:
    rows = []
    for t, s in enumerate(result.report.steps):
        rows.append([
            spec.run_id, spec.method, spec.sddr_mode, str(spec.n), str(spec.m), str(num_steps),
            str(spec.seed), str(s.step), str(s.n_classes_seen),
            f"{s.top1_overall:.6f}", f"{s.top1_base:.6f}",
            f"{s.top1_new:.6f}" if s.new.total else "",
            f"{result.report.aia_so_far(t):.6f}",
        ])
    return rows


def format_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    w.writerows(rows)
    return buf.getvalue()


def format_report(runs: list[tuple[RunSpec, RunResult]], failed: list[tuple[RunSpec, str]] = ()) -> str:
    lines = ["# Results", ""]
    for spec, result in runs:
        steps = result.report.steps
        lines.append(f"## {spec.run_id}")
        lines.append("")
        lines.append("| step | classes seen | top-1 | base | new |")
        lines.append("|---:|---:|---:|---:|---:|")
        for s in steps:
            new = f"{100 * s.top1_new:.2f}" if s.new.total else "-"
            lines.append(
                f"| {s.step} | {s.n_classes_seen} | {100 * s.top1_overall:.2f} | {100 * s.top1_base:.2f} | {new} |"
            )
        lines.append("")
        lines.append(f"Average incremental accuracy: {100 * result.report.average_incremental_accuracy:.2f}")
        lines.append("")
    if failed:
        lines.append("## FAILED RUNS (results incomplete)")
        lines.append("")
        lines.extend(f"- {spec.run_id}: {msg}" for spec, msg in failed)
        lines.append("")
    return "\n".join(lines)


def run_grid(cfg: ExperimentConfig, specs: list[RunSpec], out: Path, workers: int | None = None) -> int:
    num_steps = cfg.scenario["num_steps"]
    rows, done, failed = [], [], []
    for spec in specs:
        log.info("run %s", spec.run_id)
        try:
            result = execute_run(cfg, spec, workers)
        except SddrError as exc:
            failed.append((spec, str(exc)))
            print(f"error: {spec.run_id}: {exc}", file=sys.stderr)
            continue
        done.append((spec, result))
        rows.extend(result_rows(spec, num_steps, result))
        write_atomic(out / "memory" / f"{spec.run_id}.json", result.memory.dumps() + "\n")
        if result.store is not None:
            write_atomic(out / "manifest" / f"{spec.run_id}.json", result.store.dumps_manifest() + "\n")
    name = "results.csv" if not failed else "results.partial.csv"
    write_atomic(out / name, format_csv(rows))
    write_atomic(out / "report.md", format_report(done, failed))
    write_atomic(out / "config.json", cfg.dumps() + "\n")
    return 1 if failed else 0


def cmd_run(cfg: ExperimentConfig, out) -> int:
    tr = cfg.raw["trainer"]
    specs = [RunSpec(tr["method"], tr["sddr_mode"], cfg.synthetic["n"], cfg.memory["m"], s) for s in cfg.seeds]
    return run_grid(cfg, specs, Path(out or cfg.output))


def cmd_ablate(cfg: ExperimentConfig, out, modes=None, ns=None, ms=None, seeds=None) -> int:
    tr = cfg.raw["trainer"]
    modes = modes or [tr["sddr_mode"]]
    ns = ns or [cfg.synthetic["n"]]
    ms = ms if ms is not None else [cfg.memory["m"]]
    seeds = seeds or cfg.seeds
    bad = [m for m in ms if m != 0]
    if "synthetic_memory" in modes and bad:
        raise SddrError(f"synthetic_memory needs m = 0; grid has m in {bad}")
    specs = [
        RunSpec(tr["method"], mode, n, m, seed)
        for mode in modes for n in ns for m in ms for seed in seeds
    ]
    return run_grid(cfg, specs, Path(out or cfg.output))


def cmd_gen(cfg: ExperimentConfig, out=None) -> int:
    """Generate ``n`` samples per class for every class into an offline store."""
    root = out or cfg.synthetic["root"]
    if root is None:
        raise SddrError("gen needs synthetic.root or --out")
    seed = cfg.seeds[0]
    train, _ = build_task(cfg, seed)
    backend = cfg.synthetic["backend"]
    source = build_source(cfg, train, "oracle" if backend == "offline" else backend)
    store = SyntheticStore(train.dim)
    sc = cfg.scenario
    scenario = build_scenario(sc["num_classes"], sc["num_steps"], sc["seed"], sc["base_fraction"])
    specs = [train.label(c) for c in scenario.class_order]
    update_synthetic(store, source, specs, cfg.synthetic["n"], cfg.generation_params(seed))
    write_offline_store(root, store, train.image_shape)
    print(f"wrote {len(store)} samples for {len(specs)} classes to {root}")
    return 0


def cmd_gradcheck(trials: int = 100, seed: int = 0, tol: float = GRADCHECK_TOL) -> int:
    results = run_suite(trials=trials, seed=seed)
    worst = 0.0
    for r in results:
        status = "ok" if r.passed(tol) else "FAIL"
        print(f"{r.name:<10} trials={r.trials:<4} max_rel_err={r.max_rel_error:.3e} {status}")
        worst = max(worst, r.max_rel_error)
    print(f"max relative error {worst:.3e} (tolerance {tol:.0e})")
    return 0 if worst < tol else 1


def cmd_scenario(cfg: ExperimentConfig) -> int:
    sc = cfg.scenario
    print(format_table(build_scenario(sc["num_classes"], sc["num_steps"], sc["seed"], sc["base_fraction"])))
    return 0


def execute(command: str, config: ExperimentConfig | None = None, **kwargs) -> int:
    """Run one command; returns the process exit status."""
    if command == "gradcheck":
        return cmd_gradcheck(**kwargs)
    if config is None:
        raise SddrError(f"{command} needs a config")
    if command == "run":
        return cmd_run(config, kwargs.get("out"))
    if command == "ablate":
        return cmd_ablate(config, **kwargs)
    if command == "gen":
        return cmd_gen(config, kwargs.get("out"))
    if command == "scenario":
        return cmd_scenario(config)
    raise SddrError(f"unknown command {command!r}")


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sddr", description="Class-incremental learning with synthetic distillation and replay.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment per configured seed")
    r.add_argument("--config", required=True)
    r.add_argument("--out")

    a = sub.add_parser("ablate", help="grid over sddr_mode x n x m x seeds")
    a.add_argument("--config", required=True)
    a.add_argument("--out")
    a.add_argument("--modes", nargs="+", choices=SDDR_MODES)
    a.add_argument("--n", nargs="+", type=int)
    a.add_argument("--m", nargs="+", type=int)
    a.add_argument("--seeds", nargs="+", type=int)

    g = sub.add_parser("gen", help="populate an offline synthetic store")
    g.add_argument("--config", required=True)
    g.add_argument("--out")

    c = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    c.add_argument("--trials", type=int, default=100)
    c.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("scenario", help="print the class split table")
    s.add_argument("--config", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gradcheck":
            return execute("gradcheck", trials=args.trials, seed=args.seed)
        cfg = load_config(args.config)
        if args.command == "ablate":
            return execute("ablate", cfg, out=args.out, modes=args.modes, ns=args.n, ms=args.m, seeds=args.seeds)
        if args.command in ("run", "gen"):
            return execute(args.command, cfg, out=args.out)
        return execute(args.command, cfg)
    except (SddrError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
