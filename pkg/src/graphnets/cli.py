"""``gn``: generate datasets, train, evaluate and roll out models.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .composer import EPDSpec
from .graph import GraphError, graph_from_dict, graph_to_dict
from .nn import OptimizerState, load_params, save_params
from .tasks import physics
from .tasks.training import (TASKS, DivergenceError, TrainConfig, default_architecture, evaluate,
                             init_params, is_label_task, make_model, train)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("graphnets.cli")


class UsageError(Exception):
    """Bad arguments, missing files or mismatched schemas."""


@dataclass
class RunConfig:
    task: str
    spec: str | None
    seed: int
    steps: int
    batch_size: int
    lr: float
    optimizer: str
    out: str
    eval_every: int = 0
    val_size: int = 32
    checkpoint_every: int = 100

    def check(self) -> None:
        if self.task not in TASKS:
            raise UsageError(f"unknown task {self.task!r}; choose from {', '.join(sorted(TASKS))}")
        if self.spec is not None and not Path(self.spec).is_file():
            raise UsageError(f"spec file not found: {self.spec}")
        if self.steps < 0 or self.batch_size <= 0 or self.lr <= 0:
            raise UsageError("steps must be >= 0; batch size and learning rate must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise UsageError(f"unknown optimizer {self.optimizer!r}")
        if self.eval_every < 0 or self.val_size <= 0 or self.checkpoint_every <= 0:
            raise UsageError("eval/checkpoint intervals and validation size must be positive")


# -- files -----------------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


def _check_task(name: str) -> str:
    if name not in TASKS:
        raise UsageError(f"unknown task {name!r}; choose from {', '.join(sorted(TASKS))}")
    return name


def read_dataset(task: str, path: str) -> list:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"dataset not found: {path}")
    samples = []
    for lineno, line in enumerate(p.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            samples.append(TASKS[task].from_json(json.loads(line)))
        except (GraphError, KeyError, TypeError, ValueError) as e:
            raise UsageError(f"{path}:{lineno}: sample does not match the {task} schema ({e})") from e
    return samples


def _checkpoint_paths(out: Path) -> dict[str, Path]:
    return {"config": out / "config.json", "spec": out / "spec.json", "params": out / "params.json",
            "state": out / "state.json", "metrics": out / "metrics.csv"}


def save_checkpoint(out: Path, params, opt_state: OptimizerState, step: int) -> None:
    paths = _checkpoint_paths(out)
    # write then rename so an interrupted save keeps the previous checkpoint
    tmp = paths["params"].with_suffix(".tmp")
    save_params(params, tmp)
    tmp.replace(paths["params"])
    tmp = paths["state"].with_suffix(".tmp")
    tmp.write_text(_dump({"step": step, "optimizer": opt_state.to_json()}))
    tmp.replace(paths["state"])


def load_checkpoint(path: str):
    """``(config dict, spec, params, optimizer state, step)`` from a run directory."""
    out = Path(path)
    paths = _checkpoint_paths(out)
    for key in ("config", "spec", "params", "state"):
        if not paths[key].is_file():
            raise UsageError(f"checkpoint incomplete: missing {paths[key]}")
    config = json.loads(paths["config"].read_text())
    spec = EPDSpec.from_json(json.loads(paths["spec"].read_text()))
    state = json.loads(paths["state"].read_text())
    return (config, spec, load_params(paths["params"]), OptimizerState.from_json(state["optimizer"]),
            int(state["step"]))


# -- commands --------------------------------------------------------------

def cmd_generate(args) -> int:
    task = _check_task(args.task)
    if args.count < 0:
        raise UsageError("count must be >= 0")
    sizes = _sizes(args)
    rng = np.random.default_rng(args.seed)
    lines = [_dump(TASKS[task].to_json(s)) + "\n" for s in TASKS[task].sample_batch(rng, args.count, sizes)]
    try:
        Path(args.out).write_text("".join(lines))
    except OSError as e:
        raise UsageError(f"cannot write {args.out}: {e}") from e
    return EXIT_OK


def _sizes(args) -> tuple[int, int] | None:
    if args.min_size is None and args.max_size is None:
        return None
    lo, hi = TASKS[args.task].sizes
    lo = args.min_size if args.min_size is not None else lo
    hi = args.max_size if args.max_size is not None else max(hi, lo)
    if lo < 1 or hi < lo:
        raise UsageError("need 1 <= min-size <= max-size")
    return lo, hi


def cmd_train(args) -> int:
    out = Path(args.out)
    paths = _checkpoint_paths(out)
    if args.resume:
        config, spec, params, opt_state, start = load_checkpoint(args.out)
        cfg = RunConfig(**{**config, "steps": args.steps if args.steps is not None else config["steps"]})
    else:
        cfg = RunConfig(args.task, args.spec, args.seed, args.steps if args.steps is not None else 1000,
                        args.batch_size, args.lr, args.optimizer, args.out, args.eval_every, args.val_size,
                        args.checkpoint_every)
    cfg.check()
    if not args.resume:
        spec = _load_spec(cfg)
        params = init_params(spec, cfg.seed)
        opt_state, start = OptimizerState(), 0
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise UsageError(f"cannot create {out}: {e}") from e
        paths["spec"].write_text(_dump(spec.to_json()))
        paths["config"].write_text(_dump(asdict(cfg)))
        paths["metrics"].write_text("step,loss\n")
        save_checkpoint(out, params, opt_state, 0)
    else:
        paths["config"].write_text(_dump(asdict(cfg)))

    tcfg = TrainConfig(steps=cfg.steps, batch_size=cfg.batch_size, lr=cfg.lr, optimizer=cfg.optimizer,
                       seed=cfg.seed, eval_every=cfg.eval_every, val_size=cfg.val_size)
    with paths["metrics"].open("a", newline="") as fh:
        writer = csv.writer(fh)

        def on_step(step: int, loss: float) -> None:
            writer.writerow([step, repr(loss)])
            if step % cfg.checkpoint_every == 0:
                fh.flush()
                save_checkpoint(out, params, opt_state, step)

        try:
            result = train(cfg.task, spec, tcfg, params, opt_state, start_step=start, step_callback=on_step)
        except DivergenceError as e:
            print(f"error: {e}; last good checkpoint kept in {out}", file=sys.stderr)
            return EXIT_NUMERIC
    save_checkpoint(out, result.params, result.opt_state, max(cfg.steps, start))
    for row in result.history:
        log.info("%s", row)
    return EXIT_OK


def _load_spec(cfg: RunConfig) -> EPDSpec:
    if cfg.spec is None:
        return default_architecture(cfg.task)
    try:
        return EPDSpec.from_json(json.loads(Path(cfg.spec).read_text()))
    except (KeyError, TypeError, ValueError) as e:
        raise UsageError(f"invalid spec file {cfg.spec}: {e}") from e


def _model(args, task: str):
    if args.oracle:
        return make_model(task, None, None, oracle=True)
    if not args.checkpoint:
        raise UsageError("--checkpoint is required unless --oracle is given")
    config, spec, params, _, _ = load_checkpoint(args.checkpoint)
    if config["task"] != task:
        raise UsageError(f"checkpoint was trained on {config['task']!r}, not {task!r}")
    return make_model(task, spec, params)


def _resolve_task(args) -> str:
    if args.task:
        return _check_task(args.task)
    if args.checkpoint:
        return load_checkpoint(args.checkpoint)[0]["task"]
    raise UsageError("--task is required unless --checkpoint is given")


def cmd_eval(args) -> int:
    task = _resolve_task(args)
    if args.horizon < 1:
        raise UsageError("horizon must be >= 1")
    samples = read_dataset(task, args.dataset)
    if not samples:
        raise UsageError("no samples")
    model = _model(args, task)
    try:
        metrics = evaluate(task, model, samples, horizon=args.horizon)
    except ValueError as e:
        # raised by the numeric core on shape mismatches
        raise UsageError(f"dataset does not match the model: {e}") from e
    print(json.dumps(metrics, sort_keys=True))
    if not is_label_task(task) and not np.isfinite(metrics["rmse"]):
        return EXIT_NUMERIC
    return EXIT_OK


def _read_initial_state(path: str) -> physics.PhysicsState:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"initial state not found: {path}")
    lines = [ln for ln in p.read_text().splitlines() if ln.strip()]
    if not lines:
        raise UsageError("no samples")
    d = json.loads(lines[0])
    d = d.get("input", d)
    try:
        return physics.graph_to_state(graph_from_dict(d, 6, 2))
    except (GraphError, KeyError, TypeError, ValueError) as e:
        raise UsageError(f"{path}: not a physics state ({e})") from e


def cmd_rollout(args) -> int:
    task = _resolve_task(args)
    if is_label_task(task):
        raise UsageError("rollout needs a physics checkpoint")
    if args.steps < 0:
        raise UsageError("steps must be >= 0")
    s0 = _read_initial_state(args.initial)
    model = _model(args, task)
    result = physics.rollout(model, s0, args.steps)
    try:
        with open(args.out, "w") as fh:
            for s in result.states:
                fh.write(_dump(graph_to_dict(physics.state_to_graph(s))) + "\n")
    except OSError as e:
        raise UsageError(f"cannot write {args.out}: {e}") from e
    if result.error:
        print(f"error: {result.error}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# -- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gn", description="Graph network experiments.", allow_abbrev=False)
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads (default 1; results do not depend on it)")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a JSON-lines dataset", allow_abbrev=False)
    g.add_argument("--task", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--min-size", type=int)
    g.add_argument("--max-size", type=int)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train an encode-process-decode model", allow_abbrev=False)
    t.add_argument("--task", default=None)
    t.add_argument("--spec", default=None, help="architecture JSON (default: built-in for the task)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--lr", type=float, default=3e-3)
    t.add_argument("--optimizer", default="adam")
    t.add_argument("--eval-every", type=int, default=0)
    t.add_argument("--val-size", type=int, default=32)
    t.add_argument("--checkpoint-every", type=int, default=100)
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--resume", action="store_true", help="continue the run stored in --out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="print metrics for a dataset", allow_abbrev=False)
    e.add_argument("--checkpoint")
    e.add_argument("--task")
    e.add_argument("--dataset", required=True)
    e.add_argument("--oracle", action="store_true", help="evaluate the ground-truth model instead")
    e.add_argument("--horizon", type=int, default=1)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("rollout", help="feed a physics model its own predictions", allow_abbrev=False)
    r.add_argument("--checkpoint")
    r.add_argument("--task")
    r.add_argument("--initial", required=True, help="state graph JSON or dataset file (first line)")
    r.add_argument("--steps", type=int, required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--oracle", action="store_true")
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_rollout)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.threads < 1:
            raise UsageError("threads must be >= 1")
        if args.command == "train" and not args.resume and args.task is None:
            raise UsageError("--task is required for a new run")
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
