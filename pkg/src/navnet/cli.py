"""Command-line entry point: ``navnet {gen-envs,gen-demos,train,eval,trace}``.

Options may also come from a JSON config file (``--config``); flags given on
the command line override the file. Exit codes: 0 success, 1 other error,
2 missing input, 3 training divergence, 4 corrupt artifact.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import formats
from .errors import ConfigError, FormatError, NavNetError, TrainingDiverged
from .evaluation import (
    ExpertPolicy,
    NavNetPolicy,
    RandomPolicy,
    emit_comparison,
    episode_for,
    evaluate,
    export_belief_trace,
)
from .gridworld import generate_maze
from .model import ModelConfig
from .training import (
    StageConfig,
    StageResult,
    TrainConfig,
    default_stages,
    full_stages,
    demos_for_env,
    env_seeds,
    train_curriculum,
)

log = logging.getLogger("navnet")

EXIT_OK, EXIT_OTHER, EXIT_MISSING, EXIT_DIVERGED, EXIT_CORRUPT = 0, 1, 2, 3, 4


def parse_grid(text: str) -> tuple[int, int]:
    """``"10"`` or ``"12x10"`` (width x height)."""
    try:
        parts = [int(v) for v in str(text).lower().split("x")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 10 or 12x10, got {text!r}") from None
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2 or min(parts) < 5:
        raise argparse.ArgumentTypeError(f"grid sides must be at least 5, got {text!r}")
    return parts[0], parts[1]


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with option defaults; flags override it")
    p.add_argument("--grid", type=parse_grid, default=(10, 10), help="N or MxN (default 10)")
    p.add_argument("--variant", choices=["A", "B", "C"], default="B")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=None, help="planning steps (default 3*max(M,N))")
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)


COMMANDS = ("gen-envs", "gen-demos", "train", "eval", "trace")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="navnet", description="Navigation networks on gridworld mazes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-envs", help="generate random mazes")
    _common(p)
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.add_argument("--wall-density", type=float, default=0.2)
    p.add_argument("--furniture", type=int, default=2)
    p.set_defaults(func=cmd_gen_envs)

    p = sub.add_parser("gen-demos", help="roll out the clairvoyant expert")
    _common(p)
    p.add_argument("--envs", required=True)
    p.add_argument("--demos-per-env", type=int, default=5)
    p.add_argument("--max-steps", type=int, default=60)
    p.add_argument("--min-manhattan", type=int, default=3)
    p.set_defaults(func=cmd_gen_demos)

    p = sub.add_parser("train", help="imitation learning (one stage from files, or the curriculum)")
    _common(p)
    p.add_argument("--envs", help="training environments (with --demos: single-stage run)")
    p.add_argument("--demos", help="demonstrations for --envs")
    p.add_argument("--test-envs", help="validation environments")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--train-envs", type=int, default=500, help="generated environments per stage")
    p.add_argument("--curriculum", choices=["short", "full"], default="short",
                   help="short: synthetic then --variant; full: synthetic, A, B, C")
    p.add_argument("--resume", action="store_true", help="continue from the stage checkpoints in --out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compare NavNet with the clairvoyant expert")
    _common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--envs", required=True)
    p.add_argument("--variants", default=None, help="comma-separated variants (default --variant)")
    p.add_argument("--max-steps", type=int, default=60)
    p.add_argument("--min-manhattan", type=int, default=3)
    p.add_argument("--random-baseline", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("trace", help="export belief images for one episode")
    _common(p)
    p.add_argument("--weights", help="NavNet weights (default: trace the expert)")
    p.add_argument("--envs", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=60)
    p.add_argument("--min-manhattan", type=int, default=3)
    p.set_defaults(func=cmd_trace)
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if command in action.choices:
            return action.choices[command]
    raise ConfigError(f"unknown command {command!r}")


def parse_args(argv=None) -> argparse.Namespace:
    """Parse flags, layering an optional JSON config file underneath them."""
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # the file must be read before required flags are checked
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    early, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if not a.startswith("-")), None)
    if early.config and command in COMMANDS:
        sub = _subparser(parser, command)
        path = Path(early.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            values = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path}: {e}") from None
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in values.items():
            dest = key.replace("-", "_")
            if dest not in known or dest in ("config", "help"):
                raise ConfigError(f"config file {path}: unknown option {key!r}")
            action = known[dest]
            if action.type is not None and not isinstance(value, bool):
                try:
                    value = action.type(value if not isinstance(value, list) else "x".join(map(str, value)))
                except (argparse.ArgumentTypeError, ValueError) as e:
                    raise ConfigError(f"config file {path}: {key}: {e}") from None
            if action.choices is not None and value not in action.choices:
                raise ConfigError(f"config file {path}: {key} must be one of {sorted(action.choices)}")
            defaults[dest] = value
        sub.set_defaults(**defaults)
        # required flags may now be satisfied by the file
        for a in sub._actions:
            if a.dest in defaults:
                a.required = False
    args = parser.parse_args(argv)
    validate_args(args)
    return args


def validate_args(args: argparse.Namespace):
    def positive(name):
        v = getattr(args, name, None)
        if v is not None and v <= 0:
            raise ConfigError(f"--{name.replace('_', '-')} must be positive, got {v}")

    for name in ("threads", "k", "demos_per_env", "max_steps", "epochs", "lr", "batch_size", "train_envs"):
        positive(name)
    if not 0.0 < args.gamma < 1.0:
        raise ConfigError(f"--gamma must be in (0, 1), got {args.gamma}")
    if getattr(args, "count", 0) < 0:
        raise ConfigError(f"--count must be non-negative, got {args.count}")
    if args.command == "train" and bool(args.envs) != bool(args.demos):
        raise ConfigError("--envs and --demos must be given together")


def _require(*paths):
    for p in paths:
        if p is not None and not Path(p).exists():
            raise FileNotFoundError(f"input not found: {p}")


def _model_config(args) -> ModelConfig:
    return replace(ModelConfig(), gamma=args.gamma, K=args.k)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_envs(args) -> int:
    M, N = args.grid
    mazes = [
        generate_maze(s, M, N, args.wall_density, args.furniture)
        for s in env_seeds(args.seed, args.count, args.split)
    ]
    formats.write_envs(args.out, mazes)
    print(f"wrote {len(mazes)} environments to {args.out}")
    return EXIT_OK


def cmd_gen_demos(args) -> int:
    _require(args.envs)
    mazes = formats.read_envs(args.envs)
    stage = StageConfig(
        "demos",
        args.variant,
        demos_per_env=args.demos_per_env,
        max_steps=args.max_steps,
        min_manhattan=args.min_manhattan,
    )
    if args.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(args.threads) as pool:
            per_env = list(pool.map(lambda m: demos_for_env(m, stage, args.gamma), mazes))
    else:
        per_env = [demos_for_env(m, stage, args.gamma) for m in mazes]
    demos = [d for ds in per_env for d in ds]
    formats.write_trajectories(args.out, demos)
    requested = args.demos_per_env * len(mazes)
    full = sum(len(ds) == args.demos_per_env for ds in per_env)
    mean_len = np.mean([len(d) for d in demos]) if demos else 0.0
    print(f"wrote {len(demos)}/{requested} demonstrations to {args.out}")
    print(f"environments with all demos: {full}/{len(mazes)}; mean length {mean_len:.1f}")
    return EXIT_OK


def _stages(args) -> list[StageConfig]:
    if args.demos:
        return [StageConfig(args.variant, args.variant, grid=(min(args.grid), max(args.grid)),
                            epochs=args.epochs or 10)]
    full = args.curriculum == "full"
    stages = []
    for s in full_stages() if full else default_stages():
        changes = {"train_envs": args.train_envs}
        if args.epochs is not None:
            changes["epochs"] = args.epochs
        if s.name != "synthetic":
            changes["grid"] = (min(args.grid), max(args.grid))
            if not full:
                # the short schedule ends on the requested task
                changes.update(name=args.variant, variant=args.variant)
        stages.append(replace(s, **changes))
    return stages


def _checkpoint(out: Path, name: str) -> tuple[Path, Path]:
    return out / f"stage_{name}.navw", out / f"stage_{name}.navo"


def cmd_train(args) -> int:
    _require(args.envs, args.demos, args.test_envs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stages = _stages(args)
    config = TrainConfig(tuple(stages), lr=args.lr, batch_size=args.batch_size, seed=args.seed,
                         model=_model_config(args))
    datasets = None
    if args.demos:
        mazes = formats.read_envs(args.envs)
        demos = formats.read_trajectories(args.demos, mazes)
        test = formats.read_envs(args.test_envs) if args.test_envs else []
        datasets = {stages[0].name: (mazes, demos, test)}

    initial, skip, completed = None, 0, {}
    if args.resume:
        for i, st in enumerate(stages):
            w, o = _checkpoint(out, st.name)
            if not (w.exists() and o.exists()):
                break
            completed[st.name] = formats.load_weights(w)
            initial = (completed[st.name], formats.load_optimizer(o))
            skip = i + 1
        if skip:
            log.info("resuming after stage %s", stages[skip - 1].name)
        if skip == len(stages):
            formats.save_weights(initial[0], out / "final.navw")
            print(f"all stages already trained; final weights in {out / 'final.navw'}")
            return EXIT_OK

    log_path = out / "train_log.jsonl"

    def validate(params, stage, test_envs):
        return evaluate(NavNetPolicy(params, config.model), test_envs, stage.variant, stage.max_steps,
                        stage.min_manhattan).success_rate

    def on_log(rec):
        formats.append_log(log_path, rec)
        print(f"stage {rec['stage']} epoch {rec['epoch']} loss {rec['loss']:.4f}"
              + (f" val {rec['val_success']:.3f}" if rec["val_success"] is not None else ""), flush=True)

    def on_stage_end(res: StageResult, state):
        w, o = _checkpoint(out, res.name)
        formats.save_weights(res.params, w)
        formats.save_optimizer(state, o)

    t0 = time.time()
    params, _ = train_curriculum(config, datasets, validate, on_log, on_stage_end, initial, skip, completed)
    formats.save_weights(params, out / "final.navw")
    print(f"final weights in {out / 'final.navw'} ({time.time() - t0:.0f} s)")
    return EXIT_OK


def cmd_eval(args) -> int:
    _require(args.weights, args.envs)
    params = formats.load_weights(args.weights)
    mazes = formats.read_envs(args.envs)
    variants = args.variants.split(",") if args.variants else [args.variant]
    model = _model_config(args)
    navnet, qmdp, extra = {}, {}, {}
    for v in variants:
        navnet[v] = evaluate(NavNetPolicy(params, model), mazes, v, args.max_steps, args.min_manhattan)
        qmdp[v] = evaluate(ExpertPolicy(args.gamma), mazes, v, args.max_steps, args.min_manhattan)
        if args.random_baseline:
            extra[v] = evaluate(RandomPolicy(args.seed), mazes, v, args.max_steps, args.min_manhattan).summary()
    text, record = emit_comparison(navnet, qmdp)
    if extra:
        record["random"] = extra
    print(text)
    Path(args.out).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_trace(args) -> int:
    _require(args.envs, args.weights)
    mazes = formats.read_envs(args.envs)
    if not 0 <= args.index < len(mazes):
        raise ConfigError(f"--index {args.index} out of range for {len(mazes)} environments")
    ep = episode_for(mazes[args.index], args.variant, args.min_manhattan)
    if args.weights:
        policy = NavNetPolicy(formats.load_weights(args.weights), _model_config(args))
    else:
        policy = ExpertPolicy(args.gamma)
    files = export_belief_trace(policy, ep.maze, ep.start, args.variant, args.out, args.max_steps)
    print(f"wrote {len(files)} files to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _setup_logging():
    level = os.environ.get("NAVNET_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = parse_args(argv)
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except FormatError as e:
        print(f"error: corrupt artifact: {e}", file=sys.stderr)
        return EXIT_CORRUPT
    except (NavNetError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
