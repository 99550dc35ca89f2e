"""Imitation learning from expert demonstrations with a staged curriculum."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Graph
from .errors import ConfigError, ExpertFailed, TrainingDiverged
from .gridworld import Maze, Variant, as_variant, floor_map, generate_maze
from .model import A, ModelConfig, NavNetParams, NavNetRunner, init_actor, init_params, map_input
from .oracle import Trajectory, generate_demo

log = logging.getLogger(__name__)

LN4 = math.log(4.0)


@dataclass(frozen=True)
class StageConfig:
    name: str
    variant: str = "A"
    grid: tuple[int, int] = (10, 10)  # smallest and largest side length
    train_envs: int = 500
    test_envs: int = 100
    demos_per_env: int = 5
    epochs: int = 10
    wall_density: float = 0.2
    furniture: int = 2
    min_manhattan: int = 3
    max_steps: int = 60
    full_actor: bool = False
    known_start: bool = False

    def __post_init__(self):
        as_variant(self.variant)
        lo, hi = self.grid
        if not 5 <= lo <= hi:
            raise ConfigError(f"stage {self.name}: grid sizes must satisfy 5 <= min <= max, got {self.grid}")
        for f in ("train_envs", "demos_per_env", "max_steps"):
            if getattr(self, f) <= 0:
                raise ConfigError(f"stage {self.name}: {f} must be positive")
        if self.epochs < 0 or self.test_envs < 0:
            raise ConfigError(f"stage {self.name}: epochs and test_envs must be non-negative")


def default_stages() -> list[StageConfig]:
    return [
        # training episodes of the first stage start from the true pose
        StageConfig("synthetic", "B", grid=(6, 8), furniture=0, epochs=4, max_steps=50, known_start=True),
        StageConfig("A", "A", epochs=6),
    ]


def full_stages() -> list[StageConfig]:
    """Synthetic grids, then Tasks A, B and C; C switches to the full actor."""
    return default_stages() + [StageConfig("B", "B", epochs=6), StageConfig("C", "C", epochs=6, full_actor=True)]


@dataclass(frozen=True)
class TrainConfig:
    stages: tuple[StageConfig, ...] = field(default_factory=lambda: tuple(default_stages()))
    lr: float = 1e-3
    batch_size: int = 32
    clip_norm: float = 5.0
    seed: int = 0
    model: ModelConfig = ModelConfig()

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size <= 0 or self.clip_norm <= 0:
            raise ConfigError("lr, batch_size and clip_norm must be positive")
        if not self.stages:
            raise ConfigError("at least one stage is required")


# ---------------------------------------------------------------------------
# datasets


def env_seeds(seed: int, count: int, split: str) -> list[int]:
    """Per-environment maze seeds; train and test streams never overlap."""
    tag = {"train": 0, "test": 1}[split]
    ss = np.random.SeedSequence([seed, tag])
    raw = ss.generate_state(count, dtype=np.uint32)
    # the low bit encodes the split
    return [int(v) * 2 + tag for v in raw]


def make_envs(stage: StageConfig, seed: int, split: str, count: int | None = None) -> list[Maze]:
    count = stage.train_envs if count is None else count
    lo, hi = stage.grid
    envs = []
    for s in env_seeds(seed, count, split):
        size = lo + s % (hi - lo + 1)
        envs.append(generate_maze(s, size, size, stage.wall_density, stage.furniture))
    return envs


def demos_for_env(maze: Maze, stage: StageConfig, gamma: float = 0.99) -> list[Trajectory]:
    """Up to ``demos_per_env`` successful demonstrations; failed attempts are resampled
    at most once per requested demo."""
    rng = np.random.default_rng([maze.seed, 7])
    demos: list[Trajectory] = []
    for _ in range(2 * stage.demos_per_env):
        if len(demos) == stage.demos_per_env:
            break
        try:
            demos.append(generate_demo(maze, stage.variant, rng, stage.max_steps, stage.min_manhattan, gamma))
        except ExpertFailed:
            log.info("expert failed on maze %d; resampling", maze.seed)
    return demos


def build_dataset(stage: StageConfig, seed: int, gamma: float = 0.99, threads: int = 1):
    """Training environments with their demonstrations, plus disjoint test environments."""
    train = make_envs(stage, seed, "train")
    test = make_envs(stage, seed, "test", stage.test_envs)
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as pool:
            per_env = list(pool.map(lambda m: demos_for_env(m, stage, gamma), train))
    else:
        per_env = [demos_for_env(m, stage, gamma) for m in train]
    demos = [d for ds in per_env for d in ds]
    return train, demos, test


# ---------------------------------------------------------------------------
# batching and loss


@dataclass
class Batch:
    maps: np.ndarray  # [B, H, W, 2]
    obs: np.ndarray  # [B, T, 4]
    actions: np.ndarray  # [B, T]
    mask: np.ndarray  # [B, T]
    start: np.ndarray | None = None  # [B, H, W, L] initial belief; None means uniform

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)


def pad_maps(maps: list[np.ndarray]) -> np.ndarray:
    """Stack map inputs of different sizes, padding bottom/right with occupied cells."""
    H = max(m.shape[0] for m in maps)
    W = max(m.shape[1] for m in maps)
    out = np.zeros((len(maps), H, W, 2))
    out[..., 0] = 1.0
    for i, m in enumerate(maps):
        out[i, : m.shape[0], : m.shape[1]] = m
    return out


def demo_map(traj: Trajectory, variant=None) -> np.ndarray:
    variant = traj.variant if variant is None else as_variant(variant)
    return map_input(floor_map(traj.maze, variant), traj.goal)


def make_batch(demos: list[Trajectory], known_start: bool = False) -> Batch:
    B = len(demos)
    T = max(len(d) for d in demos)
    obs = np.zeros((B, T, 4))
    actions = np.full((B, T), 3, dtype=np.intp)
    mask = np.zeros((B, T))
    for i, d in enumerate(demos):
        n = len(d)
        obs[i, :n] = d.observations
        actions[i, :n] = d.actions
        mask[i, :n] = 1.0
    maps = pad_maps([demo_map(d) for d in demos])
    start = None
    if known_start:
        start = np.zeros(maps.shape[:3] + (4,))
        for i, d in enumerate(demos):
            start[i, d.start.y, d.start.x, d.start.theta] = 1.0
    return Batch(maps, obs, actions, mask, start)


def sequence_loss(P, batch: Batch, config: ModelConfig = ModelConfig()):
    """Mean over episodes of the mean per-step cross-entropy, teacher-forced."""
    runner = NavNetRunner(P, batch.maps, config, initial_belief=batch.start)
    logits = []
    for t in range(batch.obs.shape[1]):
        lg, _ = runner.step(batch.obs[:, t])
        logits.append(lg)
        runner.commit(batch.actions[:, t])
    stacked = ad.concat(logits, axis=0)  # [T*B, A], step-major
    weights = (batch.mask / batch.lengths[:, None] / len(batch.mask)).T.ravel()
    return ad.cross_entropy(stacked, batch.actions.T.ravel(), weights)


def bptt_loss(P, trajectory: Trajectory, config: ModelConfig = ModelConfig()):
    return sequence_loss(P, make_batch([trajectory]), config)


def loss_and_grads(params: NavNetParams, batch: Batch, config: ModelConfig) -> tuple[float, dict[str, np.ndarray]]:
    graph = Graph()
    P = params.bind(graph)
    loss = sequence_loss(P, batch, config)
    grads = graph.backward(loss)
    return float(loss.data), {k: grads[t.node_id] for k, t in P.items()}


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: NavNetParams) -> "OptimizerState":
        return cls({k: np.zeros_like(v) for k, v in params.items()}, {k: np.zeros_like(v) for k, v in params.items()})

    def sync(self, params: NavNetParams):
        """Add accumulators for parameters that appeared (e.g. a new actor)."""
        for k, v in params.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(v)
                self.v[k] = np.zeros_like(v)


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm:
        s = max_norm / norm
        grads = {k: g * s for k, g in grads.items()}
    return grads, norm


def adam_step(
    params: NavNetParams,
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    clip_norm: float | None = 5.0,
) -> NavNetParams:
    """Bias-corrected Adam; gradients are clipped to ``clip_norm`` global norm first."""
    if clip_norm is not None:
        grads, _ = clip_by_global_norm(grads, clip_norm)
    state.step += 1
    t = state.step
    out = NavNetParams()
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            out[k] = p
            continue
        m = state.m[k] = beta1 * state.m[k] + (1 - beta1) * g
        v = state.v[k] = beta2 * state.v[k] + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        out[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return out


# ---------------------------------------------------------------------------
# curriculum


@dataclass
class StageResult:
    name: str
    params: NavNetParams
    epoch_losses: list[float]
    first_epoch_losses: list[float]
    val_success: float | None
    log: list[dict]


def transfer_weights(stage: StageConfig, results: dict[str, StageResult], current: NavNetParams,
                     rng: np.random.Generator, config: ModelConfig) -> NavNetParams:
    """Initial weights for ``stage`` given earlier results.

    A stage with the full actor takes filter and planner weights from stage A and
    seeds the actor's observation block from stage B's observation branch.
    """
    if not stage.full_actor or current.has_full_actor:
        return current.copy()
    src_plan = results["A"].params if "A" in results else current
    p = NavNetParams({k: v.copy() for k, v in src_plan.items() if not k.startswith(("bypass.", "actor."))})
    p.update(init_actor(rng, config))
    src_obs = results["B"].params if "B" in results else current
    if src_obs.get("Z.obs_w") is not None and src_obs["Z.obs_w"].shape == p["actor.fo_w"].shape:
        p["actor.fo_w"] = src_obs["Z.obs_w"].copy()
        p["actor.fo_b"] = src_obs["Z.obs_b"].copy()
    else:
        log.info("stage %s: no matching observation branch to seed the actor from", stage.name)
    return p


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterable[np.ndarray]:
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def train_stage(
    params: NavNetParams,
    demos: list[Trajectory],
    stage: StageConfig,
    config: TrainConfig,
    state: OptimizerState,
    rng: np.random.Generator,
    validate: Callable[[NavNetParams], float] | None = None,
    on_log: Callable[[dict], None] | None = None,
) -> StageResult:
    if not demos:
        raise ConfigError(f"stage {stage.name} has no demonstrations")
    state.sync(params)
    records: list[dict] = []
    epoch_losses: list[float] = []
    first_epoch: list[float] = []
    t0 = time.time()
    step = 0
    for epoch in range(stage.epochs):
        losses, sizes = [], []
        for idx in iterate_batches(len(demos), config.batch_size, rng):
            batch = make_batch([demos[i] for i in idx], stage.known_start)
            loss, grads = loss_and_grads(params, batch, config.model)
            if not math.isfinite(loss):
                raise TrainingDiverged(stage.name, step)
            params = adam_step(params, grads, state, config.lr, clip_norm=config.clip_norm)
            if any(not np.all(np.isfinite(v)) for v in params.values()):
                raise TrainingDiverged(stage.name, step, "non-finite parameter")
            losses.append(loss)
            sizes.append(len(idx))
            if epoch == 0:
                first_epoch.append(loss)
            step += 1
        mean_loss = float(np.average(losses, weights=sizes))
        epoch_losses.append(mean_loss)
        val = validate(params) if validate is not None and epoch == stage.epochs - 1 else None
        rec = {
            "stage": stage.name,
            "epoch": epoch,
            "step": step,
            "loss": mean_loss,
            "val_success": val,
            "wall_time": round(time.time() - t0, 3),
        }
        records.append(rec)
        log.info("stage %s epoch %d loss %.4f", stage.name, epoch, mean_loss)
        if on_log is not None:
            on_log(rec)
    val = records[-1]["val_success"] if records else None
    return StageResult(stage.name, params, epoch_losses, first_epoch, val, records)


def train_curriculum(
    config: TrainConfig,
    datasets: dict[str, tuple[list[Maze], list[Trajectory], list[Maze]]] | None = None,
    validate: Callable[[NavNetParams, StageConfig, list[Maze]], float] | None = None,
    on_log: Callable[[dict], None] | None = None,
    on_stage_end: Callable[[StageResult, OptimizerState], None] | None = None,
    initial: tuple[NavNetParams, OptimizerState] | None = None,
    skip_stages: int = 0,
    completed: dict[str, NavNetParams] | None = None,
) -> tuple[NavNetParams, list[StageResult]]:
    """Run every stage in order, carrying weights (and optimizer moments) forward.

    To resume, pass the checkpoint after stage ``skip_stages - 1`` as ``initial``
    and the final weights of the skipped stages as ``completed``.
    """
    rng = np.random.default_rng(config.seed)
    if initial is not None:
        params, state = initial[0].copy(), initial[1]
    else:
        params = init_params(rng, config.model, full_actor=config.stages[0].full_actor)
        state = OptimizerState.zeros_like(params)
    results = {name: StageResult(name, p, [], [], None, []) for name, p in (completed or {}).items()}
    ordered: list[StageResult] = []
    for i, stage in enumerate(config.stages):
        stage_rng = np.random.default_rng([config.seed, i])
        if i < skip_stages:
            continue
        if datasets is not None and stage.name in datasets:
            _, demos, test = datasets[stage.name]
        else:
            _, demos, test = build_dataset(stage, config.seed + i, config.model.gamma)
        params = transfer_weights(stage, results, params, stage_rng, config.model)
        val_fn = None
        if validate is not None and test:
            val_fn = lambda p, s=stage, t=test: validate(p, s, t)  # noqa: E731
        res = train_stage(params, demos, stage, config, state, stage_rng, val_fn, on_log)
        params = res.params
        results[stage.name] = res
        ordered.append(res)
        if on_stage_end is not None:
            on_stage_end(res, state)
    return params, ordered


def with_epochs(config: TrainConfig, epochs: int) -> TrainConfig:
    return replace(config, stages=tuple(replace(s, epochs=epochs) for s in config.stages))


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
