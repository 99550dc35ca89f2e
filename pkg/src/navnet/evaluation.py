"""Closed-loop evaluation and the NavNet-versus-expert comparison table."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .gridworld import (
    Maze,
    Pose,
    as_variant,
    floor_map,
    render_observation,
    sample_start_goal,
    shortest_path_length,
    step_dynamics,
)
from .model import A, L, ModelConfig, NavNetParams, NavNetRunner, map_input
from .oracle import QMDPExpert, qmdp_values
from .training import pad_maps


@dataclass(frozen=True)
class Episode:
    maze: Maze  # goal already set
    start: Pose

    @property
    def goal(self):
        return self.maze.goal


@dataclass
class EpisodeResult:
    success: bool
    collisions: int
    steps: int
    divergences: int = 0
    shortest: int = -1


@dataclass
class MetricsReport:
    success_rate: float
    success_rate_excluding_collisions: float
    collision_rate: float
    mean_steps_on_successes: float | None
    episodes: int
    fingerprint: str = ""
    results: list[EpisodeResult] = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("results")
        return d


def episode_for(maze: Maze, variant, min_manhattan: int = 3) -> Episode:
    """The fixed evaluation episode of a maze, seeded by the maze seed."""
    rng = np.random.default_rng([maze.seed, 11])
    start, goal = sample_start_goal(maze, rng, min_manhattan, variant)
    return Episode(maze.with_goal(goal), start)


# ---------------------------------------------------------------------------
# policies: reset on a list of episodes, then act on a batch of observations


class ExpertPolicy:
    name = "QMDP"

    def __init__(self, gamma: float = 0.99):
        self.gamma = gamma

    def reset(self, episodes: list[Episode], variant):
        self.experts = [QMDPExpert(ep.maze, variant, self.gamma) for ep in episodes]

    def act(self, obs: list[tuple]) -> np.ndarray:
        return np.array([e.act(o) for e, o in zip(self.experts, obs)])

    def divergences(self) -> np.ndarray:
        return np.array([e.divergences for e in self.experts])


class RandomPolicy:
    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def reset(self, episodes, variant):
        self.rng = np.random.default_rng(self.seed)
        self.n = len(episodes)

    def act(self, obs) -> np.ndarray:
        return self.rng.integers(A, size=self.n)

    def divergences(self):
        return np.zeros(self.n, dtype=int)


class NavNetPolicy:
    """Greedy NavNet policy on the floor map the task variant provides."""

    name = "NavNet"

    def __init__(self, params: NavNetParams, config: ModelConfig = ModelConfig()):
        self.params = params
        self.config = config
        self._P = params.bind()

    def reset(self, episodes: list[Episode], variant):
        maps = pad_maps([map_input(floor_map(ep.maze, variant), ep.goal) for ep in episodes])
        self.runner = NavNetRunner(self._P, maps, self.config)
        self.last_q = None

    def act(self, obs) -> np.ndarray:
        logits, q = self.runner.step(np.asarray(obs, dtype=np.float64))
        self.last_q = q.data
        actions = np.argmax(logits.data, axis=1)  # lowest index on ties
        self.runner.commit(actions)
        return actions

    def belief(self) -> np.ndarray:
        return self.runner.belief.data

    def divergences(self):
        return self.runner.divergences.copy()


def run_episodes(policy, episodes: list[Episode], variant, max_steps: int) -> list[EpisodeResult]:
    """Closed-loop rollouts, all episodes in lockstep; each stops at the goal or ``max_steps``."""
    variant = as_variant(variant)
    if not episodes:
        return []
    policy.reset(episodes, variant)
    poses = [ep.start for ep in episodes]
    done = [p.cell == ep.goal for p, ep in zip(poses, episodes)]
    steps = [0] * len(episodes)
    collisions = [0] * len(episodes)
    for _ in range(max_steps):
        if all(done):
            break
        obs = [render_observation(ep.maze, p, variant) for ep, p in zip(episodes, poses)]
        actions = policy.act(obs)
        for i, ep in enumerate(episodes):
            if done[i]:
                continue
            poses[i], hit = step_dynamics(ep.maze, poses[i], int(actions[i]), variant)
            steps[i] += 1
            collisions[i] += int(hit)
            done[i] = poses[i].cell == ep.goal
    div = policy.divergences()
    return [
        EpisodeResult(
            bool(done[i]),
            collisions[i],
            steps[i],
            int(div[i]),
            shortest_path_length(ep.maze, ep.start, ep.goal, variant),
        )
        for i, ep in enumerate(episodes)
    ]


def run_episode(policy, maze: Maze, start: Pose, variant, max_steps: int) -> EpisodeResult:
    return run_episodes(policy, [Episode(maze, start)], variant, max_steps)[0]


def aggregate(results: list[EpisodeResult], fingerprint: str = "") -> MetricsReport:
    n = len(results)
    if n == 0:
        raise ValueError("no episodes to aggregate")
    succ = [r for r in results if r.success]
    return MetricsReport(
        success_rate=len(succ) / n,
        success_rate_excluding_collisions=sum(r.collisions == 0 for r in succ) / n,
        collision_rate=sum(r.collisions > 0 for r in results) / n,
        mean_steps_on_successes=float(np.mean([r.steps for r in succ])) if succ else None,
        episodes=n,
        fingerprint=fingerprint,
        results=results,
    )


def evaluate(policy, env_set: list[Maze], variant, max_steps: int = 60, min_manhattan: int = 3,
             batch_size: int = 100) -> MetricsReport:
    if not env_set:
        raise ValueError("empty environment set")
    variant = as_variant(variant)
    episodes = [episode_for(m, variant, min_manhattan) for m in env_set]
    results: list[EpisodeResult] = []
    for i in range(0, len(episodes), batch_size):
        results.extend(run_episodes(policy, episodes[i : i + batch_size], variant, max_steps))
    h = hashlib.sha256()
    h.update(f"{variant.value}|{max_steps}|{min_manhattan}|{policy.name}".encode())
    for m in env_set:
        h.update(str(m.seed).encode())
    return aggregate(results, h.hexdigest()[:16])


# ---------------------------------------------------------------------------
# reporting

ROWS = (
    ("success rate", "success_rate", True),
    ("(excluding collisions)", "success_rate_excluding_collisions", True),
    ("collision rate", "collision_rate", True),
    ("steps to goal", "mean_steps_on_successes", False),
)


def _fmt(value, percent: bool) -> str:
    if value is None:
        return "-"
    return f"{100 * value:.1f}%" if percent else f"{value:.1f}"


def emit_comparison(navnet: dict[str, MetricsReport], qmdp: dict[str, MetricsReport]) -> tuple[str, dict]:
    """Aligned text table (rows per policy and metric, one column per task) and a
    machine-readable record of the same numbers."""
    tasks = sorted(set(navnet) | set(qmdp))
    lines = []
    header = f"{'':<32}" + "".join(f"{'Task ' + t:>12}" for t in tasks)
    lines.append(header)
    lines.append("-" * len(header))
    for label, reports in (("NavNet", navnet), ("QMDP", qmdp)):
        for row, key, pct in ROWS:
            name = row if row.startswith("(") else f"{label} {row}"
            cells = "".join(
                f"{_fmt(getattr(reports[t], key), pct) if t in reports else '-':>12}" for t in tasks
            )
            lines.append(f"{name:<32}{cells}")
        lines.append("-" * len(header))
    record = {
        "navnet": {t: r.summary() for t, r in navnet.items()},
        "qmdp": {t: r.summary() for t, r in qmdp.items()},
    }
    return "\n".join(lines), record


def parse_table(text: str) -> dict[str, dict[str, str]]:
    """Read the rendered table back into ``{row label: {task: cell}}``."""
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("-")]
    tasks = lines[0].split()[1::2]
    out = {}
    for ln in lines[1:]:
        label, cells = ln[:32].strip(), ln[32:].split()
        out.setdefault(label, dict(zip(tasks, cells)))
    return out


# ---------------------------------------------------------------------------
# belief traces


def write_pgm(path, image: np.ndarray):
    """Binary portable graymap, 8-bit, scaled so the maximum is white."""
    img = np.asarray(image, dtype=np.float64)
    peak = img.max()
    data = np.zeros(img.shape, dtype=np.uint8) if peak <= 0 else np.round(255 * img / peak).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    parts = raw.split(b"\n", 3)
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def export_belief_trace(policy, maze: Maze, start: Pose, variant, out_path, max_steps: int = 60) -> list[str]:
    """Roll out one episode and write one graymap per belief (initial belief first)
    plus ``trace.jsonl`` with the q values and chosen action at each step."""
    variant = as_variant(variant)
    os.makedirs(out_path, exist_ok=True)
    ep = Episode(maze, start)
    policy.reset([ep], variant)
    files = []

    def dump(t, belief):
        name = os.path.join(out_path, f"belief_{t:03d}.pgm")
        write_pgm(name, belief.reshape(maze.height, maze.width, L).sum(axis=-1))
        files.append(name)

    dump(0, _policy_belief(policy, maze))
    records = []
    pose = start
    for t in range(max_steps):
        if pose.cell == ep.goal:
            break
        obs = render_observation(maze, pose, variant)
        a = int(policy.act([obs])[0])
        q = _policy_q(policy)
        pose, hit = step_dynamics(maze, pose, a, variant)
        records.append({"step": t, "obs": list(obs), "q": q, "action": a, "collided": hit})
        dump(t + 1, _policy_belief(policy, maze))
    sidecar = os.path.join(out_path, "trace.jsonl")
    with open(sidecar, "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")
    return files + [sidecar]


def _policy_belief(policy, maze: Maze) -> np.ndarray:
    if isinstance(policy, NavNetPolicy):
        return policy.runner.belief.data[0, : maze.height, : maze.width]
    return policy.experts[0].belief


def _policy_q(policy) -> list[float]:
    if isinstance(policy, NavNetPolicy):
        return policy.last_q[0].tolist()
    e = policy.experts[0]
    return qmdp_values(e.Q, e.belief).tolist()
