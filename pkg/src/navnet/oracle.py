"""Exact tabular POMDP for a maze, exact Bayes filter, value iteration and the
clairvoyant QMDP expert that produces demonstrations.

States are enumerated as ``s = (y * width + x) * 4 + theta`` over the whole grid;
cells the robot cannot occupy are self-looping, zero-reward states with an
observation code of ``-1`` so they never survive a correction step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ExpertFailed
from .gridworld import (
    FORWARD,
    NUM_ACTIONS,
    TURN_LEFT,
    TURN_RIGHT,
    NUM_ORIENTATIONS,
    STAY,
    Maze,
    Pose,
    Variant,
    as_variant,
    obs_code,
    render_observation,
    sample_start_goal,
    step_dynamics,
)

log = logging.getLogger(__name__)

GOAL_REWARD = 1.0
COLLISION_REWARD = -1.0
STEP_REWARD = -0.05
DEFAULT_GAMMA = 0.99
DIVERGENCE_MASS = 1e-12


@dataclass(frozen=True, eq=False)
class ExactPOMDP:
    height: int
    width: int
    successor: np.ndarray  # [S, A] int
    collided: np.ndarray  # [S, A] bool
    observation: np.ndarray  # [S] int, -1 for invalid states
    reward: np.ndarray  # [S, A]
    valid: np.ndarray  # [S] bool
    goal: np.ndarray  # [S] bool

    @property
    def num_states(self) -> int:
        return len(self.valid)

    def index(self, pose: Pose) -> int:
        return (pose.y * self.width + pose.x) * NUM_ORIENTATIONS + pose.theta

    def pose(self, s: int) -> Pose:
        cell, theta = divmod(int(s), NUM_ORIENTATIONS)
        y, x = divmod(cell, self.width)
        return Pose(x, y, theta)

    def uniform_belief(self) -> np.ndarray:
        return self.valid / self.valid.sum()

    def delta_belief(self, pose: Pose) -> np.ndarray:
        b = np.zeros(self.num_states)
        b[self.index(pose)] = 1.0
        return b

    def transition_matrix(self, action: int) -> np.ndarray:
        """Dense ``T[s, s']`` for one action."""
        S = self.num_states
        T = np.zeros((S, S))
        T[np.arange(S), self.successor[:, action]] = 1.0
        return T


def build_exact_model(maze: Maze, variant) -> ExactPOMDP:
    variant = as_variant(variant)
    H, W, L = maze.height, maze.width, NUM_ORIENTATIONS
    S = H * W * L
    valid_cells = maze.valid_cells(variant)
    successor = np.repeat(np.arange(S)[:, None], NUM_ACTIONS, axis=1)
    collided = np.zeros((S, NUM_ACTIONS), dtype=bool)
    observation = np.full(S, -1, dtype=np.int64)
    reward = np.zeros((S, NUM_ACTIONS))
    valid = np.zeros(S, dtype=bool)
    goal = np.zeros(S, dtype=bool)
    gx, gy = maze.goal
    for y in range(H):
        for x in range(W):
            if not valid_cells[y, x]:
                continue
            for theta in range(L):
                s = (y * W + x) * L + theta
                pose = Pose(x, y, theta)
                valid[s] = True
                observation[s] = obs_code(render_observation(maze, pose, variant))
                if (x, y) == (gx, gy):
                    goal[s] = True  # absorbing, reward 0
                    continue
                for a in range(NUM_ACTIONS):
                    nxt, hit = step_dynamics(maze, pose, a, variant)
                    successor[s, a] = (nxt.y * W + nxt.x) * L + nxt.theta
                    collided[s, a] = hit
                    if nxt.cell == (gx, gy):
                        reward[s, a] = GOAL_REWARD
                    elif hit:
                        reward[s, a] = COLLISION_REWARD
                    else:
                        reward[s, a] = STEP_REWARD
    return ExactPOMDP(H, W, successor, collided, observation, reward, valid, goal)


def exact_filter_step(model: ExactPOMDP, belief: np.ndarray, action: int, obs) -> tuple[np.ndarray, bool]:
    """Predict through the deterministic transition, correct by the observation.

    Returns the new flat belief and whether it collapsed (then it is reset to
    uniform over valid poses).
    """
    code = obs if isinstance(obs, (int, np.integer)) else obs_code(obs)
    pred = np.bincount(model.successor[:, action], weights=belief.ravel(), minlength=model.num_states)
    post = pred * (model.observation == code)
    mass = post.sum()
    if mass < DIVERGENCE_MASS:
        return model.uniform_belief(), True
    return post / mass, False


def value_iterate(
    model: ExactPOMDP,
    gamma: float = DEFAULT_GAMMA,
    iterations: int | None = None,
    tol: float | None = 1e-6,
    max_iterations: int = 100_000,
) -> np.ndarray:
    """Q table ``[S, A]`` from ``V_0 = 0``.

    Runs exactly ``iterations`` backups when given, otherwise until successive
    state values differ by less than ``tol`` in max norm.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must be in (0, 1), got {gamma}")
    V = np.zeros(model.num_states)
    Q = model.reward.copy()
    n = iterations if iterations is not None else max_iterations
    for _ in range(n):
        Q = model.reward + gamma * V[model.successor]
        V_new = Q.max(axis=1)
        delta = np.abs(V_new - V).max()
        V = V_new
        if iterations is None and delta < tol:
            break
    return Q


def qmdp_values(Q: np.ndarray, belief: np.ndarray) -> np.ndarray:
    return belief.ravel() @ Q


def qmdp_action(Q: np.ndarray, belief: np.ndarray) -> int:
    # np.argmax returns the first maximum: lowest action index wins ties
    return int(np.argmax(qmdp_values(Q, belief)))


@dataclass
class Trajectory:
    maze: Maze
    variant: Variant
    start: Pose
    goal: tuple[int, int]
    observations: list[tuple[int, ...]] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    poses: list[Pose] = field(default_factory=list)  # pose before each action
    collisions: list[bool] = field(default_factory=list)
    success: bool = False

    def __len__(self):
        return len(self.actions)

    @property
    def collision_count(self) -> int:
        return int(sum(self.collisions))


class QMDPExpert:
    """Clairvoyant QMDP policy: exact model with all objects, exact filter.

    Plain QMDP never gathers information, so under position ambiguity it settles
    into stay/turn cycles that leave the belief unchanged forever. When the
    belief repeats within an episode the expert breaks the cycle with the
    first free move it can sense: forward, else turn left, else turn right.
    Those moves never collide because the observation reports the adjacent cells.
    """

    def __init__(self, maze: Maze, variant, gamma: float = DEFAULT_GAMMA, tol: float = 1e-6,
                 break_loops: bool = True):
        self.variant = as_variant(variant)
        self.model = build_exact_model(maze, self.variant)
        self.Q = value_iterate(self.model, gamma, tol=tol)
        self.break_loops = break_loops
        self.divergences = 0
        self.reset()

    def reset(self):
        self.belief = self.model.uniform_belief()
        self._last_action = STAY
        self._seen: set[bytes] = set()

    def observe(self, obs) -> np.ndarray:
        self.belief, diverged = exact_filter_step(self.model, self.belief, self._last_action, obs)
        self.divergences += int(diverged)
        return qmdp_values(self.Q, self.belief)

    def act(self, obs) -> int:
        q = self.observe(obs)
        a = int(np.argmax(q))
        if self.break_loops:
            key = np.round(self.belief, 9).tobytes()
            if key in self._seen:
                a = _first_free_move(obs)
            self._seen.add(key)
        self._last_action = a
        return a


def _first_free_move(obs) -> int:
    ahead, _, _, left = obs
    if not ahead:
        return FORWARD
    return TURN_LEFT if not left else TURN_RIGHT


def rollout_expert(maze: Maze, variant, start: Pose, goal, max_steps: int, gamma: float = DEFAULT_GAMMA) -> Trajectory:
    """Closed-loop expert rollout from ``start``; returns the trajectory whatever the outcome."""
    variant = as_variant(variant)
    maze = maze.with_goal(goal)
    expert = QMDPExpert(maze, variant, gamma)
    traj = Trajectory(maze, variant, start, tuple(goal))
    pose = start
    for _ in range(max_steps):
        if pose.cell == traj.goal:
            break
        obs = render_observation(maze, pose, variant)
        a = expert.act(obs)
        traj.observations.append(obs)
        traj.actions.append(a)
        traj.poses.append(pose)
        pose, hit = step_dynamics(maze, pose, a, variant)
        traj.collisions.append(hit)
    traj.poses.append(pose)
    traj.success = pose.cell == traj.goal
    return traj


def generate_demo(
    maze: Maze,
    variant,
    rng: np.random.Generator,
    max_steps: int = 60,
    min_manhattan: int = 3,
    gamma: float = DEFAULT_GAMMA,
) -> Trajectory:
    """One successful expert demonstration from a random start/goal pair.

    Raises :class:`ExpertFailed` when the expert does not reach the goal.
    """
    start, goal = sample_start_goal(maze, rng, min_manhattan, variant)
    traj = rollout_expert(maze, variant, start, goal, max_steps, gamma)
    if not traj.success:
        log.debug("expert failed on maze %d from %s to %s", maze.seed, start, goal)
        raise ExpertFailed(f"expert did not reach {goal} from {start} in {max_steps} steps")
    return traj
