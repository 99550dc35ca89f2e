"""Partially observable grid mazes with Task A/B/C obstacle semantics.

Grids are stored as ``(height, width)`` boolean arrays indexed ``[y, x]``.
Orientation 0 faces north (towards smaller ``y``), then east, south, west.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import ConfigError, GenerationError, InfeasibleError

# action indices; ties between actions always resolve to the lowest index
FORWARD, TURN_LEFT, TURN_RIGHT, STAY = 0, 1, 2, 3
ACTIONS = ("forward", "turn-left", "turn-right", "stay")
NUM_ACTIONS = 4
NUM_ORIENTATIONS = 4

# (dy, dx) per orientation N, E, S, W
HEADINGS = np.array([(-1, 0), (0, 1), (1, 0), (0, -1)])


class Variant(str, Enum):
    A = "A"  # furniture passable, sensed, not on the map
    B = "B"  # furniture blocking, sensed, on the map
    C = "C"  # furniture blocking, sensed, not on the map

    @property
    def furniture_blocks(self) -> bool:
        return self is not Variant.A

    @property
    def furniture_on_map(self) -> bool:
        return self is Variant.B


def as_variant(v) -> Variant:
    try:
        return v if isinstance(v, Variant) else Variant(str(v).upper())
    except ValueError:
        raise ConfigError(f"unknown task variant {v!r}") from None


@dataclass(frozen=True)
class Pose:
    x: int
    y: int
    theta: int

    @property
    def cell(self) -> tuple[int, int]:
        return (self.x, self.y)


@dataclass(frozen=True, eq=False)
class Maze:
    walls: np.ndarray
    furniture: np.ndarray
    goal: tuple[int, int]
    seed: int = 0

    def __post_init__(self):
        self.walls.setflags(write=False)
        self.furniture.setflags(write=False)

    @property
    def width(self) -> int:
        return self.walls.shape[1]

    @property
    def height(self) -> int:
        return self.walls.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, Maze)
            and self.goal == other.goal
            and self.seed == other.seed
            and np.array_equal(self.walls, other.walls)
            and np.array_equal(self.furniture, other.furniture)
        )

    def __hash__(self):
        return hash((self.walls.tobytes(), self.furniture.tobytes(), self.goal, self.seed))

    def with_goal(self, goal: tuple[int, int]) -> "Maze":
        return replace(self, goal=(int(goal[0]), int(goal[1])))

    def blocked(self, variant) -> np.ndarray:
        """Cells the robot cannot enter under ``variant``."""
        if as_variant(variant).furniture_blocks:
            return self.walls | self.furniture
        return self.walls

    def occupied(self) -> np.ndarray:
        """Cells that register on the binary sensor (furniture is visible in every task)."""
        return self.walls | self.furniture

    def valid_cells(self, variant) -> np.ndarray:
        return ~self.blocked(variant)


def _connected(free: np.ndarray) -> bool:
    cells = np.argwhere(free)
    if len(cells) == 0:
        return False
    seen = np.zeros_like(free)
    y0, x0 = cells[0]
    seen[y0, x0] = True
    queue = deque([(y0, x0)])
    count = 1
    H, W = free.shape
    while queue:
        y, x = queue.popleft()
        for dy, dx in HEADINGS:
            ny, nx = y + dy, x + dx
            if 0 <= ny < H and 0 <= nx < W and free[ny, nx] and not seen[ny, nx]:
                seen[ny, nx] = True
                count += 1
                queue.append((ny, nx))
    return count == len(cells)


def is_connected(free: np.ndarray) -> bool:
    """4-connectivity of the ``True`` cells (flood fill)."""
    return _connected(np.asarray(free, dtype=bool))


def generate_maze(
    rng_seed: int,
    M: int = 10,
    N: int = 10,
    wall_density: float = 0.2,
    furniture_count: int = 2,
) -> Maze:
    """Border walls plus random interior walls and furniture, all free space connected."""
    if M < 5 or N < 5:
        raise ConfigError(f"maze must be at least 5x5, got {M}x{N}")
    if not 0.0 <= wall_density < 1.0:
        raise ConfigError(f"wall_density must be in [0, 1), got {wall_density}")
    rng = np.random.default_rng(rng_seed)
    walls = np.zeros((N, M), dtype=bool)
    walls[0, :] = walls[-1, :] = walls[:, 0] = walls[:, -1] = True

    interior = [(y, x) for y in range(1, N - 1) for x in range(1, M - 1)]
    target = int(round(wall_density * len(interior)))
    placed = 0
    for i in rng.permutation(len(interior)):
        if placed >= target:
            break
        y, x = interior[i]
        walls[y, x] = True
        if _connected(~walls):
            placed += 1
        else:
            walls[y, x] = False

    furniture = np.zeros_like(walls)
    attempts = 0
    while furniture.sum() < furniture_count:
        if attempts >= 100 * furniture_count:
            raise GenerationError(
                f"could not place {furniture_count} furniture items without blocking passages"
            )
        attempts += 1
        free = np.argwhere(~walls & ~furniture)
        if len(free) <= 2:
            continue
        y, x = free[rng.integers(len(free))]
        furniture[y, x] = True
        if not _connected(~walls & ~furniture):
            furniture[y, x] = False

    free = np.argwhere(~walls & ~furniture)
    gy, gx = free[rng.integers(len(free))]
    return Maze(walls, furniture, (int(gx), int(gy)), int(rng_seed))


def floor_map(maze: Maze, variant) -> np.ndarray:
    """Binary occupancy image the robot is given: walls, plus furniture in Task B."""
    if as_variant(variant).furniture_on_map:
        return maze.walls | maze.furniture
    return maze.walls.copy()


def _ahead(pose_x: int, pose_y: int, direction: int) -> tuple[int, int]:
    dy, dx = HEADINGS[direction % 4]
    return pose_x + int(dx), pose_y + int(dy)


def render_observation(maze: Maze, pose: Pose, variant=None) -> tuple[int, int, int, int]:
    """Occupancy of the adjacent cells ahead, right, behind and left of the robot.

    Furniture is visible in every variant, so ``variant`` does not change the result.
    """
    occ = maze.occupied()
    H, W = occ.shape
    bits = []
    for i in range(4):
        x, y = _ahead(pose.x, pose.y, pose.theta + i)
        inside = 0 <= x < W and 0 <= y < H
        bits.append(int(not inside or occ[y, x]))
    return tuple(bits)


def obs_code(bits) -> int:
    return sum(int(b) << i for i, b in enumerate(bits))


def step_dynamics(maze: Maze, pose: Pose, action: int, variant) -> tuple[Pose, bool]:
    if action == TURN_LEFT:
        return Pose(pose.x, pose.y, (pose.theta - 1) % 4), False
    if action == TURN_RIGHT:
        return Pose(pose.x, pose.y, (pose.theta + 1) % 4), False
    if action == STAY:
        return pose, False
    if action != FORWARD:
        raise ConfigError(f"unknown action {action}")
    x, y = _ahead(pose.x, pose.y, pose.theta)
    blocked = maze.blocked(variant)
    H, W = blocked.shape
    if not (0 <= x < W and 0 <= y < H) or blocked[y, x]:
        return pose, True
    return Pose(x, y, pose.theta), False


def valid_poses(maze: Maze, variant) -> list[Pose]:
    ys, xs = np.nonzero(maze.valid_cells(variant))
    return [Pose(int(x), int(y), t) for y, x in zip(ys, xs) for t in range(4)]


def sample_start_goal(maze: Maze, rng: np.random.Generator, min_manhattan: int = 0, variant="B"):
    """Uniform start pose over valid poses and uniform goal over free cells at least
    ``min_manhattan`` away from it. Start and goal cells always differ."""
    poses = valid_poses(maze, variant)
    goals = np.argwhere(~maze.walls & ~maze.furniture)
    for _ in range(1000):
        start = poses[rng.integers(len(poses))]
        gy, gx = goals[rng.integers(len(goals))]
        if abs(int(gx) - start.x) + abs(int(gy) - start.y) >= max(min_manhattan, 1):
            return start, (int(gx), int(gy))
    raise InfeasibleError(f"no start/goal pair at Manhattan distance >= {min_manhattan}")


def shortest_path_length(maze: Maze, start: Pose, goal: tuple[int, int], variant) -> int:
    """BFS over (cell, orientation): fewest actions to reach the goal cell, -1 if unreachable."""
    if start.cell == tuple(goal):
        return 0
    seen = {start}
    frontier = deque([(start, 0)])
    while frontier:
        pose, d = frontier.popleft()
        for a in (FORWARD, TURN_LEFT, TURN_RIGHT):
            nxt, _ = step_dynamics(maze, pose, a, variant)
            if nxt in seen:
                continue
            if nxt.cell == tuple(goal):
                return d + 1
            seen.add(nxt)
            frontier.append((nxt, d + 1))
    return -1
