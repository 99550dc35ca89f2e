import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from navnet.errors import ConfigError, GenerationError, InfeasibleError
from navnet.gridworld import (
    FORWARD,
    STAY,
    TURN_LEFT,
    TURN_RIGHT,
    Maze,
    Pose,
    Variant,
    as_variant,
    floor_map,
    generate_maze,
    is_connected,
    obs_code,
    render_observation,
    sample_start_goal,
    shortest_path_length,
    step_dynamics,
)


def open_room(M=7, N=6, furniture=()):
    walls = np.zeros((N, M), dtype=bool)
    walls[0, :] = walls[-1, :] = walls[:, 0] = walls[:, -1] = True
    furn = np.zeros_like(walls)
    for x, y in furniture:
        furn[y, x] = True
    return Maze(walls, furn, (M - 2, N - 2))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(6, 12), st.integers(6, 12), st.floats(0.0, 0.3), st.integers(0, 2))
def test_generated_mazes_are_connected_and_bordered(seed, M, N, density, furniture):
    maze = generate_maze(seed, M, N, density, furniture)
    assert maze.walls.shape == (N, M)
    assert maze.walls[0].all() and maze.walls[-1].all() and maze.walls[:, 0].all() and maze.walls[:, -1].all()
    assert int(maze.furniture.sum()) == furniture
    assert not (maze.walls & maze.furniture).any()
    assert is_connected(~maze.walls & ~maze.furniture)
    gx, gy = maze.goal
    assert not maze.walls[gy, gx] and not maze.furniture[gy, gx]


def test_generation_is_deterministic():
    a = generate_maze(42, 10, 10)
    b = generate_maze(42, 10, 10)
    assert a == b and hash(a) == hash(b)
    assert generate_maze(43, 10, 10) != a


def test_generation_rejects_bad_config():
    with pytest.raises(ConfigError):
        generate_maze(0, 4, 10)
    with pytest.raises(ConfigError):
        generate_maze(0, 10, 10, wall_density=1.0)


def test_generation_fails_when_furniture_cannot_fit():
    with pytest.raises(GenerationError):
        generate_maze(0, 5, 5, 0.0, furniture_count=9)


def test_maze_arrays_are_read_only():
    maze = generate_maze(1)
    with pytest.raises(ValueError):
        maze.walls[1, 1] = True


def test_variant_semantics():
    maze = open_room(furniture=[(3, 3)])
    assert floor_map(maze, "A")[3, 3] == 0 and floor_map(maze, "C")[3, 3] == 0
    assert floor_map(maze, "B")[3, 3] == 1
    assert maze.blocked("A")[3, 3] == 0
    assert maze.blocked("B")[3, 3] and maze.blocked("C")[3, 3]
    assert as_variant("b") is Variant.B
    with pytest.raises(ConfigError):
        as_variant("D")


def test_observation_order_is_ahead_right_behind_left():
    maze = open_room()
    # north-facing in the top-left free corner: wall ahead and to the left
    assert render_observation(maze, Pose(1, 1, 0)) == (1, 0, 0, 1)
    # east-facing in the same cell: right is south (free), left is north (wall)
    assert render_observation(maze, Pose(1, 1, 1)) == (0, 0, 1, 1)


def test_furniture_is_sensed_in_every_variant():
    maze = open_room(furniture=[(3, 2)])
    for v in "ABC":
        assert render_observation(maze, Pose(3, 3, 0), v)[0] == 1


def test_obs_code_weights_bits():
    assert obs_code((1, 0, 0, 0)) == 1
    assert obs_code((0, 0, 0, 1)) == 8
    assert obs_code((1, 1, 1, 1)) == 15


def test_step_dynamics():
    maze = open_room(furniture=[(3, 2)])
    p = Pose(3, 3, 0)
    assert step_dynamics(maze, p, TURN_LEFT, "B") == (Pose(3, 3, 3), False)
    assert step_dynamics(maze, p, TURN_RIGHT, "B") == (Pose(3, 3, 1), False)
    assert step_dynamics(maze, p, STAY, "B") == (p, False)
    assert step_dynamics(maze, p, FORWARD, "B") == (p, True)  # furniture blocks
    assert step_dynamics(maze, p, FORWARD, "A") == (Pose(3, 2, 0), False)  # passable
    assert step_dynamics(maze, Pose(1, 1, 0), FORWARD, "A") == (Pose(1, 1, 0), True)
    with pytest.raises(ConfigError):
        step_dynamics(maze, p, 9, "B")


def test_sample_start_goal_respects_distance():
    maze = generate_maze(3, 10, 10)
    rng = np.random.default_rng(0)
    for _ in range(50):
        start, goal = sample_start_goal(maze, rng, 3, "B")
        assert abs(start.x - goal[0]) + abs(start.y - goal[1]) >= 3
        assert maze.valid_cells("B")[start.y, start.x]


def test_sample_start_goal_infeasible():
    maze = open_room(5, 5)
    with pytest.raises(InfeasibleError):
        sample_start_goal(maze, np.random.default_rng(0), 10)


def test_shortest_path_counts_turns():
    maze = open_room(7, 6)
    # facing north, goal two cells east: turn right then two forwards
    assert shortest_path_length(maze, Pose(1, 1, 0), (3, 1), "B") == 3
    assert shortest_path_length(maze, Pose(1, 1, 1), (3, 1), "B") == 2
    assert shortest_path_length(maze, Pose(1, 1, 1), (1, 1), "B") == 0
    blocked = open_room(7, 6, furniture=[(2, y) for y in range(1, 5)])
    assert shortest_path_length(blocked, Pose(1, 1, 1), (3, 1), "B") == -1
    assert shortest_path_length(blocked, Pose(1, 1, 1), (3, 1), "A") == 2
