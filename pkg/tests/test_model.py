import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from navnet import autodiff as ad
from navnet import model as nm
from navnet.errors import ShapeError
from navnet.gridworld import STAY, floor_map, generate_maze, render_observation, sample_start_goal, step_dynamics
from navnet.model import A, L, ModelConfig, NavNetRunner, map_input
from navnet.oracle import build_exact_model, exact_filter_step, qmdp_action, value_iterate

CONFIGS = [ModelConfig(), ModelConfig(observation_model="bernoulli", z_scale=1.0)]


def maze_with_goal(seed, size=8, furniture=2):
    maze = generate_maze(seed, size, size, 0.2, furniture)
    rng = np.random.default_rng(seed)
    start, goal = sample_start_goal(maze, rng, 3, "B")
    return maze.with_goal(goal), start, rng


def random_params(seed, config=ModelConfig(), full_actor=False):
    rng = np.random.default_rng(seed)
    p = nm.init_params(rng, config, full_actor)
    for k in p:
        p[k] = p[k] + rng.normal(0, 0.3, size=p[k].shape)
    return p


def test_normalize_transition_examples():
    zero = nm.normalize_transition(ad.constant(np.zeros((3, 3, L, L * A)))).data
    np.testing.assert_allclose(zero, 1.0 / (9 * L))
    raw = np.zeros((3, 3, L, L * A))
    raw[1, 1, 2, 5] = 20.0
    k = nm.normalize_transition(ad.constant(raw)).data
    assert k[1, 1, 2, 5] > 0.999


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10.0))
def test_normalized_slices_sum_to_one(seed, scale):
    raw = np.random.default_rng(seed).normal(0, 3, size=(3, 3, L, L * A))
    k = nm.normalize_transition(ad.constant(raw), scale).data
    np.testing.assert_allclose(k.sum(axis=(0, 1, 2)), 1.0, atol=1e-12)


def test_f_R_zero_weights_and_shape():
    p = nm.init_params(np.random.default_rng(0))
    for k in p.group("R"):
        p[k] = np.zeros_like(p[k])
    maps = map_input(np.zeros((5, 7)), (2, 2))[None]
    out = nm.f_R_apply(p.bind(), ad.constant(maps))
    assert out.shape == (1, 5, 7, L * A)
    assert not out.data.any()


@pytest.mark.parametrize("config", CONFIGS, ids=["fused", "bernoulli"])
def test_f_Z_range_and_purity(config):
    p = nm.init_params(np.random.default_rng(1), config).bind()
    maze, _, _ = maze_with_goal(1)
    maps = ad.constant(map_input(floor_map(maze, "B"), maze.goal)[None])
    obs = ad.constant(np.array([[1.0, 0.0, 1.0, 0.0]]))
    z1 = nm.f_Z_apply(p, obs, maps, scale=config.z_scale).data
    z2 = nm.f_Z_apply(p, obs, maps, scale=config.z_scale).data
    assert z1.shape == (1, 8, 8, L)
    assert np.all((z1 > 0) & (z1 < 1))
    np.testing.assert_array_equal(z1, z2)


def test_bernoulli_likelihood_is_bit_product():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(1, 2, 3, nm.BIT_CHANNELS))
    obs = np.array([[1.0, 0.0, 0.0, 1.0]])
    z = nm.bernoulli_likelihood(ad.constant(logits), ad.constant(obs)).data
    sig = lambda x: 1 / (1 + np.exp(-x))
    for l in range(L):
        p = sig(logits[..., -1])
        for i in range(4):
            e = logits[..., 4 * l + i]
            p = p * (sig(e) if obs[0, i] else 1 - sig(e))
        np.testing.assert_allclose(z[..., l], p, rtol=1e-12)


def _filter_inputs(seed):
    rng = np.random.default_rng(seed)
    p = random_params(seed).bind()
    maps = map_input(floor_map(generate_maze(seed, 6, 6), "B"), (2, 2))[None]
    belief = nm.uniform_belief(maps)
    kernel = nm.normalize_transition(p["T.kernel"])
    gate = nm.transition_gate(p, ad.constant(maps))
    return rng, ad.constant(belief), kernel, gate


def test_constant_likelihood_leaves_prediction_unchanged():
    rng, belief, kernel, gate = _filter_inputs(0)
    actions = np.array([0])
    ones, _ = nm.filter_step(belief, actions, ad.constant(np.ones(belief.shape)), kernel, gate)
    half, _ = nm.filter_step(belief, actions, ad.constant(np.full(belief.shape, 0.37)), kernel, gate)
    np.testing.assert_allclose(ones.data, half.data, atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, A - 1))
def test_filter_output_is_a_distribution(seed, action):
    rng, belief, kernel, gate = _filter_inputs(seed)
    z = ad.constant(rng.uniform(0.01, 1.0, size=belief.shape))
    out, diverged = nm.filter_step(belief, np.array([action]), z, kernel, gate)
    assert not diverged.any()
    assert abs(out.data.sum() - 1.0) < 1e-9 and out.data.min() >= 0


def test_filter_collapse_resets_and_flags():
    _, belief, kernel, gate = _filter_inputs(2)
    reset = nm.uniform_belief(np.zeros((1, 6, 6, 2)))
    out, diverged = nm.filter_step(belief, np.array([STAY]), ad.constant(np.zeros(belief.shape)), kernel, gate, reset)
    assert diverged.tolist() == [True]
    np.testing.assert_allclose(out.data, reset)


@pytest.mark.parametrize("config", CONFIGS, ids=["fused", "bernoulli"])
def test_planted_filter_matches_exact_filter(config):
    P = nm.planted_params(config).bind()
    for seed in range(3):
        maze, pose, rng = maze_with_goal(seed)
        exact = build_exact_model(maze, "B")
        runner = NavNetRunner(P, map_input(floor_map(maze, "B"), maze.goal), config)
        b, prev = exact.uniform_belief(), STAY
        for _ in range(50):
            obs = render_observation(maze, pose, "B")
            b, _ = exact_filter_step(exact, b, prev, obs)
            runner.step(np.array([obs]))
            assert np.abs(runner.belief.data.ravel() - b).max() < 1e-8
            prev = int(rng.integers(A))
            runner.commit([prev])
            pose, _ = step_dynamics(maze, pose, prev, "B")


@pytest.mark.parametrize("K", [1, 5, 30])
def test_planted_planner_matches_value_iteration(K):
    config = ModelConfig(K=K)
    P = nm.planted_params(config).bind()
    for seed in range(3):
        maze, _, _ = maze_with_goal(seed, 9)
        exact = build_exact_model(maze, "B")
        Q = NavNetRunner(P, map_input(floor_map(maze, "B"), maze.goal), config).Q.data.reshape(-1, A)
        ref = value_iterate(exact, config.gamma, iterations=K)
        assert np.abs(Q - ref)[exact.valid].max() < 1e-9


def test_planner_K1_is_reward():
    p = random_params(4).bind()
    maps = ad.constant(map_input(np.zeros((5, 5)), (1, 1))[None])
    R = nm.f_R_apply(p, maps)
    Q = nm.planner_unroll(R, nm.normalize_transition(p["T.kernel"]), nm.transition_gate(p, maps), 1, 0.9)
    np.testing.assert_array_equal(Q.data, R.data)
    with pytest.raises(ValueError):
        nm.planner_unroll(R, nm.normalize_transition(p["T.kernel"]), nm.transition_gate(p, maps), 0, 0.9)


def test_compute_q_against_loops():
    rng = np.random.default_rng(5)
    Q = rng.normal(size=(2, 3, 4, L * A))
    b = rng.uniform(size=(2, 3, 4, L))
    q = nm.compute_q(ad.constant(Q), ad.constant(b)).data
    ref = np.zeros((2, A))
    for i in range(2):
        for y, x, l, a in np.ndindex(3, 4, L, A):
            ref[i, a] += Q[i, y, x, l * A + a] * b[i, y, x, l]
    np.testing.assert_allclose(q, ref, atol=1e-12)
    delta = np.zeros_like(b)
    delta[:, 1, 2, 3] = 1.0
    np.testing.assert_allclose(nm.compute_q(ad.constant(Q), ad.constant(delta)).data, Q[:, 1, 2, 12:16])
    with pytest.raises(ShapeError):
        nm.compute_q(ad.constant(Q), ad.constant(b[:, :2]))


def test_q_scale_covariance():
    rng = np.random.default_rng(6)
    Q = rng.normal(size=(1, 3, 3, L * A))
    b = rng.uniform(size=(1, 3, 3, L))
    q = nm.compute_q(ad.constant(Q), ad.constant(b)).data
    q3 = nm.compute_q(ad.constant(3.0 * Q), ad.constant(b)).data
    np.testing.assert_allclose(q3, 3.0 * q)
    assert np.argmax(q3) == np.argmax(q)


def test_actors_with_zero_weights_pick_action_zero():
    cfg = ModelConfig()
    p = nm.init_params(np.random.default_rng(0), cfg, full_actor=True)
    p.update(nm.init_params(np.random.default_rng(0), cfg).group("bypass"))
    for k in list(p.group("actor")) + list(p.group("bypass")):
        p[k] = np.zeros_like(p[k])
    P = p.bind()
    obs = ad.constant(np.ones((1, 4)))
    q = ad.constant(np.array([[0.1, 0.5, -0.2, 0.0]]))
    hist = ad.constant(np.zeros((1, 4 * A)))
    full = nm.actor_forward(P, obs, q, hist, hist).data
    bypass = nm.actor_bypass_mode(P, obs, q).data
    for logits in (full, bypass):
        assert not logits.any() and int(np.argmax(logits)) == 0


def test_bypass_identity_on_q_is_greedy():
    p = nm.planted_params(ModelConfig()).bind()
    q = np.array([[0.1, 0.5, -0.2, 0.0]])
    logits = nm.actor_bypass_mode(p, ad.constant(np.array([[1.0, 0.0, 1.0, 1.0]])), ad.constant(q)).data
    assert int(np.argmax(logits)) == 1


@pytest.mark.parametrize("full_actor", [False, True])
def test_planted_network_reproduces_qmdp_choices(full_actor):
    config = ModelConfig(K=30)
    P = nm.planted_params(config, full_actor=full_actor, greedy_scale=100.0).bind()
    agree = total = 0
    for seed in range(20):
        maze, pose, rng = maze_with_goal(seed)
        exact = build_exact_model(maze, "B")
        Q = value_iterate(exact, config.gamma, iterations=30)
        runner = NavNetRunner(P, map_input(floor_map(maze, "B"), maze.goal), config)
        b, prev = exact.uniform_belief(), STAY
        for _ in range(15):
            obs = render_observation(maze, pose, "B")
            b, _ = exact_filter_step(exact, b, prev, obs)
            logits, _ = runner.step(np.array([obs]))
            expected = qmdp_action(Q, b)
            values = b @ Q
            # exact ties (e.g. turning left or right) may break either way
            agree += values[int(np.argmax(logits.data[0]))] >= values.max() - 1e-9
            total += 1
            prev = expected
            runner.commit([prev])
            pose, _ = step_dynamics(maze, pose, prev, "B")
            if pose.cell == maze.goal:
                break
    assert agree == total


def test_episode_forward_shapes_and_alignment():
    p = random_params(7).bind()
    maps = map_input(np.pad(np.zeros((4, 4)), 1, constant_values=1), (2, 2))
    obs = np.random.default_rng(0).integers(0, 2, size=(5, 4))
    logits = nm.navnet_episode_forward(p, maps, obs, np.zeros(5, dtype=int))
    assert len(logits) == 5 and logits[0].shape == (1, A)
    with pytest.raises(ShapeError):
        nm.navnet_episode_forward(p, maps, obs, np.zeros(4, dtype=int))


def test_episode_forward_is_deterministic():
    p = random_params(8).bind()
    maps = map_input(np.pad(np.zeros((5, 5)), 1, constant_values=1), (3, 3))
    obs = np.random.default_rng(1).integers(0, 2, size=(6, 4))
    acts = np.random.default_rng(2).integers(0, A, size=6)
    a = [t.data for t in nm.navnet_episode_forward(p, maps, obs, acts)]
    b = [t.data for t in nm.navnet_episode_forward(p, maps, obs, acts)]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_parameters_do_not_depend_on_map_size():
    p = nm.init_params(np.random.default_rng(0))
    P = p.bind()
    for size in (6, 10, 19):
        maps = map_input(np.pad(np.zeros((size - 2, size - 2)), 1, constant_values=1), (1, 1))
        runner = NavNetRunner(P, maps, ModelConfig(K=3))
        runner.step(np.zeros((1, 4)))
        assert runner.belief.shape == (1, size, size, L)


def test_known_initial_belief_is_used():
    P = nm.planted_params(ModelConfig(K=2)).bind()
    maze, pose, _ = maze_with_goal(3)
    maps = map_input(floor_map(maze, "B"), maze.goal)
    start = np.zeros((1,) + maps.shape[:2] + (L,))
    start[0, pose.y, pose.x, pose.theta] = 1.0
    runner = NavNetRunner(P, maps, ModelConfig(K=2), initial_belief=start)
    runner.step(np.array([render_observation(maze, pose, "B")]))
    assert runner.belief.data[0, pose.y, pose.x, pose.theta] == pytest.approx(1.0)
