import math
from dataclasses import replace

import numpy as np
import pytest

from navnet.errors import ConfigError
from navnet.model import A, ModelConfig, NavNetParams, init_params
from navnet.training import (
    LN4,
    OptimizerState,
    StageConfig,
    StageResult,
    TrainConfig,
    adam_step,
    bptt_loss,
    build_dataset,
    clip_by_global_norm,
    env_seeds,
    make_batch,
    sequence_loss,
    train_curriculum,
    train_stage,
    transfer_weights,
)

TINY = StageConfig("synthetic", "B", grid=(6, 6), furniture=0, train_envs=6, test_envs=3, demos_per_env=2,
                   epochs=1, max_steps=30)
SMALL_MODEL = ModelConfig(K=6)


@pytest.fixture(scope="module")
def tiny_data():
    return build_dataset(TINY, 0)


def test_dataset_is_deterministic_and_disjoint(tiny_data):
    train, demos, test = tiny_data
    again = build_dataset(TINY, 0)
    assert train == again[0] and test == again[2]
    assert [d.actions for d in demos] == [d.actions for d in again[1]]
    assert not {m.seed for m in train} & {m.seed for m in test}
    assert all(d.poses[-1].cell == d.goal for d in demos)
    assert len(demos) <= TINY.train_envs * TINY.demos_per_env


def test_env_seed_streams_never_overlap():
    assert not set(env_seeds(3, 200, "train")) & set(env_seeds(3, 200, "test"))


def test_uniform_logits_give_ln4(tiny_data):
    p = init_params(np.random.default_rng(0), SMALL_MODEL)
    for k in list(p.group("bypass")):
        p[k] = np.zeros_like(p[k])
    loss = bptt_loss(p.bind(), tiny_data[1][0], SMALL_MODEL)
    assert float(loss.data) == pytest.approx(LN4, abs=1e-12)


def test_batched_loss_is_mean_of_episode_losses(tiny_data):
    p = init_params(np.random.default_rng(1), SMALL_MODEL).bind()
    demos = tiny_data[1][:3]
    batched = float(sequence_loss(p, make_batch(demos), SMALL_MODEL).data)
    single = np.mean([float(bptt_loss(p, d, SMALL_MODEL).data) for d in demos])
    assert batched == pytest.approx(single, rel=1e-10)


def test_adam_single_step_matches_closed_form():
    # first step: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps)
    p = NavNetParams({"w": np.array([1.0, -2.0, 0.5])})
    g = {"w": np.array([0.3, -0.1, 0.0])}
    state = OptimizerState.zeros_like(p)
    out = adam_step(p, g, state, lr=0.01, clip_norm=None)
    expected = p["w"] - 0.01 * g["w"] / (np.abs(g["w"]) + 1e-8)
    np.testing.assert_allclose(out["w"], expected, atol=1e-12)
    assert state.step == 1


def test_adam_zero_gradient_and_constant_gradient():
    p = NavNetParams({"w": np.array([0.5, -0.5])})
    state = OptimizerState.zeros_like(p)
    assert np.array_equal(adam_step(p, {"w": np.zeros(2)}, state)["w"], p["w"])
    state = OptimizerState.zeros_like(p)
    q = p
    for _ in range(50):
        q = adam_step(q, {"w": np.array([1.0, -1.0])}, state)
    assert q["w"][0] < p["w"][0] and q["w"][1] > p["w"][1]


def test_global_norm_clipping():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_by_global_norm(grads, 1.0)
    assert norm == pytest.approx(5.0)
    assert math.hypot(clipped["a"][0], clipped["b"][0]) == pytest.approx(1.0)
    same, _ = clip_by_global_norm(grads, 10.0)
    assert same["a"][0] == 3.0


def test_first_epoch_loss_drops_below_ln4(tiny_data):
    stage = replace(TINY, epochs=3)
    cfg = TrainConfig((stage,), model=SMALL_MODEL, batch_size=4)
    params = init_params(np.random.default_rng(0), SMALL_MODEL)
    res = train_stage(params, tiny_data[1], stage, cfg, OptimizerState.zeros_like(params), np.random.default_rng(0))
    assert res.epoch_losses[0] < LN4
    assert all(np.isfinite(v).all() for v in res.params.values())


def test_training_is_deterministic(tiny_data):
    cfg = TrainConfig((TINY,), model=SMALL_MODEL, batch_size=4)
    a, _ = train_curriculum(cfg, {"synthetic": tiny_data})
    b, _ = train_curriculum(cfg, {"synthetic": tiny_data})
    assert a.keys() == b.keys()
    for k in a:
        assert np.array_equal(a[k], b[k])


def test_stage_c_transfer_is_bit_exact():
    cfg = ModelConfig()
    rng = np.random.default_rng(0)
    a = init_params(rng, cfg)
    b = init_params(rng, cfg)
    results = {"A": StageResult("A", a, [], [], None, []), "B": StageResult("B", b, [], [], None, [])}
    c = transfer_weights(StageConfig("C", "C", full_actor=True), results, b, rng, cfg)
    for k in a:
        if k.split(".")[0] in ("T", "R", "Z"):
            assert np.array_equal(c[k], a[k]), k
    assert np.array_equal(c["actor.fo_w"], b["Z.obs_w"])
    assert np.array_equal(c["actor.fo_b"], b["Z.obs_b"])
    assert c.has_full_actor and not c.group("bypass")
    # without an observation branch the actor keeps its own initialization
    plain = ModelConfig(observation_model="bernoulli", z_scale=1.0, actor_obs_hidden=32)
    d = transfer_weights(StageConfig("C", "C", full_actor=True), {}, init_params(rng, plain), rng, plain)
    assert d["actor.fo_w"].shape == (4, 32)


def test_stage_config_validation():
    with pytest.raises(ConfigError):
        StageConfig("x", grid=(4, 6))
    with pytest.raises(ConfigError):
        StageConfig("x", variant="Q")
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.0)


def test_known_start_batch_places_delta(tiny_data):
    demos = tiny_data[1][:2]
    batch = make_batch(demos, known_start=True)
    for i, d in enumerate(demos):
        assert batch.start[i].sum() == 1.0
        assert batch.start[i, d.start.y, d.start.x, d.start.theta] == 1.0
    assert make_batch(demos).start is None
    assert batch.actions.shape[1] == max(len(d) for d in demos)
    assert set(np.unique(batch.actions)) <= set(range(A))
