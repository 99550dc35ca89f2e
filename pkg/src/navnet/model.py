"""The navigation network: learned POMDP blocks wired into a differentiable
Bayes filter, a K-step QMDP planner and a reactive actor.

Everything here is batched over episodes. Spatial tensors are ``[B, H, W, C]``;
channel ``l * A + a`` of a ``L * A`` tensor belongs to orientation ``l`` and
action ``a``. The network's map input has two channels: occupancy and goal.

Transition model
    A single 3x3 kernel, softmax-normalized per output channel, moves belief mass
    between neighbouring cells. A map-conditioned gate ``c(s, a)`` (sigmoid of a
    3x3 convolution of the map) gives the probability that action ``a`` leaves
    state ``s`` in place, which is how collisions and the absorbing goal enter:
    ``T(s, a, .) = (1 - c) * kernel_move + c * stay``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor
from .errors import ConfigError, ShapeError
from .gridworld import HEADINGS, NUM_ACTIONS, NUM_ORIENTATIONS, STAY

L = NUM_ORIENTATIONS
A = NUM_ACTIONS
HISTORY = 4
DIVERGENCE_MASS = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    gamma: float = 0.99
    K: int | None = None  # None: 3 * max(H, W)
    reward_hidden: int = 32
    map_hidden: int = 16
    obs_hidden: int = 16
    actor_obs_hidden: int | None = None  # None: obs_hidden, so F_o can be seeded from f_Z
    actor_hidden: int = 64
    untie_transition: bool = False
    # fixed multipliers on logits whose useful range is large (sharp kernels,
    # near-binary gates and likelihoods); equivalent to a larger step size there
    kernel_scale: float = 10.0
    gate_scale: float = 10.0
    z_scale: float = 5.0  # 1.0 suits the bernoulli model
    # "kinematic": the transition kernel starts near nominal motion, "random": near uniform
    transition_init: str = "kinematic"
    kinematic_logit: float = 8.0
    # "fused": map and observation features mixed by a 1x1 head; "bernoulli": per-bit sensor model
    observation_model: str = "fused"

    def __post_init__(self):
        if self.transition_init not in ("kinematic", "random"):
            raise ConfigError(f"unknown transition_init {self.transition_init!r}")
        if self.observation_model not in ("bernoulli", "fused"):
            raise ConfigError(f"unknown observation_model {self.observation_model!r}")
        if self.K is not None and self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must be in (0, 1), got {self.gamma}")

    @property
    def fo_width(self) -> int:
        return self.obs_hidden if self.actor_obs_hidden is None else self.actor_obs_hidden

    def planning_steps(self, height: int, width: int) -> int:
        return self.K if self.K is not None else 3 * max(height, width)


class NavNetParams(dict):
    """Named float64 arrays; the name prefix before the first dot is the component."""

    COMPONENTS = ("T", "Tp", "R", "Z", "actor", "bypass")

    def group(self, component: str) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.items() if k.split(".", 1)[0] == component}

    def copy(self) -> "NavNetParams":
        return NavNetParams({k: v.copy() for k, v in self.items()})

    @property
    def has_full_actor(self) -> bool:
        return "actor.fc2_w" in self

    def bind(self, graph: Graph | None = None) -> dict[str, Tensor]:
        if graph is None:
            return {k: Tensor(v) for k, v in self.items()}
        return {k: graph.param(v, k) for k, v in self.items()}


# per orientation, one logit for each observation bit, plus one for "cell is free"
BIT_CHANNELS = 4 * L + 1


def fusion_channels(c: ModelConfig) -> int:
    return c.map_hidden + c.obs_hidden + c.map_hidden * c.obs_hidden


def _tap(d: int) -> tuple[int, int]:
    dy, dx = HEADINGS[d % 4]
    return 1 + dy, 1 + dx


def kinematic_kernel(logit: float) -> np.ndarray:
    """Raw kernel whose softmax favours the nominal motion of each action (forward
    one cell along the heading, turn in place, stay) with the given logit margin.
    Knows nothing about obstacles or the goal; the gate learns those."""
    kern = np.zeros((3, 3, L, L * A))
    for l_dst in range(L):
        ty, tx = _tap(l_dst + 2)  # source sits behind the destination
        kern[ty, tx, l_dst, l_dst * A + 0] = logit
        kern[1, 1, (l_dst + 1) % L, l_dst * A + 1] = logit  # turn left
        kern[1, 1, (l_dst - 1) % L, l_dst * A + 2] = logit  # turn right
        kern[1, 1, l_dst, l_dst * A + 3] = logit  # stay
    return kern


def _init_fused_z(rng, c, p):
    p["Z.map2_w"] = _he(rng, (3, 3, c.map_hidden, c.map_hidden), 9 * c.map_hidden)
    p["Z.map2_b"] = np.zeros(c.map_hidden)
    p["Z.obs_w"] = _he(rng, (4, c.obs_hidden), 4)
    p["Z.obs_b"] = np.zeros(c.obs_hidden)
    fuse_in = fusion_channels(c)
    p["Z.fuse_w"] = rng.normal(0.0, np.sqrt(1.0 / fuse_in), size=(1, 1, fuse_in, L)) / c.z_scale
    p["Z.fuse_b"] = np.zeros(L)


def _he(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def init_params(rng: np.random.Generator, config: ModelConfig = ModelConfig(), full_actor: bool = False) -> NavNetParams:
    c = config
    p = NavNetParams()

    def transition(prefix):
        # raw values are divided by the logit scales so the initial logits do not depend on them
        kern = rng.normal(0.0, 0.01, size=(3, 3, L, L * A))
        if c.transition_init == "kinematic":
            kern += kinematic_kernel(c.kinematic_logit)
        p[f"{prefix}.kernel"] = kern / c.kernel_scale
        p[f"{prefix}.gate_w"] = rng.normal(0.0, 0.01, size=(3, 3, 2, L * A)) / c.gate_scale
        p[f"{prefix}.gate_b"] = np.full(L * A, -2.0 / c.gate_scale)

    transition("T")
    if c.untie_transition:
        transition("Tp")
    p["R.conv1_w"] = _he(rng, (3, 3, 2, c.reward_hidden), 18)
    p["R.conv1_b"] = np.zeros(c.reward_hidden)
    p["R.conv2_w"] = rng.normal(0.0, 0.01, size=(1, 1, c.reward_hidden, L * A))
    p["R.conv2_b"] = np.zeros(L * A)
    p["Z.map1_w"] = _he(rng, (3, 3, 2, c.map_hidden), 18)
    p["Z.map1_b"] = np.zeros(c.map_hidden)
    if c.observation_model == "bernoulli":
        p["Z.map2_w"] = rng.normal(0.0, np.sqrt(1.0 / (9 * c.map_hidden)), size=(3, 3, c.map_hidden, BIT_CHANNELS)) / c.z_scale
        p["Z.map2_b"] = np.zeros(BIT_CHANNELS)
    else:
        _init_fused_z(rng, c, p)
    if full_actor:
        p.update(init_actor(rng, c))
    else:
        p["bypass.w"] = rng.normal(0.0, 0.01, size=(4 + A, A))
        # start by passing q through so the plan drives the policy from the first step
        p["bypass.w"][4:] += np.eye(A)
        p["bypass.b"] = np.zeros(A)
    return p


def init_actor(rng: np.random.Generator, config: ModelConfig = ModelConfig()) -> NavNetParams:
    c = config
    p = NavNetParams()
    p["actor.fo_w"] = _he(rng, (4, c.fo_width), 4)
    p["actor.fo_b"] = np.zeros(c.fo_width)
    n_in = c.fo_width + (1 + 2 * HISTORY) * A
    p["actor.fc1_w"] = _he(rng, (n_in, c.actor_hidden), n_in)
    p["actor.fc1_b"] = np.zeros(c.actor_hidden)
    p["actor.fc2_w"] = rng.normal(0.0, 0.01, size=(c.actor_hidden, A))
    p["actor.fc2_b"] = np.zeros(A)
    return p


# ---------------------------------------------------------------------------
# inputs


def map_input(occupancy: np.ndarray, goal: tuple[int, int]) -> np.ndarray:
    """``[H, W, 2]`` network input from a binary floor map and goal cell ``(x, y)``."""
    occ = np.asarray(occupancy, dtype=np.float64)
    if occ.ndim != 2:
        raise ShapeError(f"floor map must be 2-D, got {occ.shape}")
    g = np.zeros_like(occ)
    g[goal[1], goal[0]] = 1.0
    return np.stack([occ, g], axis=-1)


def uniform_belief(maps: np.ndarray) -> np.ndarray:
    """Uniform over (free map cell, orientation) for a batch of map inputs."""
    free = (maps[..., 0] < 0.5).astype(np.float64)
    b = np.repeat(free[..., None], L, axis=-1)
    return b / b.sum(axis=(1, 2, 3), keepdims=True)


def _conv_bias(x, w, b):
    return ad.add_bias(ad.conv2d(x, w), b)


# ---------------------------------------------------------------------------
# learned POMDP components


def bernoulli_likelihood(logits: Tensor, obs: Tensor, scale: float = 1.0) -> Tensor:
    """``z = sigma(v) * prod_i sigma((2 o_i - 1) e_i)`` from per-state bit logits.

    ``logits`` is ``[B, H, W, 4L + 1]``: channel ``4 l + i`` predicts bit ``i`` when
    facing ``l`` and the last channel scores whether the cell can be occupied.
    """
    B, H, W, _ = logits.shape
    if scale != 1.0:
        logits = ad.scale(logits, scale)
    signs = ad.add_bias(ad.scale(obs, 2.0), ad.constant(np.full(4, -1.0)))
    signs = ad.broadcast_to(ad.reshape(signs, (B, 1, 1, 1, 4)), (B, H, W, L, 4))
    e = ad.einsum2("bhwc,cj->bhwj", logits, ad.constant(np.eye(BIT_CHANNELS)[:, : 4 * L]))
    v = ad.einsum2("bhwc,c->bhw", logits, ad.constant(np.eye(BIT_CHANNELS)[-1]))
    agree = ad.sigmoid(ad.mul(ad.reshape(e, (B, H, W, L, 4)), signs))
    z = ad.einsum2("bhwlk,k->bhwl", agree, ad.constant(np.eye(4)[0]))
    for i in range(1, 4):
        z = ad.mul(z, ad.einsum2("bhwlk,k->bhwl", agree, ad.constant(np.eye(4)[i])))
    free = ad.broadcast_to(ad.reshape(ad.sigmoid(v), (B, H, W, 1)), (B, H, W, L))
    return ad.mul(z, free)


def normalize_transition(raw: Tensor, scale: float = 1.0) -> Tensor:
    """Softmax of each output channel's kernel over its 3x3xL support."""
    k, _, cin, cout = raw.shape
    flat = ad.reshape(raw, (k * k * cin, cout))
    if scale != 1.0:
        flat = ad.scale(flat, scale)
    return ad.reshape(ad.softmax(flat, axis=0), (k, k, cin, cout))


def transition_gate(P: dict[str, Tensor], maps: Tensor, prefix: str = "T", scale: float = 1.0) -> Tensor:
    """Probability ``[B, H, W, L*A]`` that each (state, action) stays in place."""
    logits = _conv_bias(maps, P[f"{prefix}.gate_w"], P[f"{prefix}.gate_b"])
    return ad.sigmoid(logits if scale == 1.0 else ad.scale(logits, scale))


def f_R_apply(P: dict[str, Tensor], maps: Tensor) -> Tensor:
    h = ad.relu(_conv_bias(maps, P["R.conv1_w"], P["R.conv1_b"]))
    return _conv_bias(h, P["R.conv2_w"], P["R.conv2_b"])


def map_features(P: dict[str, Tensor], maps: Tensor) -> Tensor:
    """Map branch of the observation model; depends only on the map, so compute once."""
    h = ad.relu(_conv_bias(maps, P["Z.map1_w"], P["Z.map1_b"]))
    return _conv_bias(h, P["Z.map2_w"], P["Z.map2_b"])


def f_Z_apply(P: dict[str, Tensor], obs: Tensor, maps: Tensor, map_feat: Tensor | None = None,
              scale: float = 1.0) -> Tensor:
    """Unnormalized likelihood ``z(s)`` in (0, 1), shape ``[B, H, W, L]``."""
    if map_feat is None:
        map_feat = map_features(P, maps)
    if "Z.fuse_w" not in P:
        return bernoulli_likelihood(map_feat, obs, scale)
    B, H, W, _ = map_feat.shape
    o = ad.relu(ad.fully_connected(obs, P["Z.obs_w"], P["Z.obs_b"]))
    nm, no = map_feat.shape[-1], o.shape[-1]
    tiled = ad.broadcast_to(ad.reshape(o, (B, 1, 1, no)), (B, H, W, no))
    # outer-product channels make map/observation agreement linear in the fusion weights
    outer = ad.reshape(ad.einsum2("bhwj,bk->bhwjk", map_feat, o), (B, H, W, nm * no))
    h = ad.concat([map_feat, tiled, outer], axis=-1)
    logits = _conv_bias(h, P["Z.fuse_w"], P["Z.fuse_b"])
    return ad.sigmoid(logits if scale == 1.0 else ad.scale(logits, scale))


# ---------------------------------------------------------------------------
# filter, planner, QMDP values


def _action_channels(actions: np.ndarray) -> np.ndarray:
    return np.arange(L)[None, :] * A + np.asarray(actions)[:, None]


def filter_step(
    belief: Tensor,
    actions: np.ndarray,
    z: Tensor,
    kernel: Tensor,
    gate: Tensor,
    reset: np.ndarray | None = None,
) -> tuple[Tensor, np.ndarray]:
    """One Bayes update for a batch: predict with the executed actions, correct by ``z``.

    ``kernel`` is the normalized transition kernel, ``gate`` the stay probabilities.
    Returns the new belief and a boolean mask of episodes whose mass collapsed
    (those are reset to ``reset``, uniform over free cells by default).
    """
    idx = _action_channels(actions)
    stay = ad.gather_last(gate, idx)
    moving = ad.mul(belief, ad.sub(ad.constant(np.ones(stay.shape)), stay))
    moved = ad.gather_last(ad.conv2d(moving, kernel), idx)
    pred = ad.add(moved, ad.mul(belief, stay))
    post = ad.mul(pred, z)
    mass = post.data.sum(axis=(1, 2, 3))
    diverged = mass < DIVERGENCE_MASS
    if diverged.any():
        if reset is None:
            reset = np.full(post.shape, 1.0 / np.prod(post.shape[1:]))
        keep = np.broadcast_to((~diverged)[:, None, None, None], post.shape).astype(np.float64)
        post = ad.add(ad.mul(post, ad.constant(keep)), ad.constant(reset * (1.0 - keep)))
    return ad.normalize_sum(post, (1, 2, 3)), diverged


def planner_kernel(kernel: Tensor) -> Tensor:
    """Adjoint of the filter kernel: spatially flipped with source/destination swapped.

    Filter: ``kernel[dy, dx, l_src, (l_dst, a)]`` gathers mass into the destination.
    Planner: ``out[dy, dx, l_dst, (l_src, a)]`` gathers values from destinations.
    """
    k = ad.flip(kernel, (0, 1))
    k = ad.reshape(k, (3, 3, L, L, A))
    k = ad.transpose(k, (0, 1, 3, 2, 4))
    return ad.reshape(k, (3, 3, L, L * A))


def planner_unroll(reward: Tensor, kernel: Tensor, gate: Tensor, K: int, gamma: float) -> Tensor:
    """``Q_K`` from ``V_0 = 0`` by K steps of value iteration, ``[B, H, W, L*A]``."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    back = planner_kernel(kernel)
    B, H, W, _ = reward.shape
    Q = reward
    for _ in range(K - 1):
        V = ad.max_over_group(Q, A)
        moved = ad.conv2d(V, back)
        here = ad.reshape(ad.broadcast_to(ad.reshape(V, (B, H, W, L, 1)), (B, H, W, L, A)), (B, H, W, L * A))
        # (1 - c) * moved + c * here
        expected = ad.add(moved, ad.mul(gate, ad.sub(here, moved)))
        Q = ad.add(reward, ad.scale(expected, gamma))
    return Q


def compute_q(Q: Tensor, belief: Tensor) -> Tensor:
    """Belief-weighted action values ``[B, A]``."""
    B, H, W, _ = Q.shape
    if belief.shape != (B, H, W, L):
        raise ShapeError(f"belief {belief.shape} does not match Q {Q.shape}")
    return ad.einsum2("bhwla,bhwl->ba", ad.reshape(Q, (B, H, W, L, A)), belief)


# ---------------------------------------------------------------------------
# actors


def actor_forward(P: dict[str, Tensor], obs: Tensor, q_now: Tensor, q_hist: Tensor, u_hist: Tensor) -> Tensor:
    """Full actor: observation features plus the plan vector (current and past action
    values, past actions) through two fully connected layers. Returns logits."""
    fo = ad.relu(ad.fully_connected(obs, P["actor.fo_w"], P["actor.fo_b"]))
    x = ad.concat([fo, q_now, q_hist, u_hist], axis=-1)
    h = ad.relu(ad.fully_connected(x, P["actor.fc1_w"], P["actor.fc1_b"]))
    return ad.fully_connected(h, P["actor.fc2_w"], P["actor.fc2_b"])


def actor_bypass_mode(P: dict[str, Tensor], obs: Tensor, q_now: Tensor) -> Tensor:
    return ad.fully_connected(ad.concat([obs, q_now], axis=-1), P["bypass.w"], P["bypass.b"])


# ---------------------------------------------------------------------------
# recurrent episode


class NavNetRunner:
    """Holds the per-episode recurrent state for a batch of maps.

    Plans once (the map is static), then each :meth:`step` filters, computes
    ``q`` and runs the actor.
    """

    def __init__(self, P: dict[str, Tensor], maps: np.ndarray, config: ModelConfig = ModelConfig(),
                 full_actor: bool | None = None, initial_belief: np.ndarray | None = None):
        maps = np.asarray(maps, dtype=np.float64)
        if maps.ndim == 3:
            maps = maps[None]
        B, H, W, _ = maps.shape
        self.P = P
        self.config = config
        self.full_actor = ("actor.fc2_w" in P) if full_actor is None else full_actor
        m = ad.constant(maps)
        c = config
        self.kernel = normalize_transition(P["T.kernel"], c.kernel_scale)
        self.gate = transition_gate(P, m, "T", c.gate_scale)
        if c.untie_transition:
            plan_kernel = normalize_transition(P["Tp.kernel"], c.kernel_scale)
            plan_gate = transition_gate(P, m, "Tp", c.gate_scale)
        else:
            plan_kernel, plan_gate = self.kernel, self.gate
        self.K = config.planning_steps(H, W)
        self.Q = planner_unroll(f_R_apply(P, m), plan_kernel, plan_gate, self.K, config.gamma)
        self.map_feat = map_features(P, m)
        self.maps = m
        self.reset_belief = uniform_belief(maps)
        self.belief = ad.constant(self.reset_belief if initial_belief is None else initial_belief)
        self.q_hist: list[Tensor] = [ad.constant(np.zeros((B, A)))] * HISTORY
        self.u_hist: list[np.ndarray] = [np.zeros((B, A))] * HISTORY
        self.prev_action = np.full(B, STAY)
        self.divergences = np.zeros(B, dtype=int)
        self.batch = B

    def step(self, obs: np.ndarray) -> tuple[Tensor, Tensor]:
        """Consume one observation ``[B, 4]``; returns ``(logits, q)``."""
        o = ad.constant(np.asarray(obs, dtype=np.float64).reshape(self.batch, 4))
        z = f_Z_apply(self.P, o, self.maps, self.map_feat, self.config.z_scale)
        self.belief, diverged = filter_step(self.belief, self.prev_action, z, self.kernel, self.gate, self.reset_belief)
        self.divergences += diverged
        q = compute_q(self.Q, self.belief)
        if self.full_actor:
            logits = actor_forward(
                self.P, o, q, ad.concat(self.q_hist, axis=-1), ad.constant(np.concatenate(self.u_hist, axis=-1))
            )
        else:
            logits = actor_bypass_mode(self.P, o, q)
        self.q_hist = [q] + self.q_hist[:-1]
        self._last_q = q
        return logits, q

    def commit(self, actions: np.ndarray):
        """Record the actions executed after the last step (teacher-forced or emitted)."""
        actions = np.asarray(actions, dtype=np.intp).reshape(self.batch)
        self.prev_action = actions
        self.u_hist = [np.eye(A)[actions]] + self.u_hist[:-1]


def navnet_episode_forward(
    P: dict[str, Tensor],
    maps: np.ndarray,
    obs_sequence: np.ndarray,
    action_sequence: np.ndarray,
    config: ModelConfig = ModelConfig(),
) -> list[Tensor]:
    """Teacher-forced pass over aligned sequences; one logit tensor ``[B, A]`` per step.

    ``obs_sequence`` is ``[B, T, 4]`` (or ``[T, 4]`` with a single map) and
    ``action_sequence`` holds the actions executed after each observation.
    """
    obs_sequence = np.asarray(obs_sequence, dtype=np.float64)
    action_sequence = np.asarray(action_sequence, dtype=np.intp)
    if obs_sequence.ndim == 2:
        obs_sequence, action_sequence = obs_sequence[None], action_sequence[None]
    if obs_sequence.shape[:2] != action_sequence.shape:
        raise ShapeError(f"observations {obs_sequence.shape} and actions {action_sequence.shape} are not aligned")
    runner = NavNetRunner(P, maps, config)
    logits = []
    for t in range(obs_sequence.shape[1]):
        lg, _ = runner.step(obs_sequence[:, t])
        logits.append(lg)
        runner.commit(action_sequence[:, t])
    return logits


# ---------------------------------------------------------------------------
# parameters that encode an exact model


def planted_params(
    config: ModelConfig = ModelConfig(),
    sharpness: float = 50.0,
    full_actor: bool = False,
    greedy_scale: float = 1.0,
) -> NavNetParams:
    """Weights under which the network reproduces the exact tabular POMDP.

    Valid for maps that show every blocking object (Task B, or any furniture-free
    maze): deterministic moves, stay-in-place on collision, absorbing goal,
    indicator observation likelihood and the +1 / -1 / -0.05 reward. The actor
    head returns ``greedy_scale * q``.
    """
    c = config
    p = init_params(np.random.default_rng(0), c, full_actor=full_actor)
    for k in p:
        p[k] = np.zeros_like(p[k])

    def transition(prefix):
        kern = kinematic_kernel(sharpness)
        gw = np.zeros((3, 3, 2, L * A))
        for l_src in range(L):
            ty, tx = _tap(l_src)
            gw[ty, tx, 0, l_src * A + 0] = 80.0
            for a in range(A):
                gw[1, 1, 1, l_src * A + a] = 80.0
        p[f"{prefix}.kernel"] = kern / c.kernel_scale
        p[f"{prefix}.gate_w"] = gw / c.gate_scale
        p[f"{prefix}.gate_b"] = np.full(L * A, -40.0 / c.gate_scale)

    transition("T")
    if c.untie_transition:
        transition("Tp")

    # reward: features goal-ahead g_d, blocked-ahead-and-not-at-goal w_d, not-at-goal e
    w1 = p["R.conv1_w"]
    b1 = p["R.conv1_b"]
    for d in range(4):
        ty, tx = _tap(d)
        w1[ty, tx, 1, d] = 1.0
        w1[ty, tx, 0, 4 + d] = 1.0
        w1[1, 1, 1, 4 + d] = -1.0
    w1[1, 1, 1, 8] = -1.0
    b1[8] = 1.0
    w2 = p["R.conv2_w"]
    for l in range(L):
        w2[0, 0, l, l * A + 0] = 1.05
        w2[0, 0, 4 + l, l * A + 0] = -0.95
        for a in range(A):
            w2[0, 0, 8, l * A + a] = -0.05

    m1 = p["Z.map1_w"]
    for d in range(4):
        ty, tx = _tap(d)
        m1[ty, tx, 0, d] = 1.0
    m1[1, 1, 0, 4] = 1.0
    m2, mb2 = p["Z.map2_w"], p["Z.map2_b"]
    if c.observation_model == "bernoulli":
        # bit i facing l is the occupancy of neighbour (l + i) mod 4
        sharp = 40.0
        for l in range(L):
            for i in range(4):
                m2[1, 1, (l + i) % 4, 4 * l + i] = 2.0 * sharp
                mb2[4 * l + i] = -sharp
        m2[1, 1, 4, BIT_CHANNELS - 1] = -2.0 * sharp
        mb2[BIT_CHANNELS - 1] = sharp
        m2 /= c.z_scale
        mb2 /= c.z_scale
    else:
        # signed neighbour occupancy 2 n_d - 1, own occupancy, observation bits and a
        # constant; the agreement sum_i (2 o_i - 1)(2 n_{l+i} - 1) is linear in the
        # outer-product channels
        for d in range(4):
            m2[1, 1, d, d] = 2.0
            mb2[d] = -1.0
        m2[1, 1, 4, 4] = 1.0
        ow, ob = p["Z.obs_w"], p["Z.obs_b"]
        for i in range(4):
            ow[i, i] = 1.0
        ob[4] = 1.0
        mh, oh = c.map_hidden, c.obs_hidden
        scale, offset = 60.0, 10.0
        f, fb = p["Z.fuse_w"], p["Z.fuse_b"]
        outer0 = mh + oh
        for l in range(L):
            for i in range(4):
                d = (l + i) % 4
                f[0, 0, outer0 + d * oh + i, l] += 2.0 * scale
                f[0, 0, outer0 + d * oh + 4, l] -= scale
            f[0, 0, 4, l] = -100.0
            fb[l] = offset - 4.0 * scale
        f /= c.z_scale
        fb /= c.z_scale

    if full_actor:
        # route q_now straight through two layers: relu(q + shift) - shift
        shift = 10.0
        off = c.fo_width
        p["actor.fc1_w"][off : off + A, :A] = np.eye(A)
        p["actor.fc1_b"][:A] = shift
        p["actor.fc2_w"][:A, :] = greedy_scale * np.eye(A)
        p["actor.fc2_b"][:] = -greedy_scale * shift
    else:
        p["bypass.w"][4:, :] = greedy_scale * np.eye(A)
    return p
