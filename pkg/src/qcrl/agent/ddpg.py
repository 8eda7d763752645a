"""Deterministic actor-critic agent with an optional reward-prediction task.

``algo="ddpg"`` is plain DDPG.  ``algo="at_drl"`` adds a reward predictor
whose input features come from the actor's first ``shared_layers`` layers;
its regression gradient is pushed back through those layers and merged into
the actor's own gradient, so the predictor shapes the policy's features.
The predictor regresses rewards standardized by the running mean and std of
all rewards it has been trained on, which keeps its targets O(1) whatever
the task's reward range.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import nn
from .noise import OUProcess
from .replay import Batch, InsufficientBuffer, ReplayBuffer

ALGOS = ("at_drl", "ddpg")


@dataclass
class AgentConfig:
    actor_widths: tuple = (64, 128, 128, 64)
    critic_widths: tuple = (64, 128, 128, 64)
    aux_widths: tuple = (64,)
    shared_layers: int = 2
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    lr_aux: float = 1e-3
    # actor lr decays linearly to lr_actor * lr_actor_final_ratio over the
    # same fraction of the budget as the exploration noise
    lr_actor_final_ratio: float = 0.1
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 64
    buffer_capacity: int = 100_000
    learning_starts: int = 1000
    train_every: int = 1
    aux_weight: float = 1.0
    reward_blend: float = 0.0
    reward_scale: float = 1e-2
    # floor on the reward std used to normalize reward-predictor targets
    aux_std_floor: float = 1.0
    actor_final_scale: float = 1e-3
    ou_theta: float = 0.15
    ou_mu: float = 0.0
    ou_sigma: float = 0.2
    ou_sigma_final: float = 0.05
    ou_dt: float = 1.0
    # fraction of the episode budget over which sigma decays
    ou_decay_fraction: float = 0.5

    def validate(self):
        if not 0 < self.shared_layers <= len(self.actor_widths):
            raise ValueError("shared_layers must be between 1 and the actor's hidden depth")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if not 0.0 <= self.reward_blend <= 1.0:
            raise ValueError("reward_blend must lie in [0, 1]")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ValueError("buffer capacity must hold at least one batch")
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")
        if self.aux_std_floor <= 0:
            raise ValueError("aux_std_floor must be positive")
        if not 0.0 < self.lr_actor_final_ratio <= 1.0:
            raise ValueError("lr_actor_final_ratio must lie in (0, 1]")


@dataclass
class RunningStats:
    """Mean and variance over every reward the predictor has been trained on."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def update(self, x):
        x = np.asarray(x, dtype=float).ravel()
        if x.size == 0:
            return
        n, bmean = x.size, float(x.mean())
        bm2 = float(np.sum((x - bmean) ** 2))
        total = self.count + n
        delta = bmean - self.mean
        self.mean += delta * n / total
        self.m2 += bm2 + delta * delta * self.count * n / total
        self.count = total

    def std(self, floor: float) -> float:
        var = self.m2 / self.count if self.count else 0.0
        return max(float(np.sqrt(var)), floor)


@dataclass
class TrainMetrics:
    critic_loss: float
    actor_objective: float
    aux_loss: float | None = None


@dataclass
class AgentBundle:
    cfg: AgentConfig
    algo: str
    obs_dim: int
    act_dim: int
    actor: nn.MlpParams
    critic: nn.MlpParams
    target_actor: nn.MlpParams
    target_critic: nn.MlpParams
    aux_head: nn.MlpParams
    actor_opt: nn.AdamState
    critic_opt: nn.AdamState
    aux_opt: nn.AdamState
    noise: OUProcess
    noise_rng: np.random.Generator
    updates: int = 0
    reward_stats: RunningStats = field(default_factory=RunningStats)
    last_metrics: TrainMetrics | None = field(default=None, repr=False)

    @property
    def uses_aux(self) -> bool:
        return self.algo == "at_drl"

    def begin_episode(self):
        self.noise.reset()

    def act(self, state, explore: bool):
        a = select_action(self, state, self.noise if explore else None, explore)
        return a, a

    def predict(self, state, action) -> float:
        return predict_reward(self, state, action) if self.uses_aux else 0.0

    def learn(self, buffer: ReplayBuffer):
        self.last_metrics = train_step(self, buffer, self.cfg.batch_size, self.algo)
        return self.last_metrics


def make_bundle(obs_dim: int, act_dim: int, cfg: AgentConfig, rng: np.random.Generator,
                algo: str = "at_drl", noise_rng: np.random.Generator | None = None) -> AgentBundle:
    if algo not in ALGOS:
        raise ValueError(f"unknown algorithm {algo!r}")
    cfg.validate()
    actor = nn.make_mlp(obs_dim, cfg.actor_widths, act_dim, rng, out_activation="tanh",
                        final_scale=cfg.actor_final_scale, shared_prefix=cfg.shared_layers)
    critic = nn.make_mlp(obs_dim + act_dim, cfg.critic_widths, 1, rng)
    feat = cfg.actor_widths[cfg.shared_layers - 1]
    aux_head = nn.make_mlp(feat + act_dim, cfg.aux_widths, 1, rng)
    noise = OUProcess(act_dim, cfg.ou_theta, cfg.ou_mu, cfg.ou_sigma, cfg.ou_dt)
    return AgentBundle(
        cfg=cfg, algo=algo, obs_dim=obs_dim, act_dim=act_dim,
        actor=actor, critic=critic,
        target_actor=actor.copy(), target_critic=critic.copy(),
        aux_head=aux_head,
        actor_opt=nn.AdamState.for_params(actor, cfg.lr_actor),
        critic_opt=nn.AdamState.for_params(critic, cfg.lr_critic),
        aux_opt=nn.AdamState.for_params(aux_head, cfg.lr_aux),
        noise=noise,
        noise_rng=noise_rng if noise_rng is not None else np.random.default_rng(rng.integers(2**63)),
    )


def select_action(bundle: AgentBundle, encoded_state, noise: OUProcess | None = None,
                  explore: bool = False) -> np.ndarray:
    """Actor output, plus an OU sample when exploring, clamped to [-1, 1]."""
    a, _ = nn.forward(bundle.actor, encoded_state)
    if explore and noise is not None:
        a = a + noise.sample(bundle.noise_rng)
    return np.clip(a, -1.0, 1.0)


def _aux_forward(bundle: AgentBundle, states, actions, trunk_cache=None):
    if trunk_cache is None:
        feats, trunk_cache = nn.forward(bundle.actor, states, n_layers=bundle.cfg.shared_layers)
    else:
        feats = trunk_cache.post[bundle.cfg.shared_layers - 1]
    x = np.concatenate([np.atleast_2d(feats), np.atleast_2d(actions)], axis=1)
    out, head_cache = nn.forward(bundle.aux_head, x)
    return out[:, 0], trunk_cache, head_cache


def predict_reward(bundle: AgentBundle, encoded_state, action) -> float:
    """Predicted environment reward for taking ``action`` in ``encoded_state``."""
    s = np.asarray(encoded_state, dtype=float)
    a = np.asarray(action, dtype=float)
    if s.shape[-1] != bundle.obs_dim or a.shape[-1] != bundle.act_dim:
        raise nn.ShapeMismatch("state/action width does not match the agent")
    out, _, _ = _aux_forward(bundle, s[None, :], a[None, :])
    st = bundle.reward_stats
    return st.mean + st.std(bundle.cfg.aux_std_floor) * float(out[0])


def learner_reward(bundle: AgentBundle, batch: Batch) -> np.ndarray:
    lam = bundle.cfg.reward_blend
    r = batch.reward if lam == 0.0 else (1.0 - lam) * batch.reward + lam * batch.predicted_reward
    return r * bundle.cfg.reward_scale


def td_target(bundle: AgentBundle, batch: Batch) -> np.ndarray:
    """``y = r + gamma Q'(s', mu'(s'))``, or ``y = r`` on terminal transitions.

    Rewards are in learner units (scaled by ``reward_scale``).
    """
    r = learner_reward(bundle, batch)
    a_next, _ = nn.forward(bundle.target_actor, batch.next_state)
    q_next, _ = nn.forward(bundle.target_critic, np.concatenate([batch.next_state, a_next], axis=1))
    return r + bundle.cfg.gamma * (1.0 - batch.done) * q_next[:, 0]


def train_step(bundle: AgentBundle, buffer: ReplayBuffer, batch_size: int | None = None,
               algo: str | None = None) -> TrainMetrics:
    """One minibatch update of critic, actor (and reward predictor), then targets."""
    algo = algo or bundle.algo
    batch_size = batch_size or bundle.cfg.batch_size
    if len(buffer) < batch_size:
        raise InsufficientBuffer(f"buffer holds {len(buffer)} < {batch_size} transitions")
    batch = buffer.sample(batch_size)
    n = batch_size
    cfg = bundle.cfg

    # critic: mean squared TD error
    y = td_target(bundle, batch)
    q, c_cache = nn.forward(bundle.critic, np.concatenate([batch.state, batch.action], axis=1))
    err = q[:, 0] - y
    critic_loss = float(np.mean(err**2))
    g_critic = nn.backward(bundle.critic, c_cache, (2.0 / n) * err[:, None])
    nn.adam_step(bundle.critic, g_critic, bundle.critic_opt)

    # actor: ascend mean Q(s, mu(s)) through the updated critic
    a_pi, a_cache = nn.forward(bundle.actor, batch.state)
    q_pi, q_cache = nn.forward(bundle.critic, np.concatenate([batch.state, a_pi], axis=1))
    dq_da = nn.input_gradient(bundle.critic, q_cache, np.full((n, 1), -1.0 / n), start=bundle.obs_dim)
    g_actor = nn.backward(bundle.actor, a_cache, dq_da)

    aux_loss = None
    if algo == "at_drl":
        k = cfg.shared_layers
        trunk_cache = nn.Cache(a_cache.inputs[:k], a_cache.pre[:k], a_cache.post[:k])
        r_pre, _, h_cache = _aux_forward(bundle, batch.state, batch.action, trunk_cache)
        st = bundle.reward_stats
        st.update(batch.reward)
        diff = r_pre - (batch.reward - st.mean) / st.std(cfg.aux_std_floor)
        aux_loss = float(np.mean(diff**2))
        g_head, g_in = nn.backprop(bundle.aux_head, h_cache, (2.0 / n) * diff[:, None])
        feat = cfg.actor_widths[k - 1]
        g_trunk, _ = nn.backprop(bundle.actor, trunk_cache, g_in[:, :feat], need_input=False)
        g_actor = nn.shared_gradient_merge(bundle.actor, g_actor, g_trunk, cfg.aux_weight, k)
        nn.adam_step(bundle.aux_head, g_head, bundle.aux_opt)
    nn.adam_step(bundle.actor, g_actor, bundle.actor_opt)

    nn.soft_update(bundle.target_critic, bundle.critic, cfg.tau)
    nn.soft_update(bundle.target_actor, bundle.actor, cfg.tau)
    bundle.updates += 1
    return TrainMetrics(critic_loss, float(np.mean(q_pi)), aux_loss)


# -- checkpoint state -----------------------------------------------------------

_NETS = ("actor", "critic", "target_actor", "target_critic", "aux_head")
_OPTS = (("actor_opt", "actor"), ("critic_opt", "critic"), ("aux_opt", "aux_head"))


def bundle_state(bundle: AgentBundle) -> tuple[dict, dict]:
    meta = {
        "kind": "ddpg",
        "algo": bundle.algo,
        "obs_dim": bundle.obs_dim,
        "act_dim": bundle.act_dim,
        "updates": bundle.updates,
        "nets": {k: nn.params_to_dict(getattr(bundle, k)) for k in _NETS},
        "opts": {},
        "noise": {"sigma": bundle.noise.sigma},
        "reward_stats": [bundle.reward_stats.count, bundle.reward_stats.mean, bundle.reward_stats.m2],
        "noise_rng": bundle.noise_rng.bit_generator.state,
    }
    arrays = {f"net_{k}": getattr(bundle, k).theta for k in _NETS}
    for name, _ in _OPTS:
        opt = getattr(bundle, name)
        meta["opts"][name] = {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "t": opt.t}
        arrays[f"{name}_m"] = opt.m
        arrays[f"{name}_v"] = opt.v
    arrays["noise_current"] = bundle.noise.current
    return meta, arrays


def load_bundle_state(bundle: AgentBundle, meta: dict, arrays: dict):
    for k in _NETS:
        net = getattr(bundle, k)
        if meta["nets"][k] != nn.params_to_dict(net):
            raise nn.ArchitectureMismatch(f"checkpoint network {k} differs from configuration")
        net.theta[...] = arrays[f"net_{k}"]
    for name, _ in _OPTS:
        opt = getattr(bundle, name)
        for key, value in meta["opts"][name].items():
            setattr(opt, key, value)
        opt.m[...] = arrays[f"{name}_m"]
        opt.v[...] = arrays[f"{name}_v"]
    bundle.updates = meta["updates"]
    count, mean, m2 = meta["reward_stats"]
    bundle.reward_stats = RunningStats(int(count), float(mean), float(m2))
    bundle.noise.sigma = meta["noise"]["sigma"]
    bundle.noise.current = np.array(arrays["noise_current"], dtype=float)
    bundle.noise_rng.bit_generator.state = meta["noise_rng"]
