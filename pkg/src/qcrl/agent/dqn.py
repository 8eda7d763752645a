"""Discrete-action Q-learning baseline over a grid of control amplitudes."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .. import nn
from .replay import InsufficientBuffer, ReplayBuffer

log = logging.getLogger(__name__)

MAX_JOINT_ACTIONS = 6561


@dataclass
class DqnConfig:
    hidden: tuple = (10,)
    lr: float = 0.01
    gamma: float = 0.99
    batch_size: int = 32
    buffer_capacity: int = 100_000
    learning_starts: int = 1000
    train_every: int = 1
    target_period: int = 200
    eps_start: float = 1.0
    eps_end: float = 0.05
    # fraction of the episode budget over which epsilon decays
    eps_decay_fraction: float = 0.3
    reward_scale: float = 1e-3
    grid_points: int = 0


def make_action_grid(n_channels: int, low=-1.0, high=1.0, points: int = 0) -> np.ndarray:
    """Joint grid of per-channel amplitudes, one row per discrete action.

    Default resolution: 11 points for one channel, 5 for two, 3 beyond that.
    """
    if points <= 0:
        points = 11 if n_channels == 1 else 5 if n_channels == 2 else 3
    low = np.broadcast_to(np.asarray(low, dtype=float), (n_channels,))
    high = np.broadcast_to(np.asarray(high, dtype=float), (n_channels,))
    axes = [np.linspace(lo, hi, points) for lo, hi in zip(low, high)]
    n_joint = points**n_channels
    if n_joint > MAX_JOINT_ACTIONS:
        log.warning("action grid of %d joint actions truncated to %d", n_joint, MAX_JOINT_ACTIONS)
        rows = itertools.islice(itertools.product(*axes), MAX_JOINT_ACTIONS)
        return np.array(list(rows))
    return np.array(list(itertools.product(*axes)))


@dataclass
class DqnMetrics:
    loss: float
    mean_q: float


class DqnAgent:
    def __init__(self, obs_dim: int, grid: np.ndarray, cfg: DqnConfig, rng: np.random.Generator,
                 explore_rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.grid = np.asarray(grid, dtype=float)
        self.qnet = nn.make_mlp(obs_dim, cfg.hidden, len(self.grid), rng)
        self.target = self.qnet.copy()
        self.opt = nn.AdamState.for_params(self.qnet, cfg.lr)
        self.explore_rng = explore_rng if explore_rng is not None else np.random.default_rng(rng.integers(2**63))
        self.epsilon = cfg.eps_start
        self.updates = 0
        self.last_metrics = None

    algo = "dqn"
    uses_aux = False

    @property
    def act_dim(self) -> int:
        return self.grid.shape[1]

    def begin_episode(self):
        pass

    def greedy_index(self, state) -> int:
        q, _ = nn.forward(self.qnet, state)
        return int(np.argmax(q))

    def act(self, state, explore: bool):
        """Return ``(env_action, stored_action)``; the stored form is the grid index."""
        if explore and self.explore_rng.random() < self.epsilon:
            idx = int(self.explore_rng.integers(len(self.grid)))
        else:
            idx = self.greedy_index(state)
        return self.grid[idx].copy(), np.array([float(idx)])

    def predict(self, state, action) -> float:
        return 0.0

    def learn(self, buffer: ReplayBuffer):
        self.last_metrics = dqn_train_step(self, buffer, self.cfg.batch_size)
        return self.last_metrics


def dqn_train_step(agent: DqnAgent, buffer: ReplayBuffer, batch_size: int | None = None) -> DqnMetrics:
    """One-step Q-learning on a minibatch; the target net is copied every ``target_period`` updates."""
    cfg = agent.cfg
    batch_size = batch_size or cfg.batch_size
    if len(buffer) < batch_size:
        raise InsufficientBuffer(f"buffer holds {len(buffer)} < {batch_size} transitions")
    b = buffer.sample(batch_size)
    idx = b.action[:, 0].astype(int)
    q_next, _ = nn.forward(agent.target, b.next_state)
    y = b.reward * cfg.reward_scale + cfg.gamma * (1.0 - b.done) * q_next.max(axis=1)
    q, cache = nn.forward(agent.qnet, b.state)
    rows = np.arange(batch_size)
    err = q[rows, idx] - y
    g_out = np.zeros_like(q)
    g_out[rows, idx] = (2.0 / batch_size) * err
    nn.adam_step(agent.qnet, nn.backward(agent.qnet, cache, g_out), agent.opt)
    agent.updates += 1
    if agent.updates % cfg.target_period == 0:
        agent.target.theta[...] = agent.qnet.theta
    return DqnMetrics(float(np.mean(err**2)), float(np.mean(q)))


def dqn_state(agent: DqnAgent) -> tuple[dict, dict]:
    meta = {
        "kind": "dqn",
        "algo": "dqn",
        "obs_dim": agent.obs_dim,
        "updates": agent.updates,
        "epsilon": agent.epsilon,
        "net": nn.params_to_dict(agent.qnet),
        "opt": {"lr": agent.opt.lr, "beta1": agent.opt.beta1, "beta2": agent.opt.beta2,
                "eps": agent.opt.eps, "t": agent.opt.t},
        "explore_rng": agent.explore_rng.bit_generator.state,
    }
    arrays = {
        "net_qnet": agent.qnet.theta, "net_target": agent.target.theta,
        "opt_m": agent.opt.m, "opt_v": agent.opt.v, "grid": agent.grid,
    }
    return meta, arrays


def load_dqn_state(agent: DqnAgent, meta: dict, arrays: dict):
    if meta["net"] != nn.params_to_dict(agent.qnet):
        raise nn.ArchitectureMismatch("checkpoint Q-network differs from configuration")
    agent.qnet.theta[...] = arrays["net_qnet"]
    agent.target.theta[...] = arrays["net_target"]
    agent.opt.m[...] = arrays["opt_m"]
    agent.opt.v[...] = arrays["opt_v"]
    for key, value in meta["opt"].items():
        setattr(agent.opt, key, value)
    agent.updates = meta["updates"]
    agent.epsilon = meta["epsilon"]
    agent.explore_rng.bit_generator.state = meta["explore_rng"]
