from .ddpg import (
    ALGOS,
    AgentBundle,
    AgentConfig,
    TrainMetrics,
    make_bundle,
    predict_reward,
    select_action,
    td_target,
    train_step,
)
from .dqn import DqnAgent, DqnConfig, dqn_train_step, make_action_grid
from .noise import OUProcess, linear_schedule, ou_sample
from .replay import Batch, InsufficientBuffer, ReplayBuffer, Transition
from .rollout import EpisodeSummary, run_episode

__all__ = [
    "ALGOS", "AgentBundle", "AgentConfig", "TrainMetrics", "make_bundle", "predict_reward",
    "select_action", "td_target", "train_step", "DqnAgent", "DqnConfig", "dqn_train_step",
    "make_action_grid", "OUProcess", "linear_schedule", "ou_sample", "Batch",
    "InsufficientBuffer", "ReplayBuffer", "Transition", "EpisodeSummary", "run_episode",
]
