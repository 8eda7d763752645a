from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class InsufficientBuffer(RuntimeError):
    pass


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    predicted_reward: float = 0.0


class Batch(NamedTuple):
    state: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_state: np.ndarray
    done: np.ndarray
    predicted_reward: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring of transitions stored column-wise."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int, rng: np.random.Generator):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.rng = rng
        self.state = np.zeros((capacity, obs_dim))
        self.action = np.zeros((capacity, act_dim))
        self.reward = np.zeros(capacity)
        self.next_state = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.predicted_reward = np.zeros(capacity)
        self.pos = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, state, action, reward, next_state, done, predicted_reward=0.0):
        i = self.pos
        self.state[i] = state
        self.action[i] = action
        self.reward[i] = reward
        self.next_state[i] = next_state
        self.done[i] = float(done)
        self.predicted_reward[i] = predicted_reward
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def push(self, tr: Transition):
        self.add(tr.state, tr.action, tr.reward, tr.next_state, tr.done, tr.predicted_reward)

    def sample_indices(self, batch_size: int) -> np.ndarray:
        if self.size < batch_size:
            raise InsufficientBuffer(f"buffer holds {self.size} < {batch_size} transitions")
        return self.rng.choice(self.size, size=batch_size, replace=False)

    def sample(self, batch_size: int) -> Batch:
        idx = self.sample_indices(batch_size)
        return Batch(
            self.state[idx], self.action[idx], self.reward[idx],
            self.next_state[idx], self.done[idx], self.predicted_reward[idx],
        )

    def arrays(self) -> dict:
        n = self.size
        return {
            "state": self.state[:n], "action": self.action[:n], "reward": self.reward[:n],
            "next_state": self.next_state[:n], "done": self.done[:n],
            "predicted_reward": self.predicted_reward[:n],
        }

    def load_arrays(self, arrays: dict, pos: int):
        n = arrays["reward"].shape[0]
        for key, value in arrays.items():
            getattr(self, key)[:n] = value
        self.size = n
        self.pos = pos
