from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OUProcess:
    """Ornstein-Uhlenbeck exploration noise, one component per channel.

    Discretized with Euler-Maruyama:
    ``N <- N + theta (mu - N) dt + sigma sqrt(dt) xi``.
    """

    size: int
    theta: float = 0.15
    mu: float = 0.0
    sigma: float = 0.2
    dt: float = 1.0
    initial: float = 0.0
    current: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.theta < 0 or self.sigma < 0:
            raise ValueError("theta and sigma must be non-negative")
        if self.current is None:
            self.reset()

    def reset(self):
        self.current = np.full(self.size, float(self.initial))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        xi = rng.standard_normal(self.size)
        self.current = (
            self.current
            + self.theta * (self.mu - self.current) * self.dt
            + self.sigma * np.sqrt(self.dt) * xi
        )
        return self.current.copy()

    def stationary_variance(self) -> float:
        """Variance of the discrete AR(1) chain this update defines."""
        phi = 1.0 - self.theta * self.dt
        return self.sigma**2 * self.dt / (1.0 - phi**2)


def ou_sample(p: OUProcess, rng: np.random.Generator) -> np.ndarray:
    return p.sample(rng)


def linear_schedule(start: float, end: float, progress: float) -> float:
    """Interpolate from ``start`` to ``end`` as ``progress`` goes 0 -> 1, then hold."""
    progress = min(max(progress, 0.0), 1.0)
    return start * (1.0 - progress) + end * progress
