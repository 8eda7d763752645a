from __future__ import annotations

from dataclasses import dataclass

from ..qenv import EpisodeTrace, QuantumEnv
from .replay import ReplayBuffer


@dataclass
class EpisodeSummary:
    final_fidelity: float
    episode_return: float
    steps: int
    max_fidelity: float
    aux_loss: float | None = None
    trace: EpisodeTrace | None = None


def run_episode(agent, env: QuantumEnv, buffer: ReplayBuffer | None = None, explore: bool = True,
                train_during: bool = True, learning_starts: int = 0, train_every: int = 1,
                keep_trace: bool = False) -> EpisodeSummary:
    """Roll out one episode, storing transitions and training as configured.

    ``agent`` is anything with ``begin_episode``, ``act``, ``predict`` and
    ``learn``.  Nothing is stored when ``buffer`` is None, so greedy
    evaluation rollouts leave the replay memory untouched.
    """
    agent.begin_episode()
    out = env.reset()
    trace = EpisodeTrace() if keep_trace else None
    if trace is not None:
        trace.start(out)
    state = out.encoded
    total = 0.0
    best = out.fidelity
    aux = []
    while True:
        action, stored = agent.act(state, explore)
        r_pre = agent.predict(state, action)
        out = env.step(action)
        total += out.reward
        best = max(best, out.fidelity)
        if trace is not None:
            trace.record(out.action, out)
        if buffer is not None:
            buffer.add(state, stored, out.reward, out.encoded, out.done, r_pre)
            if train_during and len(buffer) >= learning_starts and len(buffer) % train_every == 0:
                m = agent.learn(buffer)
                if getattr(m, "aux_loss", None) is not None:
                    aux.append(m.aux_loss)
        state = out.encoded
        if out.done:
            break
    return EpisodeSummary(
        final_fidelity=out.fidelity,
        episode_return=total,
        steps=out.step_index,
        max_fidelity=best,
        aux_loss=sum(aux) / len(aux) if aux else None,
        trace=trace,
    )
