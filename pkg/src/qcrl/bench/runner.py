"""Seeded training runs, periodic greedy evaluation, CSV logs and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__, nn
from ..agent import (
    DqnAgent, ReplayBuffer, linear_schedule, make_action_grid, make_bundle, run_episode,
)
from ..agent.ddpg import bundle_state, load_bundle_state
from ..agent.dqn import dqn_state, load_dqn_state
from ..qenv import EpisodeTrace, trace_rows
from .config import ConfigError, RunConfig, from_flat, to_flat

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
RUN_COLUMNS = ["episode", "steps", "return", "final_fidelity"]
EVAL_COLUMNS = ["episode", "mean_eval_return", "mean_eval_fidelity", "aux_loss_mean"]
FINAL_WINDOW = 100


@dataclass
class EpisodeRow:
    episode: int
    steps: int
    ret: float
    final_fidelity: float


@dataclass
class EvalRow:
    episode: int
    mean_eval_return: float
    mean_eval_fidelity: float
    aux_loss_mean: float | None


@dataclass
class RunLog:
    rows: list = field(default_factory=list)
    eval_rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    best_trace: EpisodeTrace | None = None
    best_eval_fidelity: float = -1.0
    # auxiliary losses of training episodes since the last evaluation
    pending_aux: list = field(default_factory=list)

    @property
    def fidelities(self) -> np.ndarray:
        return np.array([r.final_fidelity for r in self.rows])

    @property
    def returns(self) -> np.ndarray:
        return np.array([r.ret for r in self.rows])

    def final_fidelity(self, window: int = FINAL_WINDOW) -> float:
        """Mean final fidelity of the last ``window`` training episodes."""
        f = self.fidelities
        return float(np.mean(f[-window:])) if f.size else float("nan")

    @property
    def label(self) -> str:
        return f"{self.meta.get('algo', '?')}/seed{self.meta.get('seed', '?')}"


# -- csv ----------------------------------------------------------------------


def _f(x) -> str:
    return "" if x is None else repr(float(x))


def run_csv_rows(log_: RunLog) -> list:
    return [[r.episode, r.steps, _f(r.ret), _f(r.final_fidelity), SCHEMA_VERSION] for r in log_.rows]


def write_run_csv(path, log_: RunLog):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RUN_COLUMNS + ["schema_version"])
        w.writerows(run_csv_rows(log_))


def write_eval_csv(path, log_: RunLog):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVAL_COLUMNS + ["schema_version"])
        for r in log_.eval_rows:
            w.writerow([r.episode, _f(r.mean_eval_return), _f(r.mean_eval_fidelity),
                        _f(r.aux_loss_mean), SCHEMA_VERSION])


def write_pulses_csv(path, trace: EpisodeTrace, n_controls: int, with_bloch: bool):
    header, rows = trace_rows(trace, n_controls, with_bloch)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header + ["schema_version"])
        w.writerows([row + [SCHEMA_VERSION] for row in rows])


def _read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        if row.get("schema_version") != str(SCHEMA_VERSION):
            raise ValueError(f"{path}: unsupported schema version {row.get('schema_version')!r}")
    return rows


def _opt_float(text):
    return None if text in ("", None) else float(text)


def read_run_dir(run_dir) -> RunLog:
    """Rebuild a :class:`RunLog` (and best trace, if present) from a run directory."""
    run_dir = Path(run_dir)
    out = RunLog()
    for row in _read_csv(run_dir / "run.csv"):
        out.rows.append(EpisodeRow(int(row["episode"]), int(row["steps"]), float(row["return"]),
                                   float(row["final_fidelity"])))
    if (run_dir / "eval.csv").exists():
        for row in _read_csv(run_dir / "eval.csv"):
            out.eval_rows.append(EvalRow(int(row["episode"]), float(row["mean_eval_return"]),
                                         float(row["mean_eval_fidelity"]), _opt_float(row["aux_loss_mean"])))
    if (run_dir / "pulses.csv").exists():
        rows = _read_csv(run_dir / "pulses.csv")
        trace = EpisodeTrace()
        acts = sorted((k for k in rows[0] if k.startswith("action_")), key=lambda k: int(k.split("_")[1]))
        for i, row in enumerate(rows):
            trace.fidelities.append(float(row["fidelity"]))
            if i > 0:
                trace.actions.append(np.array([float(row[k]) for k in acts]))
                trace.rewards.append(float(row["reward"]))
        out.best_trace = trace
    manifest = run_dir / "manifest.json"
    if manifest.exists():
        out.meta = json.loads(manifest.read_text()).get("meta", {})
    return out


# -- agents ---------------------------------------------------------------------


def _streams(seed: int):
    init, explore, sample = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(explore), np.random.default_rng(sample)


def build_agent(cfg: RunConfig, env):
    init_rng, explore_rng, sample_rng = _streams(cfg.seed)
    if cfg.algo == "dqn":
        grid = make_action_grid(env.act_dim, env.model.amp_low, env.model.amp_high, cfg.dqn.grid_points)
        agent = DqnAgent(env.obs_dim, grid, cfg.dqn, init_rng, explore_rng)
        buffer = ReplayBuffer(cfg.dqn.buffer_capacity, env.obs_dim, 1, sample_rng)
    else:
        agent = make_bundle(env.obs_dim, env.act_dim, cfg.agent, init_rng, cfg.algo, explore_rng)
        buffer = ReplayBuffer(cfg.agent.buffer_capacity, env.obs_dim, env.act_dim, sample_rng)
    return agent, buffer


def _learning_params(cfg: RunConfig):
    c = cfg.dqn if cfg.algo == "dqn" else cfg.agent
    return c.learning_starts, c.train_every


def _set_exploration(agent, cfg: RunConfig, episode: int, total: int):
    progress = (episode - 1) / total
    if cfg.algo == "dqn":
        d = cfg.dqn
        agent.epsilon = linear_schedule(d.eps_start, d.eps_end, progress / max(d.eps_decay_fraction, 1e-12))
    else:
        a = cfg.agent
        frac = progress / max(a.ou_decay_fraction, 1e-12)
        agent.noise.sigma = linear_schedule(a.ou_sigma, a.ou_sigma_final, frac)
        if a.lr_actor_final_ratio != 1.0:
            agent.actor_opt.lr = a.lr_actor * linear_schedule(1.0, a.lr_actor_final_ratio, frac)


def evaluate_agent(agent, env, episodes: int, keep_trace: bool = True):
    """Greedy rollouts; returns ``(mean_return, mean_fidelity, first_trace)``."""
    rets, fids, trace = [], [], None
    for i in range(episodes):
        s = run_episode(agent, env, None, explore=False, train_during=False, keep_trace=keep_trace and i == 0)
        rets.append(s.episode_return)
        fids.append(s.final_fidelity)
        if i == 0:
            trace = s.trace
    return float(np.mean(rets)), float(np.mean(fids)), trace


# -- checkpoints -----------------------------------------------------------------


def _trace_arrays(trace: EpisodeTrace | None) -> dict:
    if trace is None:
        return {}
    return {
        "best_actions": np.array(trace.actions, dtype=float).reshape(len(trace.actions), -1),
        "best_fidelities": np.array(trace.fidelities),
        "best_rewards": np.array(trace.rewards),
        "best_states": np.array(trace.states),
    }


def _trace_from_arrays(arrays: dict) -> EpisodeTrace | None:
    if "best_fidelities" not in arrays:
        return None
    return EpisodeTrace(
        actions=list(arrays["best_actions"]),
        fidelities=[float(f) for f in arrays["best_fidelities"]],
        rewards=[float(r) for r in arrays["best_rewards"]],
        states=list(arrays["best_states"]),
    )


def save_checkpoint(path, cfg: RunConfig, agent, buffer: ReplayBuffer, log_: RunLog, episode: int):
    if cfg.algo == "dqn":
        agent_meta, arrays = dqn_state(agent)
    else:
        agent_meta, arrays = bundle_state(agent)
    arrays = {f"agent_{k}": v for k, v in arrays.items()}
    for k, v in buffer.arrays().items():
        arrays[f"buffer_{k}"] = v
    arrays["log_rows"] = np.array([[r.episode, r.steps, r.ret, r.final_fidelity] for r in log_.rows]).reshape(-1, 4)
    arrays["log_eval"] = np.array([
        [r.episode, r.mean_eval_return, r.mean_eval_fidelity, np.nan if r.aux_loss_mean is None else r.aux_loss_mean]
        for r in log_.eval_rows
    ]).reshape(-1, 4)
    arrays["log_pending_aux"] = np.array(log_.pending_aux, dtype=float)
    arrays.update(_trace_arrays(log_.best_trace))
    meta = {
        "config": to_flat(cfg),
        "episode": episode,
        "agent": agent_meta,
        "buffer": {"pos": buffer.pos, "rng": buffer.rng.bit_generator.state},
        "best_eval_fidelity": log_.best_eval_fidelity,
        "package_version": __version__,
    }
    return nn.save_arrays(path, meta, arrays)


def load_checkpoint(path):
    """Return ``(cfg, agent, buffer, log, episode)`` restored from ``path``."""
    meta, arrays = nn.load_arrays(path)
    cfg = from_flat(meta["config"]).validate()
    env = cfg.resolved_task().make_env()
    agent, buffer = build_agent(cfg, env)
    agent_arrays = {k[len("agent_"):]: v for k, v in arrays.items() if k.startswith("agent_")}
    if cfg.algo == "dqn":
        load_dqn_state(agent, meta["agent"], agent_arrays)
    else:
        load_bundle_state(agent, meta["agent"], agent_arrays)
    buf = {k[len("buffer_"):]: v for k, v in arrays.items() if k.startswith("buffer_")}
    buffer.load_arrays(buf, meta["buffer"]["pos"])
    buffer.rng.bit_generator.state = meta["buffer"]["rng"]
    log_ = RunLog(best_eval_fidelity=meta["best_eval_fidelity"])
    for ep, steps, ret, fid in arrays["log_rows"]:
        log_.rows.append(EpisodeRow(int(ep), int(steps), float(ret), float(fid)))
    for ep, ret, fid, aux in arrays["log_eval"]:
        log_.eval_rows.append(EvalRow(int(ep), float(ret), float(fid), None if np.isnan(aux) else float(aux)))
    log_.pending_aux = [float(x) for x in arrays["log_pending_aux"]]
    log_.best_trace = _trace_from_arrays(arrays)
    return cfg, agent, buffer, log_, int(meta["episode"])


# -- training ---------------------------------------------------------------------


def train(cfg: RunConfig, out_dir=None, resume=None, stop_after: int | None = None,
          plots: bool = True, progress=None) -> RunLog:
    """Train for ``cfg.n_episodes`` episodes with greedy evaluation every ``eval_every``.

    With ``out_dir`` set, writes ``run.csv``, ``eval.csv``, ``pulses.csv``,
    ``manifest.json``, checkpoints and (optionally) plots.  ``resume`` names a
    checkpoint to continue from; its stored configuration must match ``cfg``.
    ``stop_after`` halts after that episode, leaving a resumable checkpoint.
    """
    cfg.validate()
    task = cfg.resolved_task()
    env = task.make_env()
    total = cfg.n_episodes
    start_time = time.time()
    if resume is not None:
        saved_cfg, agent, buffer, log_, done_eps = load_checkpoint(resume)
        if to_flat(saved_cfg) != to_flat(cfg):
            raise ConfigError("checkpoint configuration does not match the requested run")
    else:
        agent, buffer = build_agent(cfg, env)
        log_, done_eps = RunLog(), 0
    log_.meta = {
        "task": task.name, "algo": cfg.algo, "seed": cfg.seed, "episodes": total,
        "version": __version__,
    }
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    learning_starts, train_every = _learning_params(cfg)
    last = min(total, stop_after) if stop_after is not None else total
    for ep in range(done_eps + 1, last + 1):
        _set_exploration(agent, cfg, ep, total)
        s = run_episode(agent, env, buffer, explore=True, train_during=True,
                        learning_starts=learning_starts, train_every=train_every)
        log_.rows.append(EpisodeRow(ep, s.steps, s.episode_return, s.final_fidelity))
        if s.aux_loss is not None:
            log_.pending_aux.append(s.aux_loss)
        if ep % cfg.eval_every == 0:
            ret, fid, trace = evaluate_agent(agent, env, cfg.eval_episodes)
            aux_mean = float(np.mean(log_.pending_aux)) if log_.pending_aux else None
            log_.pending_aux = []
            log_.eval_rows.append(EvalRow(ep, ret, fid, aux_mean))
            if fid > log_.best_eval_fidelity:
                log_.best_eval_fidelity = fid
                log_.best_trace = trace
                if out is not None:
                    save_checkpoint(out / "checkpoint_best.npz", cfg, agent, buffer, log_, ep)
            if progress is not None:
                progress(ep, log_)
        if out is not None and cfg.checkpoint_every and ep % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"checkpoint_ep{ep:06d}.npz", cfg, agent, buffer, log_, ep)

    if env.drift.count:
        log.warning("%d corrective renormalizations during training (max drift %.2e)",
                    env.drift.count, env.drift.max_drift)
    log_.meta["renormalizations"] = env.drift.count
    log_.meta["max_norm_drift"] = env.drift.max_drift
    if log_.best_trace is None:
        _, _, log_.best_trace = evaluate_agent(agent, env, 1)

    if out is not None:
        save_checkpoint(out / "checkpoint_final.npz", cfg, agent, buffer, log_, last)
        write_run_csv(out / "run.csv", log_)
        write_eval_csv(out / "eval.csv", log_)
        with_bloch = env.model.dim == 2 and not env.model.subspace
        write_pulses_csv(out / "pulses.csv", log_.best_trace, env.act_dim, with_bloch)
        manifest = {
            "meta": log_.meta,
            "config": to_flat(cfg),
            "final_fidelity_last100": log_.final_fidelity(),
            "best_eval_fidelity": log_.best_eval_fidelity,
            "episodes_completed": last,
            "wall_time_s": round(time.time() - start_time, 3),
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        if plots and log_.eval_rows:
            from .plotting import emit_plots
            emit_plots([log_], out)
    return log_


def evaluate_checkpoint(path, episodes: int = 10, out_dir=None) -> dict:
    """Greedy rollouts from a saved checkpoint."""
    cfg, agent, _, _, episode = load_checkpoint(path)
    env = cfg.resolved_task().make_env()
    ret, fid, trace = evaluate_agent(agent, env, episodes)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_pulses_csv(out / "pulses.csv", trace, env.act_dim, env.model.dim == 2 and not env.model.subspace)
    return {"task": cfg.task, "algo": cfg.algo, "seed": cfg.seed, "episode": episode,
            "mean_eval_return": ret, "mean_eval_fidelity": fid, "steps": len(trace)}
