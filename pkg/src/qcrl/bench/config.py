"""Run configuration and the flat ``key = value`` config file format.

Example::

    # comments start with '#'
    run.task = oq_sup1
    run.algo = ddpg
    agent.tau = 0.005
    nn.actor_widths = 300, 800, 1600, 800

Unknown keys are errors, never silently ignored.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from ..agent import AgentConfig, DqnConfig
from .tasks import UnknownTask, get_task

ALGO_NAMES = ("at_drl", "ddpg", "dqn")
PAPER_WIDTHS = (300, 800, 1600, 800)
DESK_WIDTHS = (64, 128, 128, 64)


class ConfigError(ValueError):
    pass


@dataclass
class EnvOverrides:
    f0: float | None = None
    n_max: int | None = None
    dt: float | None = None
    subspace_mode: bool | None = None


@dataclass
class RunConfig:
    task: str = "oq_10"
    algo: str = "at_drl"
    episodes: int | None = None
    seed: int = 0
    eval_every: int = 100
    eval_episodes: int = 10
    checkpoint_every: int = 0
    env: EnvOverrides = field(default_factory=EnvOverrides)
    agent: AgentConfig = field(default_factory=AgentConfig)
    dqn: DqnConfig = field(default_factory=DqnConfig)

    def resolved_task(self):
        try:
            base = get_task(self.task)
        except UnknownTask as exc:
            raise ConfigError(str(exc)) from None
        try:
            return base.with_overrides(**dataclasses.asdict(self.env))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def n_episodes(self) -> int:
        return self.episodes if self.episodes is not None else self.resolved_task().episodes

    def validate(self) -> "RunConfig":
        self.algo = normalize_algo(self.algo)
        self.resolved_task().env_config()
        if self.n_episodes < 1:
            raise ConfigError("run.episodes must be >= 1")
        if self.eval_every < 1 or self.eval_episodes < 1:
            raise ConfigError("run.eval_every and run.eval_episodes must be >= 1")
        if self.checkpoint_every < 0:
            raise ConfigError("run.checkpoint_every must be >= 0")
        try:
            self.agent.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self


def normalize_algo(name: str) -> str:
    algo = str(name).strip().lower().replace("-", "_")
    if algo not in ALGO_NAMES:
        raise ConfigError(f"unknown algorithm {name!r}; expected one of at-drl, ddpg, dqn")
    return algo


# dotted key -> (section attribute or None for top level, field name)
_RUN_KEYS = {
    "run.task": "task", "run.algo": "algo", "run.episodes": "episodes", "run.seed": "seed",
    "run.eval_every": "eval_every", "run.eval_episodes": "eval_episodes",
    "run.checkpoint_every": "checkpoint_every",
}
_NN_KEYS = {
    "nn.actor_widths": "actor_widths", "nn.critic_widths": "critic_widths",
    "nn.aux_widths": "aux_widths", "nn.actor_final_scale": "actor_final_scale",
}
_FIELD_TYPES = {
    "episodes": int, "f0": float, "n_max": int, "dt": float, "subspace_mode": bool,
}


def _key_table() -> dict:
    table = {k: (None, v) for k, v in _RUN_KEYS.items()}
    table.update({k: ("agent", v) for k, v in _NN_KEYS.items()})
    for f in dataclasses.fields(EnvOverrides):
        table[f"env.{f.name}"] = ("env", f.name)
    for f in dataclasses.fields(AgentConfig):
        if f.name not in _NN_KEYS.values():
            table[f"agent.{f.name}"] = ("agent", f.name)
    for f in dataclasses.fields(DqnConfig):
        table[f"dqn.{f.name}"] = ("dqn", f.name)
    table["nn.preset"] = ("agent", "__preset__")
    return table


KEYS = _key_table()


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _coerce(key: str, name: str, current, text: str):
    text = text.strip()
    kind = _FIELD_TYPES.get(name) or type(current)
    try:
        if kind is bool:
            return _parse_bool(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is tuple:
            return tuple(int(p) for p in text.replace("(", "").replace(")", "").split(",") if p.strip())
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def apply_setting(cfg: RunConfig, key: str, value) -> None:
    key = key.strip()
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    section, name = KEYS[key]
    target = cfg if section is None else getattr(cfg, section)
    if name == "__preset__":
        preset = str(value).strip().lower()
        if preset not in ("desk", "paper"):
            raise ConfigError("nn.preset must be 'desk' or 'paper'")
        widths = PAPER_WIDTHS if preset == "paper" else DESK_WIDTHS
        cfg.agent.actor_widths = widths
        cfg.agent.critic_widths = widths
        return
    current = getattr(target, name)
    if isinstance(value, str):
        value = _coerce(key, name, current, value)
    if name == "algo":
        value = normalize_algo(value)
    setattr(target, name, value)


def parse_config_text(text: str, cfg: RunConfig | None = None) -> RunConfig:
    cfg = cfg or RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        try:
            apply_setting(cfg, key, value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return cfg


def load_config(path, cfg: RunConfig | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, cfg)


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_flat(cfg: RunConfig) -> dict:
    """Every resolvable key with its current value (``None`` entries omitted)."""
    out = {}
    for key, (section, name) in KEYS.items():
        if name == "__preset__":
            continue
        target = cfg if section is None else getattr(cfg, section)
        value = getattr(target, name)
        if value is not None:
            out[key] = _fmt(value)
    return dict(sorted(out.items()))


def from_flat(flat: dict) -> RunConfig:
    cfg = RunConfig()
    for key, value in flat.items():
        apply_setting(cfg, key, str(value))
    return cfg


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in to_flat(cfg).items())
