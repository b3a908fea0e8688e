"""Flat ``key = value`` run configuration with dotted namespaces.

A config is assembled in three layers: a scale preset (``full`` for the
full-size networks, ``desk`` for a workstation-sized variant), environment
specific block defaults, then user overrides. Unknown keys are errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .agent import AgentConfig
from .envs import ENV_NAMES
from .layers import ConfigurationError
from .model import ModelConfig


class ConfigError(ValueError):
    pass


PRESETS = ("full", "desk")


@dataclass
class EnvConfig:
    name: str = "pendulum-missing"
    p_miss: float = 0.1
    R: float = 10.0
    forfeit: bool = False
    max_steps: int = 0          # 0 -> environment default
    sigma_error: float = 3.0  # variance of the observation noise
    c_thres: float = 0.1

    def kwargs(self) -> dict:
        if self.name == "mountain-hike":
            out = {"sigma_error_sq": self.sigma_error,
                   "c_thres": self.c_thres}
        elif self.name == "pendulum-missing":
            out = {"p_miss": self.p_miss}
        elif self.name == "sequential-target":
            out = {"R": self.R, "forfeit": self.forfeit}
        else:
            raise ConfigError(f"unknown environment: {self.name}")
        if self.max_steps > 0:
            out["max_steps"] = self.max_steps
        return out


@dataclass
class ScheduleConfig:
    total_steps: int = 30000
    pretrain_start: int = 1000   # random-policy steps before any update
    pretrain_updates: int = 500  # model updates fired once at the boundary
    rl_every: int = 1
    model_every: int = 5
    window: int = 64
    minibatch: int = 4
    replay_capacity: int = 100000
    checkpoint_every: int = 0    # episodes between checkpoints; 0 = end only
    eval_episodes: int = 100


@dataclass
class RunConfig:
    seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)

    def uses_model(self) -> bool:
        return self.agent.mode in ("proposed", "attention_only")

    def uses_snis(self) -> bool:
        return self.agent.mode == "proposed"

    def validate(self):
        if self.env.name not in ENV_NAMES:
            raise ConfigError(f"unknown environment: {self.env.name}")
        try:
            self.model.validate()
            self.agent.validate()
        except ConfigurationError as e:
            raise ConfigError(str(e)) from e
        t = self.schedule
        if self.uses_model() and t.window % self.model.L != 0:
            raise ConfigError(
                f"window {t.window} not divisible by block length {self.model.L}")
        if t.total_steps <= t.pretrain_start:
            raise ConfigError(
                f"total_steps {t.total_steps} must exceed pretrain_start "
                f"{t.pretrain_start}")
        if t.minibatch < 1 or t.rl_every < 1 or t.model_every < 1:
            raise ConfigError("minibatch, rl_every, model_every must be >= 1")
        if t.window < 1 or t.replay_capacity < t.window:
            raise ConfigError("replay_capacity must be >= window >= 1")
        if self.agent.mode == "attention_only" \
                and self.model.mode != "attention_only":
            raise ConfigError("attention_only agent needs model.mode = "
                              "attention_only")


_ENV_BLOCKS = {
    # environment -> (block length, selected elements per block)
    "mountain-hike": (16, 2),
    "pendulum-missing": (32, 2),
    "sequential-target": (32, 3),
}

_DESK_MODEL = dict(d=64, heads=4, latent=16, K_sp=20, gru_hidden=64,
                   embed_hidden=64, head_hidden=64, joint_hidden=64,
                   fnn_hidden=64)
_DESK_AGENT = dict(hidden=(64, 64), z_hidden=64, lstm_embed=32)
_DESK_SCHED = dict(total_steps=30000, replay_capacity=30000)
# Per-environment desk schedule tweaks. The ordered-target task needs a
# stationary feature space to converge at desk scale: a longer pretraining
# burst, then no further model updates, so the actor-critic learns against
# fixed features instead of chasing a drifting representation.
_DESK_SCHED_ENV = {
    "sequential-target": dict(pretrain_updates=1500, model_every=30000),
}
_FULL_SCHED = dict(total_steps=200000)


def default_config(preset: str = "desk", env_name: str = "pendulum-missing",
                   agent_mode: str = "proposed", seed: int = 0) -> RunConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset: {preset}")
    cfg = RunConfig(seed=seed)
    cfg.env.name = env_name
    cfg.agent.mode = agent_mode
    if agent_mode == "attention_only":
        cfg.model.mode = "attention_only"
    if env_name in _ENV_BLOCKS:
        cfg.model.L, cfg.model.k = _ENV_BLOCKS[env_name]
    over_model = _DESK_MODEL if preset == "desk" else {}
    over_agent = _DESK_AGENT if preset == "desk" else {}
    over_sched = dict(_DESK_SCHED) if preset == "desk" else dict(_FULL_SCHED)
    if preset == "desk":
        over_sched.update(_DESK_SCHED_ENV.get(env_name, {}))
    for k, v in over_model.items():
        setattr(cfg.model, k, v)
    for k, v in over_agent.items():
        setattr(cfg.agent, k, v)
    for k, v in over_sched.items():
        setattr(cfg.schedule, k, v)
    return cfg


# -- flat text serialization ----------------------------------------------------

_SECTIONS = {"env": EnvConfig, "model": ModelConfig, "agent": AgentConfig,
             "schedule": ScheduleConfig}


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _parse_value(raw: str, ftype):
    raw = raw.strip()
    if ftype is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected boolean, got {raw!r}")
    if ftype is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"expected integer, got {raw!r}") from None
    if ftype is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"expected number, got {raw!r}") from None
    if ftype is tuple:
        try:
            return tuple(int(x) for x in raw.split(",") if x.strip())
        except ValueError:
            raise ConfigError(f"expected comma-separated integers, got {raw!r}") \
                from None
    return raw


def to_text(cfg: RunConfig) -> str:
    lines = [f"seed = {cfg.seed}"]
    for section, cls in _SECTIONS.items():
        obj = getattr(cfg, section)
        for f in fields(cls):
            lines.append(f"{section}.{f.name} = "
                         f"{_format_value(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def apply_text(cfg: RunConfig, text: str, source: str = "<config>"):
    """Apply ``key = value`` override lines in place. ``#`` starts a comment."""
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', "
                              f"got {raw_line!r}")
        key, raw_val = (s.strip() for s in line.split("=", 1))
        if key == "seed":
            cfg.seed = _parse_value(raw_val, int)
            continue
        if "." not in key:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        section, name = key.split(".", 1)
        cls = _SECTIONS.get(section)
        if cls is None:
            raise ConfigError(f"{source}:{lineno}: unknown section {section!r}")
        ftypes = {f.name: f.type for f in fields(cls)}
        if name not in ftypes:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        obj = getattr(cfg, section)
        current = getattr(obj, name)
        ftype = type(current) if current is not None else str
        setattr(obj, name, _parse_value(raw_val, ftype))


def from_text(text: str, source: str = "<config>") -> RunConfig:
    """Rebuild a config from a full ``to_text`` dump (checkpoint restore)."""
    cfg = RunConfig()
    apply_text(cfg, text, source)
    return cfg
