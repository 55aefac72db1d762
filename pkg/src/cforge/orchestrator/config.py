"""Run configuration: TOML file + ``CFORGE_SEED`` override."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

REWARD_MODES = ("terminal_only", "probe")
CRITIC_TARGETS = ("td", "monte_carlo")


@dataclass(frozen=True)
class RunConfig:
    # search budget
    episodes: int = 1100
    warmup: int = 100
    seed: int = 0
    # data
    val_fraction: float = 0.10
    calib_size: int = 64
    # action space / compression
    s_cap: float = 0.9
    ranked_pattern: str = "filter"
    # reward
    reward_mode: str = "terminal_only"
    probe_size: int = 32
    critic_target: str = "monte_carlo"
    # DDPG
    actor_lr: float = 1e-3
    critic_lr: float = 1e-4
    tau: float = 0.01
    gamma: float = 1.0
    sigma0: float = 0.6
    sigma_decay: float = 0.99
    hidden: int = 300
    batch_size: int = 64
    critic_warmstart: int = 2000
    updates_per_step: int = 4
    logit_penalty: float = 0.01
    replay_capacity: int = 1000
    per_alpha: float = 0.6
    per_beta0: float = 0.4
    # Rainbow
    n_atoms: int = 51
    n_step: int = 3
    rainbow_lr: float = 1e-3
    rainbow_hidden: int = 128
    noisy_sigma0: float = 0.5
    # reward monitor
    monitor_window: int = 20
    monitor_patience: int = 5
    # genetic baseline
    population: int = 20
    generations: int = 55
    eta_c: float = 15.0
    eta_m: float = 20.0
    crossover_rate: float = 0.9
    threads: int = 1
    # energy
    e_comp: float = 1.0
    e_mem: float = 10.0
    # paths (empty = bundled fixture / defaults)
    model: str = ""
    dataset: str = ""
    cost_profile: str = ""
    rq_table: str = ""
    lut: str = ""
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if not 0 <= self.warmup < self.episodes:
            raise ValueError(f"warmup ({self.warmup}) must be < episodes ({self.episodes})")
        for name in ("val_fraction", "s_cap"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.reward_mode not in REWARD_MODES:
            raise ValueError(f"reward_mode must be one of {REWARD_MODES}")
        if self.critic_target not in CRITIC_TARGETS:
            raise ValueError(f"critic_target must be one of {CRITIC_TARGETS}")
        if self.ranked_pattern not in ("filter", "channel"):
            raise ValueError("ranked_pattern must be 'filter' or 'channel'")
        if self.population < 1 or self.generations < 1:
            raise ValueError("population and generations must be >= 1")

    @property
    def evaluations(self):
        return self.population * self.generations

    def to_dict(self):
        return asdict(self)

    def with_(self, **kw):
        return replace(self, **kw)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name, value):
    default = RunConfig.__dataclass_fields__[name].default
    if isinstance(default, bool) or not isinstance(default, (int, float, str)):
        return value
    if isinstance(default, float) and isinstance(value, int):
        return float(value)
    if type(value) is not type(default):
        raise TypeError(f"config key {name!r} expects {type(default).__name__}, "
                        f"got {type(value).__name__}")
    return value


def config_from_mapping(data, base=None):
    """Flat keys or one level of tables (``[ddpg]``, ``[paths]`` ...)."""
    flat = {}
    for k, v in data.items():
        if isinstance(v, dict):
            flat.update(v)
        else:
            flat[k] = v
    unknown = sorted(set(flat) - set(_FIELDS))
    if unknown:
        raise KeyError(f"unknown config keys: {', '.join(unknown)}")
    kw = {k: _coerce(k, v) for k, v in flat.items()}
    return replace(base or RunConfig(), **kw)


def load_config(path=None, env=None, **overrides):
    """Defaults <- TOML file <- explicit overrides <- $CFORGE_SEED."""
    env = os.environ if env is None else env
    data = {}
    if path:
        with open(Path(path), "rb") as fh:
            data = tomllib.load(fh)
    data = {**data, **{k: v for k, v in overrides.items() if v is not None}}
    cfg = config_from_mapping(data)
    if env.get("CFORGE_SEED"):
        cfg = replace(cfg, seed=int(env["CFORGE_SEED"]))
    return cfg
