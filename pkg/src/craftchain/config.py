"""Run configuration: plain-text settings files parsed into a typed tree.

A run is described by an INI-style file with one section per pipeline stage:

    [env]          world generation and rendering (see EnvConfig)
    [demos]        count, seed, noise_level
    [actions]      seed, n_movement, n_interaction
    [agent.choptree]     soft-Q imitation settings (see SQILConfig)
    [agent.craftwood]    inventory behavior-cloning settings (see BCConfig)
    [agent.digstone]     margin-imitation settings (see LarMIConfig)
    [agent.craftstone]   (no keys; the policy is fit from clustered actions)
    [agent.randomsearch] epsilon ramp (see ExplorationSchedule)
    [agent.flatbc]       flat behavior-cloning baseline (see FlatBCConfig)
    [scheduler]    phase-classifier settings (see SchedulerConfig)
    [eval]         episodes, seed_base, workers
    [budget]       cap — total environment frames online training may consume

Every key has a default, so an empty file is a valid configuration; unknown
sections or keys are hard errors rather than silent no-ops. The digest of a
fully-resolved configuration is stamped into every artifact so checkpoints
from different setups cannot be mixed.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path

from .agents import BCConfig, ExplorationSchedule, FlatBCConfig, LarMIConfig, SQILConfig
from .env import EnvConfig
from .errors import ConfigError
from .scheduler import SchedulerConfig


@dataclass
class DemoSettings:
    count: int = 211
    seed: int = 20_211
    noise_level: float = 0.3

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError("demos.count must be at least 1")
        if not 0.0 <= self.noise_level <= 1.0:
            raise ConfigError("demos.noise_level must be in [0, 1]")


@dataclass
class ActionSettings:
    seed: int = 0
    n_movement: int = 30
    n_interaction: int = 30

    def __post_init__(self):
        if self.n_movement < 1 or self.n_interaction < 1:
            raise ConfigError("action cluster counts must be positive")


@dataclass
class CraftStoneSettings:
    """The stone-tier crafting policy has no trainable settings."""


@dataclass
class EvalSettings:
    episodes: int = 200
    seed_base: int = 1_000_000
    workers: int = 4

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("eval.episodes must be at least 1")
        if self.workers < 1:
            raise ConfigError("eval.workers must be at least 1")


@dataclass
class BudgetSettings:
    cap: int = 200_000

    def __post_init__(self):
        if self.cap < 0:
            raise ConfigError("budget.cap must be nonnegative")


@dataclass
class RunConfig:
    env: EnvConfig
    demos: DemoSettings
    actions: ActionSettings
    choptree: SQILConfig
    craftwood: BCConfig
    digstone: LarMIConfig
    craftstone: CraftStoneSettings
    randomsearch: ExplorationSchedule
    flatbc: FlatBCConfig
    scheduler: SchedulerConfig
    eval: EvalSettings
    budget: BudgetSettings


_SECTIONS: dict[str, type] = {
    "env": EnvConfig,
    "demos": DemoSettings,
    "actions": ActionSettings,
    "agent.choptree": SQILConfig,
    "agent.craftwood": BCConfig,
    "agent.digstone": LarMIConfig,
    "agent.craftstone": CraftStoneSettings,
    "agent.randomsearch": ExplorationSchedule,
    "agent.flatbc": FlatBCConfig,
    "scheduler": SchedulerConfig,
    "eval": EvalSettings,
    "budget": BudgetSettings,
}

_FIELD_OF_SECTION = {
    "env": "env",
    "demos": "demos",
    "actions": "actions",
    "agent.choptree": "choptree",
    "agent.craftwood": "craftwood",
    "agent.digstone": "digstone",
    "agent.craftstone": "craftstone",
    "agent.randomsearch": "randomsearch",
    "agent.flatbc": "flatbc",
    "scheduler": "scheduler",
    "eval": "eval",
    "budget": "budget",
}


# dataclass field annotations may be strings (postponed evaluation), so
# normalize both spellings to the scalar types config files can hold
_SCALARS = {int: int, float: float, str: str,
            "int": int, "float": float, "str": str}


def _coerce(section: str, key: str, raw: str, annotation) -> object:
    target_type = _SCALARS.get(annotation)
    if target_type is None:
        raise ConfigError(
            f"[{section}] {key}: unsupported value type {annotation!r}")
    try:
        return target_type(raw)
    except ValueError:
        raise ConfigError(
            f"[{section}] {key}: cannot parse {raw!r} as {target_type.__name__}"
        ) from None


def _build_section(section: str, cls: type, raw_items: dict[str, str]):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in raw_items.items():
        if key not in fields:
            known = ", ".join(sorted(fields)) or "(no keys)"
            raise ConfigError(
                f"unknown key {key!r} in section [{section}]; known keys: {known}")
        kwargs[key] = _coerce(section, key, raw, fields[key].type)
    try:
        return cls(**kwargs)
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"section [{section}]: {exc}") from None


def parse_config(text: str) -> RunConfig:
    """Build a fully-resolved RunConfig from settings-file text."""
    parser = configparser.ConfigParser(interpolation=None,
                                       inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file: {exc}") from None

    sections: dict[str, object] = {}
    for name in parser.sections():
        if name not in _SECTIONS:
            known = ", ".join(sorted(_SECTIONS))
            raise ConfigError(
                f"unknown config section [{name}]; known sections: {known}")
        raw_items = dict(parser.items(name))
        sections[name] = _build_section(name, _SECTIONS[name], raw_items)

    kwargs = {}
    for section, field_name in _FIELD_OF_SECTION.items():
        value = sections.get(section)
        if value is None:
            value = _build_section(section, _SECTIONS[section], {})
        kwargs[field_name] = value
    rc = RunConfig(**kwargs)
    rc.env.validate()

    # the pixel nets are laid out for 32x32 input, so reject configs the
    # downstream trainers could not honor
    if rc.env.pov_size != 32:
        raise ConfigError("env.pov_size must be 32 for the pixel policies")
    return rc


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())


# strings coerce to themselves, so dataclass types cover everything we store
_FIELD_NAMES_OF = {
    cls: tuple(f.name for f in dataclasses.fields(cls))
    for cls in _SECTIONS.values()
}


def config_lines(rc: RunConfig) -> list[str]:
    """Canonical `section.key = value` lines of the resolved configuration."""
    lines = []
    for section, field_name in _FIELD_OF_SECTION.items():
        obj = getattr(rc, field_name)
        for key in _FIELD_NAMES_OF[type(obj)]:
            lines.append(f"{section}.{key} = {getattr(obj, key)!r}")
    return lines


def config_digest(rc: RunConfig) -> bytes:
    """32-byte fingerprint of every resolved setting."""
    return hashlib.sha256("\n".join(config_lines(rc)).encode("utf-8")).digest()
