"""Run configuration: a dataclass tree plus a key=value file format.

Config files are plain text, one assignment per line:

    # planner budget
    planner.horizon = 5
    env.name = multidim-1,multidim-2
    run.total_steps = 200000

Sections map to the component config dataclasses. Values are coerced by the
type of the field's default (ints stay ints, "64,64" fills a tuple field).
Unknown sections or keys fail loudly with the offending line.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from planrl.errors import ConfigError
from planrl.exploration import BonusConfig
from planrl.planner import PlannerConfig
from planrl.policy_opt import UpdateConfig
from planrl.world_model import ModelConfig


@dataclass
class EnvSection:
    name: str = "pointmass-dense"

    def task_names(self):
        names = [n.strip() for n in self.name.split(",") if n.strip()]
        if not names:
            raise ConfigError("env.name must list at least one task")
        return names


@dataclass
class RunSection:
    total_steps: int = 100_000
    num_envs: int = 16
    rollout_steps: int = 64
    seed: int = 0
    eval_every: int = 10_000
    eval_episodes: int = 4
    checkpoint_every: int = 0
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.total_steps <= 0 or self.num_envs <= 0 or self.rollout_steps <= 0:
            raise ConfigError("run sizes must be positive")


@dataclass
class RunConfig:
    env: EnvSection = field(default_factory=EnvSection)
    run: RunSection = field(default_factory=RunSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    bonus: BonusConfig = field(default_factory=BonusConfig)
    update: UpdateConfig = field(default_factory=UpdateConfig)

    def to_dict(self):
        d = asdict(self)
        for sec in d.values():
            for k, v in sec.items():
                if isinstance(v, tuple):
                    sec[k] = list(v)
        return d


_SECTIONS = {"env": EnvSection, "run": RunSection, "model": ModelConfig,
             "planner": PlannerConfig, "bonus": BonusConfig,
             "update": UpdateConfig}


def _coerce(raw, default, where):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{where}: expected an integer, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{where}: expected a number, got {raw!r}") from None
    if isinstance(default, tuple):
        parts = [p for p in raw.replace(",", " ").split() if p]
        try:
            return tuple(int(p) for p in parts)
        except ValueError:
            raise ConfigError(f"{where}: expected integers, got {raw!r}") from None
    return raw


def parse_assignments(lines, source="<config>"):
    """key=value lines to a {(section, field): raw string} dict."""
    out = {}
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        where = f"{source}:{lineno}"
        if "=" not in stripped:
            raise ConfigError(f"{where}: expected key = value, got {stripped!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if "." not in key:
            raise ConfigError(f"{where}: keys are section.field, got {key!r}")
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"{where}: unknown section {section!r}")
        valid = {f.name for f in fields(_SECTIONS[section])}
        if name not in valid:
            raise ConfigError(f"{where}: unknown key {name!r} in [{section}]")
        out[(section, name)] = (raw, where)
    return out


def build_config(assignments):
    """Construct a RunConfig from parsed assignments, validating as it goes."""
    kwargs = {}
    for section, cls in _SECTIONS.items():
        defaults = cls()
        sec_kwargs = {}
        for f in fields(cls):
            if (section, f.name) in assignments:
                raw, where = assignments[(section, f.name)]
                sec_kwargs[f.name] = _coerce(raw, getattr(defaults, f.name),
                                             f"{where} ({section}.{f.name})")
        kwargs[section] = cls(**sec_kwargs)
    return RunConfig(**kwargs)


def load_config(path=None, overrides=()):
    """Read an optional config file, then apply key=value override strings."""
    assignments = {}
    if path is not None:
        try:
            with open(path) as fh:
                assignments.update(parse_assignments(fh, source=str(path)))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    assignments.update(parse_assignments(list(overrides), source="<override>"))
    return build_config(assignments)


def config_from_dict(d):
    """Rebuild a RunConfig from a to_dict dump (checkpoint manifests)."""
    kwargs = {}
    for section, cls in _SECTIONS.items():
        sec = dict(d.get(section, {}))
        for f in fields(cls):
            if f.name in sec and isinstance(getattr(cls(), f.name), tuple):
                sec[f.name] = tuple(sec[f.name])
        kwargs[section] = cls(**sec)
    return RunConfig(**kwargs)


def dump_config(cfg, path):
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
