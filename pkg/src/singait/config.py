"""Run configuration: flat ``section.key = value`` files.

Values are JSON literals (numbers, lists, true/false, quoted strings);
a bare word is taken as a string.  Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import dataclasses
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .biped_sim import BipedModel, ModelError
from .gait_ref import POLICY_DT, GaitConfigError, GaitSpec
from .ppo import PPOConfig, PPOConfigError
from .reward import RewardConfig, RewardConfigError

REFERENCE_HEIGHT = 0.95
ABLATION_MODES = ("none", "no_imitation", "no_normalization")


class ConfigError(ValueError):
    def __init__(self, message, line: int | None = None, path=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line else f"{path}: "
        elif line:
            where = f"line {line}: "
        super().__init__(where + message)
        self.line = line


@dataclass(frozen=True)
class GaitSection:
    h: float = 0.15
    dh: float = 0.03
    period_s: float = 0.84
    phi0_choices: tuple = (0.0, math.pi)


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    total_updates: int = 500
    command: tuple = (0.4, 0.0)
    out_dir: str = "runs/baseline"
    episode_cap: int = 600
    checkpoint_every: int = 50


@dataclass(frozen=True)
class InitSection:
    pose_file: str = ""


@dataclass(frozen=True)
class AblationSection:
    mode: str = "none"


@dataclass(frozen=True)
class RunConfig:
    gait: GaitSection = field(default_factory=GaitSection)
    reward: RewardConfig = field(default_factory=RewardConfig)
    model: BipedModel = field(default_factory=BipedModel)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    run: RunSection = field(default_factory=RunSection)
    init: InitSection = field(default_factory=InitSection)
    ablation: AblationSection = field(default_factory=AblationSection)

    def gait_spec(self, phi0: float = 0.0) -> GaitSpec:
        return GaitSpec(self.gait.h, self.gait.dh, self.gait.period_s, phi0)

    def reward_config(self) -> RewardConfig:
        """Reward constants with the ablation switch and pelvis-bound rescaling applied."""
        scale = self.model.nominal_height / REFERENCE_HEIGHT
        if self.model.nominal_height == REFERENCE_HEIGHT:
            scale = 1.0
        return dataclasses.replace(
            self.reward,
            ablation=self.ablation.mode,
            pelvis_min=self.reward.pelvis_min * scale,
            pelvis_max=self.reward.pelvis_max * scale,
        )


# config key -> dataclass field, where they differ
_ALIASES = {
    ("ppo", "lambda"): "lam",
    ("ppo", "hidden_sizes"): "hidden",
    ("reward", "B_upper"): "b_upper",
    ("reward", "B_lower"): "b_lower",
    ("reward", "upright_orientation"): "upright",
}
_REVERSE = {(s, f): k for (s, k), f in _ALIASES.items()}


def _parse_value(text: str):
    text = text.strip()
    if text == "pi":
        return math.pi
    if text.startswith("[") and '"' not in text:
        text = re.sub(r"(?<![\w.])pi(?![\w.])", repr(math.pi), text)
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        if text.startswith(("[", "{", '"')):
            raise
        return text


def _coerce(value, default, key):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} expects true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{key} expects an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} expects a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{key} expects a list, got {value!r}")
        return tuple(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key} expects a string, got {value!r}")
        return value
    return value


def _section_types():
    return {f.name: f.default_factory for f in dataclasses.fields(RunConfig)}


def parse_config(text: str, path=None) -> RunConfig:
    sections = _section_types()
    values: dict[str, dict] = {name: {} for name in sections}
    lines: dict[tuple, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip() if not raw.lstrip().startswith("#") else ""
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'section.key = value', got {raw.strip()!r}", lineno, path)
        key, val = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"key {key!r} lacks a section prefix", lineno, path)
        section, name = key.split(".", 1)
        if section not in sections:
            raise ConfigError(f"unknown section {section!r}", lineno, path)
        fname = _ALIASES.get((section, name), name)
        defaults = sections[section]()
        if fname not in {f.name for f in dataclasses.fields(defaults)} or fname == "ablation":
            raise ConfigError(f"unknown key {key!r}", lineno, path)
        try:
            parsed = _parse_value(val)
            values[section][fname] = _coerce(parsed, getattr(defaults, fname), key)
        except (ConfigError, json.JSONDecodeError) as exc:
            msg = exc.args[0] if isinstance(exc, ConfigError) else f"cannot parse value {val!r}"
            raise ConfigError(msg, lineno, path) from None
        lines[(section, fname)] = lineno

    built = {}
    for section, factory in sections.items():
        try:
            built[section] = dataclasses.replace(factory(), **values[section])
        except (ModelError, GaitConfigError, PPOConfigError, RewardConfigError, ValueError) as exc:
            first = min((ln for (s, _), ln in lines.items() if s == section), default=None)
            raise ConfigError(f"invalid {section} settings: {exc}", first, path) from None
    cfg = RunConfig(**built)
    _validate(cfg, lines, path)
    return cfg


def _validate(cfg: RunConfig, lines, path):
    def fail(msg, section, name):
        line = lines.get((section, name))
        if line is None:
            line = min((ln for (s, _), ln in lines.items() if s == section), default=None)
        raise ConfigError(msg, line, path)

    try:
        spec = cfg.gait_spec()
    except GaitConfigError as exc:
        fail(str(exc), "gait", "dh")
    try:
        spec.steps_per_period(cfg.model.policy_dt)
    except GaitConfigError as exc:
        fail(str(exc), "gait", "period_s")
    if abs(cfg.model.policy_dt - POLICY_DT) > 1e-12:
        fail(f"model.policy_dt must be {POLICY_DT}", "model", "policy_dt")
    for phi in cfg.gait.phi0_choices:
        if not (abs(phi) < 1e-9 or abs(phi - math.pi) < 1e-9):
            fail(f"gait.phi0_choices entries must be 0 or pi, got {phi}", "gait", "phi0_choices")
    if not cfg.gait.phi0_choices:
        fail("gait.phi0_choices is empty", "gait", "phi0_choices")
    if len(cfg.run.command) != 2:
        fail("run.command needs [v_x, v_y]", "run", "command")
    if cfg.run.command[1] != 0.0:
        fail("the planar simulator supports v_y = 0 only", "run", "command")
    if cfg.ablation.mode not in ABLATION_MODES:
        fail(f"ablation.mode must be one of {ABLATION_MODES}", "ablation", "mode")
    if cfg.run.total_updates < 0 or cfg.run.episode_cap < 1:
        fail("run.total_updates must be >= 0 and run.episode_cap >= 1", "run", "total_updates")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", path=path) from None
    return parse_config(text, path)


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    if isinstance(v, str):
        return json.dumps(v)
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    """Serialise every key, so the snapshot reparses to an equal RunConfig."""
    out = ["# singait run configuration"]
    for f in dataclasses.fields(RunConfig):
        section = getattr(cfg, f.name)
        for sf in dataclasses.fields(section):
            if f.name == "reward" and sf.name == "ablation":
                continue
            key = _REVERSE.get((f.name, sf.name), sf.name)
            out.append(f"{f.name}.{key} = {_format_value(getattr(section, sf.name))}")
    return "\n".join(out) + "\n"


def with_overrides(cfg: RunConfig, seed: int | None = None, out_dir: str | None = None) -> RunConfig:
    run = cfg.run
    if seed is not None:
        run = dataclasses.replace(run, seed=seed)
    if out_dir is not None:
        run = dataclasses.replace(run, out_dir=str(out_dir))
    return dataclasses.replace(cfg, run=run)
