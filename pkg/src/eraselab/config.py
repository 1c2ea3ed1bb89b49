"""Run configuration: TOML file + dotted command-line overrides.

One file describes a whole experiment; each section feeds the config type
of the owning module, so every field reachable there is reachable here.
Unknown sections or keys are rejected up front, and all value validation is
delegated to the module configs themselves (their errors surface as
ConfigError with the section named).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields as dc_fields

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .network import ArchitectureConfig
from .optim import OptimConfig
from .training import TrainConfig
from .erasure import EraseConfig
from .guidance import GuidanceConfig
from .schedule import build_schedule

OUTPUT_ROOT_ENV = "ERASELAB_OUT"

# plain-value sections and their defaults
_PLAIN_DEFAULTS = {
    "run": {"seed": 0, "out_dir": None},
    "dataset": {"preset": "four-corners", "n": 4096, "seed": None},
    "schedule": {"T": 100, "beta_min": None, "beta_max": None},
    "eval": {"n": 2000, "n_steps": 25, "threshold": 0.7, "cfg_scale": 1.0},
    "sample": {"n": 1000, "n_steps": 25, "s_g": 7.5, "prompt_ids": ()},
}

_DATACLASS_SECTIONS = {
    "architecture": ArchitectureConfig,
    "train": TrainConfig,
    "erase": EraseConfig,
    "guidance": GuidanceConfig,
}

# sections that accept a nested [section.optim] table
_OPTIM_SECTIONS = ("train", "erase")


def _allowed_keys(section: str) -> set[str]:
    if section in _PLAIN_DEFAULTS:
        return set(_PLAIN_DEFAULTS[section])
    cls = _DATACLASS_SECTIONS[section]
    keys = {f.name for f in dc_fields(cls)}
    if section in _OPTIM_SECTIONS:
        keys.add("optim")
    return keys


def _check_keys(section: str, table: dict):
    unknown = set(table) - _allowed_keys(section)
    if unknown:
        raise ConfigError(
            f"unknown keys in [{section}]: {sorted(unknown)} "
            f"(allowed: {sorted(_allowed_keys(section))})"
        )
    if "optim" in table:
        if not isinstance(table["optim"], dict):
            raise ConfigError(f"[{section}.optim] must be a table")
        bad = set(table["optim"]) - {f.name for f in dc_fields(OptimConfig)}
        if bad:
            raise ConfigError(f"unknown keys in [{section}.optim]: {sorted(bad)}")


def _tuplify(value):
    return tuple(value) if isinstance(value, list) else value


@dataclass(frozen=True)
class RunConfig:
    """Validated section tables; builder methods construct module configs."""

    sections: dict = field(default_factory=dict)

    def __post_init__(self):
        known = set(_PLAIN_DEFAULTS) | set(_DATACLASS_SECTIONS)
        unknown = set(self.sections) - known
        if unknown:
            raise ConfigError(
                f"unknown config sections: {sorted(unknown)} (known: {sorted(known)})"
            )
        merged = {}
        for name in known:
            table = dict(self.sections.get(name, {}))
            if not isinstance(self.sections.get(name, {}), dict):
                raise ConfigError(f"[{name}] must be a table")
            _check_keys(name, table)
            if name in _PLAIN_DEFAULTS:
                merged[name] = {**_PLAIN_DEFAULTS[name], **table}
            else:
                merged[name] = table
        object.__setattr__(self, "sections", merged)

    def _build(self, section: str, cls, **extra):
        table = {k: _tuplify(v) for k, v in self.sections[section].items()}
        sub = table.pop("optim", None)
        if section in _OPTIM_SECTIONS and sub is not None:
            try:
                extra["optim"] = OptimConfig(**{k: _tuplify(v) for k, v in sub.items()})
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"[{section}.optim]: {exc}") from exc
        try:
            return cls(**table, **extra)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc

    @property
    def seed(self) -> int:
        seed = self.sections["run"]["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError(f"[run].seed must be an integer, got {seed!r}")
        return seed

    @property
    def out_dir(self) -> str:
        explicit = self.sections["run"]["out_dir"]
        if explicit is not None:
            return str(explicit)
        return os.environ.get(OUTPUT_ROOT_ENV, "runs")

    def plain(self, section: str) -> dict:
        return dict(self.sections[section])

    def architecture(self) -> ArchitectureConfig:
        return self._build("architecture", ArchitectureConfig)

    def schedule(self):
        table = self.plain("schedule")
        try:
            return build_schedule(table["T"], table["beta_min"], table["beta_max"])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[schedule]: {exc}") from exc

    def train_config(self) -> TrainConfig:
        table = {k: v for k, v in self.sections["train"].items() if k != "optim"}
        try:
            return TrainConfig(**table)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[train]: {exc}") from exc

    def train_optim(self) -> OptimConfig:
        sub = self.sections["train"].get("optim", {})
        try:
            return OptimConfig(**{k: _tuplify(v) for k, v in sub.items()})
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[train.optim]: {exc}") from exc

    def erase_config(self) -> EraseConfig:
        if "method" not in self.sections["erase"]:
            raise ConfigError("[erase]: missing required key 'method'")
        if "target_ids" not in self.sections["erase"]:
            raise ConfigError("[erase]: missing required key 'target_ids'")
        return self._build("erase", EraseConfig)

    def guidance(self) -> GuidanceConfig:
        return self._build("guidance", GuidanceConfig)

    def resolved(self) -> dict:
        """Effective config after defaults, for the replay record."""
        out = {name: dict(table) for name, table in self.sections.items()}
        out["run"]["out_dir"] = self.out_dir
        return out


def parse_override(text: str):
    """Split one 'section.key=value' override; value uses TOML literals."""
    head, sep, raw = text.partition("=")
    if not sep:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    path = head.strip().split(".")
    if len(path) not in (2, 3) or not all(p.isidentifier() for p in path):
        raise ConfigError(f"override target {head.strip()!r} must be section.key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()  # bare string
    return path, value


def load_config(path=None, overrides=()) -> RunConfig:
    """Read a TOML file (optional) and apply dotted overrides on top."""
    if path is None:
        data = {}
    else:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    for text in overrides:
        path_parts, value = parse_override(text)
        table = data
        for part in path_parts[:-1]:
            table = table.setdefault(part, {})
            if not isinstance(table, dict):
                raise ConfigError(f"override {text!r} descends into a non-table")
        table[path_parts[-1]] = value
    return RunConfig(sections=data)
