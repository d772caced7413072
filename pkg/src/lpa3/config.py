"""INI-style run configuration.

Each ``[section]`` maps onto one dataclass; keys are that dataclass's field
names. Unknown sections or keys are rejected so a typo cannot silently fall
back to a default.
"""
from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .attack import AttackParams
from .data import DatasetDescriptor
from .trainer import TrainConfig, WeakAugSpec


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    seed: int = 0
    out: str = "runs/default"


@dataclass
class AugmentSection:
    checkpoint: str = ""
    split: str = "unlabeled"       # labeled | unlabeled | test
    count: int = 0                 # 0 = whole split
    labels: str = "pseudo"         # pseudo | true
    negative: bool = False


@dataclass
class TCSSection:
    checkpoints: tuple[str, ...] = ()
    split: str = "unlabeled"
    tau_pct: float = 90.0
    gamma_c: float = 0.9


@dataclass
class TheorySection:
    tables: tuple[str, ...] = ()
    n_random: int = 50


# fields that are filled from elsewhere rather than read from their section
_EXCLUDED = {
    "data": {"seed"},
    "train": {"seed", "attack", "weak_aug"},
}

SECTIONS = {
    "run": RunSection,
    "data": DatasetDescriptor,
    "train": TrainConfig,
    "attack": AttackParams,
    "weak_aug": WeakAugSpec,
    "augment": AugmentSection,
    "tcs": TCSSection,
    "theory": TheorySection,
}


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DatasetDescriptor = field(default_factory=DatasetDescriptor)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentSection = field(default_factory=AugmentSection)
    tcs: TCSSection = field(default_factory=TCSSection)
    theory: TheorySection = field(default_factory=TheorySection)
    path: str = ""

    @property
    def seed(self) -> int:
        return self.run.seed

    @property
    def out(self) -> Path:
        return Path(self.run.out)


def section_keys(name: str) -> dict[str, object]:
    """Configurable keys of a section with their type hints."""
    cls = SECTIONS[name]
    hints = typing.get_type_hints(cls)
    skip = _EXCLUDED.get(name, set())
    return {f.name: hints[f.name] for f in dataclasses.fields(cls) if f.name not in skip}


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def coerce(raw: str, hint, where: str):
    raw = raw.strip()
    try:
        if hint is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint is str:
            return raw
        if typing.get_origin(hint) is tuple:
            args = typing.get_args(hint)
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if len(args) == 2 and args[1] is Ellipsis:
                return tuple(coerce(p, args[0], where) for p in parts)
            if len(parts) != len(args):
                raise ValueError(f"expected {len(args)} comma-separated values")
            return tuple(coerce(p, a, where) for p, a in zip(parts, args))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"{where}: unsupported type {hint}")


def _apply(values: dict[str, dict[str, str]], origin: str) -> RunConfig:
    parsed: dict[str, dict] = {}
    for section, items in values.items():
        if section not in SECTIONS:
            raise ConfigError(f"{origin}: unknown section [{section}]; known: {', '.join(SECTIONS)}")
        keys = section_keys(section)
        for key, raw in items.items():
            if key not in keys:
                raise ConfigError(f"{origin}: unknown key {key!r} in [{section}]; known: {', '.join(keys)}")
            parsed.setdefault(section, {})[key] = coerce(raw, keys[key], f"{origin} [{section}] {key}")
    try:
        run = RunSection(**parsed.get("run", {}))
        data = DatasetDescriptor(seed=run.seed, **parsed.get("data", {}))
        train = TrainConfig(seed=run.seed, attack=AttackParams(**parsed.get("attack", {})),
                            weak_aug=WeakAugSpec(**parsed.get("weak_aug", {})), **parsed.get("train", {}))
        return RunConfig(run, data, train, AugmentSection(**parsed.get("augment", {})),
                         TCSSection(**parsed.get("tcs", {})), TheorySection(**parsed.get("theory", {})), origin)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{origin}: {exc}") from None


def read_ini(path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return {s: dict(parser.items(s)) for s in parser.sections()}


def load_config(path=None, overrides: dict[str, dict[str, str]] | None = None) -> RunConfig:
    """Read ``path`` (optional), then apply string ``overrides`` keyed by section."""
    values = read_ini(path) if path else {}
    for section, items in (overrides or {}).items():
        values.setdefault(section, {}).update(items)
    return _apply(values, str(path) if path else "<defaults>")


def dump_config(cfg: RunConfig) -> str:
    """INI text that reloads to an equal configuration."""
    objs = {"run": cfg.run, "data": cfg.data, "train": cfg.train, "attack": cfg.train.attack,
            "weak_aug": cfg.train.weak_aug, "augment": cfg.augment, "tcs": cfg.tcs, "theory": cfg.theory}
    lines = []
    for name, obj in objs.items():
        lines.append(f"[{name}]")
        for key in section_keys(name):
            v = getattr(obj, key)
            if isinstance(v, tuple):
                v = ", ".join(str(p) for p in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{key} = {v}")
        lines.append("")
    return "\n".join(lines)
