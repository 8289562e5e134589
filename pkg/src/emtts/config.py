"""Flat ``key = value`` configuration shared by every subcommand.

The file is TOML without tables. Keys mirror the fields of
:class:`DspConfig`, :class:`TrainConfig`, :class:`AugmentPolicy` and
:class:`SynthOptions` plus ``val_fraction``; ``seed`` is shared. Unknown
keys and ill-typed values are rejected.
"""

from __future__ import annotations

import json
import sys
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .augment import AugmentPolicy
from .dsp import DspConfig
from .synth import SynthOptions
from .train import TrainConfig

SECTIONS = {"dsp": DspConfig, "train": TrainConfig, "augment": AugmentPolicy,
            "synth": SynthOptions}
EXTRA = {"val_fraction": (float, 0.2)}


class ConfigError(ValueError):
    pass


def _field_type(cls, f) -> type:
    if f.name == "learning_rate":
        return float
    if f.name == "resize_ratios":
        return list
    default = f.default if f.default is not MISSING else None
    return type(default)


def schema() -> dict:
    """key -> (type, default, owning sections)."""
    out = {}
    for sec, cls in SECTIONS.items():
        for f in fields(cls):
            default = f.default if f.default is not MISSING else None
            if f.name in out:
                out[f.name][2].append(sec)
            else:
                out[f.name] = (_field_type(cls, f), default, [sec])
    for key, (typ, default) in EXTRA.items():
        out[key] = (typ, default, ["corpus"])
    return out


def coerce(key: str, value, typ: type):
    """Check ``value`` against the schema type; ints are accepted for floats."""
    if typ is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
    elif typ is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError:
                pass
    elif typ is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
    elif typ is list:
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split()]
        if isinstance(value, (list, tuple)):
            try:
                return tuple(float(v) for v in value)
            except (TypeError, ValueError):
                pass
    elif typ is str:
        if isinstance(value, str):
            return value
    raise ConfigError(f"config key {key!r} expects {typ.__name__}, got {value!r}")


@dataclass
class CliConfig:
    values: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "CliConfig":
        raw = {}
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            try:
                raw = tomllib.loads(path.read_text(encoding="utf-8"))
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
        spec = schema()
        unknown = sorted(k for k in raw if k not in spec)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        nested = [k for k, v in raw.items() if isinstance(v, dict)]
        if nested:
            raise ConfigError(f"config must be flat; tables found: {', '.join(nested)}")
        values = {k: coerce(k, v, spec[k][0]) for k, v in raw.items()}
        cfg = cls(values)
        cfg.build_all()
        return cfg

    def _section(self, name: str, **extra):
        cls = SECTIONS[name]
        kwargs = {f.name: self.values[f.name] for f in fields(cls) if f.name in self.values}
        kwargs.update(extra)
        try:
            obj = cls(**kwargs)
            if hasattr(obj, "validate"):
                obj.validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {name} settings: {exc}") from None
        return obj

    def build_all(self) -> None:
        self.dsp
        self.train
        self.augment
        self.synth

    @property
    def dsp(self) -> DspConfig:
        return self._section("dsp")

    @property
    def train(self) -> TrainConfig:
        return self._section("train")

    @property
    def augment(self) -> AugmentPolicy:
        return self._section("augment")

    @property
    def synth(self) -> SynthOptions:
        return self._section("synth")

    @property
    def seed(self) -> int:
        return self.values.get("seed", 0)

    @property
    def val_fraction(self) -> float:
        return self.values.get("val_fraction", EXTRA["val_fraction"][1])

    def effective(self) -> dict:
        """Every key with its effective value, including defaults."""
        out = {}
        for name in SECTIONS:
            out.update(asdict(getattr(self, name)))
        out["val_fraction"] = self.val_fraction
        return out

    def echo(self, out_dir) -> Path:
        """Write the effective configuration as ``config.toml`` into ``out_dir``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "config.toml"
        path.write_text(dumps(self.effective()), encoding="utf-8")
        return path


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    return str(v)


def dumps(values: dict) -> str:
    return "".join(f"{k} = {_toml_value(values[k])}\n" for k in sorted(values))
