"""Run configuration: flat `key = value` files, merge precedence, seeding.

Precedence is CLI flags > config file > built-in defaults. The merged view is
echoed verbatim into every output directory as `effective.cfg`, and re-running
with that file reproduces the run. All randomness is derived from one 64-bit
seed through named substreams so that subsystems (split, init, shuffle,
cutmix, dropout) cannot perturb each other.
"""

from __future__ import annotations

from dataclasses import MISSING, dataclass, fields
from pathlib import Path

from .model import ModelConfig
from .seeding import substream
from .training import TrainConfig

__all__ = [
    "ConfigError",
    "RunConfig",
    "substream",
    "parse_kv_text",
    "read_config_file",
    "format_kv",
    "write_effective_config",
]


class ConfigError(ValueError):
    """Malformed configuration text or unknown/invalid keys."""


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse `key = value` lines; `#` starts a comment, blanks ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected `key = value`, got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def read_config_file(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_kv_text(text, source=str(path))


def format_kv(mapping: dict[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in mapping.items())


def write_effective_config(out_dir, mapping: dict[str, str]) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "effective.cfg"
    path.write_text(format_kv(mapping), encoding="utf-8", newline="\n")
    return path


def _coerce(name: str, annotation: str, value: str):
    try:
        if annotation == "int":
            return int(value)
        if annotation == "float":
            return float(value)
        if annotation == "bool":
            low = value.lower()
            if low in ("true", "1", "on", "yes"):
                return True
            if low in ("false", "0", "off", "no"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if annotation.startswith("tuple"):
            return tuple(int(v) for v in value.split(",") if v.strip())
        return value
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {exc}") from exc


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


_MODEL_FIELDS = {f.name: f.type for f in fields(ModelConfig)}
_TRAIN_FIELDS = {f.name: f.type for f in fields(TrainConfig)}


@dataclass
class RunConfig:
    """Merged model + training configuration for one run."""

    model: ModelConfig
    train: TrainConfig

    @classmethod
    def merged(
        cls,
        file_values: dict[str, str] | None = None,
        overrides: dict[str, str] | None = None,
        **fixed,
    ) -> "RunConfig":
        """Build from defaults, then config-file values, then CLI overrides.
        `fixed` entries (e.g. num_classes from the dataset, image size) are
        applied last and must agree with any explicit setting."""
        values: dict[str, object] = {}
        for layer in (file_values or {}), (overrides or {}):
            for key, raw in layer.items():
                if key in _MODEL_FIELDS:
                    values[key] = _coerce(key, _MODEL_FIELDS[key], raw)
                elif key in _TRAIN_FIELDS:
                    values[key] = _coerce(key, _TRAIN_FIELDS[key], raw)
                else:
                    raise ConfigError(f"unknown config key {key!r}")
        for key, val in fixed.items():
            if key in values and values[key] != val:
                raise ConfigError(
                    f"config sets {key} = {values[key]} but the data requires {val}"
                )
            values[key] = val
        model_kwargs = {k: v for k, v in values.items() if k in _MODEL_FIELDS}
        train_kwargs = {k: v for k, v in values.items() if k in _TRAIN_FIELDS}
        missing = [
            f.name
            for f in fields(ModelConfig)
            if f.default is MISSING and f.name not in model_kwargs
        ]
        if missing:
            raise ConfigError(
                "missing required config keys: " + ", ".join(missing)
            )
        try:
            return cls(ModelConfig(**model_kwargs), TrainConfig(**train_kwargs))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_mapping(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for f in fields(ModelConfig):
            out[f.name] = _render(getattr(self.model, f.name))
        for f in fields(TrainConfig):
            out[f.name] = _render(getattr(self.train, f.name))
        return out
