"""Flat ``key = value`` run configuration: model hyperparameters plus data
paths and split settings."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

from stockode.errors import ConfigError, DataError
from stockode.model import ModelConfig

log = logging.getLogger(__name__)

_MODEL_FIELDS = {f.name: f for f in dataclasses.fields(ModelConfig)}
_PATH_KEYS = ("bars", "relations", "universe", "out_dir")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    bars: Path | None = None
    relations: Path | None = None
    universe: Path | None = None
    out_dir: Path = Path("run")
    split: tuple = (0.6, 0.2, 0.2)
    price_mode: str = "relative"
    k: int = 5

    def require(self, *keys) -> None:
        """Check that the named data paths are set and exist."""
        for key in keys:
            path = getattr(self, key)
            if path is None:
                raise ConfigError(f"config key {key!r} is required")
            if not Path(path).is_file():
                raise DataError(f"config key {key!r}: file not found: {path}")

    def resolved(self) -> dict:
        out = {f"model.{k}": v for k, v in self.model.to_dict().items()}
        out.update({k: (str(getattr(self, k)) if getattr(self, k) is not None else None) for k in _PATH_KEYS})
        out.update(split=",".join(repr(x) for x in self.split), price_mode=self.price_mode, k=self.k)
        return out

    def log_resolved(self) -> None:
        for key, value in sorted(self.resolved().items()):
            log.info("config %s = %s", key, value)


def _parse_scalar(kind, raw: str, key: str, where: str):
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: {key} expects {kind if isinstance(kind, str) else kind.__name__}, got {raw!r}") from None


def _parse_split(raw: str, where: str) -> tuple:
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"{where}: split needs three comma-separated values, got {raw!r}")
    try:
        return tuple(int(p) if p.isdigit() else float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{where}: split values must be numbers, got {raw!r}") from None


def parse_run_config(text: str, base_dir=".", source: str = "<config>", overrides: dict | None = None) -> RunConfig:
    """Parse config text; relative paths are resolved against ``base_dir``."""
    model_kw, run_kw = {}, {}
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        entries.append((key, value, f"{source}:{lineno}"))
    for key, value in (overrides or {}).items():
        entries.append((key, str(value), "command line"))

    for key, value, where in entries:
        if key in _MODEL_FIELDS:
            model_kw[key] = _parse_scalar(_MODEL_FIELDS[key].type, value, key, where)
        elif key in _PATH_KEYS:
            path = Path(value)
            run_kw[key] = path if path.is_absolute() else Path(base_dir) / path
        elif key == "split":
            run_kw["split"] = _parse_split(value, where)
        elif key == "price_mode":
            if value not in ("relative", "level"):
                raise ConfigError(f"{where}: price_mode must be 'relative' or 'level', got {value!r}")
            run_kw["price_mode"] = value
        elif key == "k":
            run_kw["k"] = _parse_scalar(int, value, key, where)
        else:
            raise ConfigError(f"{where}: unknown config key {key!r}")
    return RunConfig(model=ModelConfig(**model_kw), **run_kw)


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return parse_run_config(text, path.parent, str(path), overrides)
