"""Run configuration as a flat ``key = value`` document.

Keys are the field names of :class:`PreprocessConfig` and
:class:`RegisterConfig` plus a few run-level settings. ``rng_seed`` is shared
by both configs. Unknown keys are an error; missing keys keep their defaults.
``#`` starts a comment. Optional numbers accept ``none``; ``inputs`` is a
whitespace-separated path list.

    # example
    k = 8
    outlier_factor = 3.0
    max_lp_rounds = 30
    graph_threshold = none
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

from .evaluation import DEFAULT_METRIC_CAP
from .preprocess import PreprocessConfig
from .register import RegisterConfig

_OPTIONAL_FLOATS = {"seed_radius", "graph_threshold"}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        where = source if line is None else f"{source}, line {line}"
        super().__init__(f"{where}: {message}")
        self.line = line


@dataclass(frozen=True)
class RunConfig:
    preprocess: PreprocessConfig = PreprocessConfig()
    register: RegisterConfig = RegisterConfig()
    graph_threshold: float | None = None  # None: half the mean bounding-box diagonal
    metric_cap: int = DEFAULT_METRIC_CAP
    inputs: tuple[str, ...] = ()
    output: str | None = None
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.metric_cap < 1:
            raise ValueError("metric_cap must be >= 1")
        if self.graph_threshold is not None and not self.graph_threshold > 0:
            raise ValueError("graph_threshold must be > 0")
        # one seed drives every stage
        object.__setattr__(self, "preprocess", dataclasses.replace(self.preprocess, rng_seed=self.rng_seed))
        object.__setattr__(self, "register", dataclasses.replace(self.register, rng_seed=self.rng_seed))

    def with_seed(self, seed: int) -> RunConfig:
        return dataclasses.replace(self, rng_seed=seed)


def _defaults() -> dict[str, tuple[str, object]]:
    """Key -> (owner, default value)."""
    table: dict[str, tuple[str, object]] = {}
    for owner, cls in (("preprocess", PreprocessConfig), ("register", RegisterConfig)):
        for f in dataclasses.fields(cls):
            if f.name != "rng_seed":
                table[f.name] = (owner, f.default)
    for f in dataclasses.fields(RunConfig):
        if f.name not in ("preprocess", "register"):
            table[f.name] = ("run", f.default)
    return table


KEYS = tuple(sorted(_defaults()))


def _parse_value(key: str, text: str, default: object):
    if key in _OPTIONAL_FLOATS:
        return None if text.lower() in ("none", "auto", "") else float(text)
    if key == "inputs":
        return tuple(text.split())
    if key == "output":
        return text or None
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    table = _defaults()
    values: dict[str, dict[str, object]] = {"preprocess": {}, "register": {}, "run": {}}
    seen: set[str] = set()
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ConfigError(f"expected 'key = value', got {line!r}", no, source)
        if key not in table:
            raise ConfigError(f"unknown key {key!r}", no, source)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r}", no, source)
        seen.add(key)
        owner, default = table[key]
        try:
            values[owner][key] = _parse_value(key, raw, default)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", no, source) from None
    try:
        return RunConfig(
            preprocess=PreprocessConfig(**values["preprocess"]),
            register=RegisterConfig(**values["register"]),
            **values["run"],
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), None, source) from None


def load_config(path: str | os.PathLike) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read: {exc.strerror or exc}", None, str(path)) from None
    return parse_config(text, str(path))


def _format_value(value: object) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return " ".join(value)
    return str(value)


def format_config(cfg: RunConfig) -> str:
    """Every set key with its value, sorted; ``parse_config`` reads it back unchanged."""
    lines = []
    table = _defaults()
    for key in KEYS:
        owner, _ = table[key]
        value = getattr(cfg if owner == "run" else getattr(cfg, owner), key)
        if key in ("inputs", "output") and not value:
            continue
        lines.append(f"{key} = {_format_value(value)}")
    return "\n".join(lines) + "\n"


__all__ = ["ConfigError", "KEYS", "RunConfig", "format_config", "load_config", "parse_config"]
