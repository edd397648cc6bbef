"""Run configuration: defaults, flat ``key = value`` files and overrides."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .geometry import GridConfig

__all__ = ["Config", "parse_threshold", "load_config", "ConfigError"]


class ConfigError(ValueError):
    pass


def parse_threshold(text) -> float:
    """Accept ``sqrt3`` / ``sqrt8`` style names or a plain number."""
    if isinstance(text, (int, float)):
        return float(text)
    s = str(text).strip().lower().replace("√", "sqrt")
    if s.startswith("sqrt"):
        arg = s[4:].strip("() ")
        return math.sqrt(float(arg))
    return float(s)


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Config:
    a: float = math.sqrt(2.0)
    n: int = 5
    b_deg: float = 72.0
    delta_s: float = 0.5
    max_points_coarse: int = 1000
    max_points_fine: int = 1000
    ratio: float = 0.75
    lanczos_a: int = 4
    ransac_threshold: float = 3.0
    ransac_max_iters: int = 2000
    ransac_confidence: float = 0.995
    seed: int = 42
    th: float = math.sqrt(3.0)
    final_ransac_filter: bool = True

    def __post_init__(self):
        self.grid  # validates the grid fields
        if not 0.0 < self.ratio <= 1.0:
            raise ConfigError(f"ratio must be in (0, 1], got {self.ratio}")
        if self.max_points_coarse < 1 or self.max_points_fine < 1:
            raise ConfigError("max_points values must be positive")
        if self.lanczos_a < 1:
            raise ConfigError("lanczos_a must be >= 1")
        if not self.ransac_threshold > 0 or not 0 < self.ransac_confidence < 1:
            raise ConfigError("invalid RANSAC settings")
        if not self.th > 0:
            raise ConfigError("th must be positive")

    @property
    def grid(self) -> GridConfig:
        try:
            return GridConfig(a=self.a, n=self.n, b_deg=self.b_deg, delta_s=self.delta_s)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def with_values(self, **raw) -> "Config":
        """Copy with fields replaced; string values are parsed to the field type."""
        types = {f.name: f.type for f in fields(self)}
        parsed = {}
        for key, val in raw.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}; known keys: {', '.join(types)}")
            parsed[key] = _coerce(key, types[key], val)
        return replace(self, **parsed)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _coerce(key, typ, val):
    try:
        if key == "th":
            return parse_threshold(val)
        if typ in ("bool", bool):
            return _parse_bool(val)
        if typ in ("int", int):
            if isinstance(val, str):
                f = float(val)
                if f != int(f):
                    raise ValueError
                return int(f)
            return int(val)
        return float(val)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {val!r}") from exc


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, val = (part.strip() for part in line.split("=", 1))
        out[key] = val
    return out


def load_config(path=None, **overrides) -> Config:
    """Defaults, then the file at ``path``, then keyword overrides."""
    cfg = Config()
    if path is not None:
        cfg = cfg.with_values(**read_config_file(path))
    if overrides:
        cfg = cfg.with_values(**overrides)
    return cfg
