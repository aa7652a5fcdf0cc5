"""Plain ``key = value`` run configuration.

Guidance keys map onto :class:`GuidanceConfig`; the remaining keys control
the scan context (generator prior, held-out sizes) and the detector scan.
Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from ..inversion import GuidanceConfig


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


GUIDANCE_KEYS = {
    "lambda1": float,
    "lambda2_valid": float,
    "lambda2_detect": float,
    "T": int,
    "max_retries": int,
    "noise_mode": str,
    "t_scaling": _parse_bool,
    "guidance_scale": float,
    "seed": int,
}


@dataclass(frozen=True)
class RunConfig:
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    prior_var: float = 0.06
    heldout_per_class: int = 64
    probe_per_class: int = 32
    corner_weight: float = 1.0
    corner_radius: float = 0.2
    detector_threshold: float = 1.2

    def __post_init__(self):
        if self.prior_var <= 0:
            raise ConfigError(f"prior_var must be positive, got {self.prior_var}")
        if self.heldout_per_class < 1 or self.probe_per_class < 1:
            raise ConfigError("held-out and probe sizes must be at least 1")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "guidance"}
        d["guidance"] = self.guidance.to_dict()
        return d


EXTRA_KEYS = {f.name: f.type for f in fields(RunConfig) if f.name != "guidance"}
_CASTS = {"float": float, "int": int}


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    guidance, extra = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if key in guidance or key in extra:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        if key in GUIDANCE_KEYS:
            target, cast = guidance, GUIDANCE_KEYS[key]
        elif key in EXTRA_KEYS:
            target, cast = extra, _CASTS[EXTRA_KEYS[key]]
        else:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        try:
            target[key] = cast(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    try:
        return RunConfig(GuidanceConfig(**guidance), **extra)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))
