"""Pipeline configuration and its flat ``section.key = value`` text format.

Example::

    # comments start with '#'
    seed = 0
    filter.alpha = 0.25
    con2dis.knn_k = 16
    preprocess.purple_hue_range = 250, 330
    con2dis.num_clusters = auto

``serialize`` writes every key in a fixed order, so
``serialize(parse(text))`` is the canonical form of ``text``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .con2dis import Con2DisConfig
from .errors import ConfigError
from .head_filter import FilterThresholds
from .preprocess import PreprocessConfig
from .splice import SpliceThresholds

SECTIONS = {
    "preprocess": PreprocessConfig,
    "filter": FilterThresholds,
    "con2dis": Con2DisConfig,
    "splice": SpliceThresholds,
}
TOP_LEVEL = ("seed", "heads_dir", "cluster_count")
CLUSTER_COUNT_MODES = ("spectral", "heads")
_NONE = ("auto", "none", "")
# fields filled from top-level keys rather than set on their own
_DERIVED = {("con2dis", "seed"): "seed"}
# optional keys whose non-auto value is a float rather than an int
_OPTIONAL_FLOATS = {"con2dis.cut_threshold", "splice.bridge_check_px"}


@dataclass
class PipelineConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    filter: FilterThresholds = field(default_factory=FilterThresholds)
    con2dis: Con2DisConfig = field(default_factory=Con2DisConfig)
    splice: SpliceThresholds = field(default_factory=SpliceThresholds)
    heads_dir: str | None = None
    seed: int = 0
    # how k is chosen when con2dis.num_clusters is auto: from the spectrum (at least one per head), or one per head
    cluster_count: str = "spectral"

    def __post_init__(self):
        if self.cluster_count not in CLUSTER_COUNT_MODES:
            raise ConfigError(f"cluster_count must be one of {CLUSTER_COUNT_MODES}")

    def with_overrides(self, overrides: dict[str, str]) -> "PipelineConfig":
        flat = to_flat(self)
        for key, value in overrides.items():
            if key not in flat:
                raise ConfigError(f"unknown config key {key!r}")
            flat[key] = value
        return from_flat(flat)


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(raw: str, default, key: str):
    """Parse ``raw`` to the type of ``default``."""
    s = raw.strip()
    if key in _OPTIONAL_FLOATS and s.lower() in _NONE:
        return None
    try:
        if isinstance(default, bool):
            low = s.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(s)
        if isinstance(default, int):
            return int(s)
        if isinstance(default, float):
            return float(s)
        if isinstance(default, tuple):
            parts = [p for p in s.replace("(", "").replace(")", "").split(",")]
            return tuple(float(p) for p in parts)
        if default is None:
            # optional integers (cluster counts, analyser counts) and optional paths
            if s.lower() in _NONE:
                return None
            if key == "heads_dir":
                return s
            return float(s) if key in _OPTIONAL_FLOATS else int(s)
        return s
    except ValueError as exc:
        raise ConfigError(f"bad value {raw!r} for {key}") from exc


def to_flat(cfg: PipelineConfig) -> dict:
    flat: dict = {}
    for name in TOP_LEVEL:
        flat[name] = getattr(cfg, name)
    for section in SECTIONS:
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            if (section, f.name) not in _DERIVED:
                flat[f"{section}.{f.name}"] = getattr(obj, f.name)
    return flat


def from_flat(flat: dict) -> PipelineConfig:
    defaults = to_flat(PipelineConfig())
    unknown = sorted(set(flat) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    vals = {k: (_coerce(v, defaults[k], k) if isinstance(v, str) and not isinstance(defaults[k], str) else v)
            for k, v in flat.items()}
    merged = {**defaults, **vals}
    try:
        sections = {
            s: cls(**{
                f.name: merged[_DERIVED.get((s, f.name)) or f"{s}.{f.name}"] for f in dataclasses.fields(cls)
            })
            for s, cls in SECTIONS.items()
        }
        return PipelineConfig(**sections, **{k: merged[k] for k in TOP_LEVEL})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse(text: str) -> PipelineConfig:
    flat: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key in flat:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        flat[key] = value
    return from_flat(flat)


def serialize(cfg: PipelineConfig) -> str:
    return "".join(f"{k} = {_format(v)}\n" for k, v in to_flat(cfg).items())


def load(path) -> PipelineConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse(text)


__all__ = ["PipelineConfig", "from_flat", "load", "parse", "serialize", "to_flat"]
