"""Pipeline configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

from .ingest import DEFAULT_DERIVATIONS

DEFAULT_CONV_FILTERS = (64, 64, 50, 40, 32, 20)
DEFAULT_DENSE_UNITS = (250, 100)


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the pipeline. Defaults are the published selections
    (1 s epochs, no overlap, 10 min preictal length, smoothing 0.7,
    threshold 0.6, 10 folds) plus artifact-level choices for the rest."""

    # segmentation / labelling
    epoch_length: float = 1.0
    overlap: float = 0.0
    preictal_length: float = 10.0
    # alarm generation
    alpha: float = 0.7
    threshold: float = 0.6
    sustain: int = 5
    refractory: float = 600.0
    # cross-validation
    folds: int = 10
    seed: int = 0
    input_mode: str = "wavelet"
    # preprocessing
    lowpass_cutoff: float = 128.0
    scales: tuple[float, ...] = tuple(float(2 ** i) for i in range(10))
    montage: tuple[str, ...] = tuple(f"{p}-{n}" for p, n in DEFAULT_DERIVATIONS)
    montage_pad: bool = False
    # network / training
    conv_filters: tuple[int, ...] = DEFAULT_CONV_FILTERS
    dense_units: tuple[int, ...] = DEFAULT_DENSE_UNITS
    conv_dropout: float = 0.25
    dense_dropout: float = 0.5
    batch_size: int = 64
    patience: int = 3
    max_passes: int = 100
    rho: float = 0.95
    eps: float = 1e-6
    # change-point analysis
    kl_window: int = 60
    kl_baseline_minutes: float = 20.0
    k_keep: int = 10
    # grid search candidates
    grid_epoch_lengths: tuple[float, ...] = (1.0,)
    grid_overlaps: tuple[float, ...] = (0.0,)
    grid_preictal_lengths: tuple[float, ...] = (5.0, 10.0, 15.0, 20.0)

    def __post_init__(self):
        if self.epoch_length <= 0:
            raise ValueError("epoch_length must be positive")
        if not 0 <= self.overlap < 1:
            raise ValueError("overlap must lie in [0, 1)")
        if self.preictal_length <= 0:
            raise ValueError("preictal_length must be positive")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if self.sustain < 1:
            raise ValueError("sustain must be >= 1")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.input_mode not in ("wavelet", "raw"):
            raise ValueError(f"input_mode must be 'wavelet' or 'raw', got {self.input_mode!r}")

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def candidates(self) -> list["PipelineConfig"]:
        """Grid-search candidates: every (epoch length, overlap, preictal length) combination."""
        return [
            self.replace(epoch_length=e, overlap=o, preictal_length=l)
            for e in self.grid_epoch_lengths
            for o in self.grid_overlaps
            for l in self.grid_preictal_lengths
        ]

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    # ---- plain-text configuration -------------------------------------

    @classmethod
    def from_mapping(cls, values: dict) -> "PipelineConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise KeyError(f"unknown configuration key {key!r}")
            default = known[key].default
            kwargs[key] = _coerce(raw, default) if isinstance(raw, str) else raw
        return cls(**kwargs)

    def to_text(self) -> str:
        lines = []
        for key, value in self.as_dict().items():
            if isinstance(value, (tuple, list)):
                value = ", ".join(_fmt(v) for v in value)
            else:
                value = _fmt(value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _coerce(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        kind = type(default[0]) if default else str
        return tuple(kind(float(t)) if kind is int else kind(t) for t in items)
    if isinstance(default, int):
        return int(float(text))
    if isinstance(default, float):
        return float(text)
    return text


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    values: dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {number}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_config(path, overrides: Optional[dict] = None) -> tuple[PipelineConfig, dict[str, str]]:
    """Read a config file. Returns the pipeline config and the unrecognised
    keys (paths, input lists) for the caller to interpret."""
    with open(path, encoding="utf-8") as fh:
        values = parse_config_text(fh.read())
    if overrides:
        values.update({k: str(v) for k, v in overrides.items()})
    names = {f.name for f in dataclasses.fields(PipelineConfig)}
    known = {k: v for k, v in values.items() if k in names}
    extra = {k: v for k, v in values.items() if k not in names}
    return PipelineConfig.from_mapping(known), extra
