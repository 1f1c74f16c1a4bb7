"""Pipeline configuration: dataclass defaults, TOML loading, overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError


@dataclass
class PipelineConfig:
    """Every tunable knob of the synthesis pipeline.

    TOML configuration files use these exact field names at the top
    level; unknown keys are rejected so typos cannot silently fall back
    to defaults.
    """

    # Flow validation.
    patch_radius: int = 3
    sigma_m: float = 0.05
    tau_fb: float = 1.0

    # Superpixel segmentation and merging.
    region_count: int | None = None
    target_region_area: float = 600.0
    compactness: float = 10.0
    lambda_flow: float = 0.5
    slic_iterations: int = 10
    good_pixel_count: int = 100
    weight_threshold: float = 0.96

    # Warping.
    cell_size: float = 16.0
    control_stride: int = 2
    stride_min_pool: int = 50
    edge_gradient_threshold: float = 0.1
    weight_data_term: bool = True

    # Labeling and blending.
    k_source: float = 1.0
    k_reference: float = 1.5
    label_alpha: float = 3.0
    label_beta: float = 8.0
    label_gamma: float = 2.0
    label_epsilon: float = 0.01
    hole_cost: float = 10.0
    max_sweeps: int = 10

    # Harness behavior.
    workers: int = 1
    estimate_missing_flows: bool = True
    flow_levels: int = 4
    flow_search_radius: int = 4
    save_debug: bool = False

    # Ablation switches.
    disable_validation: bool = False
    disable_merging: bool = False
    disable_labeling: bool = False

    def __post_init__(self):
        positive = (
            "sigma_m",
            "tau_fb",
            "target_region_area",
            "compactness",
            "cell_size",
            "weight_threshold",
            "label_alpha",
            "label_epsilon",
            "hole_cost",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"config field {name} must be positive")
        for name in ("patch_radius", "good_pixel_count", "max_sweeps", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"config field {name} must be at least 1")
        if self.region_count is not None and self.region_count < 1:
            raise ConfigError("region_count must be positive when set")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **overrides) -> "PipelineConfig":
        return dataclasses.replace(self, **overrides)


def load_config(path: str | Path | None) -> PipelineConfig:
    """Load a TOML configuration file, or defaults when `path` is None."""
    if path is None:
        return PipelineConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            payload = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file is not valid TOML: {exc}") from exc
    return apply_overrides(PipelineConfig(), payload)


def apply_overrides(cfg: PipelineConfig, overrides: dict) -> PipelineConfig:
    """Apply a key/value mapping onto a config, validating keys."""
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return cfg.replace(**overrides)


ABLATION_MODES = {
    "opf": "disable_validation",
    "spm": "disable_merging",
    "lab": "disable_labeling",
}


def apply_ablation(cfg: PipelineConfig, mode: str | None) -> PipelineConfig:
    """Return a config with one pipeline stage disabled.

    Modes: `opf` skips flow validation (all weights 1), `spm` skips
    region merging, `lab` skips label optimization (blend everything
    covered).
    """
    if mode is None:
        return cfg
    if mode not in ABLATION_MODES:
        raise ConfigError(
            f"unknown ablation {mode!r}; expected one of {sorted(ABLATION_MODES)}"
        )
    return cfg.replace(**{ABLATION_MODES[mode]: True})
