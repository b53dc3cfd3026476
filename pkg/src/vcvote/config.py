"""Run configuration: one dataclass holding every tunable constant, loadable
from a YAML file with command-line overrides on top.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import yaml

DEFAULT_SCALES = (224, 272, 320, 400, 480, 560, 640, 752, 864, 976)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    # geometry
    neighborhood_radius: float = 120.0   # px: cells this close to an anchor vote for it
    stride: int = 16
    training_scale: int = 224            # short edge of training crops, px
    # dictionary
    num_concepts: int = 200
    kmeans_max_iter: int = 300
    kmeans_tol: float = 1e-4
    sample_cap: int = 1_000_000
    cluster_region: str = "object-box"   # training crops are object boxes already
    # cue calibration
    num_supporting: int = 45
    fnr_target: float = 0.05
    num_bins: int = 100
    score_epsilon: float = 1e-7
    neg_ratio: int = 5
    min_neg_distance: float = 160.0      # px between negatives and positives
    # voting
    spatial_weight: float = 0.7
    vote_offsets: str = "all-nonzero"    # offsets casting votes: all-nonzero | selected
    offset_mean_mode: str = "all"        # spatial normalizer: all | selected
    nms_radius: float | None = None      # None: half the median box diagonal per part
    score_floor: float = 0.0
    # multi-scale testing
    scales: tuple = DEFAULT_SCALES
    # misc
    seed: int = 0
    jobs: int = 1

    def validate(self) -> None:
        checks = [
            ("neighborhood_radius", self.neighborhood_radius > 0),
            ("stride", self.stride > 0),
            ("training_scale", self.training_scale > 0),
            ("num_concepts", self.num_concepts >= 1),
            ("kmeans_max_iter", self.kmeans_max_iter >= 1),
            ("kmeans_tol", self.kmeans_tol >= 0),
            ("sample_cap", self.sample_cap >= 1),
            ("cluster_region", self.cluster_region in ("object-box", "full-image")),
            ("num_supporting", 1 <= self.num_supporting),
            ("fnr_target", 0 < self.fnr_target < 1),
            ("num_bins", self.num_bins >= 1),
            ("score_epsilon", self.score_epsilon > 0),
            ("neg_ratio", self.neg_ratio >= 1),
            ("min_neg_distance", self.min_neg_distance >= 0),
            ("spatial_weight", 0 <= self.spatial_weight <= 1),
            ("vote_offsets", self.vote_offsets in ("all-nonzero", "selected")),
            ("offset_mean_mode", self.offset_mean_mode in ("all", "selected")),
            ("nms_radius", self.nms_radius is None or self.nms_radius > 0),
            ("jobs", self.jobs >= 1),
            ("scales", len(self.scales) >= 1
             and all(b > a for a, b in zip(self.scales, self.scales[1:]))
             and self.scales[0] == self.training_scale),
        ]
        bad = [name for name, ok in checks if not ok]
        if bad:
            raise ConfigError("invalid config field(s): " + ", ".join(
                f"{name}={getattr(self, name)!r}" for name in bad))

    def vote_params(self, single_concept: bool = False):
        from .voting import VoteParams
        return VoteParams(spatial_weight=self.spatial_weight,
                          offset_source=self.vote_offsets,
                          offset_mean_mode=self.offset_mean_mode,
                          single_concept_mode=single_concept,
                          score_floor=self.score_floor)


def load_config(path=None, overrides: dict | None = None) -> Config:
    """Config from YAML (missing file fields keep defaults) plus overrides;
    unknown keys are field-level errors."""
    values: dict = {}
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a mapping")
        values.update(raw)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in fields(Config)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
    if "scales" in values:
        values["scales"] = tuple(int(s) for s in values["scales"])
    cfg = Config(**values)
    cfg.validate()
    return cfg


def save_config(cfg: Config, path) -> None:
    payload = {f.name: getattr(cfg, f.name) for f in fields(Config)}
    payload["scales"] = list(payload["scales"])
    Path(path).write_text(yaml.safe_dump(payload, sort_keys=True))
