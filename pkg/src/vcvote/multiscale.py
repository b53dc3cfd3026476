"""Test-time scale prediction: score the image at a schedule of short-edge
sizes, read off each part's best scale, average them into a single predicted
scale, and rerun detection there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .likelihood import ModelBundle
from .voting import VoteParams, detect_image, score_part

SCALE_SCHEDULE = (224, 272, 320, 400, 480, 560, 640, 752, 864, 976)


def validate_schedule(scales, training_scale: int = 224) -> tuple[int, ...]:
    scales = tuple(int(s) for s in scales)
    if not scales:
        raise ValueError("empty scale schedule")
    if any(b <= a for a, b in zip(scales, scales[1:])):
        raise ValueError(f"scale schedule must be strictly increasing: {scales}")
    if scales[0] != training_scale:
        raise ValueError(
            f"scale schedule must start at the training scale {training_scale}, "
            f"got {scales[0]}"
        )
    return scales


def nearest_scale(value: float, schedule) -> int:
    """Scheduled scale closest to `value`; ties go to the smaller scale."""
    return min(schedule, key=lambda s: (abs(s - value), s))


@dataclass(frozen=True)
class ScalePrediction:
    per_part: dict[int, int]              # best scale per part
    combined: float                       # mean of the per-part best scales
    per_scale_max: dict[int, dict[int, float]]   # part -> scale -> peak score

    def __post_init__(self):
        if self.per_part:
            lo = min(min(v.keys()) for v in self.per_scale_max.values())
            hi = max(max(v.keys()) for v in self.per_scale_max.values())
            if not (lo <= self.combined <= hi):
                raise ValueError(f"combined scale {self.combined} outside [{lo}, {hi}]")


def predict_scale(score_maps_by_scale: dict[int, dict[int, "ScoreMap"]],
                  part_ids=None) -> ScalePrediction:
    """Best scale per part = argmax of the upsampled map's global maximum,
    ties toward the smaller scale; combined scale = arithmetic mean."""
    scales = sorted(score_maps_by_scale)
    if not scales:
        raise ValueError("no scales scored")
    if part_ids is None:
        part_ids = sorted(score_maps_by_scale[scales[0]])
    per_part = {}
    per_scale_max: dict[int, dict[int, float]] = {}
    for s in part_ids:
        best_scale, best_val = None, -np.inf
        per_scale_max[s] = {}
        for scale in scales:
            sm = score_maps_by_scale[scale][s]
            grid = sm.l0 if sm.l0 is not None else sm.grid
            val = float(grid.max())
            per_scale_max[s][scale] = val
            if val > best_val:
                best_scale, best_val = scale, val
        per_part[s] = best_scale
    combined = float(np.mean(list(per_part.values())))
    return ScalePrediction(per_part=per_part, combined=combined,
                           per_scale_max=per_scale_max)


def map_box(box, rendered_size, natural_size):
    """Rescale a box from a rendered image's coordinates back to the
    original image's coordinates."""
    fy = natural_size[0] / rendered_size[0]
    fx = natural_size[1] / rendered_size[1]
    x1, y1, x2, y2 = box
    return (x1 * fx, y1 * fy, x2 * fx, y2 * fy)


def detect_multiscale(features_by_scale: dict[int, "FeatureMap"],
                      bundle: ModelBundle, natural_size: tuple[int, int],
                      params: VoteParams | None = None, image_id: str = ""):
    """Two-pass detection: predict the proper scale from the whole schedule,
    then keep only the detections of a fresh run at the nearest scheduled
    scale, mapped back to the original coordinates.

    Returns (detections, ScalePrediction, used_scale).
    """
    params = params or VoteParams()
    schedule = sorted(features_by_scale)
    maps = {}
    for scale in schedule:
        fm = features_by_scale[scale]
        maps[scale] = {s: score_part(fm, bundle, s, params)
                       for s in sorted(bundle.parts)}
    prediction = predict_scale(maps)
    used = nearest_scale(prediction.combined, schedule)

    fm = features_by_scale[used]
    _, dets = detect_image(fm, bundle, params, image_id=image_id, scale_factor=1.0)
    from .evaluation import Detection
    out = [Detection(image_id=d.image_id, part_id=d.part_id,
                     box=map_box(d.box, fm.spec.image_size, natural_size),
                     score=d.score)
           for d in dets]
    return out, prediction, used
