"""Detection scoring: IoU matching at 0.5, average precision with the
all-point precision envelope, duplicate-as-false-positive handling, and the
symmetric log-ratio scale-prediction loss.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Detection:
    """A scored box at image coordinates."""

    image_id: str
    part_id: int
    box: tuple[float, float, float, float]   # (x1, y1, x2, y2)
    score: float

    def __post_init__(self):
        x1, y1, x2, y2 = self.box
        if not (x2 > x1 and y2 > y1):
            raise ValueError(f"degenerate detection box {self.box}")
        if not math.isfinite(self.score):
            raise ValueError(f"non-finite detection score {self.score}")


def iou(a, b) -> float:
    """Intersection over union of two (x1, y1, x2, y2) boxes; 0 if disjoint."""
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


@dataclass(frozen=True)
class GroundTruth:
    """One ground-truth box for matching (an annotation tied to its image)."""

    image_id: str
    part_id: int
    box: tuple[float, float, float, float]
    occluded_fraction: float = 0.0


def _greedy_match(detections, truths, iou_thresh):
    """Match each detection (best first) to the unmatched truth with the
    highest IoU >= threshold.  Returns per-detection truth index or -1."""
    order = sorted(range(len(detections)),
                   key=lambda i: (-detections[i].score, detections[i].image_id,
                                  detections[i].box))
    by_image: dict[str, list[int]] = {}
    for j, t in enumerate(truths):
        by_image.setdefault(t.image_id, []).append(j)
    taken = [False] * len(truths)
    assigned = [-1] * len(detections)
    for i in order:
        d = detections[i]
        best_j, best_iou = -1, 0.0
        for j in by_image.get(d.image_id, ()):
            if taken[j]:
                continue
            o = iou(d.box, truths[j].box)
            if o >= iou_thresh and o > best_iou:
                best_j, best_iou = j, o
        if best_j >= 0:
            taken[best_j] = True
            assigned[i] = best_j
    return order, assigned


def average_precision(tp_flags, n_truth: int) -> float:
    """Area under the precision-recall curve with the precision envelope.

    `tp_flags` must be in descending-score order.
    """
    if n_truth == 0:
        return 0.0
    tp = np.asarray(tp_flags, dtype=np.float64)
    if tp.size == 0:
        return 0.0
    cum_tp = np.cumsum(tp)
    recall = cum_tp / n_truth
    precision = cum_tp / np.arange(1, tp.size + 1)
    # envelope: precision at recall r is the max precision at recall >= r
    mrec = np.concatenate([[0.0], recall, [recall[-1]]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0] + 1
    return float(np.sum((mrec[steps] - mrec[steps - 1]) * mpre[steps]))


def match_and_ap(detections, truths, iou_thresh: float = 0.5,
                 stratum=None) -> float:
    """AP for one part.  Duplicate hits on an already-matched truth count as
    false positives.

    With `stratum=(lo, hi)`, only truths with occluded_fraction in [lo, hi)
    count as targets; detections matched to out-of-stratum truths are
    ignored (neither TP nor FP).
    """
    truths = list(truths)
    order, assigned = _greedy_match(list(detections), truths, iou_thresh)
    if stratum is None:
        in_stratum = [True] * len(truths)
    else:
        lo, hi = stratum
        in_stratum = [lo <= t.occluded_fraction < hi for t in truths]
    tp_flags = []
    for i in order:
        j = assigned[i]
        if j >= 0 and not in_stratum[j]:
            continue                      # ignored: matched an out-of-stratum truth
        tp_flags.append(1.0 if j >= 0 else 0.0)
    return average_precision(tp_flags, sum(in_stratum))


def evaluate_detections(detections, truths, iou_thresh: float = 0.5,
                        strata: dict[str, tuple[float, float]] | None = None):
    """Per-part AP and mean AP; parts with no ground truth are skipped.

    Returns (per_part_ap, mean_ap, strata_mean_ap).
    """
    part_ids = sorted({t.part_id for t in truths})
    per_part = {}
    strata_ap: dict[str, dict[int, float]] = {name: {} for name in (strata or {})}
    for s in part_ids:
        dets = [d for d in detections if d.part_id == s]
        gts = [t for t in truths if t.part_id == s]
        per_part[s] = match_and_ap(dets, gts, iou_thresh)
        for name, rng in (strata or {}).items():
            if any(rng[0] <= t.occluded_fraction < rng[1] for t in gts):
                strata_ap[name][s] = match_and_ap(dets, gts, iou_thresh, stratum=rng)
    mean_ap = float(np.mean(list(per_part.values()))) if per_part else 0.0
    # strata with no ground truth are omitted rather than reported as zero
    strata_mean = {name: float(np.mean(list(v.values())))
                   for name, v in strata_ap.items() if v}
    return per_part, mean_ap, strata_mean


def scale_loss(a: float, b: float) -> float:
    """Symmetric rescaling loss ln(max(a,b)/min(a,b)); zero iff a == b."""
    if a <= 0 or b <= 0:
        raise ValueError("scale loss needs positive short-edge lengths")
    return math.log(max(a, b) / min(a, b))


@dataclass
class EvalReport:
    per_part_ap: dict[int, float]
    mean_ap: float
    scale_loss_mean: float | None = None
    strata_mean_ap: dict[str, float] = field(default_factory=dict)
    n_detections: int = 0
    n_truths: int = 0

    def to_json(self) -> str:
        payload = {
            "per_part_ap": {str(k): v for k, v in sorted(self.per_part_ap.items())},
            "mean_ap": self.mean_ap,
            "scale_loss_mean": self.scale_loss_mean,
            "strata_mean_ap": dict(sorted(self.strata_mean_ap.items())),
            "n_detections": self.n_detections,
            "n_truths": self.n_truths,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = ["part      AP", "----  ------"]
        for s, ap in sorted(self.per_part_ap.items()):
            lines.append(f"{s:>4}  {ap:6.4f}")
        lines.append("----  ------")
        lines.append(f"mean  {self.mean_ap:6.4f}")
        if self.scale_loss_mean is not None:
            lines.append(f"scale prediction loss (mean): {self.scale_loss_mean:.4f}")
        for name, ap in sorted(self.strata_mean_ap.items()):
            lines.append(f"mean AP [{name}]: {ap:.4f}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# detection files

_DET_HEADER = "#vcdet 1"


def write_detections(detections, path) -> None:
    lines = [_DET_HEADER, "# image_id part_id x1 y1 x2 y2 score"]
    for d in detections:
        x1, y1, x2, y2 = d.box
        lines.append(f"{d.image_id} {d.part_id} {x1!r} {y1!r} {x2!r} {y2!r} {d.score!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_detections(path) -> list[Detection]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 7:
            raise ValueError(f"{path}:{lineno}: expected 7 fields")
        out.append(Detection(image_id=fields[0], part_id=int(fields[1]),
                             box=tuple(float(v) for v in fields[2:6]),
                             score=float(fields[6])))
    return out
