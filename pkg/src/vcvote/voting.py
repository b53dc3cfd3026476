"""Test-phase inference: fire supporting concepts on a feature map, cast
offset-shifted votes with a spatial penalty, max-reduce per concept, clamp
negatives to zero, and sum over the supporting set.

Each activated cell p votes for the part appearing at p + d for every
offset d the training offset map assigned mass to; the vote value trades
the cue's log-likelihood score against how typical the offset is.  One
concept contributes at most one (the maximal) vote per target cell, and
never a negative one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RectBivariateSpline

from . import concepts as _concepts
from .evaluation import Detection
from .lattice import LatticeSpec
from .likelihood import ModelBundle, PartModel

NO_VOTE = -np.inf   # sentinel for cells no candidate reached


@dataclass(frozen=True)
class VoteParams:
    """Knobs of the voting stage."""

    spatial_weight: float = 0.7          # weight of the offset-frequency penalty
    offset_source: str = "all-nonzero"   # which offsets cast votes: "all-nonzero" | "selected"
    offset_mean_mode: str = "all"        # normalizer of the spatial term: "all" | "selected"
    single_concept_mode: bool = False    # keep only the best supporting concept
    score_floor: float = 0.0             # peaks must exceed this to become detections

    def __post_init__(self):
        if not 0.0 <= self.spatial_weight <= 1.0:
            raise ValueError(f"spatial_weight {self.spatial_weight} outside [0, 1]")
        if self.offset_source not in ("all-nonzero", "selected"):
            raise ValueError(f"unknown offset_source {self.offset_source!r}")
        if self.offset_mean_mode not in ("all", "selected"):
            raise ValueError(f"unknown offset_mean_mode {self.offset_mean_mode!r}")


@dataclass(frozen=True)
class ScoreMap:
    """Per-part detection evidence on the feature grid, optionally upsampled."""

    part_id: int
    grid: np.ndarray                 # (H4, W4) float64, >= 0
    l0: np.ndarray | None = None     # (H, W) float64, >= 0


def fire_concepts(fm, model: PartModel, dictionary) -> dict[int, list]:
    """Activations per supporting concept: cells with distance <= threshold.

    Returns {concept id: [((row, col), r), ...]} with cells in row-major
    order.
    """
    ids = list(model.supporting)
    dist = _concepts.distances_to_centers(fm.data, dictionary, ids)   # (H*W, K)
    gh, gw = fm.data.shape[:2]
    out = {}
    for k, v in enumerate(ids):
        thr = model.cues[v].threshold
        hits = np.flatnonzero(dist[:, k] <= thr)
        out[v] = [((int(i // gw), int(i % gw)), float(dist[i, k])) for i in hits]
    return out


def cast_votes(v: int, model: PartModel, activations, params: VoteParams,
               grid_size: tuple[int, int]) -> np.ndarray:
    """Vote grid of one concept: max over all candidates per target cell.

    Cells no candidate reaches hold -inf.  Offsets with zero frequency are
    skipped (their spatial term is -inf, a no-op under max).
    """
    gh, gw = grid_size
    grid = np.full((gh, gw), NO_VOTE)
    if not activations:
        return grid
    cue = model.cues[v]
    off = model.offsets[v]
    u = off.mean_frequency(params.offset_mean_mode)
    beta = params.spatial_weight

    py = np.array([p[0] for p, _ in activations])
    px = np.array([p[1] for p, _ in activations])
    evidence = (1.0 - beta) * np.array([cue.score(r) for _, r in activations])

    if params.offset_source == "selected":
        offsets = off.selected_offsets()
    else:
        offsets = off.offsets_with_mass()
    for dy, dx in offsets:
        fr = off.frequency((dy, dx))
        if fr <= 0.0:
            continue
        cand = evidence + beta * np.log(fr / u)
        ty, tx = py + dy, px + dx
        ok = (ty >= 0) & (ty < gh) & (tx >= 0) & (tx < gw)
        if ok.any():
            np.maximum.at(grid, (ty[ok], tx[ok]), cand[ok])
    return grid


def combine(vote_grids) -> np.ndarray:
    """Sum of per-concept votes, clamped at zero so no concept can inhibit."""
    total = None
    for g in vote_grids:
        clamped = np.maximum(g, 0.0)
        total = clamped if total is None else total + clamped
    if total is None:
        raise ValueError("no vote grids to combine")
    return total


def upsample(grid: np.ndarray, spec: LatticeSpec) -> np.ndarray:
    """Spline-interpolate the cell-center grid onto the full pixel lattice.

    Cubic where the grid allows it, exact at cell centers, clamped at zero.
    """
    gh, gw = grid.shape
    h, w = spec.image_size
    rows = spec.receptive_offset + spec.stride * np.arange(gh, dtype=np.float64)
    cols = spec.receptive_offset + spec.stride * np.arange(gw, dtype=np.float64)
    values = np.asarray(grid, dtype=np.float64)
    # splines need >= 2 knots per axis; duplicate a constant axis one stride out
    if gh == 1:
        rows = np.array([rows[0], rows[0] + spec.stride])
        values = np.vstack([values, values])
        gh = 2
    if gw == 1:
        cols = np.array([cols[0], cols[0] + spec.stride])
        values = np.hstack([values, values])
        gw = 2
    spline = RectBivariateSpline(rows, cols, values,
                                 kx=min(3, gh - 1), ky=min(3, gw - 1))
    out = spline(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64))
    return np.maximum(out, 0.0)


def extract_detections(l0_map: np.ndarray, part_id: int, model: PartModel,
                       nms_radius: float | None = None,
                       score_floor: float = 0.0,
                       image_id: str = "") -> list[Detection]:
    """Peaks of the pixel-level score map turned into scored boxes.

    Local maxima above the floor survive a greedy radius-based suppression
    (higher peak wins); each keeps the part's median training box size
    centered on it.  Output is sorted by descending score.
    """
    from scipy.ndimage import maximum_filter

    if nms_radius is None:
        nms_radius = model.nms_radius
    local_max = maximum_filter(l0_map, size=3, mode="nearest")
    ys, xs = np.nonzero((l0_map >= local_max) & (l0_map > score_floor))
    if ys.size == 0:
        return []
    scores = l0_map[ys, xs]
    order = np.lexsort((xs, ys, -scores))
    kept: list[tuple[float, float, float]] = []   # (y, x, score)
    for i in order:
        y, x, s = float(ys[i]), float(xs[i]), float(scores[i])
        if any((y - ky) ** 2 + (x - kx) ** 2 < nms_radius ** 2 for ky, kx, _ in kept):
            continue
        kept.append((y, x, s))
    bh, bw = model.box_size
    out = [Detection(image_id=image_id, part_id=part_id,
                     box=(x - bw / 2.0, y - bh / 2.0, x + bw / 2.0, y + bh / 2.0),
                     score=s)
           for y, x, s in kept]
    out.sort(key=lambda d: (-d.score, d.box[1], d.box[0]))
    return out


def score_part(fm, bundle: ModelBundle, part_id: int,
               params: VoteParams | None = None,
               with_l0: bool = True) -> ScoreMap:
    """Full voting pass for one part on one feature map."""
    params = params or VoteParams()
    pm = bundle.parts[part_id]
    if params.single_concept_mode:
        pm = pm.restricted(1)
    grid_size = fm.data.shape[:2]
    activations = fire_concepts(fm, pm, bundle.dictionary)
    grid = combine(cast_votes(v, pm, activations[v], params, grid_size)
                   for v in pm.supporting)
    l0 = upsample(grid, fm.spec) if with_l0 else None
    return ScoreMap(part_id=part_id, grid=grid, l0=l0)


def detect_image(fm, bundle: ModelBundle, params: VoteParams | None = None,
                 image_id: str = "", scale_factor: float = 1.0,
                 part_ids=None) -> tuple[dict[int, ScoreMap], list[Detection]]:
    """Score maps and detections for every part of the model on one image.

    `scale_factor` rescales the learned box size and suppression radius to
    the rendering of the image being scored (1.0 at the training scale).
    """
    params = params or VoteParams()
    maps = {}
    detections = []
    for part_id in sorted(bundle.parts if part_ids is None else part_ids):
        sm = score_part(fm, bundle, part_id, params)
        maps[part_id] = sm
        pm = bundle.parts[part_id]
        scaled = PartModel(part_id=pm.part_id, supporting=pm.supporting,
                           cues=pm.cues, offsets=pm.offsets,
                           nms_radius=pm.nms_radius * scale_factor,
                           box_size=(pm.box_size[0] * scale_factor,
                                     pm.box_size[1] * scale_factor))
        detections.extend(extract_detections(sm.l0, part_id, scaled,
                                             score_floor=params.score_floor,
                                             image_id=image_id))
    detections.sort(key=lambda d: (-d.score, d.part_id, d.box[1], d.box[0]))
    return maps, detections
