"""Cue quality estimation: distance distributions of each concept around
part positives vs. far-away negatives, activation thresholds at a fixed
miss rate, top-K supporting-concept selection by false-positive rate, and
the tabulated log-likelihood-ratio score function.

A concept "fires" at distance r when r <= threshold.  The threshold is the
nearest-rank 95th percentile of the positive distances, so at most 5% of
positives are missed; the false-positive rate is the fraction of negatives
at or below it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import concepts as _concepts
from .lattice import l4_of, neighborhood
from .spatial import OffsetMap, restricted_neighborhood


def nearest_rank(values, pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * n)-th smallest value."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValueError("percentile of empty sample")
    rank = max(1, math.ceil(pct / 100.0 * v.size))
    return float(v[min(rank, v.size) - 1])


@dataclass(frozen=True)
class TrainingSamples:
    """Anchor positions for one part: annotated positives and sampled
    negatives, each as (image index, (row, col)) pairs."""

    positives: tuple
    negatives: tuple
    min_neg_distance: float

    def check_separation(self, images, part_id: int) -> None:
        """Exhaustively verify every negative keeps its distance from every
        positive center of the part in the same image."""
        for idx, (ny, nx) in self.negatives:
            for a in images[idx].annotations:
                if a.part_id != part_id:
                    continue
                d = math.hypot(ny - a.center[0], nx - a.center[1])
                if d < self.min_neg_distance:
                    raise ValueError(
                        f"negative at {(ny, nx)} only {d:.1f} px from a positive"
                    )


def sample_negatives(images, part_id: int, count: int, min_dist: float,
                     seed: int = 0, max_attempts_per_sample: int = 1000):
    """Uniformly sample pixel positions away from the part's positives.

    Training images are object crops, so the whole image interior is the
    object region.  Deterministic given the seed.
    """
    rng = np.random.default_rng(seed)
    n_img = len(images)
    if n_img == 0:
        raise ValueError("no images to sample from")
    centers = [np.array([a.center for a in img.annotations if a.part_id == part_id],
                        dtype=np.float64).reshape(-1, 2) for img in images]
    out = []
    budget = max_attempts_per_sample * count
    attempts = 0
    while len(out) < count:
        if attempts >= budget:
            raise ValueError(
                f"could not draw {count} negatives at min distance {min_dist} px "
                f"from part {part_id} positives within {budget} attempts "
                f"({len(out)} found); exclusion disks may cover the images"
            )
        attempts += 1
        idx = int(rng.integers(n_img))
        h, w = images[idx].features.spec.image_size
        q = (int(rng.integers(h)), int(rng.integers(w)))
        c = centers[idx]
        if c.size:
            d = np.hypot(c[:, 0] - q[0], c[:, 1] - q[1])
            if float(d.min()) < min_dist:
                continue
        out.append((idx, q))
    return out


# ---------------------------------------------------------------------------
# distance collection

def min_match_distance(fm, q, v: int, dictionary, offmap: OffsetMap,
                       radius_px: float = 120.0) -> float:
    """Smallest distance from concept v to any allowed cell around q.

    Anchors with an empty restricted neighborhood (possible near image
    borders with a sparse offset mask) yield +inf, which lands in the last
    histogram bin.
    """
    cells = restricted_neighborhood(q, offmap, fm.spec, radius_px)
    if not cells:
        return float("inf")
    rows = np.array([p[0] for p in cells])
    cols = np.array([p[1] for p in cells])
    vecs = fm.data[rows, cols].astype(np.float64)
    return float(np.linalg.norm(vecs - dictionary.centers[v], axis=1).min())


def collect_min_distances(images, anchors, dictionary, selected_stack: np.ndarray,
                          radius_px: float = 120.0) -> np.ndarray:
    """Min match distance for every anchor against every concept at once.

    `selected_stack` is the (|V|, side, side) boolean stack of offset masks
    for one part.  Returns (len(anchors), |V|) float64 with +inf where the
    restricted neighborhood is empty.
    """
    nv = dictionary.size
    rad = selected_stack.shape[1] // 2
    result = np.full((len(anchors), nv), np.inf)
    by_image: dict[int, list[int]] = {}
    for i, (idx, _q) in enumerate(anchors):
        by_image.setdefault(idx, []).append(i)
    for idx, anchor_ids in by_image.items():
        fm = images[idx].features
        spec = fm.spec
        gw = spec.grid_size[1]
        dist = _concepts.distances_to_centers(fm.data, dictionary)  # (H*W, |V|)
        for i in anchor_ids:
            q = anchors[i][1]
            neigh = neighborhood(q, spec, radius_px)
            if not neigh.members:
                continue
            cells = np.array(neigh.members)
            anchor_cell = l4_of(q, spec)
            dy = anchor_cell[0] - cells[:, 0]
            dx = anchor_cell[1] - cells[:, 1]
            ok = (np.abs(dy) <= rad) & (np.abs(dx) <= rad)
            if not ok.any():
                continue
            cells, dy, dx = cells[ok], dy[ok], dx[ok]
            allowed = selected_stack[:, dy + rad, dx + rad]          # (|V|, m)
            sub = dist[cells[:, 0] * gw + cells[:, 1]]               # (m, |V|)
            masked = np.where(allowed.T, sub, np.inf)
            result[i] = masked.min(axis=0)
    return result


# ---------------------------------------------------------------------------
# histograms, thresholds, scores

@dataclass(frozen=True)
class CueModel:
    """Everything learned about one (concept, part) pair except its offsets."""

    hist_pos: np.ndarray     # (B,) bin masses, sums to 1
    hist_neg: np.ndarray
    r_max: float             # upper edge of the histogram range
    threshold: float         # activation threshold
    fnr: float               # miss rate at the threshold, on training positives
    fpr: float               # firing rate at the threshold, on training negatives
    score_table: np.ndarray  # (B,) log((pos + eps) / (neg + eps))

    @property
    def num_bins(self) -> int:
        return len(self.hist_pos)

    def bin_of(self, r: float) -> int:
        """Bin containing distance r; anything past r_max uses the last bin."""
        width = self.r_max / self.num_bins
        if not math.isfinite(r) or width <= 0:
            return self.num_bins - 1
        return min(max(int(r / width), 0), self.num_bins - 1)

    def score(self, r: float) -> float:
        return float(self.score_table[self.bin_of(r)])


def bin_indices(r: np.ndarray, r_max: float, num_bins: int) -> np.ndarray:
    width = r_max / num_bins
    idx = np.floor(np.asarray(r, dtype=np.float64) / width)
    return np.clip(np.nan_to_num(idx, posinf=num_bins - 1), 0, num_bins - 1).astype(int)


def histogram_pair(r_pos: np.ndarray, r_neg: np.ndarray,
                   num_bins: int = 100) -> tuple[np.ndarray, np.ndarray, float]:
    """Normalized distance histograms over a shared range.

    The range tops out at the 99.5th percentile of the pooled finite
    distances; larger values clamp into the last bin.
    """
    pooled = np.concatenate([r_pos, r_neg])
    finite = pooled[np.isfinite(pooled)]
    r_max = nearest_rank(finite, 99.5) if finite.size else 1.0
    if r_max <= 0:
        r_max = float(finite.max()) if finite.size and finite.max() > 0 else 1e-12
    hp = np.bincount(bin_indices(r_pos, r_max, num_bins), minlength=num_bins)
    hn = np.bincount(bin_indices(r_neg, r_max, num_bins), minlength=num_bins)
    return hp / len(r_pos), hn / len(r_neg), r_max


def estimate_distributions(v: int, part_id: int, images, samples: TrainingSamples,
                           dictionary, offmap: OffsetMap,
                           radius_px: float = 120.0, num_bins: int = 100):
    """Per-anchor min distances for one pair, histogrammed.

    Returns (hist_pos, hist_neg, r_max).  The negative set uses the same
    offset-restricted neighborhoods, anchored at the sampled positions.
    """
    r_pos = np.array([min_match_distance(images[i].features, q, v, dictionary,
                                         offmap, radius_px)
                      for i, q in samples.positives])
    r_neg = np.array([min_match_distance(images[i].features, q, v, dictionary,
                                         offmap, radius_px)
                      for i, q in samples.negatives])
    return histogram_pair(r_pos, r_neg, num_bins)


def calibrate_threshold(r_pos, fnr_target: float = 0.05) -> float:
    """Activation threshold: nearest-rank (1 - fnr_target) percentile of the
    positive distances, so the miss rate is the target up to sample
    granularity."""
    return nearest_rank(r_pos, (1.0 - fnr_target) * 100.0)


def score_table_from_histograms(hist_pos: np.ndarray, hist_neg: np.ndarray,
                                epsilon: float = 1e-7) -> np.ndarray:
    return np.log((hist_pos + epsilon) / (hist_neg + epsilon))


def make_cue_model(r_pos, r_neg, num_bins: int = 100, epsilon: float = 1e-7,
                   fnr_target: float = 0.05) -> CueModel:
    r_pos = np.asarray(r_pos, dtype=np.float64)
    r_neg = np.asarray(r_neg, dtype=np.float64)
    hp, hn, r_max = histogram_pair(r_pos, r_neg, num_bins)
    thr = calibrate_threshold(r_pos, fnr_target)
    fnr = float(np.mean(r_pos > thr))
    fpr = float(np.mean(r_neg <= thr))
    return CueModel(hist_pos=hp, hist_neg=hn, r_max=r_max, threshold=thr,
                    fnr=fnr, fpr=fpr,
                    score_table=score_table_from_histograms(hp, hn, epsilon))


def select_supporting(cues: dict[int, CueModel], k: int) -> tuple[int, ...]:
    """The k concepts with the lowest false-positive rate; ties go to the
    smaller concept index."""
    if k > len(cues):
        raise ValueError(f"k={k} exceeds the {len(cues)} available concepts")
    order = sorted(cues, key=lambda v: (cues[v].fpr, v))
    return tuple(order[:k])


# ---------------------------------------------------------------------------
# trained models

@dataclass(frozen=True)
class PartModel:
    """Detector state for one semantic part."""

    part_id: int
    supporting: tuple[int, ...]            # concept ids, best FPR first
    cues: dict[int, CueModel]
    offsets: dict[int, OffsetMap]
    nms_radius: float                      # px at training scale
    box_size: tuple[float, float]          # (height, width) px at training scale

    def restricted(self, k: int) -> "PartModel":
        """Same model with only the top-k supporting concepts."""
        keep = self.supporting[:k]
        return PartModel(part_id=self.part_id, supporting=keep,
                         cues={v: self.cues[v] for v in keep},
                         offsets={v: self.offsets[v] for v in keep},
                         nms_radius=self.nms_radius, box_size=self.box_size)


@dataclass(frozen=True)
class ModelBundle:
    """Complete trained state: concept dictionary plus one PartModel per part."""

    dictionary: "_concepts.ConceptDictionary"
    parts: dict[int, PartModel]
    neighborhood_radius: float = 120.0
    stride: int = 16
    receptive_offset: int = 8
    training_scale: int = 224

    def validate(self) -> None:
        from .fileio import IntegrityError   # local import avoids a cycle
        for part_id, pm in self.parts.items():
            if not pm.supporting:
                raise IntegrityError(f"part {part_id} has no supporting concepts")
            for v in pm.supporting:
                if v not in pm.cues or v not in pm.offsets:
                    raise IntegrityError(
                        f"part {part_id} references concept {v} without a "
                        f"cue/offset table"
                    )
                if not (0 <= v < self.dictionary.size):
                    raise IntegrityError(
                        f"part {part_id} references unknown concept {v}"
                    )
                cue = pm.cues[v]
                for h in (cue.hist_pos, cue.hist_neg):
                    if abs(float(h.sum()) - 1.0) > 1e-9:
                        raise IntegrityError(
                            f"unnormalized histogram for pair ({v}, {part_id})"
                        )

    def restricted(self, k: int) -> "ModelBundle":
        return ModelBundle(dictionary=self.dictionary,
                           parts={s: pm.restricted(k) for s, pm in self.parts.items()},
                           neighborhood_radius=self.neighborhood_radius,
                           stride=self.stride, receptive_offset=self.receptive_offset,
                           training_scale=self.training_scale)
