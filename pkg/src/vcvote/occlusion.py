"""Occlusion synthesis: superimpose occluder segment masks onto a target
object at a controlled coverage ratio, update per-part occluded fractions,
and corrupt feature-map cells under a mask (the stand-in for re-extracting
features from composited images).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fileio import FeatureMap, PartAnnotation
from .lattice import l0_of

# occluder count -> coverage ratio bin, as used by the occlusion benchmark
RATIO_BINS = {2: (0.2, 0.4), 3: (0.4, 0.6), 4: (0.6, 0.8)}


@dataclass(frozen=True)
class OccluderSegment:
    """A binary object segment that can be pasted over a scene."""

    mask: np.ndarray           # (h, w) bool
    anchor: tuple[int, int] = (0, 0)
    label: str = "occluder"

    def __post_init__(self):
        if not self.mask.any():
            raise ValueError("occluder mask is empty")


@dataclass(frozen=True)
class OcclusionConfig:
    occluder_count: int = 2
    ratio_bin: tuple[float, float] | None = None   # defaults to RATIO_BINS[count]
    seed: int = 0
    max_attempts: int = 200

    def __post_init__(self):
        if self.occluder_count not in RATIO_BINS:
            raise ValueError(f"occluder_count must be one of {sorted(RATIO_BINS)}")
        if self.ratio_bin is not None:
            lo, hi = self.ratio_bin
            if not (0.0 <= lo < hi <= 1.0):
                raise ValueError(f"bad ratio bin {self.ratio_bin}")

    @property
    def bin(self) -> tuple[float, float]:
        return self.ratio_bin if self.ratio_bin is not None else RATIO_BINS[self.occluder_count]


@dataclass(frozen=True)
class OccludedScene:
    composite_mask: np.ndarray            # (H, W) bool union of placed occluders
    annotations: tuple[PartAnnotation, ...]
    occlusion_ratio: float                # fraction of object pixels covered
    placements: tuple[tuple[str, int, int], ...]   # (label, top, left) per occluder


def box_pixel_slices(box) -> tuple[slice, slice]:
    """Integer pixel rows/cols covered by a float box: r in [y1, y2),
    c in [x1, x2)."""
    import math
    x1, y1, x2, y2 = box
    return (slice(max(0, math.ceil(y1)), max(0, math.ceil(y2))),
            slice(max(0, math.ceil(x1)), max(0, math.ceil(x2))))


def occluded_fraction_of_box(box, mask: np.ndarray) -> float:
    rs, cs = box_pixel_slices(box)
    h, w = mask.shape
    rs = slice(min(rs.start, h), min(rs.stop, h))
    cs = slice(min(cs.start, w), min(cs.stop, w))
    x1, y1, x2, y2 = box
    import math
    area = max(0, math.ceil(y2) - max(0, math.ceil(y1))) * \
           max(0, math.ceil(x2) - max(0, math.ceil(x1)))
    if area == 0:
        return 0.0
    return float(mask[rs, cs].sum()) / area


def _paste(canvas: np.ndarray, occ_mask: np.ndarray, top: int, left: int) -> None:
    h, w = canvas.shape
    mh, mw = occ_mask.shape
    r0, c0 = max(0, top), max(0, left)
    r1, c1 = min(h, top + mh), min(w, left + mw)
    if r0 >= r1 or c0 >= c1:
        return
    canvas[r0:r1, c0:c1] |= occ_mask[r0 - top:r1 - top, c0 - left:c1 - left]


def synthesize(object_mask: np.ndarray, annotations, occluders,
               config: OcclusionConfig) -> OccludedScene:
    """Place occluders at random until their union covers a fraction of the
    object inside the configured ratio bin.

    Every occluder must overlap the object by at least one pixel; the ratio
    is measured over object pixels only.  Raises after max_attempts failed
    placements.
    """
    if not object_mask.any():
        raise ValueError("object mask is empty")
    occluders = list(occluders)
    if not occluders:
        raise ValueError("no occluders given")
    rng = np.random.default_rng(config.seed)
    lo, hi = config.bin
    h, w = object_mask.shape
    ys, xs = np.nonzero(object_mask)
    oy1, oy2 = int(ys.min()), int(ys.max())
    ox1, ox2 = int(xs.min()), int(xs.max())
    object_pixels = int(object_mask.sum())

    for _attempt in range(config.max_attempts):
        union = np.zeros_like(object_mask)
        placements = []
        ok = True
        for _ in range(config.occluder_count):
            occ = occluders[int(rng.integers(len(occluders)))]
            mh, mw = occ.mask.shape
            placed = False
            for _try in range(50):
                top = int(rng.integers(oy1 - mh + 1, oy2 + 1))
                left = int(rng.integers(ox1 - mw + 1, ox2 + 1))
                probe = np.zeros_like(object_mask)
                _paste(probe, occ.mask, top, left)
                if (probe & object_mask).any():
                    union |= probe
                    placements.append((occ.label, top, left))
                    placed = True
                    break
            if not placed:
                ok = False
                break
        if not ok:
            continue
        ratio = float((union & object_mask).sum()) / object_pixels
        if lo <= ratio < hi:
            updated = tuple(
                replace(a, occluded_fraction=occluded_fraction_of_box(a.box, union))
                for a in annotations
            )
            return OccludedScene(composite_mask=union, annotations=updated,
                                 occlusion_ratio=ratio,
                                 placements=tuple(placements))
    raise ValueError(
        f"could not reach occlusion ratio in [{lo}, {hi}) with "
        f"{config.occluder_count} occluders after {config.max_attempts} attempts"
    )


# ---------------------------------------------------------------------------
# feature corruption

def cells_under_mask(mask: np.ndarray, spec) -> list[tuple[int, int]]:
    """Grid cells whose receptive center pixel falls under the mask."""
    gh, gw = spec.grid_size
    out = []
    for i in range(gh):
        for j in range(gw):
            r, c = l0_of((i, j), spec)
            if 0 <= r < mask.shape[0] and 0 <= c < mask.shape[1] and mask[r, c]:
                out.append((i, j))
    return out


def corrupt_cells(fm: FeatureMap, cells, mode: str = "resample",
                  rng: np.random.Generator | None = None,
                  background_pool: np.ndarray | None = None,
                  distractor: np.ndarray | None = None,
                  noise_sigma: float = 0.0) -> FeatureMap:
    """Replace the listed cells' vectors; all other cells are preserved
    bit for bit."""
    rng = rng if rng is not None else np.random.default_rng(0)
    data = fm.data.copy()
    d = data.shape[2]
    for (i, j) in cells:
        if mode == "resample":
            if background_pool is None or len(background_pool) == 0:
                raise ValueError("resample mode needs a background pool")
            vec = np.asarray(background_pool[int(rng.integers(len(background_pool)))],
                             dtype=np.float64)
        elif mode == "occluder-concept":
            if distractor is None:
                raise ValueError("occluder-concept mode needs a distractor vector")
            vec = np.asarray(distractor, dtype=np.float64)
        else:
            raise ValueError(f"unknown corruption mode {mode!r}")
        if noise_sigma > 0:
            vec = vec + rng.normal(0.0, noise_sigma, size=d)
        data[i, j] = vec.astype(np.float32)
    return FeatureMap(spec=fm.spec, data=data)


def corrupt_features(fm: FeatureMap, mask: np.ndarray, mode: str = "resample",
                     rng: np.random.Generator | None = None,
                     background_pool: np.ndarray | None = None,
                     distractor: np.ndarray | None = None,
                     noise_sigma: float = 0.0) -> FeatureMap:
    """Corrupt every cell whose receptive center lies under the pixel mask."""
    cells = cells_under_mask(mask, fm.spec)
    return corrupt_cells(fm, cells, mode, rng, background_pool, distractor,
                         noise_sigma)


# ---------------------------------------------------------------------------
# mask files and a small synthetic occluder library

def save_mask(mask: np.ndarray, path) -> None:
    from PIL import Image
    Image.fromarray((mask.astype(np.uint8)) * 255, mode="L").save(path)


def load_mask(path) -> np.ndarray:
    from PIL import Image
    return np.asarray(Image.open(path).convert("L")) > 127


def synthetic_occluders(rng: np.random.Generator, count: int = 6,
                        size_range: tuple[int, int] = (40, 110)) -> list[OccluderSegment]:
    """Random rectangle and ellipse segments, a stand-in for labeled object
    masks."""
    out = []
    for k in range(count):
        h = int(rng.integers(*size_range))
        w = int(rng.integers(*size_range))
        if k % 2 == 0:
            m = np.ones((h, w), dtype=bool)
            label = f"rect{k}"
        else:
            yy, xx = np.mgrid[0:h, 0:w]
            cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
            m = ((yy - cy) / (h / 2.0)) ** 2 + ((xx - cx) / (w / 2.0)) ** 2 <= 1.0
            label = f"ellipse{k}"
        out.append(OccluderSegment(mask=m, label=label))
    return out
