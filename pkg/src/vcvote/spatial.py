"""Spatial offset maps: per (concept, part) frequency tables of the
displacement between a part's grid projection and the position where the
concept matches best.

An offset d recorded here means "when concept v fires at cell p, expect the
part near cell p + d".  With the default 120 px neighborhood radius and
stride 16 the offsets live on a 15x15 grid, i.e. d in {-7..7}^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import concepts as _concepts
from .lattice import LatticeSpec, l4_of, neighborhood, offset_grid_radius


@dataclass(frozen=True)
class OffsetMap:
    """Frequency table over cell offsets, plus the above-average selection."""

    grid: np.ndarray        # (side, side) float64 frequencies, sums to 1
    selected: np.ndarray    # (side, side) bool, True where above mean
    mean_freq: float        # mean frequency over the whole grid
    sample_count: int

    @property
    def radius(self) -> int:
        return self.grid.shape[0] // 2

    def offsets_with_mass(self):
        """All offsets (dy, dx) with nonzero frequency."""
        r = self.radius
        ys, xs = np.nonzero(self.grid)
        return [(int(y) - r, int(x) - r) for y, x in zip(ys, xs)]

    def selected_offsets(self):
        r = self.radius
        ys, xs = np.nonzero(self.selected)
        return [(int(y) - r, int(x) - r) for y, x in zip(ys, xs)]

    def frequency(self, offset) -> float:
        r = self.radius
        return float(self.grid[offset[0] + r, offset[1] + r])

    def mean_frequency(self, mode: str = "all") -> float:
        """Normalizer for the spatial vote penalty.

        "all" averages over every grid cell (including zeros); "selected"
        averages only over the above-average cells.
        """
        if mode == "all":
            return self.mean_freq
        if mode == "selected":
            return float(self.grid[self.selected].mean())
        raise ValueError(f"unknown offset mean mode {mode!r}")

    def entropy(self) -> float:
        """Shannon entropy (nats) of the offset frequencies; 0 when all mass
        sits on a single offset."""
        p = self.grid[self.grid > 0]
        return float(-(p * np.log(p)).sum())


def finalize_offset_map(counts: np.ndarray) -> OffsetMap:
    """Turn raw offset counts into a normalized OffsetMap.

    Selection keeps cells strictly above the grid mean; in the degenerate
    all-equal case every cell is selected.
    """
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("offset map needs at least one sample")
    grid = counts / total
    mean = float(grid.mean())
    selected = grid > mean
    if not selected.any():            # all cells equal
        selected = np.ones_like(selected, dtype=bool)
    return OffsetMap(grid=grid, selected=selected, mean_freq=mean,
                     sample_count=int(round(total)))


def accumulate_offsets(images, part_id: int, dictionary,
                       radius_px: float = 120.0) -> np.ndarray:
    """Offset counts for every concept at once: (|V|, side, side) int64.

    For each annotated instance of the part, the best-matching cell inside
    the anchor's neighborhood is found per concept and the displacement from
    the part's grid projection is tallied.
    """
    nv = dictionary.size
    side = None
    counts = None
    for img in images:
        fm = img.features
        anns = [a for a in img.annotations if a.part_id == part_id]
        if not anns:
            continue
        spec = fm.spec
        if side is None:
            rad = offset_grid_radius(radius_px, spec.stride)
            side = 2 * rad + 1
            counts = np.zeros((nv, side, side), dtype=np.int64)
        dist = _concepts.distances_to_centers(fm.data, dictionary)  # (H*W, |V|)
        gw = spec.grid_size[1]
        for a in anns:
            neigh = neighborhood(a.center, spec, radius_px)
            if not neigh.members:
                raise ValueError(f"empty neighborhood at {a.center}")
            cells = np.array(neigh.members)            # lexicographic order
            flat = cells[:, 0] * gw + cells[:, 1]
            sub = dist[flat]                           # (m, |V|)
            best = sub.argmin(axis=0)                  # first min = lexicographic tie-break
            anchor = l4_of(a.center, spec)
            dy = anchor[0] - cells[best, 0]
            dx = anchor[1] - cells[best, 1]
            r = side // 2
            if np.any(np.abs(dy) > r) or np.any(np.abs(dx) > r):
                raise AssertionError("offset outside the reachable grid")
            np.add.at(counts, (np.arange(nv), dy + r, dx + r), 1)
    if counts is None:
        raise ValueError(f"no annotations for part {part_id}")
    return counts


def estimate_offset_map(v: int, part_id: int, images, dictionary,
                        radius_px: float = 120.0) -> OffsetMap:
    """Offset map for one (concept, part) pair over a training set."""
    counts = accumulate_offsets(images, part_id, dictionary, radius_px)
    return finalize_offset_map(counts[v])


def restricted_neighborhood(q, offmap: OffsetMap, spec: LatticeSpec,
                            radius_px: float = 120.0) -> list[tuple[int, int]]:
    """Neighborhood of q filtered by the offset map's selected cells.

    Keeps the members p for which the displacement anchor - p is one of the
    selected offsets, so the positions where the concept is allowed to sit
    given that the part is at q.  Already intersected with the grid.
    """
    anchor = l4_of(q, spec)
    rad = offmap.radius
    out = []
    for p in neighborhood(q, spec, radius_px).members:
        dy = anchor[0] - p[0]
        dx = anchor[1] - p[1]
        if abs(dy) <= rad and abs(dx) <= rad and offmap.selected[dy + rad, dx + rad]:
            out.append(p)
    return out
