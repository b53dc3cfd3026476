"""Coordinate arithmetic between the image pixel lattice (L0) and the
stride-16 feature lattice (L4).

Positions on both lattices are (row, col) tuples; L0 coordinates are pixels,
L4 coordinates are grid indices.  Cell (i, j) of the feature grid projects to
pixel (offset + stride*i, offset + stride*j), with the offset fixed at
stride/2 so that projections sit at cell centers and the round trip
l4_of(l0_of(p)) == p is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class LatticeSpec:
    """Geometry linking a feature grid to the image it was computed from."""

    stride: int = 16
    receptive_offset: int = 8
    image_size: tuple[int, int] = (224, 224)   # (height, width) px
    grid_size: tuple[int, int] = (14, 14)      # (rows, cols) of the feature grid

    def __post_init__(self):
        if self.stride <= 0:
            raise ValueError(f"stride must be positive, got {self.stride}")
        h, w = self.image_size
        gh, gw = self.grid_size
        if gh < 1 or gw < 1:
            raise ValueError(f"grid_size must be at least 1x1, got {self.grid_size}")
        # every cell center must project inside the image
        last_r = self.receptive_offset + self.stride * (gh - 1)
        last_c = self.receptive_offset + self.stride * (gw - 1)
        if last_r > h - 1 or last_c > w - 1:
            raise ValueError(
                f"grid {self.grid_size} does not fit image {self.image_size}: "
                f"last cell center at ({last_r}, {last_c})"
            )


def grid_size_for_image(image_size: tuple[int, int], stride: int = 16) -> tuple[int, int]:
    """Grid shape a stride-s backbone produces: floor(dim / stride) per axis."""
    return (image_size[0] // stride, image_size[1] // stride)


def l0_of(p: tuple[int, int], spec: LatticeSpec) -> tuple[int, int]:
    """Project grid position p to its pixel-center coordinate."""
    i, j = p
    gh, gw = spec.grid_size
    if not (0 <= i < gh and 0 <= j < gw):
        raise ValueError(f"grid position {p} outside grid {spec.grid_size}")
    return (spec.receptive_offset + spec.stride * i,
            spec.receptive_offset + spec.stride * j)


def _axis_l4(q: float, offset: int, stride: int, n: int) -> int:
    # nearest grid index along one axis, ties toward the smaller index
    x = (q - offset) / stride
    k = math.floor(x + 0.5)
    if x + 0.5 == k:          # exactly between two cells
        k -= 1
    return min(max(k, 0), n - 1)


def l4_of(q: tuple[float, float], spec: LatticeSpec) -> tuple[int, int]:
    """Grid position whose pixel center is closest to q.

    Ties break toward the smaller row, then smaller column index.  Because
    squared distance separates per axis, the per-axis nearest index is the
    joint argmin.
    """
    r, c = q
    h, w = spec.image_size
    if not (0 <= r <= h - 1 and 0 <= c <= w - 1):
        raise ValueError(f"pixel position {q} outside image {spec.image_size}")
    gh, gw = spec.grid_size
    return (_axis_l4(r, spec.receptive_offset, spec.stride, gh),
            _axis_l4(c, spec.receptive_offset, spec.stride, gw))


@dataclass(frozen=True)
class Neighborhood:
    """Feature-grid cells whose pixel centers lie within radius_px of center_q."""

    center_q: tuple[float, float]
    members: tuple[tuple[int, int], ...]
    radius_px: float

    def __len__(self):
        return len(self.members)

    def __contains__(self, p):
        return tuple(p) in set(self.members)


def neighborhood(q: tuple[float, float], spec: LatticeSpec,
                 radius_px: float = 120.0) -> Neighborhood:
    """All grid cells p with Dist(q, l0_of(p)) < radius_px (strict).

    Members come out in lexicographic (row, col) order.
    """
    r, c = q
    h, w = spec.image_size
    if not (0 <= r <= h - 1 and 0 <= c <= w - 1):
        raise ValueError(f"pixel position {q} outside image {spec.image_size}")
    gh, gw = spec.grid_size
    ci, cj = l4_of(q, spec)
    reach = int(math.ceil(radius_px / spec.stride)) + 1
    members = []
    for i in range(max(0, ci - reach), min(gh, ci + reach + 1)):
        pr = spec.receptive_offset + spec.stride * i
        for j in range(max(0, cj - reach), min(gw, cj + reach + 1)):
            pc = spec.receptive_offset + spec.stride * j
            if (pr - r) ** 2 + (pc - c) ** 2 < radius_px ** 2:
                members.append((i, j))
    return Neighborhood(center_q=(r, c), members=tuple(members), radius_px=radius_px)


def offset_grid_radius(radius_px: float, stride: int) -> int:
    """Largest per-axis cell offset reachable inside a neighborhood.

    A member cell sits within radius_px of the anchor pixel and the anchor's
    nearest cell is at most stride/2 away per axis, so offsets are strictly
    below (radius_px + stride/2) / stride cells.  For radius 120 and stride 16
    this gives 7, i.e. a 15x15 offset grid; for radius 56 it gives 3 (7x7).
    """
    bound = (radius_px + stride / 2.0) / stride
    r = int(math.ceil(bound)) - 1 if bound == int(bound) else int(math.floor(bound))
    return max(r, 0)
