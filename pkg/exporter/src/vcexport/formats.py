"""Writers for the interchange files consumed by the detection pipeline.

Implemented against the published byte layout, independently of the
detector's own reader, so the two sides only meet at the format:

  .vcf  little-endian header {magic "VCF1", u32 version, u32 H4, u32 W4,
        u32 D, u32 stride, u32 receptive_offset, u32 image_h, u32 image_w,
        u64 payload_bytes} followed by raw float32 data, row-major.
  .vca  line-oriented text, one part annotation per line.
  manifest  tab-separated entries with optional key=value extras.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

VCF_MAGIC = b"VCF1"
VCF_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIIIIQ")


def write_vcf(data: np.ndarray, image_size: tuple[int, int], path,
              stride: int = 16, receptive_offset: int = 8) -> None:
    """`data` is (H4, W4, D) float32; `image_size` is (height, width) px."""
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 3:
        raise ValueError(f"expected (H4, W4, D) tensor, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ValueError("refusing to write non-finite feature values")
    gh, gw, depth = data.shape
    payload = data.tobytes()
    header = _HEADER.pack(VCF_MAGIC, VCF_VERSION, gh, gw, depth, stride,
                          receptive_offset, image_size[0], image_size[1],
                          len(payload))
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def write_vca(annotations, path) -> None:
    """`annotations` yields dicts with part_id, object_id, center (row, col),
    box (x1, y1, x2, y2) and occluded_fraction."""
    lines = ["#vca 1",
             "# part_id object_id center_y center_x x1 y1 x2 y2 occluded_fraction"]
    for a in annotations:
        cy, cx = a["center"]
        x1, y1, x2, y2 = a["box"]
        occ = a.get("occluded_fraction", 0.0)
        lines.append(f"{a['part_id']} {a['object_id']} {cy!r} {cx!r} "
                     f"{x1!r} {y1!r} {x2!r} {y2!r} {occ!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_manifest(entries, path) -> None:
    """`entries` yields dicts with image_id, feature_path, annotation_path,
    object_class, image_size (h, w), scale and an extras mapping."""
    lines = ["#vcmanifest 1"]
    for e in entries:
        h, w = e["image_size"]
        cols = [e["image_id"], e["feature_path"], e["annotation_path"],
                e.get("object_class", "unknown"), str(h), str(w),
                str(e["scale"])]
        cols += [f"{k}={v}" for k, v in sorted(e.get("extras", {}).items())]
        lines.append("\t".join(cols))
    Path(path).write_text("\n".join(lines) + "\n")
