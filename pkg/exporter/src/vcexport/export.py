"""Export jobs: image file in, one feature tensor per requested scale out,
with annotations carried along into each rendering's coordinates."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from . import formats
from .backbone import DEPTH, RECEPTIVE_OFFSET, STRIDE, extract_features
from .imaging import OccluderPaste, composite, crop, load_image, resize_short_edge

TEST_SCALES = (224, 272, 320, 400, 480, 560, 640, 752, 864, 976)
TRAIN_SCALE = 224


@dataclass(frozen=True)
class ExportJob:
    image_path: Path
    out_dir: Path
    image_id: str = ""
    object_box: tuple[float, float, float, float] | None = None
    scales: tuple[int, ...] = (TRAIN_SCALE,)
    annotations: tuple = ()              # dicts in original image coordinates
    occluders: tuple[OccluderPaste, ...] = ()
    object_class: str = "unknown"
    normalize: bool = True
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ValueError(f"scales must be positive: {self.scales}")


def read_vca(path):
    """Annotations as dicts; mirrors the line format the detector reads."""
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        f = line.split()
        if len(f) != 9:
            raise ValueError(f"malformed annotation line: {line!r}")
        out.append({"part_id": int(f[0]), "object_id": int(f[1]),
                    "center": (float(f[2]), float(f[3])),
                    "box": tuple(float(v) for v in f[4:8]),
                    "occluded_fraction": float(f[8])})
    return out


def _transform_annotations(annotations, origin, rho, size):
    """Shift by a crop origin, then scale by rho; drop parts whose center
    leaves the rendering."""
    ox, oy = origin
    h, w = size
    out = []
    for a in annotations:
        cy = (a["center"][0] - oy) * rho
        cx = (a["center"][1] - ox) * rho
        if not (0 <= cy <= h - 1 and 0 <= cx <= w - 1):
            continue
        x1, y1, x2, y2 = a["box"]
        out.append({**a, "center": (cy, cx),
                    "box": ((x1 - ox) * rho, (y1 - oy) * rho,
                            (x2 - ox) * rho, (y2 - oy) * rho)})
    return out


def export(job: ExportJob, trunk) -> list[dict]:
    """Run the trunk at every scale and write .vcf/.vca pairs.

    Returns the manifest entries describing what was written.
    """
    job.out_dir.mkdir(parents=True, exist_ok=True)
    image = load_image(job.image_path)
    if job.occluders:
        image = composite(image, job.occluders)
    origin = (0.0, 0.0)
    if job.object_box is not None:
        image = crop(image, job.object_box)
        origin = (max(0.0, job.object_box[0]), max(0.0, job.object_box[1]))
    base_h, base_w = image.shape[:2]

    image_id = job.image_id or Path(job.image_path).stem
    entries = []
    for scale in job.scales:
        rendered = resize_short_edge(image, int(scale))
        rho = min(rendered.shape[:2]) / min(base_h, base_w)
        feats = extract_features(trunk, rendered, normalize=job.normalize)
        if feats.shape[2] != DEPTH:
            raise RuntimeError(f"trunk produced depth {feats.shape[2]}")
        stem = f"{image_id}_s{scale}"
        formats.write_vcf(feats, rendered.shape[:2], job.out_dir / f"{stem}.vcf",
                          stride=STRIDE, receptive_offset=RECEPTIVE_OFFSET)
        anns = _transform_annotations(job.annotations, origin, rho,
                                      rendered.shape[:2])
        formats.write_vca(anns, job.out_dir / f"{stem}.vca")
        extras = {"orig_h": str(base_h), "orig_w": str(base_w),
                  "preprocess": "imagenet" if job.normalize else "raw",
                  **job.extras}
        if scale == min(base_h, base_w):
            extras["natural"] = "1"
        entries.append({"image_id": image_id,
                        "feature_path": f"{stem}.vcf",
                        "annotation_path": f"{stem}.vca",
                        "object_class": job.object_class,
                        "image_size": rendered.shape[:2],
                        "scale": int(scale),
                        "extras": extras})
    return entries
