"""Command line for batch feature export."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import formats
from .backbone import WeightError, load_trunk
from .export import TEST_SCALES, TRAIN_SCALE, ExportJob, export, read_vca
from .imaging import ImageError


def main(argv=None) -> int:
    p = argparse.ArgumentParser(
        prog="vcexport",
        description="Export fourth-pool convnet features to .vcf tensors")
    p.add_argument("images", nargs="+", type=Path, help="input image files")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--annotations", type=Path, default=None,
                   help=".vca file in original image coordinates (single image)")
    p.add_argument("--object-box", type=float, nargs=4, default=None,
                   metavar=("X1", "Y1", "X2", "Y2"),
                   help="crop to this box and rescale for training")
    p.add_argument("--train", action="store_true",
                   help=f"training mode: single scale, short edge {TRAIN_SCALE}")
    p.add_argument("--scales", type=int, nargs="+", default=None)
    p.add_argument("--weights", type=Path, default=None)
    p.add_argument("--weights-sha256", default=None)
    p.add_argument("--seed", type=int, default=0,
                   help="trunk init seed when no weight file is given")
    p.add_argument("--object-class", default="unknown")
    p.add_argument("--no-normalize", dest="normalize", action="store_false")
    args = p.parse_args(argv)

    if args.scales:
        scales = tuple(args.scales)
    else:
        scales = (TRAIN_SCALE,) if args.train else TEST_SCALES

    try:
        trunk = load_trunk(args.weights, args.weights_sha256, seed=args.seed)
        annotations = tuple(read_vca(args.annotations)) if args.annotations else ()
        if annotations and len(args.images) > 1:
            print("error: --annotations applies to a single image",
                  file=sys.stderr)
            return 1
        entries = []
        for image_path in args.images:
            job = ExportJob(image_path=image_path, out_dir=args.out,
                            object_box=tuple(args.object_box) if args.object_box
                            else None,
                            scales=scales, annotations=annotations,
                            object_class=args.object_class,
                            normalize=args.normalize)
            entries.extend(export(job, trunk))
        formats.write_manifest(entries, args.out / "manifest.txt")
    except (WeightError, ImageError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"exported {len(entries)} feature files -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
