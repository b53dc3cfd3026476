"""Command-line entry point: train, detect, evaluate, synthesize, occlude,
plot.  One YAML config file controls every constant; flags override it."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import evaluation, fileio, occlusion, synthgen
from .config import Config, ConfigError, load_config
from .multiscale import detect_multiscale, nearest_scale
from .training import train_model
from .voting import detect_image

_STRATA = {"non-occluded": (0.0, 1e-9),
           "partially-occluded": (1e-9, 0.5),
           "heavily-occluded": (0.5, 1.0 + 1e-9)}


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="YAML config file")
    p.add_argument("--neighborhood-radius", type=float, dest="neighborhood_radius")
    p.add_argument("--num-concepts", type=int, dest="num_concepts")
    p.add_argument("--num-supporting", type=int, dest="num_supporting")
    p.add_argument("--fnr-target", type=float, dest="fnr_target")
    p.add_argument("--spatial-weight", type=float, dest="spatial_weight")
    p.add_argument("--num-bins", type=int, dest="num_bins")
    p.add_argument("--neg-ratio", type=int, dest="neg_ratio")
    p.add_argument("--min-neg-distance", type=float, dest="min_neg_distance")
    p.add_argument("--vote-offsets", choices=["all-nonzero", "selected"],
                   dest="vote_offsets")
    p.add_argument("--offset-mean-mode", choices=["all", "selected"],
                   dest="offset_mean_mode")
    p.add_argument("--nms-radius", type=float, dest="nms_radius")
    p.add_argument("--score-floor", type=float, dest="score_floor")
    p.add_argument("--scales", type=int, nargs="+", dest="scales")
    p.add_argument("--seed", type=int, dest="seed")
    p.add_argument("--jobs", type=int, dest="jobs")


def _config_from(args) -> Config:
    keys = ["neighborhood_radius", "num_concepts", "num_supporting", "fnr_target",
            "spatial_weight", "num_bins", "neg_ratio", "min_neg_distance",
            "vote_offsets", "offset_mean_mode", "nms_radius", "score_floor",
            "scales", "seed", "jobs"]
    overrides = {k: getattr(args, k, None) for k in keys}
    if overrides.get("scales") is not None:
        overrides["scales"] = tuple(overrides["scales"])
    return load_config(args.config, overrides)


def _load_images(manifest_path) -> tuple[fileio.Manifest, list[fileio.DatasetImage]]:
    manifest = fileio.read_manifest(manifest_path)
    fileio.validate_manifest(manifest)
    return manifest, fileio.load_dataset(manifest)


def cmd_train(args) -> int:
    cfg = _config_from(args)
    _, images = _load_images(args.manifest)
    train_images = [im for im in images if im.scale == cfg.training_scale]
    if not train_images:
        print(f"error: no manifest entries at training scale {cfg.training_scale}",
              file=sys.stderr)
        return 1
    bundle = train_model(train_images, cfg)
    fileio.save_model(bundle, args.out)
    print(f"trained {len(bundle.parts)} parts over {bundle.dictionary.size} "
          f"concepts -> {args.out}")
    return 0


def _truths_from(images) -> list[evaluation.GroundTruth]:
    return [evaluation.GroundTruth(image_id=im.image_id, part_id=a.part_id,
                                   box=a.box, occluded_fraction=a.occluded_fraction)
            for im in images for a in im.annotations]


def cmd_detect(args) -> int:
    cfg = _config_from(args)
    bundle = fileio.load_model(args.model)
    manifest, images = _load_images(args.manifest)
    params = cfg.vote_params(single_concept=args.single_concept)
    detections = []
    scale_rows = []

    if args.multiscale or args.oracle_scale:
        by_image: dict[str, list[fileio.DatasetImage]] = {}
        for im in images:
            by_image.setdefault(im.image_id, []).append(im)
        for image_id in sorted(by_image):
            group = {im.scale: im for im in by_image[image_id]}
            natural = next((im for im in group.values()
                            if im.extras.get("natural") == "1"),
                           group[min(group)])
            nat_size = (int(natural.extras.get("orig_h",
                                               natural.features.spec.image_size[0])),
                        int(natural.extras.get("orig_w",
                                               natural.features.spec.image_size[1])))
            if args.oracle_scale:
                if "actual_scale" not in natural.extras:
                    raise ValueError(
                        f"--oracle-scale needs an actual_scale manifest extra "
                        f"for image {image_id}")
                actual = float(natural.extras["actual_scale"])
                used = nearest_scale(actual, sorted(group))
                fm = group[used].features
                _, dets = detect_image(fm, bundle, params, image_id=image_id)
                from .multiscale import map_box
                dets = [evaluation.Detection(image_id=d.image_id, part_id=d.part_id,
                                             box=map_box(d.box, fm.spec.image_size,
                                                         nat_size),
                                             score=d.score) for d in dets]
                predicted = float(used)
            else:
                feats = {scale: im.features for scale, im in group.items()}
                dets, prediction, used = detect_multiscale(
                    feats, bundle, nat_size, params, image_id=image_id)
                predicted = prediction.combined
            detections.extend(dets)
            scale_rows.append((image_id, predicted, used))
    else:
        for im in images:
            _, dets = detect_image(im.features, bundle, params,
                                   image_id=im.image_id)
            detections.extend(dets)

    detections.sort(key=lambda d: (d.image_id, d.part_id, -d.score, d.box))
    evaluation.write_detections(detections, args.out)
    if scale_rows:
        scales_path = args.scales_out or str(args.out) + ".scales"
        lines = ["#vcscales 1", "# image_id predicted_scale used_scale"]
        lines += [f"{i} {p!r} {u}" for i, p, u in scale_rows]
        Path(scales_path).write_text("\n".join(lines) + "\n")
        print(f"wrote {len(scale_rows)} scale predictions -> {scales_path}")
    if args.score_maps:
        from .plotting import plot_score_map
        from .voting import score_part
        out_dir = Path(args.score_maps)
        out_dir.mkdir(parents=True, exist_ok=True)
        for im in images[:args.score_map_limit]:
            for part_id in sorted(bundle.parts):
                sm = score_part(im.features, bundle, part_id, params)
                plot_score_map(sm, out_dir / f"{im.image_id}_part{part_id}.png",
                               title=f"{im.image_id} part {part_id}")
    print(f"wrote {len(detections)} detections -> {args.out}")
    return 0


def _read_scales_file(path) -> dict[str, float]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        image_id, predicted, _used = line.split()
        out[image_id] = float(predicted)
    return out


def cmd_evaluate(args) -> int:
    manifest, images = _load_images(args.manifest)
    detections = evaluation.read_detections(args.detections)
    natural_only = args.natural or args.scales_file is not None
    if natural_only:
        chosen = [im for im in images if im.extras.get("natural") == "1"]
        images = chosen or images
    truths = _truths_from(images)
    per_part, mean_ap, strata = evaluation.evaluate_detections(
        detections, truths, iou_thresh=args.iou, strata=_STRATA)

    loss_mean = None
    if args.scales_file:
        predicted = _read_scales_file(args.scales_file)
        losses = []
        for im in images:
            if im.image_id in predicted and "actual_scale" in im.extras:
                losses.append(evaluation.scale_loss(
                    float(im.extras["actual_scale"]), predicted[im.image_id]))
        loss_mean = float(np.mean(losses)) if losses else None

    report = evaluation.EvalReport(per_part_ap=per_part, mean_ap=mean_ap,
                                   scale_loss_mean=loss_mean,
                                   strata_mean_ap=strata,
                                   n_detections=len(detections),
                                   n_truths=len(truths))
    Path(args.out).write_text(report.to_json() + "\n")
    if args.text:
        Path(args.text).write_text(report.to_text())
    print(report.to_text())
    return 0


def cmd_synthesize(args) -> int:
    spec = synthgen.default_spec(depth=args.depth, n_parts=args.parts,
                                 seed=args.seed, noise_sigma=args.noise,
                                 clutter_rate=args.clutter,
                                 fire_prob=args.fire_prob)
    scales = tuple(args.scales) if args.scales else (224,)
    if args.span_scales:
        object_scales = [224.0 / scales[i % len(scales)] for i in range(args.scenes)]
    else:
        object_scales = args.object_scale
    bundles = synthgen.generate_scenes(spec, args.scenes, scales=scales,
                                       object_scales=object_scales,
                                       id_prefix=args.prefix,
                                       seed_offset=args.seed_offset)
    manifest = synthgen.write_dataset(spec, bundles, args.out)
    print(f"wrote {len(manifest.entries)} entries -> {args.out}/manifest.txt")
    return 0


def cmd_occlude(args) -> int:
    manifest, images = _load_images(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    occluders = occlusion.synthetic_occluders(rng, count=args.library_size)
    config = occlusion.OcclusionConfig(
        occluder_count=args.count,
        ratio_bin=tuple(args.bin) if args.bin else None,
        seed=args.seed, max_attempts=args.max_attempts)
    entries = []
    for im in images:
        h, w = im.features.spec.image_size
        mask = np.zeros((h, w), dtype=bool)
        for a in im.annotations:
            rs, cs = occlusion.box_pixel_slices(a.box)
            mask[rs, cs] = True
        scene = occlusion.synthesize(mask, im.annotations, occluders,
                                     occlusion.OcclusionConfig(
                                         occluder_count=config.occluder_count,
                                         ratio_bin=config.bin,
                                         seed=int(rng.integers(2 ** 31)),
                                         max_attempts=config.max_attempts))
        background = _background_pool(im.features, mask)
        corrupted = occlusion.corrupt_features(
            im.features, scene.composite_mask, mode="resample",
            rng=np.random.default_rng([args.seed, 7, len(entries)]),
            background_pool=background)
        stem = f"{im.image_id}_occ{args.count}"
        fileio.write_feature_map(corrupted, out_dir / f"{stem}.vcf")
        fileio.write_annotations(scene.annotations, out_dir / f"{stem}.vca")
        occlusion.save_mask(scene.composite_mask, out_dir / f"{stem}_mask.png")
        extras = dict(im.extras)
        extras.update({"occluders": str(args.count),
                       "occlusion_ratio": repr(scene.occlusion_ratio),
                       "synthesized": "1"})
        entries.append(fileio.ManifestEntry(
            image_id=im.image_id, feature_path=f"{stem}.vcf",
            annotation_path=f"{stem}.vca", object_class=im.object_class,
            image_size=im.features.spec.image_size, scale=im.scale,
            extras=extras))
    out_manifest = fileio.Manifest(root=out_dir, entries=tuple(entries))
    fileio.write_manifest(out_manifest, out_dir / "manifest.txt")
    print(f"occluded {len(entries)} images -> {out_dir}/manifest.txt")
    return 0


def _background_pool(fm, object_mask: np.ndarray) -> np.ndarray:
    """Cell vectors whose receptive centers fall outside the object mask."""
    from .lattice import l0_of
    gh, gw = fm.spec.grid_size
    rows = []
    for i in range(gh):
        for j in range(gw):
            r, c = l0_of((i, j), fm.spec)
            if not object_mask[r, c]:
                rows.append(fm.data[i, j])
    if not rows:
        return fm.data.reshape(-1, fm.depth)
    return np.array(rows)


def cmd_plot(args) -> int:
    from .plotting import plot_score_map, render_model_plots
    bundle = fileio.load_model(args.model)
    written = render_model_plots(bundle, args.out, top_k=args.top_k)
    if args.manifest:
        _, images = _load_images(args.manifest)
        cfg = _config_from(args)
        from .voting import score_part
        for im in images[:args.limit]:
            for part_id in sorted(bundle.parts):
                sm = score_part(im.features, bundle, part_id, cfg.vote_params())
                p = Path(args.out) / f"scoremap_{im.image_id}_part{part_id}.png"
                plot_score_map(sm, p, title=f"{im.image_id} part {part_id}")
                written.append(p)
    print(f"wrote {len(written)} plots -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vcvote",
        description="Semantic part detection by voting over visual-concept cues")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="learn a model from a training manifest")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="run detection over a manifest")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--multiscale", action="store_true")
    p.add_argument("--oracle-scale", dest="oracle_scale", action="store_true")
    p.add_argument("--single-concept", dest="single_concept", action="store_true",
                   help="nearest-concept baseline: keep only the best cue per part")
    p.add_argument("--scales-out", dest="scales_out", type=Path, default=None)
    p.add_argument("--score-maps", dest="score_maps", type=Path, default=None)
    p.add_argument("--score-map-limit", dest="score_map_limit", type=int, default=8)
    _add_config_args(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score detections against annotations")
    p.add_argument("--detections", required=True, type=Path)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--text", type=Path, default=None)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--natural", action="store_true",
                   help="evaluate against natural-size entries only")
    p.add_argument("--scales-file", dest="scales_file", type=Path, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synthesize", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--scenes", type=int, default=50)
    p.add_argument("--depth", type=int, default=16)
    p.add_argument("--parts", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seed-offset", dest="seed_offset", type=int, default=0)
    p.add_argument("--noise", type=float, default=2.0)
    p.add_argument("--clutter", type=float, default=0.0)
    p.add_argument("--fire-prob", dest="fire_prob", type=float, default=1.0)
    p.add_argument("--scales", type=int, nargs="+", default=None)
    p.add_argument("--object-scale", dest="object_scale", type=float, default=1.0)
    p.add_argument("--span-scales", dest="span_scales", action="store_true",
                   help="cycle object sizes so the correct scale spans --scales")
    p.add_argument("--prefix", default="scene")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("occlude", help="superimpose occluders over a dataset")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--count", type=int, default=2, choices=[2, 3, 4])
    p.add_argument("--bin", type=float, nargs=2, default=None,
                   help="override the coverage ratio bin [lo hi)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-attempts", dest="max_attempts", type=int, default=200)
    p.add_argument("--library-size", dest="library_size", type=int, default=6)
    p.set_defaults(func=cmd_occlude)

    p = sub.add_parser("plot", help="render diagnostic plots for a model")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--top-k", dest="top_k", type=int, default=4)
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--limit", type=int, default=4)
    _add_config_args(p)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, fileio.FormatError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
