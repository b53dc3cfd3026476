#!/usr/bin/env python3
"""Diagnostic sweep over the supporting-set size: train once with the largest
set, truncate to each smaller size, and report the mean-AP deltas."""

import argparse
import time

from vcvote import evaluation, synthgen, training, voting
from vcvote.config import Config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[12, 9, 6, 3, 1])
    ap.add_argument("--train-scenes", type=int, default=60)
    ap.add_argument("--test-scenes", type=int, default=100)
    ap.add_argument("--clutter", type=float, default=0.02)
    ap.add_argument("--fire-prob", type=float, default=0.85)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    sizes = sorted(args.sizes, reverse=True)
    spec = synthgen.default_spec(depth=16, n_parts=3, seed=args.seed,
                                 noise_sigma=2.0)
    cfg = Config(num_concepts=43, num_supporting=sizes[0], seed=3)
    train = synthgen.generate_scenes(spec, args.train_scenes, id_prefix="tr")

    class _Img:
        def __init__(self, b):
            self.image_id = b.geometry.image_id
            r = b.renders[224]
            self.features, self.annotations = r.features, r.annotations

    t0 = time.time()
    bundle = training.train_model([_Img(b) for b in train], cfg)
    print(f"trained with {sizes[0]} supporting concepts in {time.time() - t0:.1f}s")

    test_spec = synthgen.default_spec(depth=16, n_parts=3, seed=args.seed,
                                      noise_sigma=2.0, clutter_rate=args.clutter,
                                      fire_prob=args.fire_prob)
    scenes = synthgen.generate_scenes(test_spec, args.test_scenes,
                                      id_prefix="sw", seed_offset=8_000)

    baseline_ap = None
    print(f"{'|Vs|':>6} {'mean AP':>9} {'delta':>8}")
    for k in sizes:
        restricted = bundle.restricted(k)
        dets, truths = [], []
        for b in scenes:
            r = b.renders[224]
            _, d = voting.detect_image(r.features, restricted,
                                       image_id=b.geometry.image_id)
            dets.extend(d)
            truths.extend(evaluation.GroundTruth(image_id=b.geometry.image_id,
                                                 part_id=a.part_id, box=a.box)
                          for a in r.annotations)
        _, mean_ap, _ = evaluation.evaluate_detections(dets, truths)
        if baseline_ap is None:
            baseline_ap = mean_ap
        print(f"{k:>6} {mean_ap:>9.4f} {mean_ap - baseline_ap:>+8.4f}")


if __name__ == "__main__":
    main()
