#!/usr/bin/env python3
"""Occlusion-robustness benchmark: mask growing fractions of each part's
supporting-cue cells and compare full voting against the single-concept
baseline, on a test world with clutter and cue dropout."""

import argparse
import math
import time

import numpy as np

from vcvote import evaluation, occlusion, synthgen, training, voting
from vcvote.config import Config
from vcvote.voting import VoteParams


def detect_all(scenes, bundle, background, params, fraction):
    dets, truths = [], []
    for k, b in enumerate(scenes):
        r = b.renders[224]
        fm = r.features
        if fraction > 0:
            cells = []
            for key in sorted(r.planted):
                planted = r.planted[key]
                order = np.random.default_rng([41, k, key[0]]).permutation(len(planted))
                n_mask = int(math.floor(fraction * len(planted) + 0.5))
                cells.extend(planted[i][0] for i in order[:n_mask])
            fm = occlusion.corrupt_cells(fm, cells, mode="resample",
                                         rng=np.random.default_rng([42, k]),
                                         background_pool=background,
                                         noise_sigma=2.0)
        _, d = voting.detect_image(fm, bundle, params,
                                   image_id=b.geometry.image_id)
        dets.extend(d)
        truths.extend(evaluation.GroundTruth(image_id=b.geometry.image_id,
                                             part_id=a.part_id, box=a.box)
                      for a in r.annotations)
    _, mean_ap, _ = evaluation.evaluate_detections(dets, truths)
    return mean_ap


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--train-scenes", type=int, default=60)
    ap.add_argument("--test-scenes", type=int, default=100)
    ap.add_argument("--clutter", type=float, default=0.02)
    ap.add_argument("--fire-prob", type=float, default=0.9)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    spec = synthgen.default_spec(depth=16, n_parts=3, seed=args.seed,
                                 noise_sigma=2.0)
    cfg = Config(num_concepts=43, num_supporting=12, seed=3)
    train = synthgen.generate_scenes(spec, args.train_scenes, id_prefix="tr")

    class _Img:
        def __init__(self, b):
            self.image_id = b.geometry.image_id
            r = b.renders[224]
            self.features, self.annotations = r.features, r.annotations

    t0 = time.time()
    bundle = training.train_model([_Img(b) for b in train], cfg)
    print(f"trained in {time.time() - t0:.1f}s")

    test_spec = synthgen.default_spec(depth=16, n_parts=3, seed=args.seed,
                                      noise_sigma=2.0, clutter_rate=args.clutter,
                                      fire_prob=args.fire_prob)
    scenes = synthgen.generate_scenes(test_spec, args.test_scenes,
                                      id_prefix="occ", seed_offset=5_000)
    _protos, background = synthgen.make_vectors(spec)

    print(f"{'masked':>8} {'voting AP':>10} {'single-VC AP':>13}")
    for fraction in (0.0, 0.3, 0.5, 0.7):
        vt = detect_all(scenes, bundle, background, VoteParams(), fraction)
        vc = detect_all(scenes, bundle, background,
                        VoteParams(single_concept_mode=True), fraction)
        print(f"{fraction:>8.0%} {vt:>10.4f} {vc:>13.4f}")


if __name__ == "__main__":
    main()
