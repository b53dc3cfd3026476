#!/usr/bin/env python3
"""End-to-end benchmark on synthetic data: train, detect, evaluate, and print
per-part AP plus the multi-scale prediction loss."""

import argparse
import time

import numpy as np

from vcvote import evaluation, synthgen, training, voting
from vcvote.config import Config
from vcvote.multiscale import SCALE_SCHEDULE, detect_multiscale


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--train-scenes", type=int, default=60)
    ap.add_argument("--test-scenes", type=int, default=200)
    ap.add_argument("--parts", type=int, default=3)
    ap.add_argument("--depth", type=int, default=16)
    ap.add_argument("--noise", type=float, default=2.0)
    ap.add_argument("--num-concepts", type=int, default=43)
    ap.add_argument("--num-supporting", type=int, default=12)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--multiscale-scenes", type=int, default=10)
    args = ap.parse_args()

    spec = synthgen.default_spec(depth=args.depth, n_parts=args.parts,
                                 seed=args.seed, noise_sigma=args.noise)
    cfg = Config(num_concepts=args.num_concepts,
                 num_supporting=args.num_supporting, seed=args.seed)
    cfg.validate()

    t0 = time.time()
    train = synthgen.generate_scenes(spec, args.train_scenes, id_prefix="tr")
    images = [b.renders[224] for b in train]

    class _Img:
        def __init__(self, b):
            self.image_id = b.geometry.image_id
            r = b.renders[224]
            self.features, self.annotations = r.features, r.annotations

    bundle = training.train_model([_Img(b) for b in train], cfg)
    print(f"trained {len(bundle.parts)} parts / {bundle.dictionary.size} concepts "
          f"in {time.time() - t0:.1f}s")

    t0 = time.time()
    test = synthgen.generate_scenes(spec, args.test_scenes, id_prefix="te",
                                    seed_offset=10_000)
    dets, truths = [], []
    for b in test:
        r = b.renders[224]
        _, d = voting.detect_image(r.features, bundle,
                                   image_id=b.geometry.image_id)
        dets.extend(d)
        truths.extend(evaluation.GroundTruth(image_id=b.geometry.image_id,
                                             part_id=a.part_id, box=a.box)
                      for a in r.annotations)
    per_part, mean_ap, _ = evaluation.evaluate_detections(dets, truths)
    print(f"single-scale detection over {args.test_scenes} scenes "
          f"({time.time() - t0:.1f}s):")
    for s, v in sorted(per_part.items()):
        print(f"  part {s}: AP {v:.4f}")
    print(f"  mean AP {mean_ap:.4f}")

    t0 = time.time()
    losses = []
    for i in range(args.multiscale_scenes):
        target = SCALE_SCHEDULE[i % len(SCALE_SCHEDULE)]
        b = synthgen.generate_scenes(spec, 1, scales=SCALE_SCHEDULE,
                                     object_scales=224.0 / target,
                                     id_prefix=f"ms{i}_", seed_offset=20_000 + i)[0]
        feats = {s: r.features for s, r in b.renders.items()}
        _, pred, _ = detect_multiscale(feats, bundle, b.geometry.natural_size)
        losses.append(evaluation.scale_loss(b.geometry.actual_scale,
                                            pred.combined))
    print(f"multi-scale prediction over {len(losses)} scenes "
          f"({time.time() - t0:.1f}s): mean loss {np.mean(losses):.4f}")


if __name__ == "__main__":
    main()
