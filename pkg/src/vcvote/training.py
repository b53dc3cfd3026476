"""Training orchestration: learn the concept dictionary, then per part the
offset maps, distance distributions, activation thresholds and the
supporting-concept set, bundled into a ModelBundle.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import concepts as _concepts
from .config import Config
from .likelihood import (ModelBundle, PartModel, TrainingSamples,
                         collect_min_distances, make_cue_model,
                         sample_negatives, select_supporting)
from .spatial import accumulate_offsets, finalize_offset_map


def gather_positives(images, part_id: int):
    return [(idx, a.center) for idx, img in enumerate(images)
            for a in img.annotations if a.part_id == part_id]


def part_ids_of(images) -> list[int]:
    return sorted({a.part_id for img in images for a in img.annotations})


def train_part(images, part_id: int, dictionary, cfg: Config) -> PartModel:
    positives = gather_positives(images, part_id)
    if not positives:
        raise ValueError(f"no annotations for part {part_id}")

    counts = accumulate_offsets(images, part_id, dictionary,
                                cfg.neighborhood_radius)
    offmaps = [finalize_offset_map(counts[v]) for v in range(dictionary.size)]
    selected_stack = np.stack([om.selected for om in offmaps])

    negatives = sample_negatives(images, part_id,
                                 count=cfg.neg_ratio * len(positives),
                                 min_dist=cfg.min_neg_distance,
                                 seed=[cfg.seed, 101, part_id])
    samples = TrainingSamples(positives=tuple(positives),
                              negatives=tuple(negatives),
                              min_neg_distance=cfg.min_neg_distance)

    r_pos = collect_min_distances(images, samples.positives, dictionary,
                                  selected_stack, cfg.neighborhood_radius)
    r_neg = collect_min_distances(images, samples.negatives, dictionary,
                                  selected_stack, cfg.neighborhood_radius)
    cues = {v: make_cue_model(r_pos[:, v], r_neg[:, v], cfg.num_bins,
                              cfg.score_epsilon, cfg.fnr_target)
            for v in range(dictionary.size)}
    supporting = select_supporting(cues, min(cfg.num_supporting, dictionary.size))

    boxes = np.array([a.box for img in images for a in img.annotations
                      if a.part_id == part_id])
    heights = boxes[:, 3] - boxes[:, 1]
    widths = boxes[:, 2] - boxes[:, 0]
    diag = np.hypot(heights, widths)
    nms_radius = cfg.nms_radius if cfg.nms_radius is not None \
        else 0.5 * float(np.median(diag))

    return PartModel(part_id=part_id, supporting=supporting,
                     cues={v: cues[v] for v in supporting},
                     offsets={v: offmaps[v] for v in supporting},
                     nms_radius=nms_radius,
                     box_size=(float(np.median(heights)), float(np.median(widths))))


def train_model(images, cfg: Config, dictionary=None) -> ModelBundle:
    """Full training pass over in-memory images (object crops at the
    training scale)."""
    if not images:
        raise ValueError("empty training set")
    if dictionary is None:
        dictionary = _concepts.fit_dictionary(
            [img.features for img in images], k=cfg.num_concepts,
            seed=cfg.seed, max_iter=cfg.kmeans_max_iter, tol=cfg.kmeans_tol,
            sample_cap=cfg.sample_cap)

    parts = part_ids_of(images)
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            models = list(pool.map(
                lambda s: train_part(images, s, dictionary, cfg), parts))
    else:
        models = [train_part(images, s, dictionary, cfg) for s in parts]

    sample = images[0].features.spec
    bundle = ModelBundle(dictionary=dictionary,
                         parts={m.part_id: m for m in models},
                         neighborhood_radius=cfg.neighborhood_radius,
                         stride=sample.stride,
                         receptive_offset=sample.receptive_offset,
                         training_scale=cfg.training_scale)
    bundle.validate()
    return bundle
