"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with `pytest tests/test_acceptance.py -v -s`).
"""

import math
import time

import numpy as np
import pytest

from conftest import Image, bundles_to_images, make_feature_map
from oracles import (combine_bruteforce, min_distance_bruteforce,
                     offset_counts_bruteforce, votes_bruteforce)
from vcvote import evaluation, occlusion, synthgen, training, voting
from vcvote.concepts import ConceptDictionary
from vcvote.config import Config
from vcvote.likelihood import (CueModel, bin_indices, histogram_pair,
                               score_table_from_histograms)
from vcvote.spatial import OffsetMap, accumulate_offsets
from vcvote.voting import NO_VOTE, VoteParams, cast_votes, combine


def _report(name, ok, detail, t0):
    status = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE {name}: {status} ({detail}; {time.monotonic() - t0:.1f}s)")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def clean_test_set(world):
    """200 clean scenes used by the end-to-end and occlusion criteria."""
    return synthgen.generate_scenes(world.spec, 200, scales=(224,),
                                    id_prefix="acc", seed_offset=20000)


def _detect_over(scenes, world, params=None, mask_fraction=0.0):
    dets, truths = [], []
    for k, b in enumerate(scenes):
        r = b.renders[224]
        fm = r.features
        if mask_fraction > 0:
            cells = []
            for key in sorted(r.planted):
                planted = r.planted[key]
                order = np.random.default_rng([41, k, key[0]]).permutation(len(planted))
                n_mask = int(math.floor(mask_fraction * len(planted) + 0.5))
                cells.extend(planted[i][0] for i in order[:n_mask])
            fm = occlusion.corrupt_cells(
                fm, cells, mode="resample",
                rng=np.random.default_rng([42, k]),
                background_pool=world.background, noise_sigma=2.0)
        _, d = voting.detect_image(fm, world.bundle, params,
                                   image_id=b.geometry.image_id)
        dets.extend(d)
        truths.extend(evaluation.GroundTruth(image_id=b.geometry.image_id,
                                             part_id=a.part_id, box=a.box)
                      for a in r.annotations)
    _, mean_ap, _ = evaluation.evaluate_detections(dets, truths)
    return mean_ap


# ---------------------------------------------------------------------------
# 1. oracle equivalence

def test_oracle_equivalence():
    t0 = time.monotonic()
    rng = np.random.default_rng(1234)

    # offset-map estimation: integer-exact against nested-loop counting
    for _ in range(100):
        depth = int(rng.integers(3, 9))
        dictionary = ConceptDictionary(centers=rng.normal(0, 20, size=(2, depth)))
        images = []
        for n in range(2):
            gh, gw = int(rng.integers(6, 13)), int(rng.integers(6, 13))
            fm = make_feature_map(rng, grid=(gh, gw), depth=depth, scale=25.0,
                                  image=(gh * 16, gw * 16))
            h, w = fm.spec.image_size
            anns = tuple(
                type("A", (), dict(part_id=0,
                                   center=(float(rng.uniform(0, h - 1)),
                                           float(rng.uniform(0, w - 1)))))()
                for _ in range(int(rng.integers(1, 3))))
            images.append(Image(image_id=f"i{n}", features=fm, annotations=anns))
        counts = accumulate_offsets(images, 0, dictionary, radius_px=120.0)
        for v in range(2):
            expected = offset_counts_bruteforce(
                images, 0, [float(c) for c in dictionary.centers[v]], 120.0, 7)
            got = {(int(y) - 7, int(x) - 7): int(counts[v][y, x])
                   for y, x in zip(*np.nonzero(counts[v]))}
            assert got == expected

    # distribution estimation: per-anchor min distances to 1e-6, bins exact
    from vcvote.likelihood import min_match_distance
    for _ in range(100):
        depth = int(rng.integers(3, 9))
        dictionary = ConceptDictionary(centers=rng.normal(0, 20, size=(1, depth)))
        gh, gw = int(rng.integers(6, 14)), int(rng.integers(6, 14))
        fm = make_feature_map(rng, grid=(gh, gw), depth=depth, scale=25.0,
                              image=(gh * 16, gw * 16))
        sel = sorted({(int(rng.integers(-7, 8)), int(rng.integers(-7, 8)))
                      for _ in range(int(rng.integers(1, 25)))})
        grid = np.zeros((15, 15))
        mask = np.zeros((15, 15), dtype=bool)
        for dy, dx in sel:
            grid[dy + 7, dx + 7] = 1.0
            mask[dy + 7, dx + 7] = True
        om = OffsetMap(grid=grid / grid.sum(), selected=mask,
                       mean_freq=float(grid.mean()), sample_count=len(sel))
        h, w = fm.spec.image_size
        rs = []
        for _q in range(4):
            q = (float(rng.uniform(0, h - 1)), float(rng.uniform(0, w - 1)))
            got = min_match_distance(fm, q, 0, dictionary, om, 120.0)
            want = min_distance_bruteforce(
                fm, q, [float(c) for c in dictionary.centers[0]], sel, 120.0)
            assert (math.isinf(got) and math.isinf(want)) or abs(got - want) < 1e-6
            rs.append(got)
        finite = [r for r in rs if math.isfinite(r)]
        if finite:
            hp, hn, r_max = histogram_pair(np.array(rs), np.array(rs), num_bins=10)
            idx = bin_indices(np.array(rs), r_max, 10)
            manual = np.bincount(idx, minlength=10) / len(rs)
            np.testing.assert_allclose(hp, manual, atol=1e-12)

    # vote casting and combination: 1e-6 against triple loops
    for _ in range(100):
        gh, gw = int(rng.integers(5, 21)), int(rng.integers(5, 21))
        grids, dicts = [], []
        for _v in range(int(rng.integers(1, 4))):
            side = 7
            f = rng.random((side, side)) * (rng.random((side, side)) < 0.3)
            if f.sum() == 0:
                f[3, 3] = 1.0
            f /= f.sum()
            om = OffsetMap(grid=f, selected=f > f.mean(),
                           mean_freq=float(f.mean()), sample_count=10)
            nbins = 6
            cue = CueModel(hist_pos=np.full(nbins, 1 / nbins),
                           hist_neg=np.full(nbins, 1 / nbins), r_max=6.0,
                           threshold=6.0, fnr=0.0, fpr=0.0,
                           score_table=rng.normal(0, 3, size=nbins))
        # one part model per concept keeps the construction simple
            from vcvote.likelihood import PartModel
            pm = PartModel(part_id=0, supporting=(0,), cues={0: cue},
                           offsets={0: om}, nms_radius=8.0, box_size=(32.0, 32.0))
            acts = [((int(rng.integers(gh)), int(rng.integers(gw))),
                     float(rng.uniform(0, 6))) for _ in range(int(rng.integers(0, 8)))]
            g = cast_votes(0, pm, acts, VoteParams(), (gh, gw))
            want = votes_bruteforce(acts, f.tolist(), cue.score, 0.7,
                                    om.mean_freq, (gh, gw))
            for (i, j), val in want.items():
                assert abs(g[i, j] - val) < 1e-6
            assert np.all(np.isneginf(g) | np.isfinite(g))
            reached = {(i, j) for i in range(gh) for j in range(gw)
                       if g[i, j] > NO_VOTE}
            assert reached == set(want)
            grids.append(g)
            dicts.append(want)
        got = combine(grids)
        want_combined = np.array(combine_bruteforce(dicts, (gh, gw)))
        np.testing.assert_allclose(got, want_combined, atol=1e-6)

    elapsed = time.monotonic() - t0
    _report("oracle-equivalence", elapsed < 60.0,
            f"4 operations x 100 instances, all within 1e-6", t0)


# ---------------------------------------------------------------------------
# 2. planted-structure recovery

def test_planted_structure_recovery():
    t0 = time.monotonic()
    spec = synthgen.default_spec(depth=16, n_parts=3, seed=17, noise_sigma=2.0,
                                 fire_prob=1.0)
    scenes = synthgen.generate_scenes(spec, 334, scales=(224,), id_prefix="ps")
    images = bundles_to_images(scenes)
    n_pos = sum(1 for im in images for a in im.annotations if a.part_id == 0)
    assert n_pos >= 334

    cfg = Config(num_concepts=43, num_supporting=12, seed=5)
    bundle = training.train_model(images, cfg)
    protos, _bg = synthgen.make_vectors(spec)
    matches = synthgen.match_prototypes(bundle.dictionary, protos)

    ok = True
    details = []
    for layout in spec.parts:
        pm = bundle.parts[layout.part_id]
        planted_concepts = {matches[p][0] for p, _, _ in layout.elements}
        top = set(pm.supporting[:len(planted_concepts)])
        if top != planted_concepts:
            ok = False
            details.append(f"part {layout.part_id} top-FPR set mismatch")
        for proto, offset, _prob in layout.elements:
            concept = matches[proto][0]
            if concept not in pm.offsets or \
                    offset not in pm.offsets[concept].selected_offsets():
                ok = False
                details.append(f"offset {offset} missing for part {layout.part_id}")
        fnrs = [pm.cues[matches[p][0]].fnr for p, _, _ in layout.elements
                if matches[p][0] in pm.cues]
        if not all(0.03 <= f <= 0.07 for f in fnrs):
            ok = False
            details.append(f"part {layout.part_id} FNRs outside [3%,7%]: {fnrs}")
    elapsed = time.monotonic() - t0
    if elapsed >= 120.0:
        ok = False
        details.append(f"too slow: {elapsed:.1f}s")
    _report("planted-structure-recovery", ok,
            "; ".join(details) or f"{n_pos} positives/part, masks and FPR ranks exact",
            t0)


# ---------------------------------------------------------------------------
# 3. end-to-end detection

def test_end_to_end_detection(world, clean_test_set):
    t0 = time.monotonic()
    mean_ap = _detect_over(clean_test_set, world)
    elapsed = time.monotonic() - t0
    _report("end-to-end-detection", mean_ap >= 0.95 and elapsed < 300.0,
            f"mean AP {mean_ap:.4f} on 200 scenes (>= 0.95)", t0)


# ---------------------------------------------------------------------------
# 4. occlusion robustness

def test_occlusion_robustness(world, clean_test_set):
    t0 = time.monotonic()
    floors = {0.3: 0.75, 0.5: 0.55, 0.7: 0.30}
    voting_ap, baseline_ap = {}, {}
    for frac in (0.3, 0.5, 0.7):
        voting_ap[frac] = _detect_over(clean_test_set, world, mask_fraction=frac)
        baseline_ap[frac] = _detect_over(clean_test_set, world,
                                         VoteParams(single_concept_mode=True),
                                         mask_fraction=frac)
    ok = all(voting_ap[f] >= floors[f] for f in floors)
    ok = ok and voting_ap[0.3] >= voting_ap[0.5] >= voting_ap[0.7]
    ok = ok and all(voting_ap[f] > baseline_ap[f] for f in floors)
    detail = ", ".join(
        f"{int(f * 100)}%: VT {voting_ap[f]:.3f} vs single-VC {baseline_ap[f]:.3f}"
        f" (floor {floors[f]})" for f in (0.3, 0.5, 0.7))
    _report("occlusion-robustness", ok, detail, t0)


# ---------------------------------------------------------------------------
# 5. deletion monotonicity

def test_deletion_monotonicity_thousand_pairs():
    t0 = time.monotonic()
    rng = np.random.default_rng(77)
    from vcvote.likelihood import PartModel
    violations = 0
    for _ in range(1000):
        gh, gw = 10, 10
        side = 7
        f = rng.random((side, side)) * (rng.random((side, side)) < 0.3)
        if f.sum() == 0:
            f[3, 3] = 1.0
        f /= f.sum()
        om = OffsetMap(grid=f, selected=f > f.mean(), mean_freq=float(f.mean()),
                       sample_count=10)
        cue = CueModel(hist_pos=np.full(4, 0.25), hist_neg=np.full(4, 0.25),
                       r_max=4.0, threshold=4.0, fnr=0.0, fpr=0.0,
                       score_table=rng.normal(0, 3, size=4))
        pm = PartModel(part_id=0, supporting=(0,), cues={0: cue}, offsets={0: om},
                       nms_radius=8.0, box_size=(32.0, 32.0))
        acts = [((int(rng.integers(gh)), int(rng.integers(gw))),
                 float(rng.uniform(0, 4))) for _ in range(int(rng.integers(1, 10)))]
        keep = [a for a in acts if rng.random() > rng.uniform(0.2, 0.8)]
        params = VoteParams()
        full = combine([cast_votes(0, pm, acts, params, (gh, gw))])
        part = combine([cast_votes(0, pm, keep, params, (gh, gw))])
        if np.any(part > full + 1e-12):
            violations += 1
    _report("deletion-monotonicity", violations == 0,
            f"{violations} violations in 1000 subset deletions", t0)


# ---------------------------------------------------------------------------
# 6. multi-scale

def test_multiscale_scale_prediction(world):
    from vcvote.multiscale import SCALE_SCHEDULE, detect_multiscale

    t0 = time.monotonic()
    # noise-free: zero loss at every schedule scale
    spec0 = synthgen.default_spec(depth=16, n_parts=3, seed=7, noise_sigma=0.0)
    zero_losses = []
    exact = True
    for i, target in enumerate(SCALE_SCHEDULE):
        b = synthgen.generate_scenes(spec0, 1, scales=SCALE_SCHEDULE,
                                     object_scales=224.0 / target,
                                     id_prefix=f"z{target}_",
                                     seed_offset=30000 + i)[0]
        feats = {s: r.features for s, r in b.renders.items()}
        _, pred, _ = detect_multiscale(feats, world.bundle,
                                       b.geometry.natural_size)
        exact = exact and pred.combined == float(target)
        zero_losses.append(evaluation.scale_loss(b.geometry.actual_scale,
                                                 pred.combined))
    # noisy cues, targets spanning the schedule: mean loss below 0.2
    losses = []
    for i, target in enumerate(SCALE_SCHEDULE):
        b = synthgen.generate_scenes(world.spec, 1, scales=SCALE_SCHEDULE,
                                     object_scales=224.0 / target,
                                     id_prefix=f"n{target}_",
                                     seed_offset=31000 + i)[0]
        feats = {s: r.features for s, r in b.renders.items()}
        _, pred, _ = detect_multiscale(feats, world.bundle,
                                       b.geometry.natural_size)
        losses.append(evaluation.scale_loss(b.geometry.actual_scale,
                                            pred.combined))
    mean_loss = float(np.mean(losses))
    # exact per-scale prediction; the loss itself only carries float dust
    # from parameterizing the object scale as 224/target
    ok = exact and max(zero_losses) < 1e-12 and mean_loss < 0.2
    _report("multiscale-prediction", ok,
            f"noise-free predictions exact at all 10 scales "
            f"(max residual loss {max(zero_losses):.2e}), "
            f"noisy mean loss {mean_loss:.4f} (< 0.2)", t0)


# ---------------------------------------------------------------------------
# 7. equation-level unit checks

def test_equation_level_unit_checks():
    t0 = time.monotonic()
    # antisymmetry of the likelihood-ratio table
    rng = np.random.default_rng(3)
    hp = rng.random(100); hp /= hp.sum()
    hn = rng.random(100); hn /= hn.sum()
    anti = np.allclose(score_table_from_histograms(hp, hn),
                       -score_table_from_histograms(hn, hp), atol=1e-12)

    # hand-computed vote: 0.3 * 2.0 + 0.7 * log(1) = 0.6
    side = 15
    grid = np.full((side, side), 1.0 / side ** 2)
    om = OffsetMap(grid=grid, selected=np.ones((side, side), dtype=bool),
                   mean_freq=float(grid.mean()), sample_count=225)
    cue = CueModel(hist_pos=np.ones(1), hist_neg=np.ones(1), r_max=10.0,
                   threshold=10.0, fnr=0.0, fpr=0.0,
                   score_table=np.array([2.0]))
    from vcvote.likelihood import PartModel
    pm = PartModel(part_id=0, supporting=(0,), cues={0: cue}, offsets={0: om},
                   nms_radius=8.0, box_size=(32.0, 32.0))
    g = cast_votes(0, pm, [((7, 7), 1.0)], VoteParams(), (15, 15))
    hand = g[7, 8] == pytest.approx(0.6, abs=1e-12)

    # summation clamps negative cues to zero
    neg = np.full((4, 4), -5.0)
    clamp = np.all(combine([neg, np.full((4, 4), NO_VOTE)]) == 0.0)

    # AP hand cases: TP-then-FP = 1.0, FP-then-TP = 0.5
    gt = [evaluation.GroundTruth(image_id="a", part_id=0, box=(0, 0, 10, 10))]
    d_hit = evaluation.Detection(image_id="a", part_id=0, box=(0, 0, 10, 10),
                                 score=0.9)
    d_miss = evaluation.Detection(image_id="a", part_id=0, box=(50, 50, 60, 60),
                                  score=0.95)
    d_dup = evaluation.Detection(image_id="a", part_id=0,
                                 box=(0.5, 0, 10.5, 10), score=0.5)
    ap_one = evaluation.match_and_ap([d_hit, d_dup], gt) == 1.0
    ap_half = evaluation.match_and_ap([d_miss,
                                       evaluation.Detection(image_id="a", part_id=0,
                                                            box=(0, 0, 10, 10),
                                                            score=0.5)], gt) == 0.5

    ok = anti and hand and clamp and ap_one and ap_half
    _report("equation-unit-checks", ok,
            f"antisymmetry {anti}, vote-0.6 {hand}, clamp {clamp}, "
            f"AP:{ap_one}/{ap_half}", t0)


# ---------------------------------------------------------------------------
# 8. determinism

def test_full_pipeline_determinism(tmp_path):
    from vcvote.cli import main

    t0 = time.monotonic()
    synth = ["--depth", "16", "--parts", "2", "--seed", "7", "--noise", "2.0"]
    cfg = ["--num-concepts", "34", "--num-supporting", "9", "--seed", "3"]
    train_dir, test_dir = tmp_path / "train", tmp_path / "test"
    assert main(["synthesize", "--out", str(train_dir), "--scenes", "15",
                 "--prefix", "tr"] + synth) == 0
    assert main(["synthesize", "--out", str(test_dir), "--scenes", "8",
                 "--prefix", "te", "--seed-offset", "900"] + synth) == 0
    artifacts = []
    for tag in ("run1", "run2"):
        model = tmp_path / f"{tag}.vcm"
        dets = tmp_path / f"{tag}.txt"
        report = tmp_path / f"{tag}.json"
        assert main(["train", "--manifest", str(train_dir / "manifest.txt"),
                     "--out", str(model)] + cfg) == 0
        assert main(["detect", "--model", str(model), "--manifest",
                     str(test_dir / "manifest.txt"), "--out", str(dets)] + cfg) == 0
        assert main(["evaluate", "--detections", str(dets), "--manifest",
                     str(test_dir / "manifest.txt"), "--out", str(report)]) == 0
        artifacts.append((model.read_bytes(), dets.read_bytes(),
                          report.read_bytes()))
    ok = artifacts[0] == artifacts[1]
    _report("determinism", ok,
            "model/detections/report byte-identical across reruns", t0)
