import numpy as np
import pytest

from vcvote import synthgen
from vcvote.evaluation import scale_loss
from vcvote.multiscale import (SCALE_SCHEDULE, detect_multiscale, map_box,
                               nearest_scale, predict_scale, validate_schedule)
from vcvote.voting import ScoreMap, detect_image


def _sm(part_id, peak):
    grid = np.zeros((4, 4))
    grid[1, 1] = peak
    return ScoreMap(part_id=part_id, grid=grid, l0=np.full((64, 64), 0.0) + grid.max())


def _maps(per_scale_peaks):
    """per_scale_peaks: {scale: {part: peak}}"""
    return {scale: {s: _sm(s, peak) for s, peak in parts.items()}
            for scale, parts in per_scale_peaks.items()}


def test_all_parts_peak_at_same_scale():
    maps = _maps({s: {0: 1.0, 1: 1.0, 2: 1.0} for s in SCALE_SCHEDULE})
    for part in maps[480]:
        maps[480][part] = _sm(part, 9.0)
    pred = predict_scale(maps)
    assert pred.per_part == {0: 480, 1: 480, 2: 480}
    assert pred.combined == 480.0


def test_split_parts_average():
    maps = _maps({s: {0: 0.1, 1: 0.1} for s in SCALE_SCHEDULE})
    maps[224][0] = _sm(0, 5.0)
    maps[976][1] = _sm(1, 5.0)
    pred = predict_scale(maps)
    assert pred.per_part == {0: 224, 1: 976}
    assert pred.combined == 600.0


def test_ties_go_to_smaller_scale():
    maps = _maps({s: {0: 1.0} for s in SCALE_SCHEDULE})
    pred = predict_scale(maps)
    assert pred.per_part[0] == 224


def test_prediction_matches_bruteforce_recomputation():
    rng = np.random.default_rng(0)
    maps = {s: {p: _sm(p, float(rng.uniform(0, 10))) for p in range(3)}
            for s in SCALE_SCHEDULE}
    pred = predict_scale(maps)
    for p in range(3):
        best, best_v = None, -1.0
        for s in SCALE_SCHEDULE:
            v = float(maps[s][p].l0.max())
            if v > best_v:
                best, best_v = s, v
        assert pred.per_part[p] == best
    assert pred.combined == pytest.approx(np.mean(list(pred.per_part.values())))


def test_combined_scale_within_schedule_bounds():
    rng = np.random.default_rng(1)
    maps = {s: {p: _sm(p, float(rng.uniform(0, 10))) for p in range(4)}
            for s in SCALE_SCHEDULE}
    pred = predict_scale(maps)
    assert SCALE_SCHEDULE[0] <= pred.combined <= SCALE_SCHEDULE[-1]


def test_nearest_scale_prefers_smaller_on_tie():
    assert nearest_scale(248.0, (224, 272)) == 224
    assert nearest_scale(600.0, SCALE_SCHEDULE) == 560   # 40 vs 40 -> smaller
    assert nearest_scale(976.0, SCALE_SCHEDULE) == 976


def test_schedule_validation():
    assert validate_schedule(SCALE_SCHEDULE) == SCALE_SCHEDULE
    with pytest.raises(ValueError):
        validate_schedule((224, 224, 320))
    with pytest.raises(ValueError):
        validate_schedule((272, 320))       # must start at the training scale
    assert SCALE_SCHEDULE == (224, 272, 320, 400, 480, 560, 640, 752, 864, 976)


def test_map_box_round_trip():
    box = (10.0, 20.0, 50.0, 60.0)
    fwd = map_box(box, (448, 640), (224, 320))
    assert fwd == (5.0, 10.0, 25.0, 30.0)
    back = map_box(fwd, (224, 320), (448, 640))
    assert back == pytest.approx(box)


def test_training_scale_object_reduces_to_single_scale_output(world):
    scales = (224, 272, 320)
    scenes = synthgen.generate_scenes(world.spec, 1, scales=scales,
                                      object_scales=1.0, id_prefix="ms",
                                      seed_offset=7000)
    b = scenes[0]
    feats = {s: r.features for s, r in b.renders.items()}
    dets, pred, used = detect_multiscale(feats, world.bundle,
                                         b.geometry.natural_size, image_id="x")
    assert used == 224
    assert pred.combined == 224.0
    _, direct = detect_image(b.renders[224].features, world.bundle, image_id="x")
    assert dets == direct      # identity mapping at the natural scale


def test_detection_boxes_scale_mapped(world):
    scenes = synthgen.generate_scenes(world.spec, 1, scales=(224, 272),
                                      object_scales=1.0, id_prefix="mb",
                                      seed_offset=7100)
    b = scenes[0]
    fm = b.renders[272].features
    _, dets = detect_image(fm, world.bundle, image_id="x")
    mapped = [map_box(d.box, fm.spec.image_size, b.geometry.natural_size)
              for d in dets]
    fy = b.geometry.natural_size[0] / fm.spec.image_size[0]
    fx = b.geometry.natural_size[1] / fm.spec.image_size[1]
    assert dets, "expected detections at a near-training scale"
    for d, m in zip(dets, mapped):
        assert m[0] == pytest.approx(d.box[0] * fx)
        assert m[1] == pytest.approx(d.box[1] * fy)
        assert m[2] == pytest.approx(d.box[2] * fx)
        assert m[3] == pytest.approx(d.box[3] * fy)


def test_scale_loss_small_on_spanning_set(world):
    losses = []
    for i, target in enumerate((224, 320, 480, 752)):
        f = 224.0 / target
        b = synthgen.generate_scenes(world.spec, 1, scales=SCALE_SCHEDULE,
                                     object_scales=f, id_prefix=f"sp{target}_",
                                     seed_offset=7200 + i)[0]
        feats = {s: r.features for s, r in b.renders.items()}
        _, pred, _ = detect_multiscale(feats, world.bundle,
                                       b.geometry.natural_size)
        losses.append(scale_loss(b.geometry.actual_scale, pred.combined))
    assert float(np.mean(losses)) < 0.2
