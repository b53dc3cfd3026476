import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcvote.evaluation import (Detection, GroundTruth, average_precision,
                               evaluate_detections, iou, match_and_ap,
                               read_detections, scale_loss, write_detections)


def _det(score, box=(0, 0, 10, 10), image="a", part=0):
    return Detection(image_id=image, part_id=part, box=tuple(map(float, box)),
                     score=float(score))


def _gt(box=(0, 0, 10, 10), image="a", part=0, occ=0.0):
    return GroundTruth(image_id=image, part_id=part, box=tuple(map(float, box)),
                       occluded_fraction=occ)


# ---------------------------------------------------------------------------
# IoU

def test_iou_identical_boxes():
    assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0


def test_iou_disjoint_boxes():
    assert iou((0, 0, 10, 10), (20, 20, 30, 30)) == 0.0


def test_iou_half_overlap_hand_computed():
    # intersection 50, union 150
    assert iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(1 / 3)


def test_iou_symmetric():
    a, b = (0, 0, 10, 10), (3, 2, 12, 9)
    assert iou(a, b) == iou(b, a)


# ---------------------------------------------------------------------------
# AP hand cases

def test_perfect_single_detection_ap_one():
    assert match_and_ap([_det(1.0)], [_gt()]) == 1.0


def test_duplicate_after_hit_still_ap_one():
    # TP at rank 1, duplicate FP at rank 2: envelope keeps AP at 1.0
    dets = [_det(0.9), _det(0.8, box=(0.5, 0, 10.5, 10))]
    assert match_and_ap(dets, [_gt()]) == 1.0


def test_false_positive_ranked_first_halves_ap():
    dets = [_det(0.95, box=(50, 50, 60, 60)), _det(0.5)]
    assert match_and_ap(dets, [_gt()]) == 0.5


def test_zero_detections_ap_zero():
    assert match_and_ap([], [_gt()]) == 0.0


def test_duplicate_is_false_positive_not_rematch():
    # one truth, two perfect boxes: only the higher-scored one matches
    dets = [_det(0.9), _det(0.8)]
    ap = match_and_ap(dets, [_gt()])
    assert ap == 1.0
    # but with two truths both match
    ap2 = match_and_ap(dets, [_gt(), _gt(box=(0.1, 0, 10.1, 10))])
    assert ap2 == 1.0


def test_iou_below_half_does_not_match():
    dets = [_det(0.9, box=(6, 0, 16, 10))]   # IoU = 4/16 = 0.25
    assert match_and_ap(dets, [_gt()]) == 0.0


def test_average_precision_known_sequence():
    # 2 truths; flags TP, FP, TP -> precisions 1, 1/2, 2/3; recalls .5, .5, 1
    ap = average_precision([1.0, 0.0, 1.0], 2)
    assert ap == pytest.approx(0.5 * 1.0 + 0.5 * (2 / 3))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 100), min_size=1, max_size=20),
       st.integers(1, 5))
def test_ap_invariant_to_monotone_score_transform(scores, exponent):
    rng = np.random.default_rng(0)
    truths = [_gt(box=(k * 30, 0, k * 30 + 10, 10)) for k in range(4)]
    dets = []
    for i, s in enumerate(scores):
        k = i % 6
        dets.append(_det(s, box=(k * 30 + rng.uniform(-2, 2), 0,
                                 k * 30 + 10 + rng.uniform(-2, 2), 10)))
    base = match_and_ap(dets, truths)
    squeezed = [Detection(image_id=d.image_id, part_id=d.part_id, box=d.box,
                          score=d.score ** exponent) for d in dets]
    assert match_and_ap(squeezed, truths) == pytest.approx(base)


def test_appending_lowest_score_keeps_existing_statuses():
    truths = [_gt(), _gt(box=(30, 0, 40, 10))]
    dets = [_det(0.9), _det(0.8, box=(50, 50, 60, 60))]
    extra = dets + [_det(0.1, box=(30.5, 0, 40.5, 10))]
    # the new lowest-ranked detection may add recall but cannot flip the
    # earlier TP/FP decisions
    assert match_and_ap(extra, truths) >= match_and_ap(dets, truths)


def test_evaluate_detections_skips_parts_without_truth():
    dets = [_det(0.9, part=0), _det(0.8, part=5, box=(100, 100, 110, 110))]
    truths = [_gt(part=0)]
    per_part, mean_ap, _ = evaluate_detections(dets, truths)
    assert set(per_part) == {0}
    assert mean_ap == 1.0


def test_stratified_ap_ignores_out_of_stratum_matches():
    truths = [_gt(occ=0.0), _gt(box=(30, 0, 40, 10), occ=0.7)]
    dets = [_det(0.9), _det(0.8, box=(30, 0, 40, 10))]
    strata = {"non": (0.0, 1e-9), "heavy": (0.5, 1.01)}
    _, _, strata_ap = evaluate_detections(dets, truths, strata=strata)
    assert strata_ap["non"] == 1.0
    assert strata_ap["heavy"] == 1.0


# ---------------------------------------------------------------------------
# scale loss

def test_scale_loss_zero_iff_equal():
    assert scale_loss(224, 224) == 0.0
    assert scale_loss(100.5, 100.5) == 0.0


def test_scale_loss_doubling_is_ln_two():
    assert scale_loss(448, 224) == pytest.approx(math.log(2))


def test_scale_loss_symmetric():
    assert scale_loss(300, 500) == scale_loss(500, 300)


def test_scale_loss_rejects_nonpositive():
    with pytest.raises(ValueError):
        scale_loss(0, 224)


# ---------------------------------------------------------------------------
# detection files

def test_detection_file_round_trip(tmp_path):
    dets = [_det(0.75, box=(1.25, 2.5, 11.75, 12.5)),
            _det(0.5, image="b", part=3, box=(4, 5, 6, 7))]
    path = tmp_path / "d.txt"
    write_detections(dets, path)
    assert read_detections(path) == dets


def test_detection_rejects_degenerate_box():
    with pytest.raises(ValueError):
        _det(1.0, box=(5, 0, 5, 10))
