import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from msccnet import metrics as M
from msccnet.exceptions import ContractError, UndefinedMetricError


def _acc(pred, gt):
    acc = M.EvalAccumulator()
    acc.add_masks(pred, gt)
    return acc


def test_perfect_and_all_real_predictions(rng):
    gt = rng.integers(0, 2, (3, 16, 16))
    assert M.f1_pixel(_acc(gt, gt)) == 1.0
    assert M.miou_pixel(_acc(gt, gt)) == 1.0
    assert M.f1_pixel(_acc(np.zeros_like(gt), gt)) == 0.0


def test_complement_on_half_image_gives_zero_miou():
    gt = np.zeros((8, 8), dtype=int)
    gt[:, :4] = 1
    assert M.miou_pixel(_acc(1 - gt, gt)) == 0.0


def test_counts_match_oracle(rng):
    pred, gt = rng.integers(0, 2, (16, 16)), rng.integers(0, 2, (16, 16))
    acc = _acc(pred, gt)
    assert acc.confusion.tolist() == oracles.confusion_loop(pred, gt)
    assert M.f1_pixel(acc) == oracles.f1_loop(pred, gt)
    assert M.miou_pixel(acc) == pytest.approx(oracles.miou_loop(pred, gt), abs=1e-15)


def test_absent_class_is_excluded_from_miou():
    gt = np.zeros((4, 4), dtype=int)
    assert M.class_iou(_acc(gt, gt))[1] is None
    assert M.miou_pixel(_acc(gt, gt)) == 1.0


def test_empty_accumulator_is_undefined():
    with pytest.raises(UndefinedMetricError):
        M.f1_pixel(M.EvalAccumulator())
    with pytest.raises(UndefinedMetricError):
        M.acc_image(M.EvalAccumulator())


def test_shape_and_value_contracts():
    acc = M.EvalAccumulator()
    with pytest.raises(ContractError):
        acc.add_masks(np.zeros(4), np.zeros(5))
    with pytest.raises(ContractError):
        acc.add_masks(np.full(4, 2), np.zeros(4))


def test_auc_trivial_cases():
    labels = np.array([0, 1, 0, 1, 1])
    assert M.auc_score(labels, labels.astype(float)) == 1.0
    assert M.auc_score(labels, np.full(5, 0.3)) == 0.5
    acc = M.EvalAccumulator()
    acc.add_images(labels, labels.astype(float))
    assert M.acc_image(acc) == 1.0


def test_auc_matches_pairwise_oracle_with_ties(rng):
    labels = rng.integers(0, 2, 100)
    scores = np.round(rng.random(100), 1)  # heavy ties
    assert abs(M.auc_score(labels, scores) - oracles.auc_pairwise(labels, scores)) < 1e-12


def test_auc_single_class_is_undefined():
    with pytest.raises(UndefinedMetricError):
        M.auc_score(np.ones(4), np.random.default_rng(0).random(4))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_auc_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    labels = np.r_[0, 1, rng.integers(0, 2, 30)]
    scores = rng.normal(size=32)
    assert M.auc_score(labels, scores) == pytest.approx(M.auc_score(labels, np.exp(3 * scores) + 1), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_metrics_bounded_and_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    pred, gt = rng.integers(0, 2, (5, 6, 6)), rng.integers(0, 2, (5, 6, 6))
    gt[0, 0, 0] = 1
    a = _acc(pred, gt)
    perm = rng.permutation(5)
    b = _acc(pred[perm], gt[perm])
    assert M.f1_pixel(a) == M.f1_pixel(b) and M.miou_pixel(a) == M.miou_pixel(b)
    ious = [v for v in M.class_iou(a) if v is not None]
    assert 0 <= M.miou_pixel(a) <= max(ious) <= 1
    assert 0 <= M.f1_pixel(a) <= 1


def test_merge_is_associative_and_commutative(rng):
    parts = []
    for _ in range(3):
        acc = M.EvalAccumulator()
        acc.add_masks(rng.integers(0, 2, 20), rng.integers(0, 2, 20))
        acc.add_images(rng.integers(0, 2, 3), rng.random(3))
        parts.append(acc)
    a, b, c = parts
    left, right = a.merge(b).merge(c), a.merge(b.merge(c))
    assert np.array_equal(left.confusion, right.confusion)
    assert np.array_equal(a.merge(b).confusion, b.merge(a).confusion)
    assert left.n_pixels == 60


def test_report_files(tmp_path, rng):
    acc = M.EvalAccumulator()
    acc.add_masks(rng.integers(0, 2, 50), rng.integers(0, 2, 50))
    acc.add_images([0, 1, 1], [0.2, 0.7, 0.4])
    report = M.summarize(acc)
    txt, js = M.write_report(report, tmp_path / "rep")
    lines = open(txt).read().splitlines()
    assert lines == sorted(lines) and all("=" in line for line in lines)
    assert json.load(open(js))["n_images"] == 3
