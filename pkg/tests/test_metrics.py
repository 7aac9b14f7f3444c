"""Dice, cyst score, ADCS, and the CSV evaluation report."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import write_dataset
from selfseg.dataset import (
    CYST,
    IGNORE,
    OTHER,
    TISSUE,
    LabelMap,
    LungMask,
    load_manifest,
)
from selfseg.errors import DegenerateInputError, DimensionError
from selfseg.metrics import (
    CSV_HEADER,
    EvalReport,
    EvalRow,
    adcs,
    cyst_score,
    dice,
    evaluate,
    write_report,
)


def labelmap(codes) -> LabelMap:
    return LabelMap(np.asarray(codes, dtype=np.uint8))


def cyst_patch(shape, n_cyst) -> LabelMap:
    """First n_cyst pixels (row-major) Cyst, the rest Tissue."""
    flat = np.full(int(np.prod(shape)), TISSUE, dtype=np.uint8)
    flat[:n_cyst] = CYST
    return LabelMap(flat.reshape(shape))


# --- dice ---------------------------------------------------------------


def test_dice_identity_nonempty():
    m = cyst_patch((10, 10), 37)
    assert dice(m, m) == 1.0


def test_dice_half_overlap():
    # |P| = |G| = 100 with 50 shared pixels: 2*50 / 200.
    pred = cyst_patch((20, 20), 100)
    gt = np.full((20, 20), TISSUE, dtype=np.uint8)
    gt.reshape(-1)[50:150] = CYST
    assert dice(pred, labelmap(gt)) == 0.5


def test_dice_both_empty_is_one():
    empty = labelmap(np.full((4, 4), TISSUE))
    assert dice(empty, empty) == 1.0


def test_dice_one_empty_is_zero():
    assert dice(cyst_patch((4, 4), 3), labelmap(np.full((4, 4), TISSUE))) == 0.0


def test_dice_disjoint_is_zero():
    pred = cyst_patch((4, 4), 5)
    gt = np.full((4, 4), TISSUE, dtype=np.uint8)
    gt.reshape(-1)[5:10] = CYST
    assert dice(pred, labelmap(gt)) == 0.0


def test_dice_shape_mismatch():
    with pytest.raises(DimensionError):
        dice(cyst_patch((4, 4), 2), cyst_patch((4, 5), 2))


def test_dice_other_classes_do_not_count():
    # Ignore and Other pixels lie outside both sets for the Cyst class.
    pred = labelmap([[CYST, IGNORE], [OTHER, TISSUE]])
    gt = labelmap([[CYST, OTHER], [IGNORE, TISSUE]])
    assert dice(pred, gt) == 1.0


def test_dice_selectable_class():
    pred = labelmap([[TISSUE, TISSUE], [OTHER, OTHER]])
    gt = labelmap([[TISSUE, OTHER], [OTHER, OTHER]])
    assert dice(pred, gt, class_label=TISSUE) == pytest.approx(2 / 3)


@given(st.integers(0, 2**32 - 1))
def test_dice_bounded_and_reflexive(seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    a = labelmap(rng.integers(0, 3, size=(6, 6)))
    b = labelmap(rng.integers(0, 3, size=(6, 6)))
    d = dice(a, b)
    assert 0.0 <= d <= 1.0
    assert dice(a, a) == 1.0
    assert dice(a, b) == dice(b, a)


# --- cyst_score ---------------------------------------------------------


def test_cyst_score_zero_without_cysts():
    mask = LungMask(np.ones((10, 10), bool))
    assert cyst_score(labelmap(np.full((10, 10), TISSUE)), mask) == 0.0


def test_cyst_score_saturates_at_100():
    mask = LungMask(np.ones((10, 10), bool))
    assert cyst_score(labelmap(np.full((10, 10), CYST)), mask) == 100.0


def test_cyst_score_fraction():
    # 250 cyst pixels inside a 10000-pixel lung.
    mask = LungMask(np.ones((100, 100), bool))
    assert cyst_score(cyst_patch((100, 100), 250), mask) == 2.5


def test_cyst_score_empty_mask():
    with pytest.raises(DegenerateInputError):
        cyst_score(cyst_patch((4, 4), 2), LungMask(np.zeros((4, 4), bool)))


def test_cyst_score_shape_mismatch():
    with pytest.raises(DimensionError):
        cyst_score(cyst_patch((4, 4), 2), LungMask(np.ones((4, 5), bool)))


def test_cyst_score_ignores_outside_mask():
    # Relabeling outside the lung must not move the score.
    mask = np.zeros((6, 6), bool)
    mask[2:4, 2:4] = True
    inside = np.full((6, 6), TISSUE, dtype=np.uint8)
    inside[2, 2] = CYST
    outside_cysts = inside.copy()
    outside_cysts[mask == False] = CYST  # noqa: E712
    score = cyst_score(labelmap(inside), LungMask(mask))
    assert score == 25.0
    assert cyst_score(labelmap(outside_cysts), LungMask(mask)) == score


# --- adcs ---------------------------------------------------------------


def test_adcs_identity():
    mask = LungMask(np.ones((10, 10), bool))
    m = cyst_patch((10, 10), 7)
    assert adcs(m, m, mask) == 0.0


def test_adcs_score_difference():
    # Scores 10.05 and 6.34 on a 10000-pixel lung differ by 3.71.
    mask = LungMask(np.ones((100, 100), bool))
    pred = cyst_patch((100, 100), 1005)
    gt = cyst_patch((100, 100), 634)
    assert cyst_score(pred, mask) == pytest.approx(10.05)
    assert cyst_score(gt, mask) == pytest.approx(6.34)
    assert adcs(pred, gt, mask) == pytest.approx(3.71)


def test_adcs_symmetric():
    mask = LungMask(np.ones((8, 8), bool))
    a = cyst_patch((8, 8), 10)
    b = cyst_patch((8, 8), 30)
    assert adcs(a, b, mask) == adcs(b, a, mask)
    assert adcs(a, b, mask) >= 0.0


# --- evaluate -----------------------------------------------------------


def _disk_pair(tmp_path, overlaps):
    """Dataset where image i has dice 2*o/(o+10+10-o... ) hand-set via overlaps.

    overlaps: list of (n_pred, n_gt, n_shared) cyst counts on an 8x8 grid.
    Returns (manifest, preds keyed like evaluate expects).
    """
    images, gts, masks, preds = [], [], [], []
    for n_pred, n_gt, n_shared in overlaps:
        images.append(np.zeros((8, 8)))
        gt = np.full(64, TISSUE, dtype=np.uint8)
        gt[:n_gt] = CYST
        gts.append(gt.reshape(8, 8))
        masks.append(np.ones((8, 8), bool))
        pred = np.full(64, TISSUE, dtype=np.uint8)
        # Share the first n_shared gt pixels, then spill past the gt block.
        pred[:n_shared] = CYST
        pred[n_gt:n_gt + (n_pred - n_shared)] = CYST
        preds.append(labelmap(pred.reshape(8, 8)))
    manifest = load_manifest(write_dataset(tmp_path, images, gts=gts, masks=masks))
    keyed = {str(e.image): preds[i] for i, e in enumerate(manifest.entries)}
    return manifest, keyed


def test_evaluate_mean_of_rows(tmp_path):
    # Dice 0.8 and 0.6 from hand-built overlaps; mean 0.7.
    manifest, preds = _disk_pair(tmp_path, [(10, 10, 8), (10, 10, 6)])
    report = evaluate(manifest, preds)
    assert [r.dice for r in report.rows] == [pytest.approx(0.8), pytest.approx(0.6)]
    assert report.mean_dice == pytest.approx(0.7)


def test_evaluate_row_fields(tmp_path):
    manifest, preds = _disk_pair(tmp_path, [(16, 8, 8)])
    row = evaluate(manifest, preds).rows[0]
    assert row.image == str(manifest.entries[0].image)
    assert row.score_pred == pytest.approx(100.0 * 16 / 64)
    assert row.score_gt == pytest.approx(100.0 * 8 / 64)
    assert row.adcs == pytest.approx(abs(row.score_pred - row.score_gt))


def test_evaluate_empty_prediction_set(tmp_path):
    manifest, _ = _disk_pair(tmp_path, [(4, 4, 4)])
    report = evaluate(manifest, {})
    assert report.rows == ()
    assert math.isnan(report.mean_dice)
    assert math.isnan(report.mean_adcs)


def test_evaluate_row_count_matches_gt_bearing_entries(tmp_path):
    manifest, preds = _disk_pair(tmp_path, [(4, 4, 4), (6, 6, 6), (2, 2, 2)])
    assert len(evaluate(manifest, preds).rows) == 3


def test_evaluate_skips_missing_gt_with_warning(tmp_path):
    images = [np.zeros((8, 8)), np.zeros((8, 8))]
    gt = np.full((8, 8), TISSUE, dtype=np.uint8)
    manifest = load_manifest(write_dataset(
        tmp_path, images,
        gts=[gt, None],
        masks=[np.ones((8, 8), bool), np.ones((8, 8), bool)],
    ))
    preds = {str(e.image): labelmap(gt) for e in manifest.entries}
    with pytest.warns(UserWarning, match="skipped"):
        report = evaluate(manifest, preds)
    assert len(report.rows) == 1


def test_evaluate_ignores_unpredicted_entries(tmp_path):
    manifest, preds = _disk_pair(tmp_path, [(4, 4, 4), (6, 6, 3)])
    only_first = {k: v for k, v in list(preds.items())[:1]}
    report = evaluate(manifest, only_first)
    assert len(report.rows) == 1
    assert report.rows[0].dice == 1.0


# --- write_report -------------------------------------------------------


def test_write_report_layout(tmp_path):
    report = EvalReport(rows=(
        EvalRow("a.pgm", 1.0, 10.0, 10.0, 0.0),
        EvalRow("b.pgm", 0.5, 2.5, 5.0, 2.5),
    ))
    out = tmp_path / "report.csv"
    write_report(report, out)
    lines = out.read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert lines[1] == "a.pgm,1.000000,10.000000,10.000000,0.000000"
    assert lines[2] == "b.pgm,0.500000,2.500000,5.000000,2.500000"
    assert lines[3] == "mean,0.750000,6.250000,7.500000,1.250000"
    assert len(lines) == 4


def test_write_report_mean_row_is_arithmetic_mean(tmp_path):
    rows = tuple(EvalRow(f"i{i}", d, 0.0, 0.0, a)
                 for i, (d, a) in enumerate([(0.9, 1.0), (0.7, 3.0), (0.8, 2.0)]))
    out = tmp_path / "r.csv"
    write_report(EvalReport(rows=rows), out)
    mean_line = out.read_text().splitlines()[-1].split(",")
    assert mean_line[0] == "mean"
    assert float(mean_line[1]) == pytest.approx(0.8)
    assert float(mean_line[4]) == pytest.approx(2.0)
