"""Overlap and cyst-burden metrics plus per-manifest evaluation reports."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import CYST, LabelMap, LungMask, Manifest, load_labelmap, load_lungmask
from .errors import DegenerateInputError, DimensionError

CSV_HEADER = "image,dice,score_pred,score_gt,adcs"


def _codes(labels) -> np.ndarray:
    return labels.labels if isinstance(labels, LabelMap) else np.asarray(labels)


def dice(pred, gt, class_label: int = CYST) -> float:
    """2|P∩G| / (|P|+|G|) for one class; 1.0 when both sets are empty.

    Pixels of any other code (including Ignore) simply fall outside P/G.
    """
    p = _codes(pred) == class_label
    g = _codes(gt) == class_label
    if p.shape != g.shape:
        raise DimensionError(f"shape mismatch {p.shape} vs {g.shape}")
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def cyst_score(labels, mask: LungMask) -> float:
    """Percentage of the lung mask occupied by Cyst pixels."""
    lab = _codes(labels)
    inside = mask.inside if isinstance(mask, LungMask) else np.asarray(mask, bool)
    if lab.shape != inside.shape:
        raise DimensionError(f"shape mismatch {lab.shape} vs {inside.shape}")
    total = int(inside.sum())
    if total == 0:
        raise DegenerateInputError("empty lung mask")
    return 100.0 * int(((lab == CYST) & inside).sum()) / total


def adcs(pred, gt, mask: LungMask) -> float:
    """Absolute difference of the two cyst scores, in percent."""
    return abs(cyst_score(pred, mask) - cyst_score(gt, mask))


@dataclass(frozen=True)
class EvalRow:
    image: str
    dice: float
    score_pred: float
    score_gt: float
    adcs: float


@dataclass(frozen=True)
class EvalReport:
    """Per-image rows plus arithmetic means; means are NaN with no rows."""

    rows: tuple

    @property
    def mean_dice(self) -> float:
        return self._mean("dice")

    @property
    def mean_score_pred(self) -> float:
        return self._mean("score_pred")

    @property
    def mean_score_gt(self) -> float:
        return self._mean("score_gt")

    @property
    def mean_adcs(self) -> float:
        return self._mean("adcs")

    def _mean(self, field: str) -> float:
        if not self.rows:
            return float("nan")
        return float(np.mean([getattr(r, field) for r in self.rows]))


def evaluate(manifest: Manifest, preds: dict) -> EvalReport:
    """Score predictions against each entry's ground truth.

    preds maps str(entry.image) to a LabelMap. Entries without a prediction
    are ignored; entries predicted but lacking ground truth or a lung mask
    are skipped with a warning, so every row carries all four metrics.
    """
    rows = []
    for entry in manifest.entries:
        key = str(entry.image)
        if key not in preds:
            continue
        if entry.gt is None or entry.mask is None:
            warnings.warn(f"{key}: no ground truth/mask; skipped", stacklevel=2)
            continue
        gt = load_labelmap(entry.gt)
        mask = load_lungmask(entry.mask)
        pred = preds[key]
        sp = cyst_score(pred, mask)
        sg = cyst_score(gt, mask)
        rows.append(EvalRow(
            image=key,
            dice=dice(pred, gt),
            score_pred=sp,
            score_gt=sg,
            adcs=abs(sp - sg),
        ))
    return EvalReport(rows=tuple(rows))


def write_report(report: EvalReport, path) -> None:
    """CSV with one row per image and a final mean row."""
    lines = [CSV_HEADER]
    for r in report.rows:
        lines.append(f"{r.image},{r.dice:.6f},{r.score_pred:.6f},{r.score_gt:.6f},{r.adcs:.6f}")
    lines.append(
        f"mean,{report.mean_dice:.6f},{report.mean_score_pred:.6f},"
        f"{report.mean_score_gt:.6f},{report.mean_adcs:.6f}"
    )
    Path(path).write_text("\n".join(lines) + "\n")
