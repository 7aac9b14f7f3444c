"""Recursive teacher-student loop: cluster+cut seeds, then self-distillation.

Level 0 labels come from the unsupervised pipeline (spatial k-means plus
graph-cut cleanup). Each level trains the student on the previous level's
labels, warm-started from the previous parameters with the learning rate
divided by lr_decay, and stops once successive train-set segmentations
agree (mean Cyst Dice at or above the threshold) or max_levels is reached.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cluster import DEFAULT_WINDOW_RADIUS, assign_labels, extract_features, kmeans_fit
from .dataset import (OTHER, LabelMap, LungMask, Manifest, load_image, load_lungmask,
                      save_labelmap)
from .errors import DivergenceError
from .graphcut import EnergyParams, refine
from .metrics import evaluate
from .student import (NetConfig, StudentParams, TrainConfig, init_params, predict,
                      save_params, train)

REPORT_HEADER = ("level,image,dice,score_pred,score_gt,adcs,"
                 "similarity,learning_rate,loss_first,loss_last")

# Loss-trace summary window (first/last steps averaged).
_SUMMARY_STEPS = 50


@dataclass(frozen=True)
class SelfTrainConfig:
    """Loop controls plus the nested per-stage configurations."""

    max_levels: int = 3
    similarity_threshold: float = 0.99
    level1_train: TrainConfig = TrainConfig()
    lr_decay: float = 10.0
    window_radius: int = DEFAULT_WINDOW_RADIUS
    cluster_seed: int = 0
    energy: EnergyParams = EnergyParams()
    net: NetConfig = NetConfig()

    def __post_init__(self):
        if self.max_levels < 1:
            raise ValueError(f"max_levels must be >= 1, got {self.max_levels}")
        if not 0.0 <= self.similarity_threshold <= 1.0:
            raise ValueError(f"similarity_threshold must be in [0,1], got {self.similarity_threshold}")
        if self.lr_decay < 1.0:
            raise ValueError(f"lr_decay must be >= 1, got {self.lr_decay}")
        if self.window_radius < 1:
            raise ValueError(f"window_radius must be >= 1, got {self.window_radius}")


@dataclass(frozen=True)
class LevelReport:
    """One self-training level: schedule, convergence and test metrics.

    wall_time is informational only and never serialized, so rerun
    artifacts stay byte-identical.
    """

    level: int
    learning_rate: float
    similarity: float
    loss_first: float
    loss_last: float
    steps: int
    test_rows: tuple
    wall_time: float

    def __post_init__(self):
        if not 0.0 <= self.similarity <= 1.0:
            raise ValueError(f"similarity must be in [0,1], got {self.similarity}")

    @property
    def mean_test_dice(self) -> float:
        if not self.test_rows:
            return float("nan")
        return float(np.mean([r.dice for r in self.test_rows]))

    @property
    def mean_test_adcs(self) -> float:
        if not self.test_rows:
            return float("nan")
        return float(np.mean([r.adcs for r in self.test_rows]))


def _seed_worker(task):
    path, window_radius, cluster_seed, energy = task
    image = load_image(path)
    field = extract_features(image, window_radius)
    model = kmeans_fit(field, seed=cluster_seed)
    km = assign_labels(model, field)
    return str(path), refine(image, km, model.intensity_centers, energy)


def _predict_worker(task):
    config, flat, path, inside = task
    params = StudentParams(config=config, flat=flat)
    return str(path), predict(params, load_image(path), LungMask(inside))


def _pmap(worker, tasks, jobs: int):
    if jobs <= 1:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, tasks))


def seed_labels(manifest: Manifest, cfg: SelfTrainConfig = SelfTrainConfig(),
                jobs: int = 1) -> dict:
    """Unsupervised teacher labels for every manifest image.

    Per image: feature extraction, k-means (k=3), nearest-center labels,
    graph-cut refinement. Returns {str(image path): LabelMap}.
    """
    tasks = [(e.image, cfg.window_radius, cfg.cluster_seed, cfg.energy)
             for e in manifest.entries]
    return dict(_pmap(_seed_worker, tasks, jobs))


def similarity(a: dict, b: dict) -> float:
    """Mean per-image Cyst Dice between two label sets over the same images."""
    from .metrics import dice
    if set(a) != set(b):
        raise ValueError("label sets cover different images")
    if not a:
        raise ValueError("no images to compare")
    return float(np.mean([dice(a[k], b[k]) for k in sorted(a)]))


def _loss_summary(trace) -> tuple:
    if not trace:
        return float("nan"), float("nan")
    head = float(np.mean(trace[:_SUMMARY_STEPS]))
    tail = float(np.mean(trace[-_SUMMARY_STEPS:]))
    return head, tail


def _write_report_csv(reports, path) -> None:
    lines = [REPORT_HEADER]
    for r in reports:
        lines.append(
            f"{r.level},,,,,,{r.similarity:.6f},{r.learning_rate:.6g},"
            f"{r.loss_first:.6f},{r.loss_last:.6f}"
        )
        for row in r.test_rows:
            lines.append(
                f"{r.level},{row.image},{row.dice:.6f},{row.score_pred:.6f},"
                f"{row.score_gt:.6f},{row.adcs:.6f},,,,"
            )
    Path(path).write_text("\n".join(lines) + "\n")


def run(manifest: Manifest, cfg: SelfTrainConfig = SelfTrainConfig(),
        out_dir=None, jobs: int = 1) -> tuple:
    """Execute the self-training loop; returns (final params, level reports).

    When out_dir is given, each level writes level{t}/params.bin and its
    train-set predictions under level{t}/labels/, plus a cumulative
    report.csv. Prediction masks come from the manifest when present,
    otherwise from the union of the level-0 Cyst and Tissue labels,
    frozen across levels.
    """
    seeds = seed_labels(manifest, cfg, jobs=jobs)

    masks = {}
    for e in manifest.entries:
        k = str(e.image)
        if e.mask is not None:
            masks[k] = load_lungmask(e.mask)
        else:
            masks[k] = LungMask(seeds[k].labels != OTHER)

    train_keys = [str(e.image) for e in manifest.train]
    test_entries = [e for e in manifest.entries if e.split == "test"]

    out_dir = Path(out_dir) if out_dir is not None else None
    params = init_params(cfg.net)
    labels_prev = {k: seeds[k] for k in train_keys}
    reports = []
    for level in range(1, cfg.max_levels + 1):
        lr = cfg.level1_train.learning_rate / cfg.lr_decay ** (level - 1)
        level_cfg = replace(cfg.level1_train, learning_rate=lr)
        started = time.perf_counter()
        trace = []
        try:
            params = train(params, manifest, labels_prev, level_cfg, trace=trace)
        except ValueError as exc:
            raise DivergenceError(level, f"level {level} diverged: {exc}") from exc
        if trace and not np.isfinite(trace).all():
            raise DivergenceError(level, f"level {level} produced a non-finite loss")

        tasks = [(params.config, params.flat, Path(k), masks[k].inside) for k in train_keys]
        labels_now = dict(_pmap(_predict_worker, tasks, jobs))
        sim = similarity(labels_now, labels_prev)

        test_tasks = [(params.config, params.flat, e.image, masks[str(e.image)].inside)
                      for e in test_entries]
        test_preds = dict(_pmap(_predict_worker, test_tasks, jobs))
        test_rows = evaluate(manifest, test_preds).rows if test_preds else ()

        loss_first, loss_last = _loss_summary(trace)
        reports.append(LevelReport(
            level=level,
            learning_rate=lr,
            similarity=sim,
            loss_first=loss_first,
            loss_last=loss_last,
            steps=len(trace),
            test_rows=tuple(test_rows),
            wall_time=time.perf_counter() - started,
        ))

        if out_dir is not None:
            level_dir = out_dir / f"level{level}"
            (level_dir / "labels").mkdir(parents=True, exist_ok=True)
            save_params(params, level_dir / "params.bin")
            for e in manifest.train:
                k = str(e.image)
                save_labelmap(labels_now[k], level_dir / "labels" / (e.image.stem + ".pgm"))
            _write_report_csv(reports, out_dir / "report.csv")

        labels_prev = labels_now
        if sim >= cfg.similarity_threshold:
            break
    return params, reports
