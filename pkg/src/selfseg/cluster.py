"""Spatial k-means: cluster pixels on (intensity, window mean, window median).

The three feature coordinates share the [0,1] intensity scale, so they are
deliberately not re-standardized; the intensity coordinates of the fitted
centers double as the region centers used by the graph-cut data term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset import CYST, OTHER, TISSUE, Image, LabelMap
from .errors import DegenerateInputError

DEFAULT_WINDOW_RADIUS = 2
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 100
DEFAULT_N_INIT = 8

# Cluster index by ascending intensity -> region label. Cysts are
# air-attenuating (darkest); the chest wall / background is brightest.
LABEL_BY_DARKNESS = (CYST, TISSUE, OTHER)


@dataclass(frozen=True)
class FeatureField:
    """Per-pixel (intensity, window mean, window median) triples."""

    features: np.ndarray  # float64, shape (height, width, 3)

    @property
    def height(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]

    @property
    def flat(self) -> np.ndarray:
        return self.features.reshape(-1, 3)


@dataclass(frozen=True)
class ClusterModel:
    """Fitted centers plus the per-iteration within-cluster sum of squares."""

    k: int
    centers: np.ndarray           # (k, 3), rows sorted by intensity coordinate
    intensity_centers: tuple      # ascending intensity coordinates of centers
    wcss_trace: tuple             # objective after each Lloyd assignment

    def __post_init__(self):
        ic = self.intensity_centers
        if any(a >= b for a, b in zip(ic, ic[1:])):
            raise DegenerateInputError(f"tied or unordered intensity centers {ic}")


def _as_pixels(image) -> np.ndarray:
    if isinstance(image, Image):
        return image.pixels
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D intensity grid, got shape {arr.shape}")
    return arr


def extract_features(image, window_radius: int = DEFAULT_WINDOW_RADIUS) -> FeatureField:
    """Build the feature field over a (2r+1)^2 window with edge replication.

    Accepts an Image or any 2-D intensity array.
    """
    if window_radius < 1:
        raise ValueError("window_radius must be >= 1")
    pixels = _as_pixels(image)
    r = window_radius
    padded = np.pad(pixels, r, mode="edge")
    windows = sliding_window_view(padded, (2 * r + 1, 2 * r + 1))
    feats = np.empty(pixels.shape + (3,), dtype=np.float64)
    feats[..., 0] = pixels
    feats[..., 1] = windows.mean(axis=(2, 3))
    feats[..., 2] = np.median(windows, axis=(2, 3))
    return FeatureField(feats)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Standard k-means++ seeding: first center uniform, rest distance-weighted."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # All remaining mass sits on chosen centers; reuse the farthest point.
            idx = int(np.argmax(d2))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.uniform(0.0, total)))
            idx = min(idx, n - 1)
        centers[j] = points[idx]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd_run(points: np.ndarray, k: int, rng: np.random.Generator,
               max_iter: int, tol: float) -> tuple[np.ndarray, list]:
    """One k-means++ seeding followed by Lloyd until centers move < tol.

    An empty cluster is re-seeded at the point farthest from its assigned
    center (ties to the lowest pixel index), which keeps the recorded
    objective non-increasing.
    """
    n = points.shape[0]
    centers = _kmeans_pp_init(points, k, rng)
    wcss_trace = []
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(d2, axis=1)
        point_cost = d2[np.arange(n), assign]
        wcss_trace.append(float(point_cost.sum()))

        new_centers = centers.copy()
        reseed_cost = point_cost.copy()
        for j in range(k):
            members = assign == j
            if members.any():
                new_centers[j] = points[members].mean(axis=0)
            else:
                far = int(np.argmax(reseed_cost))
                new_centers[j] = points[far]
                reseed_cost[far] = -1.0  # one reseed per point per round
        move = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if move < tol:
            break
    return centers, wcss_trace


def kmeans_fit(
    field: FeatureField,
    k: int = 3,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    n_init: int = DEFAULT_N_INIT,
) -> ClusterModel:
    """Best of n_init seeded k-means++ Lloyd runs, by final objective.

    Restart streams are spawned deterministically from `seed`, so the fit
    is a pure function of (field, seed). Ties go to the earliest run. All
    pixels identical is a degenerate input.
    """
    points = field.flat
    n = points.shape[0]
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise ValueError(f"need at least k={k} pixels, got {n}")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    if np.all(points == points[0]):
        raise DegenerateInputError("all pixels identical; nothing to cluster")

    centers = None
    wcss_trace = None
    for child in np.random.SeedSequence(seed).spawn(n_init):
        rng = np.random.Generator(np.random.PCG64(child))
        run_centers, run_trace = _lloyd_run(points, k, rng, max_iter, tol)
        if wcss_trace is None or run_trace[-1] < wcss_trace[-1]:
            centers, wcss_trace = run_centers, run_trace

    order = np.argsort(centers[:, 0], kind="stable")
    centers = centers[order]
    return ClusterModel(
        k=k,
        centers=centers,
        intensity_centers=tuple(float(c) for c in centers[:, 0]),
        wcss_trace=tuple(wcss_trace),
    )


def assign_labels(model: ClusterModel, field: FeatureField) -> LabelMap:
    """Label each pixel by its nearest feature-space center.

    The darkest center maps to Cyst, the middle to Tissue, the brightest
    to Other; distance ties go to the darker center.
    """
    if model.k != 3:
        raise ValueError(f"region labeling needs k=3, model has k={model.k}")
    d2 = ((field.features[:, :, None, :] - model.centers[None, None, :, :]) ** 2).sum(axis=3)
    nearest = np.argmin(d2, axis=2)  # argmin takes the first (darkest) on ties
    codes = np.array(LABEL_BY_DARKNESS, dtype=np.uint8)
    return LabelMap(codes[nearest])
