"""Synthetic lung-slice phantoms with known cyst ground truth.

Stands in for clinical CT data: two elliptical "lungs" of mid-gray tissue
on a bright background, with dark elliptical cysts dropped fully inside
the lung region. Intensity = per-region base level + a low-frequency
sinusoidal texture + i.i.d. Gaussian noise, clamped to [0,1].

All randomness comes from numpy's PCG64 bit generator (ziggurat normals),
instantiated explicitly so the stream is pinned to one named algorithm.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .dataset import (
    CYST,
    OTHER,
    TISSUE,
    Image,
    LabelMap,
    LungMask,
    Manifest,
    ManifestEntry,
    save_image,
    save_labelmap,
    save_lungmask,
    save_manifest,
)
from .errors import ConfigError, ManifestError

# Lung geometry as fractions of the frame: two axis-aligned ellipses.
_LUNG_CENTERS = ((0.30, 0.52), (0.70, 0.52))  # (cx/width, cy/height)
_LUNG_SEMI = (0.19, 0.33)                     # (a/width, b/height)

_PLACEMENT_ATTEMPTS = 100


@dataclass(frozen=True)
class PhantomConfig:
    width: int = 96
    height: int = 96
    cyst_count_range: tuple[int, int] = (3, 8)
    cyst_radius_range: tuple[float, float] = (2.0, 5.0)
    tissue_level: float = 0.35
    cyst_level: float = 0.10
    outside_level: float = 0.80
    noise_sigma: float = 0.03
    texture_amplitude: float = 0.04
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.cyst_level < self.tissue_level < self.outside_level <= 1.0:
            raise ConfigError("levels must satisfy 0 <= cyst < tissue < outside <= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.texture_amplitude < 0:
            raise ConfigError("texture_amplitude must be >= 0")
        cmin, cmax = self.cyst_count_range
        if cmin < 0 or cmax < cmin:
            raise ConfigError(f"bad cyst_count_range {self.cyst_count_range}")
        rmin, rmax = self.cyst_radius_range
        if rmin < 1 or rmax < rmin:
            raise ConfigError(f"bad cyst_radius_range {self.cyst_radius_range}")
        lung_a = _LUNG_SEMI[0] * self.width
        lung_b = _LUNG_SEMI[1] * self.height
        if rmax >= min(lung_a, lung_b):
            raise ConfigError(
                f"max cyst radius {rmax} exceeds lung extent ({lung_a:.1f} x {lung_b:.1f})"
            )


# Severity presets mirror a mild / moderate / severe split: severity is
# modeled purely by how many cysts appear and how large they get. Each
# preset ships as a plain key=value file under selfseg/presets/.
PRESETS = ("mild", "moderate", "severe")

_INT_KEYS = ("width", "height", "cyst_count_min", "cyst_count_max", "seed")
_FLOAT_KEYS = (
    "cyst_radius_min",
    "cyst_radius_max",
    "tissue_level",
    "cyst_level",
    "outside_level",
    "noise_sigma",
    "texture_amplitude",
)


def parse_phantom_config(text: str, **overrides) -> PhantomConfig:
    """Build a PhantomConfig from key=value text plus keyword overrides.

    Lines are `key = value`; blank lines and `#` comments are skipped.
    Range fields are split into scalar _min/_max keys.
    """
    raw: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = (part.strip() for part in body.partition("="))
        if not sep or not key or not value:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key in _INT_KEYS:
                raw[key] = int(value)
            elif key in _FLOAT_KEYS:
                raw[key] = float(value)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from None

    fields: dict[str, object] = {}
    for stem in ("cyst_count", "cyst_radius"):
        lo, hi = raw.pop(f"{stem}_min", None), raw.pop(f"{stem}_max", None)
        if (lo is None) != (hi is None):
            raise ConfigError(f"{stem}_min and {stem}_max must be given together")
        if lo is not None:
            fields[f"{stem}_range"] = (lo, hi)
    fields.update(raw)
    fields.update(overrides)
    return PhantomConfig(**fields)


def preset_config(name: str, **overrides) -> PhantomConfig:
    """Load one of the named severity presets, applying keyword overrides."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    text = resources.files("selfseg.presets").joinpath(f"{name}.cfg").read_text("utf-8")
    return parse_phantom_config(text, **overrides)


def _ellipse_mask(w: int, h: int, cx: float, cy: float, rx: float, ry: float) -> np.ndarray:
    x = np.arange(w, dtype=np.float64)
    y = np.arange(h, dtype=np.float64)
    return ((x[None, :] - cx) / rx) ** 2 + ((y[:, None] - cy) / ry) ** 2 <= 1.0


def _lung_mask(w: int, h: int) -> np.ndarray:
    mask = np.zeros((h, w), dtype=bool)
    for fx, fy in _LUNG_CENTERS:
        mask |= _ellipse_mask(w, h, fx * w, fy * h, _LUNG_SEMI[0] * w, _LUNG_SEMI[1] * h)
    return mask


def generate(config: PhantomConfig) -> tuple[Image, LabelMap, LungMask]:
    """Generate one phantom; identical config (incl. seed) is bitwise stable."""
    w, h = config.width, config.height
    rng = np.random.Generator(np.random.PCG64(config.seed))
    lung = _lung_mask(w, h)

    # Fixed draw order: texture params, cyst count, per-cyst geometry, noise.
    fx, fy = rng.uniform(1.0, 3.0, size=2)
    px, py = rng.uniform(0.0, 2.0 * np.pi, size=2)

    cmin, cmax = config.cyst_count_range
    n_cysts = int(rng.integers(cmin, cmax + 1))
    rmin, rmax = config.cyst_radius_range

    cyst = np.zeros((h, w), dtype=bool)
    ys, xs = np.nonzero(lung)
    x_lo, x_hi = xs.min(), xs.max()
    y_lo, y_hi = ys.min(), ys.max()
    for _ in range(n_cysts):
        for _attempt in range(_PLACEMENT_ATTEMPTS):
            cx = rng.uniform(x_lo, x_hi)
            cy = rng.uniform(y_lo, y_hi)
            rx = rng.uniform(rmin, rmax)
            ry = rng.uniform(rmin, rmax)
            blob = _ellipse_mask(w, h, cx, cy, rx, ry)
            if blob.any() and not (blob & ~lung).any():
                cyst |= blob  # overlaps with earlier cysts are fine
                break

    labels = np.full((h, w), OTHER, dtype=np.uint8)
    labels[lung] = TISSUE
    labels[cyst] = CYST

    base = np.full((h, w), config.outside_level, dtype=np.float64)
    base[lung] = config.tissue_level
    base[cyst] = config.cyst_level

    xg = np.arange(w, dtype=np.float64)[None, :] / w
    yg = np.arange(h, dtype=np.float64)[:, None] / h
    texture = config.texture_amplitude * np.sin(2 * np.pi * fx * xg + px) * np.sin(
        2 * np.pi * fy * yg + py
    )
    noise = config.noise_sigma * rng.standard_normal((h, w))

    pixels = np.clip(base + texture + noise, 0.0, 1.0)
    return Image(pixels), LabelMap(labels), LungMask(lung)


def generate_set(config: PhantomConfig, n_train: int, n_test: int, out_dir) -> Manifest:
    """Write n_train+n_test phantoms (seeded seed+index) plus a manifest."""
    if n_train < 1:
        raise ManifestError("n_train must be >= 1")
    if n_test < 0:
        raise ManifestError("n_test must be >= 0")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    for i in range(n_train + n_test):
        image, gt, mask = generate(replace(config, seed=config.seed + i))
        stem = f"img_{i:04d}"
        img_path = out_dir / f"{stem}.pgm"
        mask_path = out_dir / f"{stem}_mask.pgm"
        gt_path = out_dir / f"{stem}_gt.pgm"
        save_image(image, img_path)
        save_lungmask(mask, mask_path)
        save_labelmap(gt, gt_path)
        split = "train" if i < n_train else "test"
        entries.append(ManifestEntry(split, img_path, mask_path, gt_path))

    manifest = Manifest(tuple(entries))
    save_manifest(manifest, out_dir / "manifest.txt")
    return manifest
