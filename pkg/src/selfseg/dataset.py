"""Core image/label types, binary PGM I/O and dataset manifests.

Intensities are normalized to [0,1] at load time; every downstream constant
(pairwise penalty, cluster centers) lives in these normalized units.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, ManifestError, PgmFormatError

# Label codes. Ignore marks pixels excluded from every loss and metric.
OTHER = 0
TISSUE = 1
CYST = 2
IGNORE = 255

VALID_CODES = frozenset({OTHER, TISSUE, CYST, IGNORE})
REGION_CODES = (OTHER, TISSUE, CYST)

MIN_IMAGE_DIM = 8


def _frozen(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype)
    if out is arr:
        out = out.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Image:
    """2-D grid of normalized intensities in [0,1]."""

    pixels: np.ndarray  # float64, shape (height, width)

    def __post_init__(self):
        arr = self.pixels
        if arr.ndim != 2:
            raise DimensionError(f"image must be 2-D, got shape {arr.shape}")
        h, w = arr.shape
        if h < MIN_IMAGE_DIM or w < MIN_IMAGE_DIM:
            raise DimensionError(f"image must be at least {MIN_IMAGE_DIM}x{MIN_IMAGE_DIM}, got {w}x{h}")
        arr = _frozen(arr, np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("image intensities must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image intensities must lie in [0,1]")
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel categorical field over {Other, Tissue, Cyst, Ignore}."""

    labels: np.ndarray  # uint8, shape (height, width)

    def __post_init__(self):
        arr = self.labels
        if arr.ndim != 2:
            raise DimensionError(f"label map must be 2-D, got shape {arr.shape}")
        arr = _frozen(arr, np.uint8)
        bad = set(np.unique(arr).tolist()) - VALID_CODES
        if bad:
            raise ValueError(f"invalid label codes {sorted(bad)}; allowed: 0, 1, 2, 255")
        object.__setattr__(self, "labels", arr)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class LungMask:
    """Boolean field marking pixels that belong to the lung region."""

    inside: np.ndarray  # bool, shape (height, width)

    def __post_init__(self):
        arr = self.inside
        if arr.ndim != 2:
            raise DimensionError(f"mask must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "inside", _frozen(arr, bool))

    @property
    def height(self) -> int:
        return self.inside.shape[0]

    @property
    def width(self) -> int:
        return self.inside.shape[1]


@dataclass(frozen=True)
class ManifestEntry:
    split: str  # "train" or "test"
    image: Path
    mask: Path | None = None
    gt: Path | None = None


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.image in seen:
                raise ManifestError(f"duplicate image path: {e.image}")
            seen.add(e.image)
        if not any(e.split == "train" for e in self.entries):
            raise ManifestError("manifest needs at least one train entry")

    def split(self, tag: str) -> tuple[ManifestEntry, ...]:
        return tuple(e for e in self.entries if e.split == tag)

    @property
    def train(self) -> tuple[ManifestEntry, ...]:
        return self.split("train")

    @property
    def test(self) -> tuple[ManifestEntry, ...]:
        return self.split("test")


# --- binary PGM (P5) ----------------------------------------------------

def _read_pgm_raw(path) -> tuple[np.ndarray, int]:
    """Read a P5 PGM; returns (uint16/uint8 array (h, w), maxval)."""
    data = Path(path).read_bytes()
    # Header is ASCII tokens (magic, width, height, maxval); '#' starts a
    # comment that runs to end of line. One whitespace byte separates the
    # maxval from the pixel payload.
    pos = 0
    tokens = []
    while len(tokens) < 4:
        if pos >= len(data):
            raise PgmFormatError(f"{path}: truncated header")
        c = data[pos:pos + 1]
        if c in b" \t\r\n":
            pos += 1
        elif c == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise PgmFormatError(f"{path}: unterminated comment")
            pos = nl + 1
        else:
            end = pos
            while end < len(data) and data[end:end + 1] not in b" \t\r\n#":
                end += 1
            tokens.append(data[pos:end])
            pos = end
    if tokens[0] != b"P5":
        raise PgmFormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise PgmFormatError(f"{path}: non-numeric header field") from None
    if width <= 0 or height <= 0:
        raise PgmFormatError(f"{path}: non-positive dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise PgmFormatError(f"{path}: maxval {maxval} out of range")
    if pos >= len(data) or data[pos:pos + 1] not in b" \t\r\n":
        raise PgmFormatError(f"{path}: missing whitespace after maxval")
    pos += 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    payload = data[pos:pos + need]
    if len(payload) != need:
        raise PgmFormatError(f"{path}: expected {need} payload bytes, got {len(payload)}")
    raw = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return raw.astype(np.uint16 if maxval > 255 else np.uint8), maxval


def _write_pgm_raw(path, raw: np.ndarray, maxval: int) -> None:
    header = f"P5\n{raw.shape[1]} {raw.shape[0]}\n{maxval}\n".encode("ascii")
    if maxval > 255:
        payload = raw.astype(">u2").tobytes()
    else:
        payload = raw.astype("u1").tobytes()
    Path(path).write_bytes(header + payload)


def load_image(path) -> Image:
    """Load an 8- or 16-bit binary PGM and normalize by its declared maxval."""
    raw, maxval = _read_pgm_raw(path)
    h, w = raw.shape
    if h < MIN_IMAGE_DIM or w < MIN_IMAGE_DIM:
        raise DimensionError(f"{path}: image must be at least {MIN_IMAGE_DIM}x{MIN_IMAGE_DIM}, got {w}x{h}")
    return Image(raw.astype(np.float64) / np.float64(maxval))


def save_image(image: Image, path, maxval: int = 65535) -> None:
    """Write an image as binary PGM, quantizing intensities to maxval steps."""
    raw = np.rint(image.pixels * maxval).astype(np.uint16 if maxval > 255 else np.uint8)
    _write_pgm_raw(path, raw, maxval)


def load_labelmap(path) -> LabelMap:
    raw, maxval = _read_pgm_raw(path)
    if maxval != 255:
        raise PgmFormatError(f"{path}: label maps must be 8-bit (maxval 255), got {maxval}")
    return LabelMap(raw)


def save_labelmap(labelmap: LabelMap, path) -> None:
    """Write raw label codes as an 8-bit PGM; round-trips bit-exactly."""
    _write_pgm_raw(path, labelmap.labels, 255)


def load_lungmask(path) -> LungMask:
    raw, _ = _read_pgm_raw(path)
    return LungMask(raw > 0)


def save_lungmask(mask: LungMask, path) -> None:
    _write_pgm_raw(path, np.where(mask.inside, 255, 0).astype(np.uint8), 255)


# --- manifests -----------------------------------------------------------

def load_manifest(path) -> Manifest:
    """Parse a `split,image[,mask][,gt]` manifest.

    Relative paths are resolved against the manifest's directory. Blank
    lines and `#` comment lines are skipped; empty optional fields mean
    "absent".
    """
    path = Path(path)
    base = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) < 2 or len(fields) > 4:
            raise ManifestError(f"{path}:{lineno}: expected 2-4 fields, got {len(fields)}")
        split, image = fields[0], fields[1]
        if split not in ("train", "test"):
            raise ManifestError(f"{path}:{lineno}: unknown split tag {split!r}")
        if not image:
            raise ManifestError(f"{path}:{lineno}: empty image path")

        def resolve(p: str) -> Path | None:
            if not p:
                return None
            q = Path(p)
            return q if q.is_absolute() else base / q

        mask = resolve(fields[2]) if len(fields) > 2 else None
        gt = resolve(fields[3]) if len(fields) > 3 else None
        entries.append(ManifestEntry(split, resolve(image), mask, gt))
    return Manifest(tuple(entries))


def save_manifest(manifest: Manifest, path) -> None:
    """Write entries as `split,image[,mask][,gt]`, paths relative to the file."""
    path = Path(path)
    base = path.parent

    def rel(p: Path | None) -> str:
        if p is None:
            return ""
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return str(p)

    lines = []
    for e in manifest.entries:
        fields = [e.split, rel(e.image)]
        if e.mask is not None or e.gt is not None:
            fields.append(rel(e.mask))
        if e.gt is not None:
            fields.append(rel(e.gt))
        lines.append(",".join(fields))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
