"""Small encoder-decoder segmentation network, trained with plain numpy.

Double-precision forward/backward with exact analytic gradients; the
finite-difference harness in the test suite depends on that exactness.
Convolutions are same-size (zero padding), realized as im2col plus one
matmul so the heavy lifting stays in BLAS.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset import CYST, OTHER, TISSUE, Image, LabelMap, LungMask, Manifest, load_image
from .errors import CheckpointError, DimensionError, TrainingSetError

CHECKPOINT_MAGIC = b"SSEGNET\0"
CHECKPOINT_VERSION = 1

# Output channel order of the final projection.
CH_TISSUE = 0
CH_CYST = 1


@dataclass(frozen=True)
class NetConfig:
    """Architecture knobs: contraction depth and first-level channel count."""

    depth: int = 2
    base_channels: int = 8
    kernel: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.kernel != 3:
            raise ValueError("kernel is fixed at 3x3")

    def channels(self, level: int) -> int:
        return self.base_channels * (2 ** (level - 1))


def param_shapes(config: NetConfig) -> tuple:
    """Declaration order of every kernel/bias; single source of truth.

    Encoder runs level 1..depth (conv pairs), decoder depth..1 (upsample
    conv plus two fusion convs after skip concatenation), then the 1x1
    two-channel head.
    """
    shapes = []
    prev = 1
    for i in range(1, config.depth + 1):
        c = config.channels(i)
        shapes.append((f"enc{i}.conv1.w", (c, prev, 3, 3)))
        shapes.append((f"enc{i}.conv1.b", (c,)))
        shapes.append((f"enc{i}.conv2.w", (c, c, 3, 3)))
        shapes.append((f"enc{i}.conv2.b", (c,)))
        prev = c
    for i in range(config.depth, 0, -1):
        c = config.channels(i)
        up_in = config.channels(config.depth) if i == config.depth else config.channels(i + 1)
        shapes.append((f"dec{i}.up.w", (c, up_in, 3, 3)))
        shapes.append((f"dec{i}.up.b", (c,)))
        shapes.append((f"dec{i}.fuse1.w", (c, 2 * c, 3, 3)))
        shapes.append((f"dec{i}.fuse1.b", (c,)))
        shapes.append((f"dec{i}.fuse2.w", (c, c, 3, 3)))
        shapes.append((f"dec{i}.fuse2.b", (c,)))
    shapes.append(("head.w", (2, config.base_channels, 1, 1)))
    shapes.append(("head.b", (2,)))
    return tuple(shapes)


def param_count(config: NetConfig) -> int:
    return sum(int(np.prod(s)) for _, s in param_shapes(config))


@dataclass(frozen=True)
class StudentParams:
    """All weights as one flat float64 vector in declaration order."""

    config: NetConfig
    flat: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.flat, dtype=np.float64)
        expected = param_count(self.config)
        if arr.ndim != 1 or arr.size != expected:
            raise DimensionError(f"expected {expected} parameters, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, "flat", arr)

    def views(self) -> dict:
        """name -> array view into the flat vector (shared memory)."""
        out = {}
        offset = 0
        for name, shape in param_shapes(self.config):
            size = int(np.prod(shape))
            out[name] = self.flat[offset:offset + size].reshape(shape)
            offset += size
        return out


@dataclass(frozen=True)
class TrainConfig:
    """SGD-with-momentum settings; batch is fixed at one image per step."""

    learning_rate: float = 1e-2
    momentum: float = 0.9
    iterations: int = 2000
    batch: int = 1
    seed: int = 0
    skip_empty: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.learning_rate) and self.learning_rate >= 0.0):
            raise ValueError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0,1), got {self.momentum}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.batch != 1:
            raise ValueError("batch is fixed at 1")


@dataclass(frozen=True)
class Prediction:
    """Per-pixel cyst probability from the softmax head."""

    cyst_prob: np.ndarray  # float64, (height, width)

    def __post_init__(self):
        arr = np.asarray(self.cyst_prob, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionError(f"cyst_prob must be 2-D, got {arr.shape}")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("probabilities must lie in [0,1]")
        object.__setattr__(self, "cyst_prob", arr)

    @property
    def height(self) -> int:
        return self.cyst_prob.shape[0]

    @property
    def width(self) -> int:
        return self.cyst_prob.shape[1]


def init_params(config: NetConfig) -> StudentParams:
    """He fan-in normal weights, zero biases, drawn in declaration order."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    chunks = []
    for name, shape in param_shapes(config):
        size = int(np.prod(shape))
        if name.endswith(".b"):
            chunks.append(np.zeros(size))
        else:
            fan_in = int(np.prod(shape[1:]))
            std = np.sqrt(2.0 / fan_in)
            chunks.append(rng.normal(0.0, std, size))
    return StudentParams(config=config, flat=np.concatenate(chunks))


# ---------------------------------------------------------------- layers --

def _conv_forward(x, w, b):
    """Same-size convolution of x (C,H,W) with w (O,C,k,k); returns (out, cols)."""
    o, c, kh, kw = w.shape
    h, ww = x.shape[1], x.shape[2]
    pad = kh // 2
    if pad:
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (C, H, W, kh, kw)
    cols = win.transpose(1, 2, 0, 3, 4).reshape(h * ww, c * kh * kw)
    out = cols @ w.reshape(o, -1).T + b
    return out.reshape(h, ww, o).transpose(2, 0, 1), cols


def _conv_backward(dout, cols, w, x_shape):
    """Gradients of _conv_forward; returns (dx, dw, db)."""
    o, c, kh, kw = w.shape
    h, ww = x_shape[1], x_shape[2]
    dflat = dout.transpose(1, 2, 0).reshape(h * ww, o)
    dw = (dflat.T @ cols).reshape(w.shape)
    db = dflat.sum(axis=0)
    dcols = (dflat @ w.reshape(o, -1)).reshape(h, ww, c, kh, kw)
    pad = kh // 2
    dxp = np.zeros((c, h + 2 * pad, ww + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + h, j:j + ww] += dcols[:, :, :, i, j].transpose(2, 0, 1)
    if pad:
        return dxp[:, pad:-pad, pad:-pad], dw, db
    return dxp, dw, db


def _relu_forward(x):
    mask = x > 0.0
    return x * mask, mask


def _pool_forward(x):
    """2x2 stride-2 max pooling; ties route to the first window position."""
    c, h, w = x.shape
    xr = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    idx = xr.argmax(axis=3)
    out = np.take_along_axis(xr, idx[:, :, :, None], axis=3)[:, :, :, 0]
    return out, idx


def _pool_backward(dout, idx, x_shape):
    c, h, w = x_shape
    dxr = np.zeros((c, h // 2, w // 2, 4))
    np.put_along_axis(dxr, idx[:, :, :, None], dout[:, :, :, None], axis=3)
    return dxr.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w)


def _upsample_forward(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def _upsample_backward(dout):
    c, h, w = dout.shape
    return dout.reshape(c, h // 2, 2, w // 2, 2).sum(axis=(2, 4))


# ----------------------------------------------------------------- model --

def _as_input(image, config: NetConfig) -> np.ndarray:
    pixels = image.pixels if isinstance(image, Image) else np.asarray(image, dtype=np.float64)
    if pixels.ndim != 2:
        raise DimensionError(f"image must be 2-D, got shape {pixels.shape}")
    h, w = pixels.shape
    step = 2 ** config.depth
    if h % step or w % step:
        raise DimensionError(f"{w}x{h} input not divisible by 2^depth = {step}")
    return pixels[None, :, :]


def _forward_cached(params: StudentParams, x):
    """Forward pass keeping every intermediate needed by the backward pass."""
    p = params.views()
    depth = params.config.depth
    cache = {"x_shapes": {}, "cols": {}, "relu": {}, "pool": {}, "skip_ch": {}}
    skips = []
    h = x
    for i in range(1, depth + 1):
        for conv in ("conv1", "conv2"):
            name = f"enc{i}.{conv}"
            cache["x_shapes"][name] = h.shape
            h, cols = _conv_forward(h, p[name + ".w"], p[name + ".b"])
            cache["cols"][name] = cols
            h, mask = _relu_forward(h)
            cache["relu"][name] = mask
        skips.append(h)
        cache["pool"][i] = (h.shape, None)
        h, idx = _pool_forward(h)
        cache["pool"][i] = (skips[-1].shape, idx)
    for i in range(depth, 0, -1):
        h = _upsample_forward(h)
        name = f"dec{i}.up"
        cache["x_shapes"][name] = h.shape
        h, cols = _conv_forward(h, p[name + ".w"], p[name + ".b"])
        cache["cols"][name] = cols
        skip = skips[i - 1]
        cache["skip_ch"][i] = h.shape[0]
        h = np.concatenate([h, skip], axis=0)
        for conv in ("fuse1", "fuse2"):
            name = f"dec{i}.{conv}"
            cache["x_shapes"][name] = h.shape
            h, cols = _conv_forward(h, p[name + ".w"], p[name + ".b"])
            cache["cols"][name] = cols
            h, mask = _relu_forward(h)
            cache["relu"][name] = mask
    cache["x_shapes"]["head"] = h.shape
    logits, cols = _conv_forward(h, p["head.w"], p["head.b"])
    cache["cols"]["head"] = cols
    return logits, cache


def forward(params: StudentParams, image) -> np.ndarray:
    """Logits, shape (2, height, width); channel 0 Tissue, channel 1 Cyst."""
    x = _as_input(image, params.config)
    logits, _ = _forward_cached(params, x)
    return logits


def _backward(params: StudentParams, cache, dlogits) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. the flat parameter vector."""
    p = params.views()
    depth = params.config.depth
    grads = {}

    dh, grads["head.w"], grads["head.b"] = _conv_backward(
        dlogits, cache["cols"]["head"], p["head.w"], cache["x_shapes"]["head"])
    dskips = {}
    for i in range(1, depth + 1):
        for conv in ("fuse2", "fuse1"):
            name = f"dec{i}.{conv}"
            dh = dh * cache["relu"][name]
            dh, grads[name + ".w"], grads[name + ".b"] = _conv_backward(
                dh, cache["cols"][name], p[name + ".w"], cache["x_shapes"][name])
        up_ch = cache["skip_ch"][i]
        dskips[i] = dh[up_ch:]
        dh = dh[:up_ch]
        name = f"dec{i}.up"
        dh, grads[name + ".w"], grads[name + ".b"] = _conv_backward(
            dh, cache["cols"][name], p[name + ".w"], cache["x_shapes"][name])
        dh = _upsample_backward(dh)
    for i in range(depth, 0, -1):
        pre_shape, idx = cache["pool"][i]
        dh = _pool_backward(dh, idx, pre_shape)
        dh = dh + dskips[i]
        for conv in ("conv2", "conv1"):
            name = f"enc{i}.{conv}"
            dh = dh * cache["relu"][name]
            dh, grads[name + ".w"], grads[name + ".b"] = _conv_backward(
                dh, cache["cols"][name], p[name + ".w"], cache["x_shapes"][name])
    return np.concatenate([grads[n].ravel() for n, _ in param_shapes(params.config)])


def balanced_loss(logits, labels):
    """Class-balanced softmax cross-entropy over Tissue/Cyst pixels.

    Cyst pixels carry weight beta = N_tissue/(N_cyst + N_tissue), Tissue
    pixels 1 - beta, and the weighted sum is divided by the included pixel
    count. Returns (loss, dloss/dlogits); returns None when no pixel is
    included (the caller should skip the sample).
    """
    lab = labels.labels if isinstance(labels, LabelMap) else np.asarray(labels)
    if logits.shape[0] != 2 or logits.shape[1:] != lab.shape:
        raise DimensionError(f"logits {logits.shape} incompatible with labels {lab.shape}")
    tissue = lab == TISSUE
    cyst = lab == CYST
    n_t = int(tissue.sum())
    n_c = int(cyst.sum())
    n_inc = n_t + n_c
    if n_inc == 0:
        return None
    beta = n_t / n_inc
    weights = np.zeros(lab.shape)
    weights[cyst] = beta
    weights[tissue] = 1.0 - beta

    m = logits.max(axis=0, keepdims=True)
    z = logits - m
    logsum = np.log(np.exp(z).sum(axis=0, keepdims=True))
    logp = z - logsum
    target = np.zeros(lab.shape, dtype=np.intp)
    target[cyst] = CH_CYST
    picked = np.take_along_axis(logp, target[None], axis=0)[0]
    loss = float((weights * -picked).sum() / n_inc)

    softmax = np.exp(logp)
    onehot = np.zeros_like(logits)
    np.put_along_axis(onehot, target[None], 1.0, axis=0)
    dlogits = (softmax - onehot) * (weights / n_inc)[None]
    return loss, dlogits


def train(params: StudentParams, manifest: Manifest, labels: dict,
          cfg: TrainConfig = TrainConfig(), trace: list | None = None) -> StudentParams:
    """SGD with momentum over uniformly sampled train images.

    labels maps str(entry.image) to the teacher LabelMap for that image.
    With skip_empty, only images containing at least one Cyst pixel are
    sampled. trace, when given, collects the per-step loss.
    """
    entries = manifest.train
    for e in entries:
        if str(e.image) not in labels:
            raise TrainingSetError(f"no teacher labels for {e.image}")
    data = [(load_image(e.image), labels[str(e.image)]) for e in entries]
    if cfg.skip_empty:
        data = [(img, lab) for img, lab in data if bool((lab.labels == CYST).any())]
    if not data:
        raise TrainingSetError("no eligible training images (all empty of cysts?)")

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    flat = params.flat.copy()
    velocity = np.zeros_like(flat)
    work = StudentParams(config=params.config, flat=flat)
    for _ in range(cfg.iterations):
        img, lab = data[rng.integers(len(data))]
        x = _as_input(img, params.config)
        logits, cache = _forward_cached(work, x)
        res = balanced_loss(logits, lab)
        if res is None:
            continue
        loss, dlogits = res
        if trace is not None:
            trace.append(loss)
        grad = _backward(work, cache, dlogits)
        velocity = cfg.momentum * velocity - cfg.learning_rate * grad
        flat += velocity
    return StudentParams(config=params.config, flat=flat.copy())


def predict(params: StudentParams, image, mask: LungMask) -> LabelMap:
    """Argmax decode inside the lung mask (ties to Tissue); Other outside."""
    logits = forward(params, image)
    inside = mask.inside if isinstance(mask, LungMask) else np.asarray(mask, bool)
    if inside.shape != logits.shape[1:]:
        raise DimensionError(f"mask {inside.shape} does not match image {logits.shape[1:]}")
    out = np.full(inside.shape, OTHER, dtype=np.uint8)
    cyst = logits[CH_CYST] > logits[CH_TISSUE]
    out[inside & cyst] = CYST
    out[inside & ~cyst] = TISSUE
    return LabelMap(out)


def predict_proba(params: StudentParams, image) -> Prediction:
    """Softmax cyst probability at every pixel."""
    logits = forward(params, image)
    m = logits.max(axis=0, keepdims=True)
    e = np.exp(logits - m)
    return Prediction(cyst_prob=e[CH_CYST] / e.sum(axis=0))


# ------------------------------------------------------------ checkpoint --

_HEADER = struct.Struct("<8sIIIqQ")


def save_params(params: StudentParams, path) -> None:
    """Magic + version + architecture header, then the flat float64 payload."""
    cfg = params.config
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, cfg.depth,
                          cfg.base_channels, cfg.seed, params.flat.size)
    Path(path).write_bytes(header + params.flat.astype("<f8").tobytes())


def load_params(path) -> StudentParams:
    """Exact inverse of save_params; malformed files raise CheckpointError."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, depth, base, seed, count = _HEADER.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    try:
        config = NetConfig(depth=depth, base_channels=base, seed=seed)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    expected = param_count(config)
    if count != expected:
        raise CheckpointError(f"{path}: header claims {count} params, architecture needs {expected}")
    payload = blob[_HEADER.size:]
    if len(payload) != count * 8:
        raise CheckpointError(f"{path}: expected {count * 8} payload bytes, got {len(payload)}")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return StudentParams(config=config, flat=flat)
