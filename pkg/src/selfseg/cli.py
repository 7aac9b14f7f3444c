"""Command-line front end: phantom-gen, selftrain, predict, eval.

Exit codes: 0 success, 1 runtime/I/O failure, 2 usage or config problem,
3 training divergence. All commands are deterministic given their flags
and seeds; SELFSEG_SEED supplies any seed not set explicitly.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

from .dataset import load_image, load_labelmap, load_lungmask, load_manifest, save_labelmap
from .errors import (CheckpointError, ConfigError, DimensionError, DivergenceError,
                     ManifestError, SelfSegError)
from .graphcut import PAIRWISE_MODES, EnergyParams
from .metrics import evaluate, write_report
from .phantom import PRESETS, generate_set, preset_config
from .selftrain import SelfTrainConfig, run
from .student import NetConfig, TrainConfig, load_params, predict

_INT_KEYS = ("max_levels", "window_radius", "cluster_seed", "iterations",
             "train_seed", "depth", "base_channels", "net_seed")
_FLOAT_KEYS = ("similarity_threshold", "lr_decay", "learning_rate", "momentum", "delta")
_BOOL_KEYS = ("skip_empty",)
_STR_KEYS = ("pairwise_mode",)
_ALL_KEYS = _INT_KEYS + _FLOAT_KEYS + _BOOL_KEYS + _STR_KEYS

_SEED_KEYS = ("cluster_seed", "train_seed", "net_seed")


def load_config_file(path) -> dict:
    """Parse a `key = value` file with # comments into typed values."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = _coerce(key, value, f"{path}:{lineno}")
    return out


def _coerce(key: str, value: str, where: str):
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
    except ValueError:
        raise ConfigError(f"{where}: {key} needs a number, got {value!r}") from None
    if key in _BOOL_KEYS:
        low = value.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{where}: {key} needs a boolean, got {value!r}")
    if key in _STR_KEYS:
        return value
    raise ConfigError(f"{where}: unknown config key {key!r}")


def build_selftrain_config(values: dict) -> SelfTrainConfig:
    """Assemble nested stage configs from a flat, validated key set."""
    bad = set(values) - set(_ALL_KEYS)
    if bad:
        raise ConfigError(f"unknown config keys: {sorted(bad)}")
    env_seed = os.environ.get("SELFSEG_SEED")
    if env_seed is not None:
        try:
            fallback = int(env_seed)
        except ValueError:
            raise ConfigError(f"SELFSEG_SEED must be an integer, got {env_seed!r}") from None
        for key in _SEED_KEYS:
            values.setdefault(key, fallback)
    try:
        train_cfg = TrainConfig(
            learning_rate=values.get("learning_rate", 1e-2),
            momentum=values.get("momentum", 0.9),
            iterations=values.get("iterations", 2000),
            seed=values.get("train_seed", 0),
            skip_empty=values.get("skip_empty", True),
        )
        net_cfg = NetConfig(
            depth=values.get("depth", 2),
            base_channels=values.get("base_channels", 8),
            seed=values.get("net_seed", 0),
        )
        energy = EnergyParams(
            delta=values.get("delta", EnergyParams().delta),
            pairwise_mode=values.get("pairwise_mode", "potts_labels"),
        )
        return SelfTrainConfig(
            max_levels=values.get("max_levels", 3),
            similarity_threshold=values.get("similarity_threshold", 0.99),
            level1_train=train_cfg,
            lr_decay=values.get("lr_decay", 10.0),
            window_radius=values.get("window_radius", 2),
            cluster_seed=values.get("cluster_seed", 0),
            energy=energy,
            net=net_cfg,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_phantom_gen(args) -> int:
    seed = args.seed
    if seed is None:
        seed = int(os.environ.get("SELFSEG_SEED", "0"))
    try:
        config = preset_config(args.preset, seed=seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    manifest = generate_set(config, args.train, args.test, Path(args.out))
    print(f"wrote {len(manifest.entries)} images under {args.out}")
    return 0


def cmd_selftrain(args) -> int:
    manifest_path = Path(args.manifest)
    if not manifest_path.is_file():
        print(f"error: manifest not found: {manifest_path}", file=sys.stderr)
        return 2
    values = load_config_file(args.config) if args.config else {}
    if args.max_levels is not None:
        values["max_levels"] = args.max_levels
    cfg = build_selftrain_config(values)
    manifest = load_manifest(manifest_path)
    _, reports = run(manifest, cfg, out_dir=Path(args.out), jobs=args.jobs)
    last = reports[-1]
    print(f"finished at level {last.level}: similarity {last.similarity:.4f}")
    return 0


def cmd_predict(args) -> int:
    params = load_params(args.params)
    image = load_image(args.image)
    mask = load_lungmask(args.mask)
    started = time.perf_counter()
    labels = predict(params, image, mask)
    elapsed = time.perf_counter() - started
    save_labelmap(labels, args.out)
    print(f"{elapsed:.3f} sec/slice")
    return 0


def cmd_eval(args) -> int:
    manifest_path = Path(args.manifest)
    if not manifest_path.is_file():
        print(f"error: manifest not found: {manifest_path}", file=sys.stderr)
        return 2
    manifest = load_manifest(manifest_path)
    pred_dir = Path(args.pred_dir)
    expected = [e for e in manifest.entries if e.gt is not None]
    absent = [e.image.name for e in expected
              if not (pred_dir / (e.image.stem + ".pgm")).is_file()]
    if absent:
        print("error: missing predictions: " + ", ".join(absent), file=sys.stderr)
        return 1
    preds = {str(e.image): load_labelmap(pred_dir / (e.image.stem + ".pgm"))
             for e in expected}
    report = evaluate(manifest, preds)
    write_report(report, args.out)
    print(f"wrote {args.out} ({len(report.rows)} rows)")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selfseg",
        description="Self-learning cyst segmentation pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom-gen", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--train", required=True, type=int, help="number of training images")
    p.add_argument("--test", required=True, type=int, help="number of test images")
    p.add_argument("--preset", default="moderate", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_phantom_gen)

    p = sub.add_parser("selftrain", help="run the recursive teacher-student loop")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--max-levels", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1, help="per-image parallelism")
    p.set_defaults(func=cmd_selftrain)

    p = sub.add_parser("predict", help="segment one image with a checkpoint")
    p.add_argument("--params", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ManifestError, CheckpointError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SelfSegError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
