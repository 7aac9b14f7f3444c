import numpy as np
import pytest

from selfseg.dataset import (
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


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


def write_dataset(out_dir, images, gts=None, masks=None, n_train=None):
    """Write images (+ optional gt/mask labelmaps) and a manifest.

    images: list of float arrays in [0,1]. n_train defaults to all-train.
    Returns the manifest path.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    n_train = len(images) if n_train is None else n_train
    entries = []
    for i, pix in enumerate(images):
        stem = f"img_{i:04d}"
        img_path = out_dir / f"{stem}.pgm"
        save_image(Image(np.asarray(pix, dtype=np.float64)), img_path)
        mask_path = gt_path = None
        if masks is not None and masks[i] is not None:
            mask_path = out_dir / f"{stem}_mask.pgm"
            save_lungmask(LungMask(np.asarray(masks[i], dtype=bool)), mask_path)
        if gts is not None and gts[i] is not None:
            gt_path = out_dir / f"{stem}_gt.pgm"
            save_labelmap(LabelMap(np.asarray(gts[i], dtype=np.uint8)), gt_path)
        split = "train" if i < n_train else "test"
        entries.append(ManifestEntry(split, img_path, mask_path, gt_path))
    manifest_path = out_dir / "manifest.txt"
    save_manifest(Manifest(tuple(entries)), manifest_path)
    return manifest_path
