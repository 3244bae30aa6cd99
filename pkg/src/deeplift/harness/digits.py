"""Desk-scale digit images in MNIST layout.

No MNIST download is assumed. The 8x8 handwritten digits bundled with
scikit-learn are upscaled 3x (nearest neighbour), padded to 28x28 and written
as IDX files so the erasure pipeline runs on the MNIST code path.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .idx import dump_idx

FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def digit_images(seed: int = 0, n_test: int = 400):
    """Return ``(train_x, train_y, test_x, test_y)`` as uint8 (N, 28, 28) images."""
    from sklearn.datasets import load_digits

    digits = load_digits()
    small = np.clip(np.round(digits.images * (255.0 / 16.0)), 0, 255)
    big = np.kron(small, np.ones((1, 3, 3)))
    images = np.pad(big, ((0, 0), (2, 2), (2, 2))).astype(np.uint8)
    labels = digits.target.astype(np.uint8)
    order = np.random.default_rng(seed).permutation(len(images))
    test, train = order[:n_test], order[n_test:]
    return images[train], labels[train], images[test], labels[test]


def write_digit_idx(out_dir, seed: int = 0, n_test: int = 400) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arrays = dict(zip(("train_images", "train_labels", "test_images", "test_labels"),
                      digit_images(seed, n_test)))
    paths = {}
    for key, name in FILES.items():
        path = out / name
        path.write_bytes(dump_idx(arrays[key], "u8"))
        paths[key] = path
    return paths
