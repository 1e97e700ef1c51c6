"""Shared fixtures: synthetic chest-image trees and small configs.

Synthetic images carry a class signal that survives per-image normalization
and histogram equalization: Normal images contain a small bright disc,
Pneumonia images a large one, so the bright-area fraction separates the
classes regardless of absolute intensity.
"""

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from xraybench.preprocess import PreprocessConfig


def synthetic_image(rng: np.random.Generator, label: str, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    img = rng.normal(40.0, 10.0, (h, w))
    if label.lower() == "normal":
        radius = rng.uniform(0.08, 0.14) * min(h, w)
    else:
        radius = rng.uniform(0.30, 0.38) * min(h, w)
    cy = h / 2 + rng.uniform(-0.08, 0.08) * h
    cx = w / 2 + rng.uniform(-0.08, 0.08) * w
    rr, cc = np.ogrid[:h, :w]
    mask = (rr - cy) ** 2 + (cc - cx) ** 2 <= radius**2
    img[mask] = rng.normal(200.0, 12.0, int(mask.sum()))
    return np.clip(img, 0, 255).astype(np.uint8)


def write_class_tree(
    root: Path,
    n_normal: int,
    n_pneumonia: int,
    seed: int = 0,
    nested: bool = False,
    size_range: tuple[int, int] = (96, 160),
) -> Path:
    """Create a NORMAL/PNEUMONIA image tree; ``nested`` adds train/val/test
    intermediate directories like the public distribution of the dataset."""
    rng = np.random.default_rng(seed)
    groups = ["train", "val", "test"] if nested else [""]
    counts = {"NORMAL": n_normal, "PNEUMONIA": n_pneumonia}
    for class_name, total in counts.items():
        for i in range(total):
            group = groups[i % len(groups)]
            directory = root / group / class_name if group else root / class_name
            directory.mkdir(parents=True, exist_ok=True)
            h = int(rng.integers(size_range[0], size_range[1]))
            w = int(rng.integers(size_range[0], size_range[1]))
            pixels = synthetic_image(rng, class_name, (h, w))
            Image.fromarray(pixels, mode="L").save(directory / f"{class_name.lower()}_{i:04d}.png")
    return root


@pytest.fixture
def tree_factory(tmp_path):
    """Factory writing a synthetic dataset tree beneath a fresh tmp dir."""

    counter = {"n": 0}

    def factory(n_normal: int, n_pneumonia: int, seed: int = 0, nested: bool = False) -> Path:
        counter["n"] += 1
        root = tmp_path / f"tree{counter['n']}"
        return write_class_tree(root, n_normal, n_pneumonia, seed=seed, nested=nested)

    return factory


@pytest.fixture
def small_pre() -> PreprocessConfig:
    """Desk-scale preprocessing: 32px inputs, 4x4 CLAHE tiles."""
    return PreprocessConfig(target_size=32, clahe_tile_grid=(4, 4))
