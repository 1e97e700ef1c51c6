"""Image preprocessing: min-max normalization, CLAHE, resizing, channel replication.

All operations are pure functions over numpy arrays. Grayscale images flow
through the pipeline as float32 with intensities in [0, 1]; raw pixel values
(0-255 as decoded) only exist at the loading boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from PIL import Image

if TYPE_CHECKING:
    from .dataset import ImageSample

CLAHE_BINS = 256


@dataclass(frozen=True)
class PreprocessConfig:
    """Parameters of the model-input pipeline.

    ``target_size`` defaults to 224; Inception_V3 runs at 299. Smaller sizes
    are accepted for desk-scale experiments.
    """

    target_size: int = 224
    clahe_clip_limit: float = 2.0
    clahe_tile_grid: tuple[int, int] = (8, 8)
    channels_out: int = 3

    def __post_init__(self):
        if self.target_size < 8:
            raise ValueError(f"target_size must be >= 8, got {self.target_size}")
        if self.clahe_clip_limit <= 0:
            raise ValueError("clahe_clip_limit must be positive")
        gh, gw = self.clahe_tile_grid
        if gh < 1 or gw < 1:
            raise ValueError("clahe_tile_grid dimensions must be >= 1")
        if self.channels_out not in (1, 3):
            raise ValueError("channels_out must be 1 or 3")


def load_grayscale(path: str | Path) -> np.ndarray:
    """Decode an image file to a 2-D float32 grayscale array with values 0-255."""
    with Image.open(path) as img:
        gray = img.convert("L")
        return np.asarray(gray, dtype=np.float32)


def min_max_normalize(img: np.ndarray) -> np.ndarray:
    """Rescale intensities linearly so the minimum maps to 0 and the maximum to 1.

    A constant image maps to all zeros by convention.
    """
    arr = np.asarray(img)
    if arr.size == 0:
        raise ValueError("cannot normalize an empty image")
    lo = float(arr.min())
    hi = float(arr.max())
    if hi == lo:
        return np.zeros_like(arr, dtype=np.float32)
    out = (arr.astype(np.float64) - lo) / (hi - lo)
    return out.astype(np.float32)


def _clipped_histogram(values: np.ndarray, clip_limit: float, nbins: int) -> np.ndarray:
    """Histogram with bins clipped at ``clip_limit`` times the uniform level,
    excess redistributed evenly. Total mass is preserved."""
    hist = np.bincount(values, minlength=nbins).astype(np.float64)
    npix = values.size
    threshold = max(clip_limit * npix / nbins, 1.0)
    excess = np.maximum(hist - threshold, 0.0).sum()
    hist = np.minimum(hist, threshold)
    hist += excess / nbins
    return hist


def _equalization_lut(hist: np.ndarray) -> np.ndarray:
    """Map bin index -> equalized intensity in (0, 1] via the normalized CDF."""
    cdf = np.cumsum(hist)
    return (cdf / cdf[-1]).astype(np.float64)


def clahe(
    img: np.ndarray,
    clip_limit: float = 2.0,
    tile_grid: tuple[int, int] = (8, 8),
    nbins: int = CLAHE_BINS,
) -> np.ndarray:
    """Contrast limited adaptive histogram equalization on a unit-interval image.

    The image is partitioned into ``tile_grid`` tiles. Each tile's histogram
    (``nbins`` bins over [0, 1]) is clipped at ``clip_limit`` times the uniform
    bin level, the excess is redistributed evenly, and the tile's equalization
    mapping is its normalized CDF. Pixel outputs interpolate bilinearly between
    the mappings of the surrounding tiles. Constant images are returned
    unchanged; images smaller than the tile grid fall back to a single tile.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("clahe expects a non-empty 2-D image")
    if arr.min() < -1e-9 or arr.max() > 1.0 + 1e-9:
        raise ValueError("clahe expects values in [0, 1]")
    arr = np.clip(arr, 0.0, 1.0)
    if arr.max() == arr.min():
        return arr.astype(np.float32)

    h, w = arr.shape
    gh, gw = tile_grid
    if h < gh or w < gw:
        gh = gw = 1

    bins = np.minimum((arr * nbins).astype(np.int64), nbins - 1)

    row_chunks = np.array_split(np.arange(h), gh)
    col_chunks = np.array_split(np.arange(w), gw)
    luts = np.empty((gh, gw, nbins), dtype=np.float64)
    for i, rows in enumerate(row_chunks):
        for j, cols in enumerate(col_chunks):
            tile = bins[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
            luts[i, j] = _equalization_lut(
                _clipped_histogram(tile.ravel(), clip_limit, nbins)
            )

    if gh == 1 and gw == 1:
        out = luts[0, 0][bins]
        return np.clip(out, 0.0, 1.0).astype(np.float32)

    centers_r = np.array([(rows[0] + rows[-1]) / 2.0 for rows in row_chunks])
    centers_c = np.array([(cols[0] + cols[-1]) / 2.0 for cols in col_chunks])
    i0, i1, wr = _interp_indices(np.arange(h, dtype=np.float64), centers_r)
    j0, j1, wc = _interp_indices(np.arange(w, dtype=np.float64), centers_c)

    wr = wr[:, None]
    wc = wc[None, :]
    i0 = i0[:, None]
    i1 = i1[:, None]
    j0 = j0[None, :]
    j1 = j1[None, :]
    out = (
        (1 - wr) * (1 - wc) * luts[i0, j0, bins]
        + (1 - wr) * wc * luts[i0, j1, bins]
        + wr * (1 - wc) * luts[i1, j0, bins]
        + wr * wc * luts[i1, j1, bins]
    )
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _interp_indices(coords: np.ndarray, centers: np.ndarray):
    """Neighboring tile indices and interpolation weight for each coordinate,
    clamped at the borders."""
    hi = np.searchsorted(centers, coords)
    lo = hi - 1
    lo = np.clip(lo, 0, len(centers) - 1)
    hi = np.clip(hi, 0, len(centers) - 1)
    span = centers[hi] - centers[lo]
    with np.errstate(invalid="ignore", divide="ignore"):
        weight = np.where(span > 0, (coords - centers[lo]) / np.where(span > 0, span, 1.0), 0.0)
    return lo, hi, np.clip(weight, 0.0, 1.0)


def resize_bilinear(img: np.ndarray, size: int) -> np.ndarray:
    """Resize a 2-D float image to ``size`` x ``size`` with bilinear interpolation."""
    arr = np.asarray(img, dtype=np.float32)
    if arr.shape == (size, size):
        return arr.copy()
    pil = Image.fromarray(arr, mode="F")
    resized = pil.resize((size, size), Image.Resampling.BILINEAR)
    return np.asarray(resized, dtype=np.float32)


def preprocess_array(pixels: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    """Raw grayscale pixels -> normalized, CLAHE-enhanced, resized 2-D tensor."""
    normed = min_max_normalize(pixels)
    enhanced = clahe(normed, cfg.clahe_clip_limit, cfg.clahe_tile_grid)
    resized = resize_bilinear(enhanced, cfg.target_size)
    return np.clip(resized, 0.0, 1.0)


def replicate_channels(img: np.ndarray, channels: int) -> np.ndarray:
    """Stack a 2-D grayscale image into an (H, W, channels) tensor."""
    return np.repeat(np.asarray(img, dtype=np.float32)[:, :, None], channels, axis=2)


def to_model_input(sample: "ImageSample", cfg: PreprocessConfig) -> np.ndarray:
    """Full deterministic pipeline from an image sample to a model-ready tensor
    of shape (target_size, target_size, channels_out) with values in [0, 1]."""
    gray = preprocess_array(sample.load_pixels(), cfg)
    return replicate_channels(gray, cfg.channels_out)
