"""Stochastic geometric augmentation: uniform parameter draws and composed
affine warps (rotation, shear, zoom, shift, horizontal flip) with nearest-edge
fill.

Conventions, pinned by tests:
  * rotation is measured in degrees, counterclockwise in the displayed image;
  * shear is a horizontal shear by an angle in radians;
  * zoom_factor > 1 magnifies the image content about its center;
  * shifts are fractions of the image dimension, positive moves content
    down/right;
  * the composed warp is rotate(shear(zoom(shift(image)))), then the optional
    horizontal flip is applied as an exact column reversal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterator

import numpy as np
from scipy import ndimage

from .preprocess import PreprocessConfig, preprocess_array, replicate_channels

if TYPE_CHECKING:
    from .dataset import ImageSample, LabeledDataset


@dataclass(frozen=True)
class AugmentationConfig:
    """Random-transform parameter ranges. Field names mirror the config keys."""

    rescale: float = 1.0
    rotation_range: float = 90.0
    width_shift_range: float = 0.2
    height_shift_range: float = 0.2
    shear_range: float = 0.2
    zoom_range: float = 0.2
    horizontal_flip: bool = True
    fill_mode: str = "nearest"

    def __post_init__(self):
        for name in ("rotation_range", "shear_range", "zoom_range"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("width_shift_range", "height_shift_range"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValueError(f"{name} must be in [0, 1)")
        if self.fill_mode != "nearest":
            raise ValueError("only fill_mode='nearest' is supported")

    @classmethod
    def identity(cls) -> "AugmentationConfig":
        return cls(
            rescale=1.0,
            rotation_range=0.0,
            width_shift_range=0.0,
            height_shift_range=0.0,
            shear_range=0.0,
            zoom_range=0.0,
            horizontal_flip=False,
        )

    def to_dict(self) -> dict:
        return {
            "rescale": self.rescale,
            "rotation_range": self.rotation_range,
            "width_shift_range": self.width_shift_range,
            "height_shift_range": self.height_shift_range,
            "shear_range": self.shear_range,
            "zoom_range": self.zoom_range,
            "horizontal_flip": self.horizontal_flip,
            "fill_mode": self.fill_mode,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AugmentationConfig":
        return cls(**data)


@dataclass(frozen=True)
class TransformDraw:
    """One concrete sampled transform."""

    rotation_deg: float = 0.0
    dx_frac: float = 0.0
    dy_frac: float = 0.0
    shear_rad: float = 0.0
    zoom_factor: float = 1.0
    flip: bool = False

    @property
    def is_identity(self) -> bool:
        return (
            self.rotation_deg == 0.0
            and self.dx_frac == 0.0
            and self.dy_frac == 0.0
            and self.shear_rad == 0.0
            and self.zoom_factor == 1.0
            and not self.flip
        )

    @classmethod
    def identity(cls) -> "TransformDraw":
        return cls()

    def to_dict(self) -> dict:
        return {
            "rotation_deg": self.rotation_deg,
            "dx_frac": self.dx_frac,
            "dy_frac": self.dy_frac,
            "shear_rad": self.shear_rad,
            "zoom_factor": self.zoom_factor,
            "flip": self.flip,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TransformDraw":
        return cls(**data)


def sample_transform(cfg: AugmentationConfig, rng: np.random.Generator) -> TransformDraw:
    """Draw one transform, each parameter uniform over its symmetric range.

    The draw order (rotation, dx, dy, shear, zoom, flip) is fixed, so a given
    generator state always yields the same draw.
    """
    rotation = float(rng.uniform(-cfg.rotation_range, cfg.rotation_range))
    dx = float(rng.uniform(-cfg.width_shift_range, cfg.width_shift_range))
    dy = float(rng.uniform(-cfg.height_shift_range, cfg.height_shift_range))
    shear = float(rng.uniform(-cfg.shear_range, cfg.shear_range))
    zoom = float(rng.uniform(1.0 - cfg.zoom_range, 1.0 + cfg.zoom_range))
    flip = bool(rng.random() < 0.5) if cfg.horizontal_flip else False
    return TransformDraw(
        rotation_deg=rotation,
        dx_frac=dx,
        dy_frac=dy,
        shear_rad=shear,
        zoom_factor=zoom,
        flip=flip,
    )


def _centered(matrix: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Lift a 2x2 linear map (plus optional translation) to act about ``center``."""
    out = np.eye(3)
    out[:2, :2] = matrix[:2, :2]
    out[:2, 2] = matrix[:2, 2] if matrix.shape[1] == 3 else 0.0
    shift_in = np.eye(3)
    shift_in[:2, 2] = -center
    shift_out = np.eye(3)
    shift_out[:2, 2] = center
    return shift_out @ out @ shift_in


def _forward_matrix(t: TransformDraw, shape: tuple[int, int]) -> np.ndarray:
    """Homogeneous (row, col) matrix of rotate(shear(zoom(shift(.)))) about the
    image center."""
    h, w = shape
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])

    theta = math.radians(t.rotation_deg)
    rot = np.array(
        [
            [math.cos(theta), -math.sin(theta)],
            [math.sin(theta), math.cos(theta)],
        ]
    )
    shear = np.array([[1.0, 0.0], [math.tan(t.shear_rad), 1.0]])
    zoom = np.array([[t.zoom_factor, 0.0], [0.0, t.zoom_factor]])
    shift = np.array(
        [
            [1.0, 0.0, t.dy_frac * h],
            [0.0, 1.0, t.dx_frac * w],
        ]
    )
    return (
        _centered(rot, center)
        @ _centered(shear, center)
        @ _centered(zoom, center)
        @ _centered(shift, center)
    )


def apply_transform(img: np.ndarray, t: TransformDraw, fill_mode: str = "nearest") -> np.ndarray:
    """Warp a 2-D image by one composed affine transform plus optional flip.

    Out-of-bounds samples replicate the nearest edge pixel; interpolation is
    bilinear, so no intensity outside the source range is ever produced. An
    identity draw returns a bitwise-equal copy.
    """
    if fill_mode != "nearest":
        raise ValueError("only fill_mode='nearest' is supported")
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("apply_transform expects a non-empty 2-D image")
    if t.is_identity:
        return arr.copy()

    out = arr
    needs_warp = not (
        t.rotation_deg == 0.0
        and t.dx_frac == 0.0
        and t.dy_frac == 0.0
        and t.shear_rad == 0.0
        and t.zoom_factor == 1.0
    )
    if needs_warp:
        forward = _forward_matrix(t, arr.shape)
        inverse = np.linalg.inv(forward)
        out = ndimage.affine_transform(
            arr.astype(np.float64),
            inverse[:2, :2],
            offset=inverse[:2, 2],
            order=1,
            mode="nearest",
        ).astype(arr.dtype, copy=False)
    if t.flip:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


class _TensorCache:
    """Bounded FIFO cache of preprocessed grayscale tensors keyed by sample."""

    def __init__(self, max_items: int = 4096):
        self.max_items = max_items
        self._store: dict = {}

    def get(self, sample, cfg: PreprocessConfig) -> np.ndarray:
        cached = self._store.get(sample)
        if cached is None:
            cached = preprocess_array(sample.load_pixels(), cfg)
            if len(self._store) >= self.max_items:
                self._store.pop(next(iter(self._store)))
            self._store[sample] = cached
        return cached


def _label_vector(samples) -> np.ndarray:
    return np.array([s.label.index for s in samples], dtype=np.float32)


def augment_stream(
    ds: "LabeledDataset",
    cfg: AugmentationConfig,
    batch_size: int,
    rng: np.random.Generator,
    preprocess_cfg: PreprocessConfig | None = None,
    cache_items: int = 4096,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Endless iterator of augmented (images, labels) batches.

    Samples are preprocessed once (cached), randomly transformed per draw, and
    batched to exactly ``batch_size``; the sample order reshuffles every pass
    over the dataset, with leftovers rolling into the next pass. Labels encode
    Normal=0, Pneumonia=1.
    """
    if len(ds.samples) == 0:
        raise ValueError("cannot stream batches from an empty dataset")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    pre = preprocess_cfg or PreprocessConfig()
    cache = _TensorCache(cache_items)
    samples = ds.samples
    n = len(samples)
    augmenting = (
        cfg.rotation_range != 0
        or cfg.width_shift_range != 0
        or cfg.height_shift_range != 0
        or cfg.shear_range != 0
        or cfg.zoom_range != 0
        or cfg.horizontal_flip
    )

    pending: list[int] = []
    while True:
        pending.extend(rng.permutation(n).tolist())
        while len(pending) >= batch_size:
            chunk, pending = pending[:batch_size], pending[batch_size:]
            images = []
            for idx in chunk:
                gray = cache.get(samples[idx], pre)
                if augmenting:
                    gray = apply_transform(gray, sample_transform(cfg, rng))
                if cfg.rescale != 1.0:
                    gray = gray * cfg.rescale
                images.append(replicate_channels(gray, pre.channels_out))
            yield (
                np.stack(images).astype(np.float32),
                _label_vector([samples[i] for i in chunk]),
            )


def preprocessed_batches(
    ds: "LabeledDataset",
    batch_size: int,
    preprocess_cfg: PreprocessConfig | None = None,
    steps: int | None = None,
    rescale: float = 1.0,
    cache: _TensorCache | None = None,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Deterministic unaugmented batches in canonical dataset order.

    With ``steps=None`` yields one full pass (last batch may be short);
    otherwise yields exactly ``steps`` batches, cycling over the dataset.
    Used for validation and prediction, so repeated calls produce identical
    sequences.
    """
    if len(ds.samples) == 0:
        raise ValueError("cannot batch an empty dataset")
    pre = preprocess_cfg or PreprocessConfig()
    local_cache = cache or _TensorCache()
    samples = ds.samples
    n = len(samples)

    def tensor(i: int) -> np.ndarray:
        gray = local_cache.get(samples[i], pre)
        if rescale != 1.0:
            gray = gray * rescale
        return replicate_channels(gray, pre.channels_out)

    if steps is None:
        for start in range(0, n, batch_size):
            chunk = range(start, min(start + batch_size, n))
            yield (
                np.stack([tensor(i) for i in chunk]).astype(np.float32),
                _label_vector([samples[i] for i in chunk]),
            )
    else:
        cursor = 0
        for _ in range(steps):
            chunk = [(cursor + k) % n for k in range(batch_size)]
            cursor = (cursor + batch_size) % n
            yield (
                np.stack([tensor(i) for i in chunk]).astype(np.float32),
                _label_vector([samples[i] for i in chunk]),
            )
