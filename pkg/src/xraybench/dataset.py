"""Dataset ingestion, stratified splitting, and minority-class oversampling.

The scanner accepts any directory tree whose class membership is encoded by a
NORMAL/ or PNEUMONIA/ ancestor directory (case-insensitive); nested split
folders such as train/test/val are flattened, because the harness performs its
own split.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .augment import AugmentationConfig, TransformDraw, apply_transform, sample_transform
from .errors import ConfigurationError
from .preprocess import load_grayscale

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".jpeg", ".jpg", ".png"}


class Label(enum.Enum):
    NORMAL = "Normal"
    PNEUMONIA = "Pneumonia"

    @property
    def index(self) -> int:
        # encoding used for training targets: Normal=0, Pneumonia=1
        return 0 if self is Label.NORMAL else 1

    @classmethod
    def from_string(cls, text: str) -> "Label":
        for member in cls:
            if member.value.lower() == text.lower():
                return member
        raise ValueError(f"unknown class label {text!r}")


@dataclass(frozen=True)
class ImageSample:
    """One grayscale image with its class label.

    Synthetic samples produced by oversampling reference the source file plus
    a frozen transform; their pixels are realized lazily on load.
    """

    path: Path
    label: Label
    synthetic: bool = False
    transform: TransformDraw | None = None

    def load_pixels(self) -> np.ndarray:
        """Raw grayscale pixels (0-255 float32), with the frozen transform
        applied for synthetic samples."""
        pixels = load_grayscale(self.path)
        if pixels.size == 0:
            raise ValueError(f"empty image at {self.path}")
        if self.transform is not None:
            pixels = apply_transform(pixels, self.transform)
        return pixels

    def to_dict(self) -> dict:
        return {
            "path": str(self.path),
            "label": self.label.value,
            "synthetic": self.synthetic,
            "transform": self.transform.to_dict() if self.transform else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ImageSample":
        transform = data.get("transform")
        return cls(
            path=Path(data["path"]),
            label=Label.from_string(data["label"]),
            synthetic=bool(data.get("synthetic", False)),
            transform=TransformDraw.from_dict(transform) if transform else None,
        )


@dataclass(frozen=True)
class LabeledDataset:
    samples: tuple[ImageSample, ...]

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def class_counts(self) -> dict[Label, int]:
        counts = {label: 0 for label in Label}
        for sample in self.samples:
            counts[sample.label] += 1
        return counts

    def of_class(self, label: Label) -> tuple[ImageSample, ...]:
        return tuple(s for s in self.samples if s.label == label)

    def to_dicts(self) -> list[dict]:
        return [s.to_dict() for s in self.samples]

    @classmethod
    def from_dicts(cls, rows: list[dict]) -> "LabeledDataset":
        return cls(samples=tuple(ImageSample.from_dict(r) for r in rows))


@dataclass(frozen=True)
class DatasetSplits:
    train: LabeledDataset
    validation: LabeledDataset
    split_seed: int
    train_fraction: float


@dataclass(frozen=True)
class ScanSummary:
    root: str
    counts: dict[str, int]
    skipped: tuple[str, ...] = field(default_factory=tuple)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def to_dict(self) -> dict:
        return {
            "root": self.root,
            "counts": self.counts,
            "total": self.total,
            "skipped": list(self.skipped),
            "skipped_count": len(self.skipped),
        }


def _class_of(path: Path, root: Path) -> Label | None:
    """Label from the nearest class-named ancestor directory, if any."""
    for part in reversed(path.relative_to(root).parts[:-1]):
        try:
            return Label.from_string(part)
        except ValueError:
            continue
    return None


def _is_readable_image(path: Path) -> bool:
    try:
        with Image.open(path) as img:
            img.verify()
        return True
    except (UnidentifiedImageError, OSError, SyntaxError):
        return False


def scan_dataset(root: str | Path) -> tuple[LabeledDataset, ScanSummary]:
    """Recursively collect labeled images under ``root``, sorted by path.

    Unreadable files are skipped with a warning and reported in the summary.
    Raises ConfigurationError if the root is missing or holds no usable image.
    """
    root = Path(root)
    if not root.is_dir():
        raise ConfigurationError(f"dataset root {root} does not exist or is not a directory")

    samples: list[ImageSample] = []
    skipped: list[str] = []
    for path in sorted(root.rglob("*")):
        if not path.is_file() or path.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        label = _class_of(path, root)
        if label is None:
            continue
        if not _is_readable_image(path):
            log.warning("skipping unreadable image %s", path)
            skipped.append(str(path))
            continue
        samples.append(ImageSample(path=path, label=label))

    if not samples:
        raise ConfigurationError(
            f"no usable images found under {root} (expected NORMAL/ and PNEUMONIA/ subdirectories)"
        )
    ds = LabeledDataset(samples=tuple(samples))
    summary = ScanSummary(
        root=str(root),
        counts={label.value: count for label, count in ds.class_counts.items()},
        skipped=tuple(skipped),
    )
    log.info(
        "scanned %s: %d images (%s), %d skipped",
        root,
        len(ds),
        ", ".join(f"{k}={v}" for k, v in summary.counts.items()),
        len(skipped),
    )
    return ds, summary


def stratified_split(
    ds: LabeledDataset, train_fraction: float, seed: int
) -> DatasetSplits:
    """Deterministic per-class split; floor of the fraction goes to train, the
    remainder to validation."""
    if not 0 < train_fraction < 1:
        raise ConfigurationError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train: list[ImageSample] = []
    validation: list[ImageSample] = []
    for label in Label:
        members = ds.of_class(label)
        if len(members) < 2:
            raise ConfigurationError(
                f"class {label.value} has {len(members)} sample(s); need >= 2 to stratify"
            )
        # epsilon guards float noise in fraction * count near integers
        n_train = int(math.floor(train_fraction * len(members) + 1e-9))
        perm = rng.permutation(len(members))
        chosen = set(perm[:n_train].tolist())
        train.extend(members[i] for i in range(len(members)) if i in chosen)
        validation.extend(members[i] for i in range(len(members)) if i not in chosen)

    by_path = lambda s: str(s.path)
    return DatasetSplits(
        train=LabeledDataset(samples=tuple(sorted(train, key=by_path))),
        validation=LabeledDataset(samples=tuple(sorted(validation, key=by_path))),
        split_seed=seed,
        train_fraction=train_fraction,
    )


def rebalance_by_oversampling(
    ds: LabeledDataset,
    aug: AugmentationConfig,
    copies_per_image: int,
    seed: int,
    target_class: Label | None = None,
) -> LabeledDataset:
    """Append ``copies_per_image`` augmented variants of every minority-class
    sample, growing that class to (1 + copies) times its size. Originals are
    preserved verbatim; the majority class is untouched."""
    if copies_per_image < 0:
        raise ConfigurationError("copies_per_image must be >= 0")
    if copies_per_image == 0:
        return ds
    counts = ds.class_counts
    if target_class is None:
        target_class = min(Label, key=lambda label: (counts[label], label.value))
    rng = np.random.default_rng(seed)
    synthetic: list[ImageSample] = []
    for sample in ds.samples:
        if sample.label != target_class:
            continue
        for _ in range(copies_per_image):
            draw = sample_transform(aug, rng)
            synthetic.append(
                ImageSample(
                    path=sample.path,
                    label=sample.label,
                    synthetic=True,
                    transform=draw,
                )
            )
    return LabeledDataset(samples=ds.samples + tuple(synthetic))
