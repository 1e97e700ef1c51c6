"""Experiment configuration: a single YAML document with CLI overrides.

The schema mirrors the module boundaries (dataset / preprocess / augment /
train / model / evaluation / report); every key has a default, so a config
file only states what it changes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .augment import AugmentationConfig
from .errors import ConfigurationError
from .model_zoo import ARCHITECTURE_NAMES, BASELINE_NAME, HeadSpec, ArchitectureSpec, spec_for
from .preprocess import PreprocessConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class ModelOptions:
    pretrained: bool = True
    freeze_policy: str = "freeze_all_but_top_block"
    hidden_units: int = 256
    flatten_or_pool: str = "global_average_pool"
    input_size_overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_root: str | None = None
    output_dir: str = "runs"
    architectures: tuple[str, ...] = ARCHITECTURE_NAMES
    train_fraction: float = 0.6
    split_seed: int = 1234
    copies_per_image: int = 2
    balance_validation: bool = True
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    augment: AugmentationConfig = field(default_factory=AugmentationConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelOptions = field(default_factory=ModelOptions)
    positive_class: str = "Pneumonia"
    threshold: float = 0.5
    report_repetition: int = 0
    plot_dpi: int = 120

    def __post_init__(self):
        unknown = [name for name in self.architectures if name not in ARCHITECTURE_NAMES]
        if unknown:
            raise ConfigurationError(
                f"unknown architecture name(s): {', '.join(unknown)}; "
                f"choose from {', '.join(ARCHITECTURE_NAMES)}"
            )
        if not self.architectures:
            raise ConfigurationError("at least one architecture must be selected")
        if self.positive_class not in ("Normal", "Pneumonia"):
            raise ConfigurationError("positive_class must be Normal or Pneumonia")
        if not 0 < self.threshold < 1:
            raise ConfigurationError("threshold must be in (0, 1)")

    def architecture_spec(self, name: str) -> ArchitectureSpec:
        """Effective spec for one architecture under this config."""
        if name not in ARCHITECTURE_NAMES:
            raise ConfigurationError(f"unknown architecture {name!r}")
        overrides: dict = {"l2_coefficient": self.train.l2_coefficient}
        if name != BASELINE_NAME:
            overrides.update(
                pretrained=self.model.pretrained,
                freeze_policy=self.model.freeze_policy,
                head=HeadSpec(
                    flatten_or_pool=self.model.flatten_or_pool,
                    hidden_units=self.model.hidden_units,
                ),
            )
        if name in self.model.input_size_overrides:
            overrides["input_size"] = int(self.model.input_size_overrides[name])
        return spec_for(name, **overrides)

    def preprocess_for(self, spec: ArchitectureSpec) -> PreprocessConfig:
        """Preprocess config with the architecture's input size applied."""
        from dataclasses import replace

        return replace(self.preprocess, target_size=spec.input_size)

    def to_dict(self) -> dict:
        return {
            "dataset": {
                "root": self.dataset_root,
                "train_fraction": self.train_fraction,
                "split_seed": self.split_seed,
                "copies_per_image": self.copies_per_image,
                "balance_validation": self.balance_validation,
            },
            "output_dir": self.output_dir,
            "architectures": list(self.architectures),
            "preprocess": {
                "target_size": self.preprocess.target_size,
                "clahe": {
                    "clip_limit": self.preprocess.clahe_clip_limit,
                    "tile_grid": list(self.preprocess.clahe_tile_grid),
                },
                "channels": self.preprocess.channels_out,
            },
            "augment": self.augment.to_dict(),
            "train": self.train.to_dict(),
            "model": {
                "pretrained": self.model.pretrained,
                "freeze_policy": self.model.freeze_policy,
                "hidden_units": self.model.hidden_units,
                "flatten_or_pool": self.model.flatten_or_pool,
                "input_size_overrides": dict(self.model.input_size_overrides),
            },
            "evaluation": {
                "positive_class": self.positive_class,
                "threshold": self.threshold,
            },
            "report": {
                "repetition": self.report_repetition,
                "dpi": self.plot_dpi,
            },
        }

    def content_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _section(data: dict, key: str) -> dict:
    value = data.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigurationError(f"config section {key!r} must be a mapping")
    return value


def config_from_mapping(data: dict) -> ExperimentConfig:
    data = data or {}
    ds = _section(data, "dataset")
    pre = _section(data, "preprocess")
    clahe = _section(pre, "clahe")
    model = _section(data, "model")
    evaluation = _section(data, "evaluation")
    report = _section(data, "report")

    architectures = data.get("architectures")
    if architectures is None:
        architectures = list(ARCHITECTURE_NAMES)
    if isinstance(architectures, str):
        architectures = [a.strip() for a in architectures.split(",") if a.strip()]

    try:
        preprocess = PreprocessConfig(
            target_size=int(pre.get("target_size", 224)),
            clahe_clip_limit=float(clahe.get("clip_limit", 2.0)),
            clahe_tile_grid=tuple(clahe.get("tile_grid", (8, 8))),
            channels_out=int(pre.get("channels", 3)),
        )
        augment = AugmentationConfig.from_dict(
            {**AugmentationConfig().to_dict(), **_section(data, "augment")}
        )
        train = TrainConfig.from_dict({**TrainConfig().to_dict(), **_section(data, "train")})
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid configuration value: {exc}") from exc

    return ExperimentConfig(
        dataset_root=ds.get("root"),
        output_dir=str(data.get("output_dir", "runs")),
        architectures=tuple(architectures),
        train_fraction=float(ds.get("train_fraction", 0.6)),
        split_seed=int(ds.get("split_seed", 1234)),
        copies_per_image=int(ds.get("copies_per_image", 2)),
        balance_validation=bool(ds.get("balance_validation", True)),
        preprocess=preprocess,
        augment=augment,
        train=train,
        model=ModelOptions(
            pretrained=bool(model.get("pretrained", True)),
            freeze_policy=str(model.get("freeze_policy", "freeze_all_but_top_block")),
            hidden_units=int(model.get("hidden_units", 256)),
            flatten_or_pool=str(model.get("flatten_or_pool", "global_average_pool")),
            input_size_overrides=dict(model.get("input_size_overrides", {})),
        ),
        positive_class=str(evaluation.get("positive_class", "Pneumonia")),
        threshold=float(evaluation.get("threshold", 0.5)),
        report_repetition=int(report.get("repetition", 0)),
        plot_dpi=int(report.get("dpi", 120)),
    )


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Read a YAML config file (optional) and apply ``key.path=value`` overrides."""
    data: dict = {}
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh)
        if loaded is not None:
            if not isinstance(loaded, dict):
                raise ConfigurationError(f"config file {path} must contain a mapping")
            data = loaded
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} must look like key.path=value")
        key, _, raw = item.partition("=")
        value = yaml.safe_load(raw)
        node = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"cannot override {key!r}: {part!r} is not a mapping")
        node[parts[-1]] = value
    return config_from_mapping(data)
