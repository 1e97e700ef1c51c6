"""Construction of the nine benchmark architectures.

One plain CNN trained from scratch plus eight ImageNet-pretrained backbones
with a fresh sigmoid head. TensorFlow is imported lazily so that metric and
preprocessing code paths never pay for it.

Fine-tuning freezes every backbone layer before a per-backbone boundary
marker; the marker names the first layer of the backbone's final
convolutional block, and everything from it onward (plus the new head) stays
trainable. The boundary table is a pinned engineering choice, not derived
from any external source.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, PretrainedWeightsError

log = logging.getLogger(__name__)

BASELINE_NAME = "BaselineCNN"

# name -> (keras.applications attribute, freeze boundary layer-name prefix)
_BACKBONES = {
    "VGG16": ("VGG16", "block5"),
    "VGG19": ("VGG19", "block5"),
    "Inception_V3": ("InceptionV3", "mixed9"),
    "Xception": ("Xception", "block14"),
    "DenseNet201": ("DenseNet201", "conv5"),
    "MobileNet_V2": ("MobileNetV2", "block_16"),
    "Inception_Resnet_V2": ("InceptionResNetV2", "block8_10"),
    "Resnet50": ("ResNet50", "conv5"),
}

# stable benchmark order: baseline first, then the published comparison order
ARCHITECTURE_NAMES = (
    BASELINE_NAME,
    "VGG16",
    "VGG19",
    "Inception_V3",
    "Xception",
    "DenseNet201",
    "MobileNet_V2",
    "Inception_Resnet_V2",
    "Resnet50",
)

FREEZE_POLICIES = ("freeze_all_but_top_block", "freeze_none")


@dataclass(frozen=True)
class HeadSpec:
    """Classification head appended on top of the feature extractor."""

    flatten_or_pool: str = "global_average_pool"
    hidden_units: int = 256
    hidden_activation: str = "relu"
    output_units: int = 1
    output_activation: str = "sigmoid"

    def __post_init__(self):
        if self.flatten_or_pool not in ("flatten", "global_average_pool"):
            raise ValueError(f"unknown head reduction {self.flatten_or_pool!r}")
        if self.hidden_units < 1:
            raise ValueError("hidden_units must be >= 1")
        if self.output_units != 1 or self.output_activation != "sigmoid":
            raise ValueError("the head must end in a single sigmoid unit")

    def to_dict(self) -> dict:
        return {
            "flatten_or_pool": self.flatten_or_pool,
            "hidden_units": self.hidden_units,
            "hidden_activation": self.hidden_activation,
            "output_units": self.output_units,
            "output_activation": self.output_activation,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HeadSpec":
        return cls(**data)


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    input_size: int = 224
    pretrained: bool = True
    freeze_policy: str = "freeze_all_but_top_block"
    head: HeadSpec = field(default_factory=HeadSpec)
    l2_coefficient: float = 1e-4
    conv_filters: tuple[int, ...] = (32, 64, 128)  # baseline CNN only

    def __post_init__(self):
        if self.name not in ARCHITECTURE_NAMES:
            raise ConfigurationError(
                f"unknown architecture {self.name!r}; expected one of {', '.join(ARCHITECTURE_NAMES)}"
            )
        if self.name == BASELINE_NAME and self.pretrained:
            raise ConfigurationError("BaselineCNN has no pretrained weights")
        if self.freeze_policy not in FREEZE_POLICIES:
            raise ConfigurationError(f"unknown freeze policy {self.freeze_policy!r}")
        if self.input_size < 32:
            raise ConfigurationError("input_size must be >= 32")
        if self.l2_coefficient < 0:
            raise ConfigurationError("l2_coefficient must be >= 0")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_size": self.input_size,
            "pretrained": self.pretrained,
            "freeze_policy": self.freeze_policy,
            "head": self.head.to_dict(),
            "l2_coefficient": self.l2_coefficient,
            "conv_filters": list(self.conv_filters),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ArchitectureSpec":
        data = dict(data)
        data["head"] = HeadSpec.from_dict(data["head"])
        data["conv_filters"] = tuple(data.get("conv_filters", (32, 64, 128)))
        return cls(**data)


def list_architectures() -> list[ArchitectureSpec]:
    """Default specs for all nine architectures in stable benchmark order."""
    specs = [
        ArchitectureSpec(
            name=BASELINE_NAME,
            pretrained=False,
            freeze_policy="freeze_none",
            head=HeadSpec(flatten_or_pool="flatten", hidden_units=128),
        )
    ]
    for name in ARCHITECTURE_NAMES[1:]:
        specs.append(
            ArchitectureSpec(
                name=name,
                input_size=299 if name == "Inception_V3" else 224,
            )
        )
    return specs


@dataclass
class ModelHandle:
    """A built model plus its spec; thin wrapper keeping callers framework-agnostic."""

    model: object
    spec: ArchitectureSpec

    @property
    def parameter_count(self) -> int:
        return int(self.model.count_params())

    @property
    def trainable_parameter_count(self) -> int:
        return int(sum(int(np.prod(w.shape)) for w in self.model.trainable_weights))

    def predict(self, batch: np.ndarray) -> np.ndarray:
        return np.asarray(self.model(batch, training=False))

    def save_weights(self, path) -> None:
        self.model.save_weights(str(path))

    def load_weights(self, path) -> None:
        self.model.load_weights(str(path))


def _head_layers(keras, head: HeadSpec, l2_coefficient: float, features):
    regularizer = keras.regularizers.L2(l2_coefficient) if l2_coefficient > 0 else None
    if head.flatten_or_pool == "flatten":
        x = keras.layers.Flatten(name="head_flatten")(features)
    else:
        x = keras.layers.GlobalAveragePooling2D(name="head_pool")(features)
    x = keras.layers.Dense(
        head.hidden_units,
        activation=head.hidden_activation,
        kernel_regularizer=regularizer,
        name="head_dense",
    )(x)
    return keras.layers.Dense(
        1,
        activation="sigmoid",
        kernel_regularizer=regularizer,
        name="head_output",
    )(x)


def build_baseline_cnn(spec: ArchitectureSpec, channels: int = 3) -> ModelHandle:
    """Three 3x3 same-padded conv layers with ReLU, each followed by 2x2
    stride-2 max pooling, then the dense head (fourth ReLU) and sigmoid output."""
    if spec.name != BASELINE_NAME:
        raise ConfigurationError(f"build_baseline_cnn called with spec {spec.name!r}")
    from tensorflow import keras

    inputs = keras.Input(shape=(spec.input_size, spec.input_size, channels))
    x = inputs
    for i, filters in enumerate(spec.conv_filters, start=1):
        x = keras.layers.Conv2D(
            filters, 3, padding="same", activation="relu", name=f"conv{i}"
        )(x)
        x = keras.layers.MaxPooling2D(pool_size=2, strides=2, name=f"pool{i}")(x)
    outputs = _head_layers(keras, spec.head, spec.l2_coefficient, x)
    model = keras.Model(inputs, outputs, name="baseline_cnn")
    return ModelHandle(model=model, spec=spec)


def freeze_boundary_index(backbone, marker_prefix: str) -> int:
    names = [layer.name for layer in backbone.layers]
    for i, name in enumerate(names):
        if name.startswith(marker_prefix):
            return i
    raise ConfigurationError(
        f"freeze marker {marker_prefix!r} not found in backbone {backbone.name}"
    )


def build_finetuned(spec: ArchitectureSpec, channels: int = 3) -> ModelHandle:
    """Pretrained backbone without its original classifier plus a new head.

    With freeze_all_but_top_block only the backbone's final convolutional
    block receives gradients; frozen layers keep trainable=False, which also
    pins their batch-norm statistics to inference mode, while the trainable
    top block adapts fully (statistics included). Missing pretrained weights
    raise PretrainedWeightsError rather than silently training from random
    initialization.
    """
    if spec.name == BASELINE_NAME:
        raise ConfigurationError("build_finetuned does not handle BaselineCNN")
    if channels != 3:
        raise ConfigurationError("pretrained backbones require 3-channel inputs")
    from tensorflow import keras

    app_name, marker = _BACKBONES[spec.name]
    factory = getattr(keras.applications, app_name)
    weights = "imagenet" if spec.pretrained else None
    try:
        backbone = factory(
            include_top=False,
            weights=weights,
            input_shape=(spec.input_size, spec.input_size, channels),
        )
    except Exception as exc:  # keras raises bare Exception on fetch failure
        if spec.pretrained:
            raise PretrainedWeightsError(spec.name, exc) from exc
        raise

    if spec.freeze_policy == "freeze_all_but_top_block":
        boundary = freeze_boundary_index(backbone, marker)
        for i, layer in enumerate(backbone.layers):
            layer.trainable = i >= boundary
    else:
        for layer in backbone.layers:
            layer.trainable = True

    inputs = keras.Input(shape=(spec.input_size, spec.input_size, channels))
    features = backbone(inputs)
    outputs = _head_layers(keras, spec.head, spec.l2_coefficient, features)
    model = keras.Model(inputs, outputs, name=spec.name.lower())
    return ModelHandle(model=model, spec=spec)


def build_model(spec: ArchitectureSpec, channels: int = 3) -> ModelHandle:
    if spec.name == BASELINE_NAME:
        return build_baseline_cnn(spec, channels)
    return build_finetuned(spec, channels)


def iter_leaf_layers(model):
    """All concrete layers, recursing through nested models."""
    for layer in model.layers:
        if hasattr(layer, "layers") and layer.layers:
            yield from iter_leaf_layers(layer)
        else:
            yield layer


def frozen_weight_snapshot(handle: ModelHandle) -> dict[str, np.ndarray]:
    """Current values of every weight owned by a frozen (trainable=False) layer."""
    snapshot: dict[str, np.ndarray] = {}
    for layer in iter_leaf_layers(handle.model):
        if not layer.trainable:
            for weight in layer.weights:
                snapshot[weight.path] = weight.numpy().copy()
    return snapshot


def spec_for(name: str, **overrides) -> ArchitectureSpec:
    """Default spec for ``name`` with field overrides applied."""
    for spec in list_architectures():
        if spec.name == name:
            return replace(spec, **overrides) if overrides else spec
    raise ConfigurationError(
        f"unknown architecture {name!r}; expected one of {', '.join(ARCHITECTURE_NAMES)}"
    )
