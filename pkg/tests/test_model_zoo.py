import numpy as np
import pytest

from xraybench.errors import ConfigurationError, PretrainedWeightsError
from xraybench.model_zoo import (
    ARCHITECTURE_NAMES,
    ArchitectureSpec,
    HeadSpec,
    build_baseline_cnn,
    build_finetuned,
    build_model,
    list_architectures,
    spec_for,
)
from xraybench.trainer import set_determinism


def baseline_param_oracle(input_size: int, channels: int, filters, hidden: int) -> int:
    """Layer-by-layer parameter arithmetic: sum(k^2 * c_in * c_out + c_out)."""
    total = 0
    c_in = channels
    spatial = input_size
    for c_out in filters:
        total += 9 * c_in * c_out + c_out
        c_in = c_out
        spatial //= 2
    flat = spatial * spatial * c_in
    total += flat * hidden + hidden
    total += hidden * 1 + 1
    return total


class TestListArchitectures:
    def test_exactly_nine_in_stable_order(self):
        specs = list_architectures()
        assert len(specs) == 9
        assert [s.name for s in specs] == list(ARCHITECTURE_NAMES)
        assert specs[0].name == "BaselineCNN"

    def test_only_inception_v3_uses_299(self):
        for spec in list_architectures():
            assert spec.input_size == (299 if spec.name == "Inception_V3" else 224)

    def test_baseline_not_pretrained_others_are(self):
        for spec in list_architectures():
            assert spec.pretrained == (spec.name != "BaselineCNN")

    def test_specs_round_trip_serialization(self):
        for spec in list_architectures():
            assert ArchitectureSpec.from_dict(spec.to_dict()) == spec

    def test_unknown_name_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown architecture"):
            spec_for("ResNet101")
        with pytest.raises(ConfigurationError):
            ArchitectureSpec(name="AlexNet")

    def test_baseline_pretrained_rejected(self):
        with pytest.raises(ConfigurationError):
            ArchitectureSpec(name="BaselineCNN", pretrained=True)

    def test_head_must_end_in_single_sigmoid(self):
        with pytest.raises(ValueError):
            HeadSpec(output_units=2)
        with pytest.raises(ValueError):
            HeadSpec(output_activation="softmax")


@pytest.fixture(scope="module")
def baseline_small():
    set_determinism(0)
    spec = spec_for(
        "BaselineCNN",
        input_size=64,
        conv_filters=(8, 16, 32),
        head=HeadSpec(flatten_or_pool="flatten", hidden_units=16),
        l2_coefficient=1e-3,
    )
    return build_baseline_cnn(spec)


class TestBaselineCnn:
    def test_forward_pass_probabilities(self, baseline_small):
        x = np.random.default_rng(0).random((2, 64, 64, 3)).astype(np.float32)
        out = baseline_small.predict(x)
        assert out.shape == (2, 1)
        assert np.all(out > 0) and np.all(out < 1)

    def test_spatial_halving_through_pools(self):
        set_determinism(0)
        handle = build_baseline_cnn(spec_for("BaselineCNN"))
        model = handle.model
        sizes = {layer.name: layer.output.shape[1] for layer in model.layers
                 if layer.name.startswith("pool")}
        assert sizes == {"pool1": 112, "pool2": 56, "pool3": 28}

    def test_parameter_count_matches_analytic_formula(self, baseline_small):
        expected = baseline_param_oracle(64, 3, (8, 16, 32), 16)
        assert baseline_small.parameter_count == expected
        assert baseline_small.trainable_parameter_count == expected

    def test_default_parameter_count(self):
        set_determinism(0)
        handle = build_baseline_cnn(spec_for("BaselineCNN"))
        assert handle.parameter_count == baseline_param_oracle(224, 3, (32, 64, 128), 128)

    def test_four_relu_activations(self, baseline_small):
        relu_layers = [
            layer
            for layer in baseline_small.model.layers
            if getattr(getattr(layer, "activation", None), "__name__", "") == "relu"
        ]
        assert len(relu_layers) == 4  # three convs plus the hidden dense

    def test_l2_term_equals_lambda_times_weight_norm(self, baseline_small):
        import tensorflow as tf

        model = baseline_small.model
        lam = baseline_small.spec.l2_coefficient
        reg = float(tf.add_n(model.losses))
        manual = 0.0
        for name in ("head_dense", "head_output"):
            kernel = model.get_layer(name).kernel.numpy()
            manual += lam * float(np.sum(np.square(kernel)))
        assert abs(reg - manual) <= 1e-6

    def test_wrong_spec_rejected(self):
        with pytest.raises(ConfigurationError):
            build_baseline_cnn(spec_for("VGG16"))


class TestFinetuned:
    def test_frozen_backbone_reduces_trainable_params(self):
        set_determinism(1)
        spec = spec_for("MobileNet_V2", pretrained=False, input_size=96)
        handle = build_finetuned(spec)
        assert 0 < handle.trainable_parameter_count < handle.parameter_count

    def test_freeze_none_trains_everything(self):
        set_determinism(1)
        spec = spec_for("MobileNet_V2", pretrained=False, input_size=96,
                        freeze_policy="freeze_none")
        handle = build_finetuned(spec)
        # batch-norm moving statistics are never trainable parameters
        import tensorflow as tf

        non_trainable = handle.parameter_count - handle.trainable_parameter_count
        bn_stats = sum(
            int(np.prod(w.shape))
            for w in handle.model.weights
            if "moving_mean" in w.path or "moving_variance" in w.path
        )
        assert non_trainable == bn_stats

    def test_forward_pass_probabilities(self):
        set_determinism(2)
        spec = spec_for("MobileNet_V2", pretrained=False, input_size=96)
        handle = build_finetuned(spec)
        x = np.random.default_rng(1).random((2, 96, 96, 3)).astype(np.float32)
        out = handle.predict(x)
        assert out.shape == (2, 1)
        assert np.all(out > 0) and np.all(out < 1)

    def test_one_step_leaves_frozen_weights_bitwise_unchanged(self):
        import tensorflow as tf

        from xraybench.model_zoo import frozen_weight_snapshot

        set_determinism(3)
        spec = spec_for("MobileNet_V2", pretrained=False, input_size=96)
        handle = build_finetuned(spec)
        model = handle.model
        before = frozen_weight_snapshot(handle)
        assert before  # the policy must actually freeze something
        head_before = model.get_layer("head_dense").kernel.numpy().copy()

        x = np.random.default_rng(2).random((2, 96, 96, 3)).astype(np.float32)
        y = np.array([0.0, 1.0], dtype=np.float32)
        optimizer = tf.keras.optimizers.Adam(1e-3)
        with tf.GradientTape() as tape:
            pred = tf.squeeze(model(x, training=True), axis=-1)
            loss = tf.reduce_mean(tf.keras.losses.binary_crossentropy(y, pred))
            loss = loss + tf.add_n(model.losses)
        grads = tape.gradient(loss, model.trainable_variables)
        optimizer.apply_gradients(zip(grads, model.trainable_variables))

        after = frozen_weight_snapshot(handle)
        assert before.keys() == after.keys()
        for path in before:
            assert np.array_equal(before[path], after[path]), path
        assert not np.array_equal(head_before, model.get_layer("head_dense").kernel.numpy())

    def test_missing_pretrained_weights_error_names_backbone(self, monkeypatch):
        from tensorflow import keras

        def boom(**kwargs):
            raise Exception("URL fetch failure")

        monkeypatch.setattr(keras.applications, "ResNet50", boom)
        with pytest.raises(PretrainedWeightsError, match="Resnet50"):
            build_finetuned(spec_for("Resnet50"))

    def test_baseline_rejected(self):
        with pytest.raises(ConfigurationError):
            build_finetuned(spec_for("BaselineCNN"))

    def test_non_three_channel_rejected(self):
        with pytest.raises(ConfigurationError):
            build_finetuned(spec_for("MobileNet_V2", pretrained=False), channels=1)

    def test_build_model_dispatch(self):
        set_determinism(4)
        assert build_model(spec_for("BaselineCNN", input_size=32)).spec.name == "BaselineCNN"
