import numpy as np
import pytest

from spmtrack.featnet import (
    CANONICAL_BACKBONE,
    Backbone,
    BackboneConfig,
    ConvSpec,
    PoolSpec,
    central_crop,
    extract_features,
    init_from_shapes,
    init_weights,
)
from spmtrack.kernels import ShapeError
from spmtrack.weights import ModelWeights


@pytest.fixture(scope="module")
def backbone():
    return Backbone(init_weights(0))


@pytest.fixture(scope="module")
def template_taps(backbone):
    rng = np.random.default_rng(0)
    return backbone(rng.uniform(0, 255, (3, 127, 127)).astype(np.float32))


class TestCanonicalShapes:
    def test_template_taps(self, template_taps):
        assert template_taps["conv2"].shape == (384, 31, 31)
        assert template_taps["conv4"].shape == (256, 16, 16)
        assert template_taps["conv5"].shape == (256, 16, 16)

    def test_template_crop(self, template_taps):
        assert central_crop(template_taps["conv5"], 6).shape == (256, 6, 6)

    def test_search_taps(self, backbone):
        taps = backbone(np.zeros((3, 271, 271), dtype=np.float32))
        assert taps["conv2"].shape == (384, 67, 67)
        assert taps["conv5"].shape == (256, 34, 34)

    def test_output_size_agrees(self, backbone):
        for size, expect in ((127, 16), (271, 34)):
            assert backbone.output_size("conv5", size) == expect
        assert backbone.output_size("conv2", 271) == 67

    def test_strides(self):
        assert CANONICAL_BACKBONE.stride_of_tap == {"conv2": 4, "conv4": 8, "conv5": 8}

    def test_tap_channels(self):
        assert CANONICAL_BACKBONE.tap_channels() == {"conv2": 384, "conv4": 256, "conv5": 256}

    def test_conv5_is_linear(self, template_taps):
        # no ReLU on the last layer, so random weights give negative responses
        assert (template_taps["conv5"] < 0).any()
        assert (template_taps["conv4"] >= 0).all()


class TestCentralCrop:
    def test_window_position(self):
        f = np.arange(16 * 16, dtype=np.float32).reshape(1, 16, 16)
        crop = central_crop(f, 6)
        np.testing.assert_array_equal(crop, f[:, 5:11, 5:11])

    def test_odd_map(self):
        f = np.arange(49, dtype=np.float32).reshape(1, 7, 7)
        np.testing.assert_array_equal(central_crop(f, 3), f[:, 2:5, 2:5])

    def test_too_large(self):
        with pytest.raises(ShapeError):
            central_crop(np.zeros((1, 4, 4)), 5)


class TestConfig:
    def test_custom_stack(self):
        cfg = BackboneConfig(
            layers=(ConvSpec("a", 3, 4, 3, stride=2), PoolSpec("p", 2, 2), ConvSpec("b", 4, 2, 1)),
            taps=("b",),
        )
        w = init_from_shapes(cfg.param_shapes(), seed=1)
        taps = extract_features(np.ones((3, 21, 21)), w, cfg)
        assert list(taps) == ["b"]
        assert taps["b"].shape == (2, 5, 5)
        assert cfg.stride_of_tap == {"b": 4}

    def test_duplicate_layer_names(self):
        with pytest.raises(ValueError, match="duplicate"):
            BackboneConfig(layers=(ConvSpec("a", 1, 1, 1), ConvSpec("a", 1, 1, 1)), taps=())

    def test_unknown_tap(self):
        with pytest.raises(ValueError, match="taps"):
            BackboneConfig(layers=(ConvSpec("a", 1, 1, 1),), taps=("b",))

    def test_wrong_weight_shape_rejected(self):
        w = init_weights(0)
        bad = ModelWeights((k, np.zeros((1, 1, 1, 1)) if k == "backbone.conv3.weight" else v) for k, v in w.items())
        with pytest.raises(ShapeError, match="conv3"):
            Backbone(bad)

    def test_missing_weights(self):
        with pytest.raises(ShapeError, match="conv1"):
            Backbone(ModelWeights())


class TestInit:
    def test_bounds(self):
        w = init_weights(5)
        for name, shape, fan_in in CANONICAL_BACKBONE.param_shapes():
            assert w[name].shape == shape
            assert np.abs(w[name]).max() <= np.sqrt(1.0 / fan_in)

    def test_deterministic(self):
        shapes = CANONICAL_BACKBONE.param_shapes()[:4]
        assert init_from_shapes(shapes, 9) == init_from_shapes(shapes, 9)

    def test_all_heads_included(self):
        names = list(init_weights(0))
        assert "cm.cls_lift.weight" in names and "fm.reg.bias" in names
        assert len(names) == 28
