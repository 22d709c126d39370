"""Siamese backbone: a configurable conv stack with named feature taps.

The canonical stack keeps padding in every conv so that feature cells stay
aligned with image pixels; a cell ``k`` of a tap with cumulative stride ``s``
is treated as sitting at image coordinate ``k * s``.

    layer   kernel  stride  pad   out   127 input   271 input
    conv1   3       2       1     96    64          136
    pool1   3       2       -     96    31          67
    conv2   3       1       1     384   31          67     (tap, stride 4)
    conv3   3       2       1     384   16          34
    conv4   3       1       1     256   16          34     (tap, stride 8)
    conv5   3       1       1     256   16          34     (tap, stride 8)
"""

from dataclasses import dataclass, field

import numpy as np

from .kernels import ConvParams, ShapeError, as_feature_map, conv2d, conv_output_size, max_pool
from .weights import ModelWeights


@dataclass(frozen=True)
class ConvSpec:
    name: str
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    relu: bool = True


@dataclass(frozen=True)
class PoolSpec:
    name: str
    kernel: int
    stride: int


@dataclass(frozen=True)
class BackboneConfig:
    layers: tuple
    taps: tuple = ("conv2", "conv4", "conv5")

    def __post_init__(self):
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names in {names}")
        missing = set(self.taps) - set(names)
        if missing:
            raise ValueError(f"taps {sorted(missing)} are not layers")

    @property
    def stride_of_tap(self):
        strides, s = {}, 1
        for layer in self.layers:
            s *= layer.stride
            if layer.name in self.taps:
                strides[layer.name] = s
        return strides

    def tap_channels(self):
        out, c = {}, None
        for layer in self.layers:
            if isinstance(layer, ConvSpec):
                c = layer.out_channels
            if layer.name in self.taps:
                out[layer.name] = c
        return out

    def param_shapes(self, prefix="backbone"):
        """``(name, shape, fan_in)`` for every learnable tensor."""
        out = []
        for layer in self.layers:
            if isinstance(layer, ConvSpec):
                fan_in = layer.in_channels * layer.kernel * layer.kernel
                shape = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
                out.append((f"{prefix}.{layer.name}.weight", shape, fan_in))
                out.append((f"{prefix}.{layer.name}.bias", (layer.out_channels,), fan_in))
        return out


CANONICAL_BACKBONE = BackboneConfig(
    layers=(
        ConvSpec("conv1", 3, 96, 3, stride=2, padding=1),
        PoolSpec("pool1", 3, 2),
        ConvSpec("conv2", 96, 384, 3, stride=1, padding=1),
        ConvSpec("conv3", 384, 384, 3, stride=2, padding=1),
        ConvSpec("conv4", 384, 256, 3, stride=1, padding=1),
        ConvSpec("conv5", 256, 256, 3, stride=1, padding=1, relu=False),
    ),
)


def _conv_params(layer, w, prefix):
    wname, bname = f"{prefix}.{layer.name}.weight", f"{prefix}.{layer.name}.bias"
    expect = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
    if wname not in w or bname not in w:
        raise ShapeError(f"missing weights for layer {layer.name!r}")
    if w[wname].shape != expect or w[bname].shape != (layer.out_channels,):
        raise ShapeError(
            f"layer {layer.name!r}: weight shape {w[wname].shape} / bias {w[bname].shape}, "
            f"config expects {expect} / ({layer.out_channels},)"
        )
    return ConvParams(w[wname], w[bname], layer.stride, layer.padding, layer.relu)


def extract_features(image, w, cfg=CANONICAL_BACKBONE, prefix="backbone"):
    """Forward ``image`` (3 x H x W) through the stack; return tap name -> map."""
    x = as_feature_map(image, "image")
    taps = {}
    for layer in cfg.layers:
        if isinstance(layer, ConvSpec):
            x = conv2d(x, _conv_params(layer, w, prefix))
        else:
            x = max_pool(x, layer.kernel, layer.stride)
        if layer.name in cfg.taps:
            taps[layer.name] = x
    return taps


@dataclass
class Backbone:
    """Feature extractor bound to a weight set; ``strides`` maps tap -> stride."""

    weights: ModelWeights
    cfg: BackboneConfig = CANONICAL_BACKBONE
    strides: dict = field(init=False)

    def __post_init__(self):
        self.strides = self.cfg.stride_of_tap
        # validate eagerly so shape errors surface at load time
        for layer in self.cfg.layers:
            if isinstance(layer, ConvSpec):
                _conv_params(layer, self.weights, "backbone")

    def __call__(self, image):
        return extract_features(image, self.weights, self.cfg)

    def output_size(self, tap, size):
        """Spatial size of ``tap`` for a square input of side ``size``."""
        for layer in self.cfg.layers:
            if isinstance(layer, ConvSpec):
                size = conv_output_size(size, layer.kernel, layer.stride, layer.padding)
            else:
                size = (size - layer.kernel) // layer.stride + 1
            if layer.name == tap:
                return size
        raise KeyError(tap)


def central_crop(f, size):
    f = as_feature_map(f)
    _, h, w = f.shape
    if size < 1 or size > min(h, w):
        raise ShapeError(f"crop size {size} exceeds map {h}x{w}")
    r0 = (h - size) // 2
    c0 = (w - size) // 2
    return f[:, r0 : r0 + size, c0 : c0 + size].copy()


def _uniform_bound(fan_in):
    s = np.float32(np.sqrt(1.0 / fan_in))
    if float(s) > np.sqrt(1.0 / fan_in):
        s = np.nextafter(s, np.float32(0))
    return s


def init_from_shapes(shapes, seed):
    """Uniform ``[-s, s]`` init with ``s = sqrt(1 / fan_in)`` from a shape list."""
    rng = np.random.default_rng(seed)
    w = ModelWeights()
    for name, shape, fan_in in shapes:
        s = _uniform_bound(fan_in)
        vals = rng.uniform(-float(s), float(s), size=shape).astype(np.float32)
        w.add(name, np.clip(vals, -s, s))
    return w


def init_weights(seed, backbone=CANONICAL_BACKBONE, cm=None, fm=None):
    """Deterministic weights for the backbone and both matching heads."""
    from .cm import CmHeadConfig
    from .fm import FmHeadConfig

    cm = cm or CmHeadConfig()
    fm = fm or FmHeadConfig()
    shapes = backbone.param_shapes() + cm.param_shapes() + fm.param_shapes()
    return init_from_shapes(shapes, seed)
