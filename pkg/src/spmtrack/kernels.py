"""Dense numeric kernels over channel-major feature maps.

A feature map is a ``float32`` array of shape ``(channels, height, width)``.
Convolution follows the ML convention (cross-correlation, no kernel flip).
All kernels accumulate in float64 and store float32 results.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when array shapes do not satisfy an operation's contract."""


def as_feature_map(x, name="input"):
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 3:
        raise ShapeError(f"{name} must be rank-3 (C, H, W), got shape {x.shape}")
    if x.shape[1] < 1 or x.shape[2] < 1:
        raise ShapeError(f"{name} has empty spatial dims {x.shape}")
    return x


@dataclass(frozen=True)
class ConvParams:
    """Weights and geometry of one convolution layer.

    ``weights`` has shape ``(out_channels, in_channels, kernel_h, kernel_w)``.
    """

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0
    apply_relu: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float32)
        b = np.asarray(self.bias, dtype=np.float32).reshape(-1)
        if w.ndim != 4:
            raise ShapeError(f"conv weights must be rank-4, got shape {w.shape}")
        if b.shape[0] != w.shape[0]:
            raise ShapeError(f"bias length {b.shape[0]} != out_channels {w.shape[0]}")
        if self.stride < 1 or self.padding < 0:
            raise ShapeError(f"invalid stride={self.stride} / padding={self.padding}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def kernel_h(self):
        return self.weights.shape[2]

    @property
    def kernel_w(self):
        return self.weights.shape[3]


def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x, p):
    """Zero-padded strided 2-D convolution (im2col + one GEMM)."""
    x = as_feature_map(x)
    if x.shape[0] != p.in_channels:
        raise ShapeError(
            f"channel mismatch: input has {x.shape[0]}, weights expect {p.in_channels}"
        )
    _, h, w = x.shape
    ho = conv_output_size(h, p.kernel_h, p.stride, p.padding)
    wo = conv_output_size(w, p.kernel_w, p.stride, p.padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"non-positive output size {ho}x{wo} for input {h}x{w}")

    xp = x.astype(np.float64)
    if p.padding:
        pad = p.padding
        xp = np.pad(xp, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (p.kernel_h, p.kernel_w), axis=(1, 2))
    win = win[:, : (ho - 1) * p.stride + 1 : p.stride, : (wo - 1) * p.stride + 1 : p.stride]
    # (C, Ho, Wo, kh, kw) -> (Ho*Wo, C*kh*kw)
    cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, -1)
    wmat = p.weights.astype(np.float64).reshape(p.out_channels, -1)
    out = wmat @ cols.T + p.bias.astype(np.float64)[:, None]
    if p.apply_relu:
        np.maximum(out, 0.0, out=out)
    return out.reshape(p.out_channels, ho, wo).astype(np.float32)


def max_pool(x, kernel, stride):
    x = as_feature_map(x)
    _, h, w = x.shape
    if kernel > min(h, w):
        raise ShapeError(f"pool kernel {kernel} larger than input {h}x{w}")
    if kernel < 1 or stride < 1:
        raise ShapeError(f"invalid pool kernel={kernel} / stride={stride}")
    win = sliding_window_view(x, (kernel, kernel), axis=(1, 2))[:, ::stride, ::stride]
    return win.max(axis=(3, 4)).astype(np.float32)


def concat_channels(a, b):
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.ndim != 3 or b.ndim != 3:
        raise ShapeError("concat_channels expects rank-3 maps")
    if a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"spatial mismatch: {a.shape[1:]} vs {b.shape[1:]}")
    return np.concatenate([a, b], axis=0)


def bilinear_sample_many(x, xs, ys):
    """Sample every channel of ``x`` at points ``(xs[k], ys[k])``.

    ``xs`` indexes columns and ``ys`` rows; integer coordinates hit grid nodes
    exactly. Neighbours outside the map contribute zero. Returns ``(C, N)``.
    """
    x = np.asarray(x)
    c, h, w = x.shape
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    data = x.astype(np.float64)
    out = np.zeros((c, xs.shape[0]), dtype=np.float64)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            ci = x0 + dx
            ri = y0 + dy
            ok = (ci >= 0) & (ci < w) & (ri >= 0) & (ri < h)
            if not ok.any():
                continue
            vals = np.zeros((c, xs.shape[0]), dtype=np.float64)
            vals[:, ok] = data[:, ri[ok], ci[ok]]
            out += vals * (wx * wy)
    return out.astype(np.float32)


def bilinear_sample(x, px, py):
    """Per-channel bilinear interpolation at column ``px``, row ``py``."""
    x = as_feature_map(x)
    return bilinear_sample_many(x, [px], [py])[:, 0]


def cross_correlate_many(search, kernels):
    """Valid-mode correlation of ``search`` with each kernel of ``kernels``.

    ``kernels`` has shape ``(K, C, h, w)``; each response sums over channels.
    Returns ``(K, H - h + 1, W - w + 1)``.
    """
    search = as_feature_map(search, "search")
    kernels = np.asarray(kernels, dtype=np.float32)
    if kernels.ndim != 4:
        raise ShapeError(f"kernels must be rank-4, got shape {kernels.shape}")
    k, c, kh, kw = kernels.shape
    cs, h, w = search.shape
    if c != cs:
        raise ShapeError(f"channel mismatch: search {cs}, kernel {c}")
    if kh > h or kw > w:
        raise ShapeError(f"kernel {kh}x{kw} larger than search {h}x{w}")
    ho, wo = h - kh + 1, w - kw + 1
    win = sliding_window_view(search.astype(np.float64), (kh, kw), axis=(1, 2))
    cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c * kh * kw)
    kmat = kernels.astype(np.float64).reshape(k, -1)
    out = kmat @ cols.T
    return out.reshape(k, ho, wo).astype(np.float32)


def cross_correlate(search, kernel):
    """Valid-mode correlation summed over channels; returns ``(1, Ho, Wo)``."""
    kernel = as_feature_map(kernel, "kernel")
    return cross_correlate_many(search, kernel[None])
