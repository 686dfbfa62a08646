"""Convolution and max-pooling primitives on channel-major (C, H, W) arrays.

Forward convolution fuses a ReLU; pooling records flat argmax indices so the
backward pass can route gradients through the exact winners.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

CONV = "conv"
MAXPOOL = "maxpool"


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the network: a conv+ReLU stage or a max-pool stage."""

    kind: str
    kernel: int
    stride: int = 1
    padding: int = 0
    out_channels: int = 0
    bias: bool = True
    name: str = ""
    tap: str | None = None

    def __post_init__(self):
        if self.kind not in (CONV, MAXPOOL):
            raise ConfigurationError(f"unsupported layer kind {self.kind!r}")
        if self.kernel < 1:
            raise ConfigurationError(f"kernel size must be >= 1, got {self.kernel}")
        if self.stride < 1:
            raise ConfigurationError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ConfigurationError(f"padding must be >= 0, got {self.padding}")
        if self.kind == CONV and self.out_channels < 1:
            raise ConfigurationError("conv layer needs out_channels >= 1")
        if self.kind == MAXPOOL and self.padding != 0:
            raise ConfigurationError("maxpool does not support padding")

    def out_hw(self, in_hw: tuple[int, int]) -> tuple[int, int]:
        """Spatial output size: floor((in + 2*pad - kernel)/stride) + 1."""
        h, w = in_hw
        oh = (h + 2 * self.padding - self.kernel) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ConfigurationError(
                f"layer {self.name or self.kind}: window {self.kernel} "
                f"(stride {self.stride}, pad {self.padding}) does not fit "
                f"input {h}x{w}")
        return oh, ow


def _windows(x: np.ndarray, kernel: int, stride: int, padding: int):
    """Read-only strided view of all kernel windows: (C, oh, ow, k, k)."""
    c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kernel) // stride + 1
    ow = (w + 2 * padding - kernel) // stride + 1
    s0, s1, s2 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, (c, oh, ow, kernel, kernel),
        (s0, stride * s1, stride * s2, s1, s2), writeable=False)
    return view, oh, ow


def conv_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray | None,
                 spec: LayerSpec) -> np.ndarray:
    """ReLU(conv(x, weights) + bias) for a conv+relu layer.

    weights has shape (out_channels, in_channels, k, k); bias may be None.
    """
    if spec.kind != CONV:
        raise ConfigurationError("conv_forward requires a conv layer spec")
    x = np.ascontiguousarray(x, dtype=np.float64)
    if weights.shape[0] != spec.out_channels or weights.shape[2] != spec.kernel \
            or weights.shape[3] != spec.kernel:
        raise ConfigurationError(
            f"layer {self_name(spec)}: weight shape {weights.shape} does not "
            f"match spec (out={spec.out_channels}, k={spec.kernel})")
    if x.shape[0] != weights.shape[1]:
        raise ConfigurationError(
            f"layer {self_name(spec)}: input has {x.shape[0]} channels, "
            f"kernel expects {weights.shape[1]}")
    spec.out_hw(x.shape[1:])
    view, oh, ow = _windows(x, spec.kernel, spec.stride, spec.padding)
    out = np.einsum("cijkl,ockl->oij", view, weights, optimize=True)
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[:, None, None]
    np.maximum(out, 0.0, out=out)
    return out


def maxpool_forward(x: np.ndarray, spec: LayerSpec):
    """Max over each window plus the flat per-plane input index of each winner.

    Ties break to the lowest flat index (row-major scan order).
    """
    if spec.kind != MAXPOOL:
        raise ConfigurationError("maxpool_forward requires a maxpool layer spec")
    x = np.ascontiguousarray(x, dtype=np.float64)
    c, h, w = x.shape
    if spec.kernel > h or spec.kernel > w:
        raise ConfigurationError(
            f"pool window {spec.kernel} larger than input {h}x{w}")
    view, oh, ow = _windows(x, spec.kernel, spec.stride, 0)
    flat = view.reshape(c, oh, ow, spec.kernel * spec.kernel)
    # argmax picks the first maximum within the window; window scan order is
    # row-major, so the first hit is the lowest flat input index.
    local = flat.argmax(axis=3)
    out = np.take_along_axis(flat, local[..., None], axis=3)[..., 0]
    ky, kx = np.divmod(local, spec.kernel)
    rows = np.arange(oh)[None, :, None] * spec.stride + ky
    cols = np.arange(ow)[None, None, :] * spec.stride + kx
    argmax = (rows * w + cols).astype(np.int64)
    return out, argmax


def conv_input_grad(dout: np.ndarray, weights: np.ndarray,
                    in_hw: tuple[int, int], spec: LayerSpec) -> np.ndarray:
    """Gradient w.r.t. the conv input given the gradient of the linear output."""
    c_in = weights.shape[1]
    h, w = in_hw
    grad = np.zeros((c_in, h, w))
    bounds = nonzero_bounds(dout)
    if bounds is None:
        return grad
    r0, r1, c0, c1 = bounds
    sub = dout[:, r0:r1 + 1, c0:c1 + 1]
    buf = _scatter_windows(sub, weights, spec.stride, spec.kernel)
    _paste(grad, buf, r0 * spec.stride - spec.padding,
           c0 * spec.stride - spec.padding)
    return grad


def _scatter_windows(dout: np.ndarray, weights: np.ndarray, stride: int,
                     kernel: int) -> np.ndarray:
    """Overlap-add of weight kernels at every output position of `dout`."""
    _, oh, ow = dout.shape
    c_in = weights.shape[1]
    buf = np.zeros((c_in, (oh - 1) * stride + kernel,
                    (ow - 1) * stride + kernel))
    span_h = (oh - 1) * stride + 1
    span_w = (ow - 1) * stride + 1
    for ky in range(kernel):
        for kx in range(kernel):
            contrib = np.tensordot(weights[:, :, ky, kx], dout, axes=(0, 0))
            buf[:, ky:ky + span_h:stride, kx:kx + span_w:stride] += contrib
    return buf


def _paste(dst: np.ndarray, src: np.ndarray, top: int, left: int) -> None:
    """Accumulate src into dst at (top, left), clipping out-of-range parts."""
    _, sh, sw = src.shape
    _, dh, dw = dst.shape
    r0, c0 = max(top, 0), max(left, 0)
    r1, c1 = min(top + sh, dh), min(left + sw, dw)
    if r0 >= r1 or c0 >= c1:
        return
    dst[:, r0:r1, c0:c1] += src[:, r0 - top:r1 - top, c0 - left:c1 - left]


def maxpool_input_grad(dout: np.ndarray, argmax: np.ndarray,
                       in_hw: tuple[int, int]) -> np.ndarray:
    """Route gradients back to the recorded window winners."""
    c = dout.shape[0]
    grad = np.zeros((c, in_hw[0] * in_hw[1]))
    channels = np.broadcast_to(np.arange(c)[:, None, None], dout.shape)
    np.add.at(grad, (channels, argmax), dout)
    return grad.reshape(c, *in_hw)


def downsample_mask(mask: np.ndarray, spec: LayerSpec) -> np.ndarray:
    """Binary mask at the layer's output resolution.

    An output cell is inside iff any covered input cell is inside; padding
    counts as outside.
    """
    m = mask.astype(bool)[None]
    if spec.kind == CONV and spec.padding:
        m = np.pad(m, ((0, 0), (spec.padding, spec.padding),
                       (spec.padding, spec.padding)))
    view, _, _ = _windows(m.astype(np.float64), spec.kernel, spec.stride, 0)
    return view.any(axis=(3, 4))[0]


def nonzero_bounds(x: np.ndarray):
    """Inclusive (r0, r1, c0, c1) bounds of nonzero entries, or None."""
    anyc = x.any(axis=0)
    rows = anyc.any(axis=1).nonzero()[0]
    if rows.size == 0:
        return None
    cols = anyc.any(axis=0).nonzero()[0]
    return rows[0], rows[-1], cols[0], cols[-1]


def self_name(spec: LayerSpec) -> str:
    return spec.name or spec.kind
