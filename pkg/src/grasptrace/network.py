"""Network assembly, masked forward passes, and single-path backpropagation.

A forward pass records every layer output (and pooling winners) into an
ActivationTrace; the backward pass then propagates the gradient of one chosen
unit down to a lower tap or to the input image, gated by the stored ReLU and
mask state.
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .layers import (CONV, MAXPOOL, LayerSpec, conv_forward, conv_input_grad,
                     downsample_mask, maxpool_forward, maxpool_input_grad,
                     nonzero_bounds, self_name)
from .tensor import as_tensor3

IMAGE = "image"


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer stack with named conv taps (e.g. conv-1 .. conv-5)."""

    layers: tuple[LayerSpec, ...]
    input_channels: int = 3
    preprocess: tuple[str, ...] = ()

    def __post_init__(self):
        taps = [l.tap for l in self.layers if l.tap is not None]
        if len(set(taps)) != len(taps):
            raise ConfigurationError(f"duplicate tap names: {taps}")
        for layer in self.layers:
            if layer.tap is not None and layer.kind != CONV:
                raise ConfigurationError(
                    f"tap {layer.tap!r} refers to a non-conv layer")
        if len(taps) < 3:
            raise ConfigurationError(
                f"need at least three conv taps, got {taps}")

    @property
    def taps(self) -> list[str]:
        return [l.tap for l in self.layers if l.tap is not None]

    def tap_index(self, tap: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.tap == tap:
                return i
        raise ConfigurationError(f"unknown tap {tap!r}")

    def tap_channels(self, tap: str) -> int:
        return self.layers[self.tap_index(tap)].out_channels

    def shapes(self, in_hw: tuple[int, int]) -> list[tuple[int, int, int]]:
        """Per-layer output (channels, h, w) for a given input size."""
        out = []
        hw = in_hw
        channels = self.input_channels
        for layer in self.layers:
            hw = layer.out_hw(hw)
            if layer.kind == CONV:
                channels = layer.out_channels
            out.append((channels, *hw))
        return out


@dataclass
class WeightSet:
    """Per conv layer: kernel (out, in, k, k) and bias (out,) arrays."""

    kernels: dict[str, np.ndarray]
    biases: dict[str, np.ndarray]

    def validate(self, net: NetworkSpec) -> None:
        channels = net.input_channels
        for layer in net.layers:
            if layer.kind != CONV:
                continue
            name = self_name(layer)
            if name not in self.kernels:
                raise ConfigurationError(f"missing weights for layer {name!r}")
            k = self.kernels[name]
            expected = (layer.out_channels, channels, layer.kernel, layer.kernel)
            if k.shape != expected:
                raise ConfigurationError(
                    f"layer {name!r}: kernel shape {k.shape} != expected {expected}")
            b = self.biases.get(name)
            if layer.bias:
                if b is None or b.shape != (layer.out_channels,):
                    raise ConfigurationError(
                        f"layer {name!r}: bias shape "
                        f"{None if b is None else b.shape} != ({layer.out_channels},)")
            channels = layer.out_channels


@dataclass(frozen=True)
class UnitRef:
    """A single unit: (tap, filter, row, col)."""

    tap: str
    filter: int
    row: int
    col: int


@dataclass
class ActivationTrace:
    """Everything recorded by one forward pass.

    outputs[i] is layer i's final output (post-ReLU, post-mask for convs);
    argmax[i] holds pooling winner indices; layer_masks[i] the downsampled
    mask applied at conv layer i (present only for masked passes).
    """

    net: NetworkSpec
    weights: WeightSet
    image: np.ndarray
    mask: np.ndarray | None
    outputs: list[np.ndarray]
    argmax: dict[int, np.ndarray] = field(default_factory=dict)
    layer_masks: dict[int, np.ndarray] = field(default_factory=dict)

    def output_at(self, tap: str) -> np.ndarray:
        return self.outputs[self.net.tap_index(tap)]

    def mask_at(self, tap: str) -> np.ndarray | None:
        return self.layer_masks.get(self.net.tap_index(tap))

    def check_unit(self, unit: UnitRef) -> None:
        out = self.output_at(unit.tap)
        c, h, w = out.shape
        if not (0 <= unit.filter < c and 0 <= unit.row < h and 0 <= unit.col < w):
            raise ConfigurationError(f"unit {unit} outside tensor bounds {out.shape}")


def forward_pass(net: NetworkSpec, weights: WeightSet, image: np.ndarray,
                 mask: np.ndarray | None = None) -> ActivationTrace:
    """Run the network, recording all activations; optionally mask each conv.

    The mask is a binary image-resolution grid. It is downsampled to each
    layer's resolution (a cell is inside if any covered pixel is inside) and
    conv activations outside the mask are zeroed after the ReLU.
    """
    image = as_tensor3(image, net.input_channels)
    if mask is not None:
        mask = np.asarray(mask).astype(bool)
        if mask.shape != image.shape[1:]:
            raise ConfigurationError(
                f"mask shape {mask.shape} != image spatial dims {image.shape[1:]}")
    weights.validate(net)
    cur = image
    cur_mask = mask
    outputs: list[np.ndarray] = []
    argmax: dict[int, np.ndarray] = {}
    layer_masks: dict[int, np.ndarray] = {}
    for i, layer in enumerate(net.layers):
        if layer.kind == CONV:
            name = self_name(layer)
            cur = conv_forward(cur, weights.kernels[name],
                               weights.biases.get(name) if layer.bias else None,
                               layer)
            if cur_mask is not None:
                cur_mask = downsample_mask(cur_mask, layer)
                cur = cur * cur_mask
                layer_masks[i] = cur_mask
        else:
            cur, arg = maxpool_forward(cur, layer)
            argmax[i] = arg
            if cur_mask is not None:
                cur_mask = downsample_mask(cur_mask, layer)
        outputs.append(cur)
    return ActivationTrace(net, weights, image, mask, outputs, argmax, layer_masks)


def replay_trace(trace: ActivationTrace) -> bool:
    """True iff re-running the forward pass reproduces the trace bit-identically."""
    fresh = forward_pass(trace.net, trace.weights, trace.image, trace.mask)
    return all(np.array_equal(a, b)
               for a, b in zip(trace.outputs, fresh.outputs))


def backward_single_path(trace: ActivationTrace, source: UnitRef,
                         target_tap: str = IMAGE) -> np.ndarray:
    """Gradient of one unit's activation w.r.t. a lower tap or the image.

    The gradient flows through the stored ReLU gates (which also encode the
    mask, since masked activations are exactly zero) and the recorded pooling
    winners. A dead source unit yields an all-zero gradient.
    """
    net = trace.net
    trace.check_unit(source)
    src_idx = net.tap_index(source.tap)
    if target_tap == IMAGE:
        tgt_idx = -1
    else:
        tgt_idx = net.tap_index(target_tap)
        if tgt_idx >= src_idx:
            raise ConfigurationError(
                f"target tap {target_tap!r} is not below source {source.tap!r}")
    grad = np.zeros_like(trace.outputs[src_idx])
    if trace.outputs[src_idx][source.filter, source.row, source.col] > 0.0:
        grad[source.filter, source.row, source.col] = 1.0
    for i in range(src_idx, tgt_idx, -1):
        layer = net.layers[i]
        below = trace.outputs[i - 1] if i > 0 else trace.image
        if layer.kind == CONV:
            # Combined ReLU+mask gate: output > 0 iff pre-ReLU > 0 and in-mask.
            grad = grad * (trace.outputs[i] > 0.0)
            grad = conv_input_grad(grad, trace.weights.kernels[self_name(layer)],
                                   below.shape[1:], layer)
        else:
            grad = maxpool_input_grad(grad, trace.argmax[i], below.shape[1:])
    return grad


def receptive_field(net: NetworkSpec, source: UnitRef,
                    target_tap: str = IMAGE) -> tuple[int, int, int, int]:
    """Theoretical receptive field of a unit, as inclusive unclipped bounds
    (r0, r1, c0, c1) at the target resolution."""
    src_idx = net.tap_index(source.tap)
    tgt_idx = -1 if target_tap == IMAGE else net.tap_index(target_tap)
    r0, r1 = source.row, source.row
    c0, c1 = source.col, source.col
    for i in range(src_idx, tgt_idx, -1):
        layer = net.layers[i]
        r0 = r0 * layer.stride - layer.padding
        c0 = c0 * layer.stride - layer.padding
        r1 = r1 * layer.stride - layer.padding + layer.kernel - 1
        c1 = c1 * layer.stride - layer.padding + layer.kernel - 1
    return r0, r1, c0, c1


# ---------------------------------------------------------------------------
# Weight manifest + blob format
#
# manifest.txt:
#   grasptrace-weights v1
#   input channels=<n>
#   preprocess <freeform>            (zero or more)
#   layer name=<s> kind=conv out=<n> k=<n> stride=<n> pad=<n> bias=<0|1>
#         [tap=<s>] blob=<file>
#   layer name=<s> kind=maxpool k=<n> stride=<n>
#
# Each blob holds little-endian float32: kernel values in (out, in, k, k)
# C order, then the bias vector when bias=1.
# ---------------------------------------------------------------------------

MANIFEST_MAGIC = "grasptrace-weights v1"
MANIFEST_NAME = "manifest.txt"


def save_weights(out_dir, net: NetworkSpec, weights: WeightSet) -> None:
    weights.validate(net)
    os.makedirs(out_dir, exist_ok=True)
    lines = [MANIFEST_MAGIC, f"input channels={net.input_channels}"]
    lines += [f"preprocess {p}" for p in net.preprocess]
    in_channels = net.input_channels
    for layer in net.layers:
        name = self_name(layer)
        if layer.kind == CONV:
            blob = f"{name}.bin"
            parts = [f"layer name={name}", "kind=conv",
                     f"out={layer.out_channels}", f"k={layer.kernel}",
                     f"stride={layer.stride}", f"pad={layer.padding}",
                     f"bias={int(layer.bias)}"]
            if layer.tap:
                parts.append(f"tap={layer.tap}")
            parts.append(f"blob={blob}")
            lines.append(" ".join(parts))
            buf = io.BytesIO()
            buf.write(weights.kernels[name].astype("<f4").tobytes())
            if layer.bias:
                buf.write(weights.biases[name].astype("<f4").tobytes())
            with open(os.path.join(out_dir, blob), "wb") as f:
                f.write(buf.getvalue())
            in_channels = layer.out_channels
        else:
            lines.append(f"layer name={name} kind=maxpool k={layer.kernel} "
                         f"stride={layer.stride}")
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as f:
        f.write("\n".join(lines) + "\n")


def _parse_kv(tokens: list[str], line: str) -> dict[str, str]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ConfigurationError(f"malformed manifest entry {tok!r} in: {line}")
        key, value = tok.split("=", 1)
        out[key] = value
    return out


def load_weights(in_dir) -> tuple[NetworkSpec, WeightSet]:
    """Load a manifest directory, rejecting any shape mismatch."""
    path = os.path.join(in_dir, MANIFEST_NAME)
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != MANIFEST_MAGIC:
        raise ConfigurationError(f"{path}: not a {MANIFEST_MAGIC!r} manifest")
    input_channels = None
    preprocess: list[str] = []
    specs: list[LayerSpec] = []
    blobs: dict[str, str] = {}
    for line in lines[1:]:
        tokens = line.split()
        if tokens[0] == "input":
            input_channels = int(_parse_kv(tokens[1:], line)["channels"])
        elif tokens[0] == "preprocess":
            preprocess.append(line[len("preprocess "):])
        elif tokens[0] == "layer":
            kv = _parse_kv(tokens[1:], line)
            kind = kv.get("kind")
            if kind == "conv":
                spec = LayerSpec(CONV, kernel=int(kv["k"]),
                                 stride=int(kv.get("stride", 1)),
                                 padding=int(kv.get("pad", 0)),
                                 out_channels=int(kv["out"]),
                                 bias=bool(int(kv.get("bias", 1))),
                                 name=kv["name"], tap=kv.get("tap"))
                blobs[kv["name"]] = kv["blob"]
            elif kind == "maxpool":
                spec = LayerSpec(MAXPOOL, kernel=int(kv["k"]),
                                 stride=int(kv.get("stride", 1)), name=kv["name"])
            else:
                raise ConfigurationError(
                    f"{path}: unsupported layer kind {kind!r} (only conv and "
                    f"maxpool are supported)")
            specs.append(spec)
        else:
            raise ConfigurationError(f"{path}: unknown manifest line: {line}")
    if input_channels is None:
        raise ConfigurationError(f"{path}: missing 'input channels=' line")
    net = NetworkSpec(tuple(specs), input_channels, tuple(preprocess))
    kernels: dict[str, np.ndarray] = {}
    biases: dict[str, np.ndarray] = {}
    in_c = input_channels
    for layer in net.layers:
        if layer.kind != CONV:
            continue
        blob_path = os.path.join(in_dir, blobs[layer.name])
        raw = np.fromfile(blob_path, dtype="<f4")
        n_kernel = layer.out_channels * in_c * layer.kernel * layer.kernel
        n_bias = layer.out_channels if layer.bias else 0
        if raw.size != n_kernel + n_bias:
            raise ConfigurationError(
                f"{blob_path}: expected {n_kernel + n_bias} float32 values "
                f"({n_kernel} kernel + {n_bias} bias), got {raw.size}")
        kernels[layer.name] = raw[:n_kernel].astype(np.float64).reshape(
            layer.out_channels, in_c, layer.kernel, layer.kernel)
        if layer.bias:
            biases[layer.name] = raw[n_kernel:].astype(np.float64)
        in_c = layer.out_channels
    ws = WeightSet(kernels, biases)
    ws.validate(net)
    return net, ws
