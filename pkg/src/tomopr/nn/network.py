"""Network assembly, forward/backward passes, and the binary model format.

The refiner architecture is twelve stride-1 convolutional layers acting on
a single-channel volume: layer 1 maps 1 -> 16 channels with plain ReLU,
layers 2 through 11 map 16 -> 16 with batch norm before ReLU, and layer 12
maps 16 -> 1 with an output bias and a sigmoid, bounding the result to
(0, 1). No layer pools or strides, so spatial dims are preserved end to
end and the receptive-field half-width is exactly the layer count.

Model container (.tprn)
    magic ``TPRN`` | u32 version (1) | u32 layer count | u32 tile dims
    (tx, ty, tz) | per layer: u32 q_in, u32 q_out, u32 flags (1 batch
    norm, 2 bias, 4 relu, 8 sigmoid), f64 bn epsilon | payload. Payload is
    little-endian float64: per layer, kernel (q_out, q_in, 3, 3, 3) in C
    order, then bias, gamma, beta, running mean, running variance, each
    when present. The batch-norm momentum is a training knob and is not
    stored.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tomopr.errors import ConfigError
from tomopr.nn._kernels import conv3d_batch, conv3d_input_grad, conv3d_weight_grad
from tomopr.nn.layers import (
    BatchNormParams,
    batch_norm_backward,
    batch_norm_inference,
    batch_norm_train,
    relu,
    relu_grad,
    sigmoid,
    sigmoid_grad,
)
from tomopr.runtime import child_rng

_TPRN_MAGIC = b"TPRN"
_TPRN_VERSION = 1
_FLAG_BN, _FLAG_BIAS, _FLAG_RELU, _FLAG_SIGMOID = 1, 2, 4, 8

#: Standard training tile; inference tiles large volumes at this size.
DEFAULT_INPUT_DIMS = (64, 64, 32)

#: Hidden width of the standard refiner.
DEFAULT_CHANNELS = 16

#: Total convolutional layers of the standard refiner.
DEFAULT_DEPTH = 12


@dataclass
class LayerSpec:
    """Declarative description of one convolutional layer."""

    in_channels: int
    out_channels: int
    batch_norm: bool = False
    bias: bool = False
    activation: str = "relu"

    def __post_init__(self) -> None:
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError(f"channel counts must be positive, got {self}")
        if self.activation not in ("relu", "sigmoid"):
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass
class ConvLayer:
    """One layer's parameters; kernel layout is (Q_out, Q_in, 3, 3, 3)."""

    kernel: np.ndarray
    bias: np.ndarray | None
    bn: BatchNormParams | None
    activation: str


def default_layer_specs(
    channels: int = DEFAULT_CHANNELS, depth: int = DEFAULT_DEPTH
) -> list[LayerSpec]:
    """The refiner stack: plain entry, normalized trunk, sigmoid head."""
    if depth < 2:
        raise ConfigError(f"network depth must be >= 2, got {depth}")
    specs = [LayerSpec(1, channels, activation="relu")]
    for _ in range(depth - 2):
        specs.append(LayerSpec(channels, channels, batch_norm=True, activation="relu"))
    specs.append(LayerSpec(channels, 1, bias=True, activation="sigmoid"))
    return specs


class Network:
    """An ordered stack of convolutional layers plus its tile dims."""

    def __init__(self, layers: list[ConvLayer], input_dims: tuple[int, int, int]):
        if not layers:
            raise ConfigError("a network needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].kernel.shape[1] != layers[i - 1].kernel.shape[0]:
                raise ConfigError(
                    f"layer {i} expects {layers[i].kernel.shape[1]} input channels, "
                    f"layer {i - 1} emits {layers[i - 1].kernel.shape[0]}"
                )
        self.layers = layers
        self.input_dims = tuple(int(d) for d in input_dims)

    @property
    def dtype(self) -> np.dtype:
        return self.layers[0].kernel.dtype

    @property
    def in_channels(self) -> int:
        return self.layers[0].kernel.shape[1]

    # -- forward / backward ------------------------------------------------

    def _forward_batch(self, x: np.ndarray, training: bool, keep_cache: bool):
        """Channels-first batch pass: x is (B, Q_in, X, Y, Z)."""
        if x.shape[1] != self.in_channels:
            raise ValueError(
                f"network expects {self.in_channels} input channels, got {x.shape[1]}"
            )
        caches: list[dict] = []
        for layer in self.layers:
            cache: dict = {"xin": x}
            y = conv3d_batch(x, layer.kernel)
            if layer.bias is not None:
                y += layer.bias[:, None, None, None]
            if layer.bn is not None:
                if training:
                    y, bn_cache = batch_norm_train(y, layer.bn)
                    cache["bn"] = bn_cache
                else:
                    y = batch_norm_inference(y, layer.bn)
            y = relu(y) if layer.activation == "relu" else sigmoid(y)
            cache["y"] = y
            caches.append(cache)
            x = y
        return x, (caches if keep_cache else None)

    def _backward_batch(self, grad_y: np.ndarray, caches: list[dict]) -> list[dict]:
        """Exact reverse-mode gradients; returns one dict per layer."""
        grads: list[dict] = [None] * len(self.layers)  # type: ignore[list-item]
        g = grad_y
        for li in range(len(self.layers) - 1, -1, -1):
            layer, cache = self.layers[li], caches[li]
            if layer.activation == "relu":
                g = relu_grad(cache["y"], g)
            else:
                g = sigmoid_grad(cache["y"], g)
            entry: dict = {}
            if layer.bn is not None:
                g, entry["gamma"], entry["beta"] = batch_norm_backward(
                    g, cache["bn"], layer.bn
                )
            if layer.bias is not None:
                entry["bias"] = g.sum(axis=(0, 2, 3, 4))
            entry["kernel"] = conv3d_weight_grad(cache["xin"], g)
            grads[li] = entry
            if li > 0:
                g = conv3d_input_grad(g, layer.kernel)
        return grads

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        """Run one channels-last tensor (X, Y, Z, Q) or bare volume (X, Y, Z).

        Any spatial dims are accepted; ``input_dims`` only governs tiling.
        Training mode normalizes with batch statistics (and updates the
        running ones); the default inference mode is deterministic.
        """
        arr = np.asarray(x, dtype=self.dtype)
        squeeze = arr.ndim == 3
        if squeeze:
            arr = arr[..., None]
        if arr.ndim != 4:
            raise ValueError(f"expected (X, Y, Z, Q) tensor, got shape {arr.shape}")
        xcf = np.ascontiguousarray(arr.transpose(3, 0, 1, 2))[None]
        y, _ = self._forward_batch(xcf, training=training, keep_cache=False)
        out = np.ascontiguousarray(y[0].transpose(1, 2, 3, 0))
        return out[..., 0] if squeeze else out

    # -- parameter access --------------------------------------------------

    def trainable_arrays(self) -> list[np.ndarray]:
        """Kernel/bias/gamma/beta arrays in declaration order (live views)."""
        out = []
        for layer in self.layers:
            out.append(layer.kernel)
            if layer.bias is not None:
                out.append(layer.bias)
            if layer.bn is not None:
                out.append(layer.bn.gamma)
                out.append(layer.bn.beta)
        return out

    def trainable_grads(self, grads: list[dict]) -> list[np.ndarray]:
        """Gradient arrays aligned with :meth:`trainable_arrays`."""
        out = []
        for layer, entry in zip(self.layers, grads):
            out.append(entry["kernel"])
            if layer.bias is not None:
                out.append(entry["bias"])
            if layer.bn is not None:
                out.append(entry["gamma"])
                out.append(entry["beta"])
        return out

    def state_arrays(self) -> list[np.ndarray]:
        """All persistent arrays, running statistics included."""
        out = []
        for layer in self.layers:
            out.append(layer.kernel)
            if layer.bias is not None:
                out.append(layer.bias)
            if layer.bn is not None:
                out += [layer.bn.gamma, layer.bn.beta, layer.bn.running_mean, layer.bn.running_var]
        return out

    def snapshot(self) -> list[np.ndarray]:
        return [a.copy() for a in self.state_arrays()]

    def restore(self, snapshot: list[np.ndarray]) -> None:
        live = self.state_arrays()
        if len(live) != len(snapshot):
            raise ValueError("snapshot does not match this network's layout")
        for dst, src in zip(live, snapshot):
            dst[...] = src

    def astype(self, dtype) -> "Network":
        """Deep copy with every parameter cast to ``dtype``."""
        dtype = np.dtype(dtype)
        layers = []
        for layer in self.layers:
            bn = None
            if layer.bn is not None:
                bn = BatchNormParams(
                    gamma=layer.bn.gamma.astype(dtype),
                    beta=layer.bn.beta.astype(dtype),
                    running_mean=layer.bn.running_mean.astype(dtype),
                    running_var=layer.bn.running_var.astype(dtype),
                    eps=layer.bn.eps,
                    momentum=layer.bn.momentum,
                )
            layers.append(
                ConvLayer(
                    kernel=layer.kernel.astype(dtype),
                    bias=None if layer.bias is None else layer.bias.astype(dtype),
                    bn=bn,
                    activation=layer.activation,
                )
            )
        return Network(layers, self.input_dims)


def build_network(
    input_dims: tuple[int, int, int] = DEFAULT_INPUT_DIMS,
    specs: list[LayerSpec] | None = None,
    seed: int = 0,
    dtype=np.float64,
) -> Network:
    """Construct a network with He-initialized kernels.

    Hidden kernels draw from N(0, 2 / fan_in) with fan_in = 27 * Q_in; the
    final layer uses a fixed 0.01 std so the sigmoid starts near 0.5 and
    early gradients stay in its responsive range. Biases and batch-norm
    shifts start at zero, scales at one. Layer i consumes the substream
    ``child_rng(seed, i)``.
    """
    if specs is None:
        specs = default_layer_specs()
    dtype = np.dtype(dtype)
    layers = []
    for i, spec in enumerate(specs):
        rng = child_rng(seed, i)
        fan_in = 27 * spec.in_channels
        std = 0.01 if i == len(specs) - 1 else np.sqrt(2.0 / fan_in)
        kernel = rng.normal(0.0, std, size=(spec.out_channels, spec.in_channels, 3, 3, 3))
        layers.append(
            ConvLayer(
                kernel=kernel.astype(dtype),
                bias=np.zeros(spec.out_channels, dtype=dtype) if spec.bias else None,
                bn=BatchNormParams.identity(spec.out_channels, dtype) if spec.batch_norm else None,
                activation=spec.activation,
            )
        )
    return Network(layers, input_dims)


def write_network(path: str | Path, net: Network) -> None:
    """Serialize to the binary model container (float64 payload)."""
    from tomopr.io import atomic_write_bytes

    parts = [
        _TPRN_MAGIC,
        struct.pack("<II", _TPRN_VERSION, len(net.layers)),
        struct.pack("<III", *net.input_dims),
    ]
    payload = []
    for layer in net.layers:
        qo, qi = layer.kernel.shape[:2]
        flags = 0
        flags |= _FLAG_BN if layer.bn is not None else 0
        flags |= _FLAG_BIAS if layer.bias is not None else 0
        flags |= _FLAG_RELU if layer.activation == "relu" else _FLAG_SIGMOID
        eps = layer.bn.eps if layer.bn is not None else 0.0
        parts.append(struct.pack("<IIId", qi, qo, flags, eps))
        payload.append(layer.kernel.astype("<f8").tobytes())
        if layer.bias is not None:
            payload.append(layer.bias.astype("<f8").tobytes())
        if layer.bn is not None:
            for arr in (layer.bn.gamma, layer.bn.beta, layer.bn.running_mean, layer.bn.running_var):
                payload.append(arr.astype("<f8").tobytes())
    atomic_write_bytes(path, b"".join(parts) + b"".join(payload))


def read_network(path: str | Path) -> Network:
    """Load a model container; parameters come back as float64."""
    raw = Path(path).read_bytes()
    if raw[:4] != _TPRN_MAGIC:
        raise ConfigError(f"{path}: not a model container (bad magic {raw[:4]!r})")
    version, n_layers = struct.unpack("<II", raw[4:12])
    if version != _TPRN_VERSION:
        raise ConfigError(f"{path}: unsupported model version {version}")
    input_dims = struct.unpack("<III", raw[12:24])
    pos = 24
    headers = []
    for _ in range(n_layers):
        qi, qo, flags, eps = struct.unpack("<IIId", raw[pos : pos + 20])
        pos += 20
        if flags & (_FLAG_RELU | _FLAG_SIGMOID) not in (_FLAG_RELU, _FLAG_SIGMOID):
            raise ConfigError(f"{path}: layer flags {flags:#x} name no single activation")
        headers.append((qi, qo, flags, eps))

    def take(count: int) -> np.ndarray:
        nonlocal pos
        end = pos + 8 * count
        if end > len(raw):
            raise ConfigError(f"{path}: truncated payload")
        out = np.frombuffer(raw, dtype="<f8", offset=pos, count=count).copy()
        pos = end
        return out

    layers = []
    for qi, qo, flags, eps in headers:
        kernel = take(qo * qi * 27).reshape(qo, qi, 3, 3, 3)
        bias = take(qo) if flags & _FLAG_BIAS else None
        bn = None
        if flags & _FLAG_BN:
            bn = BatchNormParams(
                gamma=take(qo),
                beta=take(qo),
                running_mean=take(qo),
                running_var=take(qo),
                eps=eps,
            )
        layers.append(
            ConvLayer(
                kernel=kernel,
                bias=bias,
                bn=bn,
                activation="relu" if flags & _FLAG_RELU else "sigmoid",
            )
        )
    if pos != len(raw):
        raise ConfigError(f"{path}: {len(raw) - pos} trailing bytes after payload")
    return Network(layers, input_dims)
