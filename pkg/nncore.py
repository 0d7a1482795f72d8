"""
SUDF Saliency - Neural Network Core
Forward/backward kernels for the fixed feature network, softmax cross-entropy, Glorot init and SGD with momentum.
Tensors are float64 arrays shaped (channels, height, width).
"""
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from config import BN_EPSILON, CONTEXT_MARGIN, LEARNING_RATE, MOMENTUM, N_FEATURES, debug_log


class ShapeError(ValueError):
    """Tensor, parameter or gradient shapes do not line up."""


class StaleCacheError(ValueError):
    """A backward pass was given a cache from another network or an outdated parameter set."""


CHECKPOINT_MAGIC = b"SUDFCKPT"
CHECKPOINT_VERSION = 1


def _check_tensor(x: np.ndarray, name: str = "input") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"{name} must be (channels, height, width), got shape {x.shape}")
    return x


# ─── Correlation Primitives ──────────────────────────────────────────────────
# _correlate is the same-size, stride-1, zero-padded cross-correlation;
# _correlate_adjoint is its exact transpose and _correlate_weight_grad its weight derivative.

def _correlate(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    n_out, n_in, k, _ = w.shape
    pad = k // 2
    _, height, width = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n_out, height * width))
    for dy in range(k):
        for dx in range(k):
            patch = xp[:, dy:dy + height, dx:dx + width].reshape(n_in, -1)
            out += w[:, :, dy, dx] @ patch
    return out.reshape(n_out, height, width)


def _correlate_adjoint(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    n_out, n_in, k, _ = w.shape
    pad = k // 2
    _, height, width = g.shape
    flat = g.reshape(n_out, -1)
    acc = np.zeros((n_in, height + 2 * pad, width + 2 * pad))
    for dy in range(k):
        for dx in range(k):
            acc[:, dy:dy + height, dx:dx + width] += (w[:, :, dy, dx].T @ flat).reshape(n_in, height, width)
    return acc[:, pad:pad + height, pad:pad + width]


def _correlate_weight_grad(g: np.ndarray, x: np.ndarray, k: int) -> np.ndarray:
    pad = k // 2
    n_out, height, width = g.shape
    n_in = x.shape[0]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    flat = g.reshape(n_out, -1)
    grad = np.zeros((n_out, n_in, k, k))
    for dy in range(k):
        for dx in range(k):
            grad[:, :, dy, dx] = flat @ xp[:, dy:dy + height, dx:dx + width].reshape(n_in, -1).T
    return grad


# ─── Layers ──────────────────────────────────────────────────────────────────

@dataclass
class ConvLayer:
    """
    Stride-1 same-size convolution. Weights are (out, in, k, k) for mode "conv" and
    (in, out, k, k) for mode "transposed", so a transposed layer sharing a conv layer's
    weight array applies the adjoint map.
    """

    in_channels: int
    out_channels: int
    kernel_size: int
    mode: str = "conv"
    name: str = "conv"
    weight: np.ndarray = None
    bias: np.ndarray = None

    def __post_init__(self):
        if self.kernel_size % 2 != 1:
            raise ShapeError(f"Kernel size must be odd for same-size padding, got {self.kernel_size}")
        if self.mode not in ("conv", "transposed"):
            raise ShapeError(f"Unknown convolution mode: {self.mode}")
        if self.weight is None:
            self.weight = np.zeros(self.weight_shape)
        if self.bias is None:
            self.bias = np.zeros(self.out_channels)
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.shape != self.weight_shape:
            raise ShapeError(f"{self.name}: weight shape {self.weight.shape} != {self.weight_shape}")
        if self.bias.shape != (self.out_channels,):
            raise ShapeError(f"{self.name}: bias shape {self.bias.shape} != ({self.out_channels},)")

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        k = self.kernel_size
        if self.mode == "conv":
            return (self.out_channels, self.in_channels, k, k)
        return (self.in_channels, self.out_channels, k, k)

    @property
    def padding(self) -> int:
        return (self.kernel_size - 1) // 2

    @property
    def fan_in(self) -> int:
        return self.kernel_size * self.kernel_size * self.in_channels

    @property
    def fan_out(self) -> int:
        return self.kernel_size * self.kernel_size * self.out_channels


@dataclass
class BatchNormState:
    """Per-channel scale/shift plus the batch statistics captured by the last forward pass."""

    channels: int
    epsilon: float = BN_EPSILON
    name: str = "bn"
    gamma: np.ndarray = None
    beta: np.ndarray = None
    batch_mean: Optional[np.ndarray] = None
    batch_var: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"Batch-norm epsilon must be positive, got {self.epsilon}")
        if self.gamma is None:
            self.gamma = np.ones(self.channels)
        if self.beta is None:
            self.beta = np.zeros(self.channels)
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)


@dataclass
class ReluLayer:
    name: str = "relu"


@dataclass
class MaxPoolLayer:
    name: str = "pool"


@dataclass
class UpsampleLayer:
    name: str = "up"


Layer = Union[ConvLayer, BatchNormState, ReluLayer, MaxPoolLayer, UpsampleLayer]


# ─── Convolution ─────────────────────────────────────────────────────────────

def conv_forward(layer: ConvLayer, x: np.ndarray) -> np.ndarray:
    x = _check_tensor(x)
    if layer.mode != "conv":
        raise ShapeError(f"{layer.name} is a transposed layer; use transposed_conv_forward")
    if x.shape[0] != layer.in_channels:
        raise ShapeError(f"{layer.name}: input has {x.shape[0]} channels, layer expects {layer.in_channels}")
    return _correlate(x, layer.weight) + layer.bias[:, None, None]


def conv_backward(layer: ConvLayer, x: np.ndarray, grad_out: np.ndarray):
    """Returns (grad_input, grad_weight, grad_bias)."""
    x = _check_tensor(x)
    grad_out = _check_tensor(grad_out, "grad_out")
    if x.shape[0] != layer.in_channels or grad_out.shape != (layer.out_channels,) + x.shape[1:]:
        raise ShapeError(f"{layer.name}: input {x.shape} and grad_out {grad_out.shape} do not match the layer")
    grad_input = _correlate_adjoint(grad_out, layer.weight)
    grad_weight = _correlate_weight_grad(grad_out, x, layer.kernel_size)
    grad_bias = grad_out.sum(axis=(1, 2))
    return grad_input, grad_weight, grad_bias


def transposed_conv_forward(layer: ConvLayer, x: np.ndarray) -> np.ndarray:
    x = _check_tensor(x)
    if layer.mode != "transposed":
        raise ShapeError(f"{layer.name} is not a transposed layer")
    if x.shape[0] != layer.in_channels:
        raise ShapeError(f"{layer.name}: input has {x.shape[0]} channels, layer expects {layer.in_channels}")
    return _correlate_adjoint(x, layer.weight) + layer.bias[:, None, None]


def transposed_conv_backward(layer: ConvLayer, x: np.ndarray, grad_out: np.ndarray):
    """Returns (grad_input, grad_weight, grad_bias)."""
    x = _check_tensor(x)
    grad_out = _check_tensor(grad_out, "grad_out")
    if x.shape[0] != layer.in_channels or grad_out.shape != (layer.out_channels,) + x.shape[1:]:
        raise ShapeError(f"{layer.name}: input {x.shape} and grad_out {grad_out.shape} do not match the layer")
    grad_input = _correlate(grad_out, layer.weight)
    grad_weight = _correlate_weight_grad(x, grad_out, layer.kernel_size)
    grad_bias = grad_out.sum(axis=(1, 2))
    return grad_input, grad_weight, grad_bias


# ─── Pooling / Upsampling / ReLU ─────────────────────────────────────────────

def maxpool2_forward(x: np.ndarray):
    """
    2x2/stride-2 max pooling. Odd sizes are edge-replicated on the bottom/right first.
    Returns (output, argmax) where argmax holds the winning position 0..3 within each block
    (row-major; ties go to the first position).
    """
    x = _check_tensor(x)
    channels, height, width = x.shape
    xp = np.pad(x, ((0, 0), (0, height % 2), (0, width % 2)), mode="edge")
    h2, w2 = xp.shape[1] // 2, xp.shape[2] // 2
    blocks = xp.reshape(channels, h2, 2, w2, 2).transpose(0, 1, 3, 2, 4).reshape(channels, h2, w2, 4)
    argmax = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]
    return out, argmax


def maxpool2_backward(grad_out: np.ndarray, argmax: np.ndarray, input_shape: tuple[int, int, int]) -> np.ndarray:
    grad_out = _check_tensor(grad_out, "grad_out")
    if grad_out.shape != argmax.shape:
        raise ShapeError(f"grad_out {grad_out.shape} does not match pooling indices {argmax.shape}")
    channels, h2, w2 = grad_out.shape
    blocks = np.zeros((channels, h2, w2, 4))
    np.put_along_axis(blocks, argmax[..., None], grad_out[..., None], axis=-1)
    grad = blocks.reshape(channels, h2, w2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(channels, 2 * h2, 2 * w2)
    _, height, width = input_shape
    # Replicated padding rows/cols pass their gradient back to the source row/col
    if grad.shape[1] > height:
        grad[:, height - 1, :] += grad[:, height, :]
    if grad.shape[2] > width:
        grad[:, :, width - 1] += grad[:, :, width]
    return grad[:, :height, :width]


def upsample2_forward(x: np.ndarray) -> np.ndarray:
    x = _check_tensor(x)
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def upsample2_backward(grad_out: np.ndarray) -> np.ndarray:
    grad_out = _check_tensor(grad_out, "grad_out")
    channels, height, width = grad_out.shape
    if height % 2 or width % 2:
        raise ShapeError(f"Upsample gradient must have even spatial size, got {grad_out.shape}")
    return grad_out.reshape(channels, height // 2, 2, width // 2, 2).sum(axis=(2, 4))


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # Subgradient 0 at x == 0
    return grad_out * (np.asarray(x) > 0)


# ─── Batch Normalization ─────────────────────────────────────────────────────

@dataclass
class BatchNormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray


def batchnorm_forward(state: BatchNormState, x: np.ndarray, training: bool = True):
    """Per-channel normalization over H x W. Returns (output, cache)."""
    x = _check_tensor(x)
    if x.shape[0] != state.channels:
        raise ShapeError(f"{state.name}: input has {x.shape[0]} channels, expected {state.channels}")
    if training or state.batch_mean is None:
        mean = x.mean(axis=(1, 2))
        var = x.var(axis=(1, 2))
        state.batch_mean, state.batch_var = mean, var
    else:
        mean, var = state.batch_mean, state.batch_var
    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    x_hat = (x - mean[:, None, None]) * inv_std[:, None, None]
    out = state.gamma[:, None, None] * x_hat + state.beta[:, None, None]
    return out, BatchNormCache(x_hat=x_hat, inv_std=inv_std)


def batchnorm_backward(state: BatchNormState, cache: BatchNormCache, grad_out: np.ndarray):
    """Returns (grad_input, grad_gamma, grad_beta), including the mean/variance dependence."""
    grad_out = _check_tensor(grad_out, "grad_out")
    if grad_out.shape != cache.x_hat.shape:
        raise ShapeError(f"{state.name}: grad_out {grad_out.shape} != activation {cache.x_hat.shape}")
    n = grad_out.shape[1] * grad_out.shape[2]
    grad_gamma = (grad_out * cache.x_hat).sum(axis=(1, 2))
    grad_beta = grad_out.sum(axis=(1, 2))
    g_hat = grad_out * state.gamma[:, None, None]
    grad_input = (cache.inv_std[:, None, None] / n) * (
        n * g_hat
        - g_hat.sum(axis=(1, 2))[:, None, None]
        - cache.x_hat * (g_hat * cache.x_hat).sum(axis=(1, 2))[:, None, None]
    )
    return grad_input, grad_gamma, grad_beta


# ─── Loss ────────────────────────────────────────────────────────────────────

def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean per-pixel cross-entropy. Returns (loss, grad_logits)."""
    logits = _check_tensor(logits, "logits")
    labels = np.asarray(labels)
    n_classes, height, width = logits.shape
    if labels.shape != (height, width):
        raise ShapeError(f"labels shape {labels.shape} != logits spatial shape {(height, width)}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"Labels must lie in [0, {n_classes}), got range [{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=0, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    log_probs = shifted - log_norm
    n_pixels = height * width
    picked = np.take_along_axis(log_probs, labels[None].astype(np.intp), axis=0)[0]
    loss = float(-picked.mean())
    grad = np.exp(log_probs)
    np.put_along_axis(grad, labels[None].astype(np.intp), np.take_along_axis(grad, labels[None].astype(np.intp), axis=0) - 1.0, axis=0)
    return loss, grad / n_pixels


# ─── Network ─────────────────────────────────────────────────────────────────

class Network:
    """
    Fixed encoder/decoder: three conv3x3 blocks with two 2x2 max-pools, then two
    upsample + transposed-conv blocks (3x3 then 1x1). Every conv is followed by ReLU and BN;
    the features are the output of the last BN layer.
    `context_margin` pixels of mirrored input surround every forward pass so that the
    zero padding of the inner layers never reaches the cropped features.
    """

    def __init__(self, in_channels: int, n_features: int = N_FEATURES, bn_epsilon: float = BN_EPSILON,
                 context_margin: int = CONTEXT_MARGIN):
        if in_channels < 1 or n_features < 1:
            raise ShapeError("Network needs at least one input and one output channel")
        if context_margin < 0 or context_margin % 4:
            raise ShapeError(f"context_margin must be a non-negative multiple of 4, got {context_margin}")
        self.context_margin = context_margin
        p = n_features
        self.in_channels = in_channels
        self.n_features = n_features
        self.layers: list[Layer] = [
            ConvLayer(in_channels, p, 3, "conv", "conv1"), ReluLayer("relu1"), BatchNormState(p, bn_epsilon, "bn1"),
            MaxPoolLayer("pool1"),
            ConvLayer(p, p, 3, "conv", "conv2"), ReluLayer("relu2"), BatchNormState(p, bn_epsilon, "bn2"),
            MaxPoolLayer("pool2"),
            ConvLayer(p, p, 3, "conv", "conv3"), ReluLayer("relu3"), BatchNormState(p, bn_epsilon, "bn3"),
            UpsampleLayer("up1"),
            ConvLayer(p, p, 3, "transposed", "deconv1"), ReluLayer("relu4"), BatchNormState(p, bn_epsilon, "bn4"),
            UpsampleLayer("up2"),
            ConvLayer(p, p, 1, "transposed", "deconv2"), ReluLayer("relu5"), BatchNormState(p, bn_epsilon, "bn5"),
        ]
        self.version = 0

    def parameters(self) -> dict[str, np.ndarray]:
        """Layer-ordered parameter arrays (live references)."""
        params = {}
        for layer in self.layers:
            if isinstance(layer, ConvLayer):
                params[f"{layer.name}.weight"] = layer.weight
                params[f"{layer.name}.bias"] = layer.bias
            elif isinstance(layer, BatchNormState):
                params[f"{layer.name}.gamma"] = layer.gamma
                params[f"{layer.name}.beta"] = layer.beta
        return params

    def conv_layers(self) -> list[ConvLayer]:
        return [layer for layer in self.layers if isinstance(layer, ConvLayer)]

    def mark_updated(self) -> None:
        """Invalidate caches from earlier forward passes."""
        self.version += 1

    def step(self, optimizer: "OptimizerState", grads: dict[str, np.ndarray]) -> None:
        sgd_momentum_step(optimizer, self.parameters(), grads)
        self.mark_updated()


def build_network(in_channels: int, n_features: int = N_FEATURES, bn_epsilon: float = BN_EPSILON,
                  context_margin: int = CONTEXT_MARGIN) -> Network:
    return Network(in_channels, n_features, bn_epsilon, context_margin)


@dataclass
class NetworkCache:
    network_id: int
    version: int
    input_shape: tuple[int, int, int]
    padded_shape: tuple[int, int, int]
    margin: int = 0
    inputs: list = field(default_factory=list)
    extras: list = field(default_factory=list)


def glorot_init(net: Network, seed: int) -> Network:
    """
    Uniform(-b, b) weights with b = sqrt(6 / (fan_in + fan_out)), fans counted as k*k*channels;
    zero biases, gamma 1, beta 0. Uses numpy's PCG64 generator seeded with `seed`.
    """
    rng = np.random.default_rng(seed)
    for layer in net.layers:
        if isinstance(layer, ConvLayer):
            bound = np.sqrt(6.0 / (layer.fan_in + layer.fan_out))
            layer.weight[...] = rng.uniform(-bound, bound, size=layer.weight_shape)
            layer.bias[...] = 0.0
        elif isinstance(layer, BatchNormState):
            layer.gamma[...] = 1.0
            layer.beta[...] = 0.0
            layer.batch_mean = layer.batch_var = None
    net.mark_updated()
    return net


def network_forward(net: Network, cube) -> tuple[np.ndarray, NetworkCache]:
    """
    Run the network on a cube (HyperspectralCube or (bands, H, W) array).
    The input is mirrored outwards by net.context_margin on every side, sizes not divisible
    by 4 are then edge-padded bottom/right, and the features are cropped back to (H, W).
    Returns (features (P, H, W), cache).
    """
    data = cube if isinstance(cube, np.ndarray) else cube.data
    x = _check_tensor(data, "cube")
    if x.shape[0] != net.in_channels:
        raise ShapeError(f"Cube has {x.shape[0]} bands, network expects {net.in_channels}")
    _, height, width = x.shape
    margin = net.context_margin
    if margin:
        x = np.pad(x, ((0, 0), (margin, margin), (margin, margin)), mode="symmetric")
    pad_h, pad_w = (-height) % 4, (-width) % 4
    if pad_h or pad_w:
        debug_log("[nncore network_forward] padding %dx%d input by (%d, %d)" % (height, width, pad_h, pad_w))
        x = np.pad(x, ((0, 0), (0, pad_h), (0, pad_w)), mode="edge")
    cache = NetworkCache(id(net), net.version, data.shape, x.shape, margin)
    for layer in net.layers:
        cache.inputs.append(x)
        if isinstance(layer, ConvLayer):
            x = conv_forward(layer, x) if layer.mode == "conv" else transposed_conv_forward(layer, x)
            cache.extras.append(None)
        elif isinstance(layer, ReluLayer):
            x = relu_forward(x)
            cache.extras.append(None)
        elif isinstance(layer, BatchNormState):
            x, bn_cache = batchnorm_forward(layer, x, training=True)
            cache.extras.append(bn_cache)
        elif isinstance(layer, MaxPoolLayer):
            x, argmax = maxpool2_forward(x)
            cache.extras.append(argmax)
        else:
            x = upsample2_forward(x)
            cache.extras.append(None)
    return x[:, margin:margin + height, margin:margin + width], cache


def network_backward(net: Network, cache: NetworkCache, grad_features: np.ndarray) -> dict[str, np.ndarray]:
    """Chain-rule gradients for every parameter, keyed like Network.parameters()."""
    if cache.network_id != id(net) or cache.version != net.version:
        raise StaleCacheError("Cache does not belong to the current parameters of this network")
    grad = _check_tensor(grad_features, "grad_features")
    _, height, width = cache.input_shape
    if grad.shape != (net.n_features, height, width):
        raise ShapeError(f"grad_features {grad.shape} != features {(net.n_features, height, width)}")
    padded = np.zeros((net.n_features,) + cache.padded_shape[1:])
    m = cache.margin
    padded[:, m:m + height, m:m + width] = grad
    grad = padded

    grads: dict[str, np.ndarray] = {}
    for layer, x, extra in zip(reversed(net.layers), reversed(cache.inputs), reversed(cache.extras)):
        if isinstance(layer, ConvLayer):
            backward = conv_backward if layer.mode == "conv" else transposed_conv_backward
            grad, grads[f"{layer.name}.weight"], grads[f"{layer.name}.bias"] = backward(layer, x, grad)
        elif isinstance(layer, ReluLayer):
            grad = relu_backward(x, grad)
        elif isinstance(layer, BatchNormState):
            grad, grads[f"{layer.name}.gamma"], grads[f"{layer.name}.beta"] = batchnorm_backward(layer, extra, grad)
        elif isinstance(layer, MaxPoolLayer):
            grad = maxpool2_backward(grad, extra, x.shape)
        else:
            grad = upsample2_backward(grad)
    return {name: grads[name] for name in net.parameters()}


# ─── Optimizer ───────────────────────────────────────────────────────────────

@dataclass
class OptimizerState:
    learning_rate: float = LEARNING_RATE
    momentum: float = MOMENTUM
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"Learning rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"Momentum must lie in [0, 1), got {self.momentum}")


def sgd_momentum_step(opt: OptimizerState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict:
    """v <- m*v - lr*g; p <- p + v, in place."""
    if set(params) != set(grads):
        raise ShapeError(f"Gradient keys do not match parameters: {sorted(set(params) ^ set(grads))}")
    for name, param in params.items():
        grad = np.asarray(grads[name])
        if grad.shape != param.shape:
            raise ShapeError(f"{name}: gradient shape {grad.shape} != parameter shape {param.shape}")
        velocity = opt.velocity.get(name)
        if velocity is None:
            velocity = opt.velocity[name] = np.zeros_like(param)
        elif velocity.shape != param.shape:
            raise ShapeError(f"{name}: velocity shape {velocity.shape} != parameter shape {param.shape}")
        velocity *= opt.momentum
        velocity -= opt.learning_rate * grad
        param += velocity
    return params


# ─── Checkpoints ─────────────────────────────────────────────────────────────

def save_checkpoint(net: Network, path: Path) -> None:
    """Versioned little-endian blob: magic, version, count, then (name, shape, float32 data) per parameter."""
    params = net.parameters()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(params)))
        for name, value in params.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", value.ndim))
            f.write(struct.pack(f"<{value.ndim}I", *value.shape))
            f.write(value.astype("<f4").tobytes())


def load_checkpoint(net: Network, path: Path) -> Network:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ShapeError(f"{path} is not a checkpoint file")
    offset = len(CHECKPOINT_MAGIC)
    version, count = struct.unpack_from("<II", blob, offset)
    offset += 8
    if version != CHECKPOINT_VERSION:
        raise ShapeError(f"Unsupported checkpoint version {version}")
    params = net.parameters()
    if count != len(params):
        raise ShapeError(f"Checkpoint holds {count} parameters, network has {len(params)}")
    for expected_name, target in params.items():
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        if name != expected_name or tuple(shape) != target.shape:
            raise ShapeError(f"Checkpoint entry {name}{shape} does not match {expected_name}{target.shape}")
        n_values = int(np.prod(shape))
        target[...] = np.frombuffer(blob, dtype="<f4", count=n_values, offset=offset).reshape(shape)
        offset += 4 * n_values
    net.mark_updated()
    return net
