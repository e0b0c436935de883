"""Dense conv-net engine on numpy arrays, with hand-derived backward passes.

All image tensors are (batch, channels, height, width) in row-major order.
float32 is the working precision; every operation preserves the dtype of its
inputs, so the same graph runs in float64 by casting the network and inputs
(the gradient checks rely on this). Any non-finite value coming out of an
engine operation is an error state, enforced where it can first appear
(the training loss).

Convolutions are computed as im2col + one GEMM per layer; the backward pass
scatters column gradients back with a small (kh, kw) accumulation loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .rng import substream

SAME = "same"
VALID = "valid"


class ShapeError(ValueError):
    """Tensor extents incompatible with a layer's contract."""


class NumericalDivergence(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class ConvLayer:
    """2-D cross-correlation with bias, stride, and SAME/VALID padding.

    kernel is (c_out, c_in, kh, kw); bias is (c_out,). A 1x1 kernel over a
    flattened feature map doubles as a fully connected layer.
    """

    kernel: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: str = VALID
    name: str = "conv"

    def __post_init__(self):
        if self.kernel.ndim != 4:
            raise ShapeError(f"{self.name}: kernel must be 4-d, got {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ShapeError(
                f"{self.name}: bias shape {self.bias.shape} does not match "
                f"{self.kernel.shape[0]} output channels"
            )
        if self.stride < 1:
            raise ValueError(f"{self.name}: stride must be >= 1")
        if self.padding not in (SAME, VALID):
            raise ValueError(f"{self.name}: padding must be '{SAME}' or '{VALID}'")

    @property
    def param_count(self) -> int:
        return self.kernel.size + self.bias.size


@dataclass
class ReluLayer:
    """Elementwise max(0, x); backward masks by input > 0 (zero at exactly 0)."""


Layer = Union[ConvLayer, ReluLayer]


@dataclass
class Network:
    """Ordered layer list; the terminal conv layer produces the class logits.

    Immutable during inference (safe to share across threads); training
    mutates parameters in place on a single thread.
    """

    layers: list
    class_count: int = 10
    seed: int = 0
    epochs_trained: int = 0

    def conv_layers(self):
        return [l for l in self.layers if isinstance(l, ConvLayer)]

    @property
    def param_count(self) -> int:
        return sum(l.param_count for l in self.conv_layers())

    @property
    def dtype(self) -> np.dtype:
        return self.conv_layers()[0].kernel.dtype

    def astype(self, dtype) -> "Network":
        layers = []
        for l in self.layers:
            if isinstance(l, ConvLayer):
                layers.append(
                    ConvLayer(
                        kernel=l.kernel.astype(dtype),
                        bias=l.bias.astype(dtype),
                        stride=l.stride,
                        padding=l.padding,
                        name=l.name,
                    )
                )
            else:
                layers.append(ReluLayer())
        return Network(layers, self.class_count, self.seed, self.epochs_trained)


@dataclass
class SgdConfig:
    """Plain SGD with L2 weight decay folded into the update."""

    learning_rate: float = 1e-2
    weight_decay: float = 0.0
    batch_size: int = 128
    epochs: int = 50
    class_weights: Optional[np.ndarray] = None
    seed: int = 0
    decay_biases: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _same_pad_total(size: int, k: int, stride: int) -> int:
    out = -(-size // stride)
    return max((out - 1) * stride + k - size, 0)


def conv_output_shape(h: int, w: int, layer: ConvLayer) -> tuple:
    """Spatial extents after the layer: SAME is ceil(in/s), VALID is floor((in-k)/s)+1."""
    kh, kw = layer.kernel.shape[2:]
    s = layer.stride
    if layer.padding == SAME:
        return -(-h // s), -(-w // s)
    return (h - kh) // s + 1, (w - kw) // s + 1


def _pad_same(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    kh, kw = layer.kernel.shape[2:]
    ph = _same_pad_total(x.shape[2], kh, layer.stride)
    pw = _same_pad_total(x.shape[3], kw, layer.stride)
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)))


def _col_view(xp: np.ndarray, kh: int, kw: int, stride: int):
    """im2col: (n*ho*wo, c*kh*kw) patch matrix plus the output extents."""
    n, c, hp, wp = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    sn, sc, sh, sw = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, ho, wo, c, kh, kw),
        strides=(sn, sh * stride, sw * stride, sc, sh, sw),
        writeable=False,
    )
    return patches.reshape(n * ho * wo, c * kh * kw), ho, wo


def _check_input(x: np.ndarray, layer: ConvLayer):
    if x.ndim != 4:
        raise ShapeError(f"{layer.name}: input must be 4-d, got shape {x.shape}")
    c_in = layer.kernel.shape[1]
    kh, kw = layer.kernel.shape[2:]
    if x.shape[1] != c_in:
        raise ShapeError(
            f"{layer.name}: input has {x.shape[1]} channels but kernel expects {c_in}"
        )
    if layer.padding == VALID and (x.shape[2] < kh or x.shape[3] < kw):
        raise ShapeError(
            f"{layer.name}: spatial extents {x.shape[2]}x{x.shape[3]} smaller than "
            f"kernel {kh}x{kw} with valid padding"
        )


def conv2d_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Cross-correlate x with the layer kernel and add the per-channel bias."""
    _check_input(x, layer)
    co = layer.kernel.shape[0]
    kh, kw = layer.kernel.shape[2:]
    xp = _pad_same(x, layer) if layer.padding == SAME else x
    cols, ho, wo = _col_view(xp, kh, kw, layer.stride)
    out = cols @ layer.kernel.reshape(co, -1).T
    out += layer.bias
    return out.reshape(x.shape[0], ho, wo, co).transpose(0, 3, 1, 2)


def conv2d_backward(
    x: np.ndarray,
    layer: ConvLayer,
    upstream_grad: np.ndarray,
    need_param_grads: bool = True,
):
    """Gradients of sum(upstream_grad * conv2d_forward(x, layer)).

    Returns (grad_input, grad_kernel, grad_bias); the parameter gradients are
    None when need_param_grads is False (attack loops only need grad_input).
    """
    _check_input(x, layer)
    co = layer.kernel.shape[0]
    kh, kw = layer.kernel.shape[2:]
    s = layer.stride
    n = x.shape[0]
    ho, wo = conv_output_shape(x.shape[2], x.shape[3], layer)
    if upstream_grad.shape != (n, co, ho, wo):
        raise ShapeError(
            f"{layer.name}: upstream gradient shape {upstream_grad.shape} does not "
            f"match forward output ({n}, {co}, {ho}, {wo})"
        )

    xp = _pad_same(x, layer) if layer.padding == SAME else x
    g2 = upstream_grad.transpose(0, 2, 3, 1).reshape(n * ho * wo, co)

    grad_kernel = grad_bias = None
    if need_param_grads:
        cols, _, _ = _col_view(xp, kh, kw, s)
        grad_kernel = (g2.T @ cols).reshape(layer.kernel.shape)
        grad_bias = g2.sum(axis=0)

    grad_cols = (g2 @ layer.kernel.reshape(co, -1)).reshape(n, ho, wo, -1)
    grad_cols = grad_cols.reshape(n, ho, wo, x.shape[1], kh, kw)
    grad_xp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            grad_xp[:, :, i : i + s * ho : s, j : j + s * wo : s] += grad_cols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)

    if layer.padding == SAME:
        ph = _same_pad_total(x.shape[2], kh, s)
        pw = _same_pad_total(x.shape[3], kw, s)
        grad_x = grad_xp[
            :,
            :,
            ph // 2 : ph // 2 + x.shape[2],
            pw // 2 : pw // 2 + x.shape[3],
        ]
    else:
        grad_x = grad_xp
    return grad_x, grad_kernel, grad_bias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, upstream_grad: np.ndarray) -> np.ndarray:
    return np.where(x > 0, upstream_grad, 0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for stability."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_weighted_ce(
    logits: np.ndarray,
    labels: np.ndarray,
    class_weights: Optional[np.ndarray] = None,
    reduction: str = "mean",
):
    """Class-weighted cross entropy over a batch of logit rows.

    loss = reduce_i w[y_i] * (-log softmax(logits_i)[y_i]); the returned
    gradient is with respect to the logits under the same reduction
    ("mean" or "sum"). Natural-log units.
    """
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels must lie in 0..{k - 1}")
    if class_weights is None:
        wy = np.ones(n, dtype=logits.dtype)
    else:
        wy = np.asarray(class_weights, dtype=logits.dtype)[labels]

    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(n)
    losses = -wy.astype(np.float64) * logp[rows, labels].astype(np.float64)

    grad = np.exp(logp)
    grad[rows, labels] -= 1
    grad *= wy[:, None]
    if reduction == "mean":
        loss = float(losses.mean())
        grad = grad / n
    elif reduction == "sum":
        loss = float(losses.sum())
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    return loss, grad


def network_forward(net: Network, x: np.ndarray):
    """Run the layer chain; returns (logits, cache) for a later backward pass.

    A conv layer whose c_in equals the full flattened size of the incoming
    map consumes it as (n, c*h*w, 1, 1); this is how the terminal layer acts
    as the fully connected logits layer.
    """
    cache = []
    cur = x
    for layer in net.layers:
        if isinstance(layer, ReluLayer):
            cache.append(("relu", cur, None))
            cur = relu(cur)
            continue
        flattened_from = None
        c_in = layer.kernel.shape[1]
        n, c, h, w = cur.shape
        if c != c_in and c * h * w == c_in:
            flattened_from = cur.shape
            cur = cur.reshape(n, c * h * w, 1, 1)
        cache.append(("conv", cur, flattened_from))
        cur = conv2d_forward(cur, layer)
    n, co, ho, wo = cur.shape
    if (ho, wo) != (1, 1):
        raise ShapeError(f"terminal feature map is {ho}x{wo}, expected 1x1")
    if co != net.class_count:
        raise ShapeError(f"terminal layer emits {co} channels, expected {net.class_count}")
    return cur.reshape(n, co), cache


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    return network_forward(net, x)[0]


def network_backward(net: Network, cache: list, grad_logits: np.ndarray, need_param_grads=True):
    """Backpropagate logit gradients; returns (grad_input, per-layer grads).

    The grads list aligns with net.layers: (grad_kernel, grad_bias) per conv
    layer, None for ReLU entries.
    """
    g = grad_logits.reshape(grad_logits.shape[0], -1, 1, 1)
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        kind, saved, flattened_from = cache[i]
        if kind == "relu":
            g = relu_backward(saved, g)
        else:
            g, gk, gb = conv2d_backward(saved, layer, g, need_param_grads)
            if need_param_grads:
                grads[i] = (gk, gb)
            if flattened_from is not None:
                g = g.reshape(flattened_from)
    return g, grads


def input_gradient(
    net: Network,
    x: np.ndarray,
    labels: np.ndarray,
    class_weights: Optional[np.ndarray] = None,
    reduction: str = "mean",
) -> np.ndarray:
    """Gradient of the reduced cross-entropy loss with respect to the input.

    Pass the true labels for an untargeted loss or target labels for a
    targeted one. reduction="sum" yields per-example gradients unscaled by
    the batch size, which the attack loops use.
    """
    logits, cache = network_forward(net, x)
    _, grad_logits = softmax_weighted_ce(logits, labels, class_weights, reduction)
    grad_x, _ = network_backward(net, cache, grad_logits, need_param_grads=False)
    return grad_x


def init_gaussian(net: Network, sigma: float, seed: int) -> Network:
    """Draw every kernel weight from N(0, sigma^2); zero the biases. In place."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    for i, layer in enumerate(net.conv_layers()):
        rng = substream(seed, "init", i)
        layer.kernel[...] = rng.normal(0.0, sigma, size=layer.kernel.shape)
        layer.bias[...] = 0
    net.seed = seed
    return net


def sgd_step(net: Network, grads: list, cfg: SgdConfig) -> Network:
    """w <- w - lr*(g + weight_decay*w) for every parameter. In place."""
    lr = cfg.learning_rate
    lam = cfg.weight_decay
    for layer, g in zip(net.layers, grads):
        if not isinstance(layer, ConvLayer) or g is None:
            continue
        gk, gb = g
        layer.kernel -= lr * (gk + lam * layer.kernel)
        if cfg.decay_biases:
            layer.bias -= lr * (gb + lam * layer.bias)
        else:
            layer.bias -= lr * gb
    return net


def train(net: Network, images: np.ndarray, labels: np.ndarray, cfg: SgdConfig):
    """Mini-batch SGD; returns one {epoch, loss, accuracy} record per epoch.

    Shuffles per epoch from the run seed's shuffle stream; the batch
    remainder is used as a short final batch. Raises NumericalDivergence on
    a non-finite loss.
    """
    n = images.shape[0]
    labels = np.asarray(labels)
    rng = substream(cfg.seed, "shuffle")
    w = None
    if cfg.class_weights is not None:
        w = np.asarray(cfg.class_weights, dtype=np.float64)
    log = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xb = images[idx]
            yb = labels[idx]
            logits, cache = network_forward(net, xb)
            loss, grad_logits = softmax_weighted_ce(logits, yb, w)
            if not math.isfinite(loss):
                raise NumericalDivergence(f"non-finite loss at epoch {epoch}")
            _, grads = network_backward(net, cache, grad_logits)
            sgd_step(net, grads, cfg)
            total_loss += loss * len(idx)
            correct += int((logits.argmax(axis=1) == yb).sum())
        log.append(
            {"epoch": epoch, "loss": total_loss / n, "accuracy": correct / n}
        )
    net.epochs_trained += cfg.epochs
    return log
