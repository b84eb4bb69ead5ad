"""The target network T(x; theta) evaluated functionally from a flat weight vector.

Layout: layers are stored one after another; inside a layer every filter is a
contiguous block ``[weights..., bias]``. Conv filter weights are ordered
(kh, kw, in_channels) row-major, dense filter weights follow the flattened
(H, W, C) order of the previous activation, so the incoming channel is always
the fastest-varying index.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import Dataset, GaussianMixture, minibatch
from .optim import AdamConfig, AdamState, adam_step
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Layer:
    kind: str  # "conv" | "dense"
    filters: int
    kernel: tuple[int, int] = (1, 1)
    stride: int = 1
    activation: float | None = 0.0  # leaky-ReLU slope; None means linear (logits)
    pool: bool = False

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "filters": self.filters, "activation": self.activation, "pool": self.pool}
        if self.kind == "conv":
            d["kernel"] = list(self.kernel)
            d["stride"] = self.stride
        return d


@dataclass(frozen=True)
class LayerInfo:
    index: int
    layer: Layer
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    in_channels: int
    filter_elements: int  # excluding the bias
    offset: int

    @property
    def block_size(self) -> int:
        return self.filter_elements + 1

    @property
    def size(self) -> int:
        return self.layer.filters * self.block_size


@dataclass(frozen=True)
class ArchDescriptor:
    input_shape: tuple[int, int, int]
    layers: tuple[Layer, ...]
    softmax: bool = True
    infos: tuple[LayerInfo, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("architecture needs at least one layer")
        infos = []
        shape: tuple[int, ...] = self.input_shape
        offset = 0
        seen_dense = False
        for i, layer in enumerate(self.layers):
            if layer.kind not in ("conv", "dense"):
                raise ValueError(f"layer {i}: unknown kind {layer.kind!r}")
            if layer.filters < 1:
                raise ValueError(f"layer {i}: filter count must be positive")
            last = i == len(self.layers) - 1
            if last and layer.activation is not None:
                raise ValueError("the last layer produces logits and must have activation None")
            if not last and layer.activation is None:
                raise ValueError(f"layer {i}: hidden layers need a piecewise-linear activation")
            if layer.kind == "conv":
                if seen_dense:
                    raise ValueError(f"layer {i}: conv layer after a dense layer")
                kh, kw = layer.kernel
                h, w, c = shape
                ho, wo = -(-h // layer.stride), -(-w // layer.stride)
                if layer.pool:
                    ho, wo = -(-ho // 2), -(-wo // 2)
                elements = kh * kw * c
                out: tuple[int, ...] = (ho, wo, layer.filters)
                in_channels = c
            else:
                if layer.pool:
                    raise ValueError(f"layer {i}: pooling is only defined for conv layers")
                seen_dense = True
                elements = int(np.prod(shape))
                in_channels = shape[-1]
                out = (layer.filters,)
            infos.append(LayerInfo(i, layer, shape, out, in_channels, elements, offset))
            offset += layer.filters * (elements + 1)
            shape = out
        object.__setattr__(self, "infos", tuple(infos))

    @property
    def num_classes(self) -> int:
        return self.layers[-1].filters

    @property
    def weight_count(self) -> int:
        return arch_weight_count(self)

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "layers": [l.to_dict() for l in self.layers]}

    def hash64(self) -> int:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


def mnist_arch() -> ArchDescriptor:
    """Four-layer MNIST classifier: two 5x5 conv + pool layers, two dense layers."""
    return ArchDescriptor(
        (28, 28, 1),
        (
            Layer("conv", 32, (5, 5), 1, 0.0, True),
            Layer("conv", 16, (5, 5), 1, 0.0, True),
            Layer("dense", 8, activation=0.0),
            Layer("dense", 10, activation=None),
        ),
    )


def arch_weight_count(arch: ArchDescriptor) -> int:
    return sum(info.size for info in arch.infos)


@dataclass
class WeightVector:
    flat: np.ndarray
    arch: ArchDescriptor
    gauge_fixed: bool = False

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (arch_weight_count(self.arch),):
            raise ValueError(f"weight vector of length {self.flat.shape} does not match architecture "
                             f"({arch_weight_count(self.arch)} weights)")

    @property
    def layout(self) -> list[tuple[int, int, int]]:
        """Per layer: (offset, filter count, block size including bias)."""
        return [(i.offset, i.layer.filters, i.block_size) for i in self.arch.infos]


def unflatten(w, arch: ArchDescriptor) -> list[np.ndarray]:
    """Per-layer arrays of shape (filters, elements + 1); the bias is the last column."""
    flat = np.asarray(w.flat if isinstance(w, WeightVector) else w, dtype=np.float64)
    if flat.shape != (arch_weight_count(arch),):
        raise ValueError(f"length {flat.shape} does not match architecture ({arch_weight_count(arch)})")
    return [flat[i.offset : i.offset + i.size].reshape(i.layer.filters, i.block_size).copy() for i in arch.infos]


def flatten(blocks: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(b, dtype=np.float64).reshape(-1) for b in blocks])


def layer_blocks(theta: Tensor, info: LayerInfo) -> Tensor:
    """Differentiable (G, filters, elements + 1) view of one layer of a (G, P) batch."""
    g = theta.shape[0]
    return theta[:, info.offset : info.offset + info.size].reshape(g, info.layer.filters, info.block_size)


def _as_theta(w) -> Tensor:
    if isinstance(w, WeightVector):
        return Tensor(w.flat)
    return T.as_tensor(w)


def forward(x, w, arch: ArchDescriptor, logits: bool = False) -> Tensor:
    """Per-class log-probabilities log p(i | x; theta).

    ``w`` is a single weight vector (P,) or a batch (G, P) of generated
    networks. ``x`` is (N, H, W, C), shared by every network, or (G, N, H, W, C)
    with its own images per network. Output is (N, classes) or (G, N, classes).
    """
    theta = _as_theta(w)
    x = T.as_tensor(x)
    single = theta.ndim == 1
    if single:
        theta = theta.reshape(1, -1)
    if theta.shape[1] != arch_weight_count(arch):
        raise ValueError(f"weight length {theta.shape[1]} does not match architecture ({arch_weight_count(arch)})")
    if tuple(x.shape[-3:]) != arch.input_shape:
        raise ValueError(f"input spatial shape {x.shape[-3:]} does not match {arch.input_shape}")
    g = theta.shape[0]
    if x.ndim == 5 and x.shape[0] != g:
        raise ValueError(f"{x.shape[0]} image groups for {g} networks")

    h = x
    for info in arch.infos:
        layer = info.layer
        block = layer_blocks(theta, info)
        e = info.filter_elements
        weights = block[:, :, :e]
        bias = block[:, :, e]
        if layer.kind == "conv":
            kh, kw = layer.kernel
            kernel = weights.reshape(g, layer.filters, kh, kw, info.in_channels).transpose(0, 2, 3, 4, 1)
            h = T.conv2d(h, kernel, stride=layer.stride)
            # a per-channel bias and a non-decreasing activation both commute with the max,
            # so pooling first gives the same values on a quarter of the elements
            early_pool = layer.pool and (layer.activation is None or layer.activation >= 0.0)
            if early_pool:
                h = T.maxpool2x2(h)
            h = h + bias.reshape(g, 1, 1, 1, layer.filters)
        else:
            early_pool = False
            if h.ndim >= 4:
                lead = h.shape[:-3]
                h = h.reshape(*lead, -1)
            h = h @ weights.transpose(0, 2, 1) + bias.reshape(g, 1, layer.filters)
        if layer.activation is not None:
            h = T.leaky_relu(h, layer.activation)
        if layer.pool and not early_pool:
            h = T.maxpool2x2(h)
    out = h if logits or not arch.softmax else T.log_softmax(h, axis=-1)
    return out[0] if single else out


def class_loss(logp, labels) -> Tensor:
    """Negative mean log-likelihood of the labels; shapes (..., N, C) and (..., N)."""
    logp = T.as_tensor(logp)
    labels = np.asarray(labels)
    if labels.shape != logp.shape[:-1]:
        raise ValueError(f"labels shape {labels.shape} does not match predictions {logp.shape[:-1]}")
    if labels.size and (labels.min() < 0 or labels.max() >= logp.shape[-1]):
        raise ValueError(f"label out of range [0, {logp.shape[-1]})")
    index = tuple(np.indices(labels.shape)) + (labels,)
    return -T.mean(logp[index])


def mixture_density_t(points, gm: GaussianMixture) -> Tensor:
    """Differentiable mixture density at each row of an (n, 2) tensor."""
    points = T.as_tensor(points)
    total = None
    for mean, prec, norm in zip(gm.means, gm.precisions, gm.norms):
        d = points - mean
        quad = T.sum_(d @ prec * d, axis=1)
        term = T.exp(T.scale(quad, -0.5)) * norm
        total = term if total is None else total + term
    return total


def toy_loss(points, gm: GaussianMixture) -> Tensor:
    return -T.mean(mixture_density_t(points, gm))


# -- direct (single network) training ------------------------------------------


def glorot_init(arch: ArchDescriptor, rng: np.random.Generator) -> WeightVector:
    """Uniform Glorot weights per layer, zero biases."""
    blocks = []
    for info in arch.infos:
        layer = info.layer
        if layer.kind == "conv":
            rf = layer.kernel[0] * layer.kernel[1]
            fan_in, fan_out = info.filter_elements, rf * layer.filters
        else:
            fan_in, fan_out = info.filter_elements, layer.filters
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        b = np.zeros((layer.filters, info.block_size))
        b[:, :-1] = rng.uniform(-limit, limit, size=(layer.filters, info.filter_elements))
        blocks.append(b)
    return WeightVector(flatten(blocks), arch)


@dataclass
class DirectTrainConfig:
    steps: int = 1000
    batch_size: int = 32
    adam: AdamConfig = field(default_factory=lambda: AdamConfig(lr=1e-3))
    seed: int = 0


class DivergenceError(FloatingPointError):
    pass


def train_target_direct(arch: ArchDescriptor, ds: Dataset, cfg: DirectTrainConfig, log_every: int = 0):
    """Plain minibatch training of one target network; returns (weights, per-step losses)."""
    rng = np.random.default_rng(cfg.seed)
    w = glorot_init(arch, rng)
    params = {"theta": w.flat.copy()}
    state = AdamState()
    losses = []
    for step in range(cfg.steps):
        x, y = minibatch(ds, cfg.batch_size, rng)
        theta = Tensor(params["theta"], requires_grad=True)
        try:
            loss = class_loss(forward(x, theta, arch), y)
        except T.NonFiniteError as exc:
            raise DivergenceError(f"non-finite loss at step {step}") from exc
        (g,) = T.grad(loss, [theta])
        params, state = adam_step(params, {"theta": g}, state, cfg.adam)
        losses.append(loss.item())
        if log_every and step % log_every == 0:
            log.info("direct step %d loss %.4f", step, losses[-1])
    return WeightVector(params["theta"], arch), losses


def accuracy(w, arch: ArchDescriptor, ds: Dataset, chunk: int = 500) -> float:
    """Fraction of ``ds`` classified correctly by a single weight vector."""
    preds = predict(w, arch, ds.inputs, chunk)
    return float(np.mean(preds == ds.labels))


def predict(w, arch: ArchDescriptor, inputs: np.ndarray, chunk: int = 500) -> np.ndarray:
    out = []
    with T.no_grad():
        for start in range(0, len(inputs), chunk):
            out.append(forward(inputs[start : start + chunk], w, arch, logits=True).data.argmax(axis=-1))
    return np.concatenate(out, axis=-1)
