"""Gauge fixing for the scaling and logits'-bias symmetries of ReLU networks.

Hidden layers are swept in ascending order. Each filter of layer l (bias
included) is rescaled so its squared norm equals its element count n, and the
matching incoming channel of every layer l+1 filter is divided by the same
factor. Finally the mean of the last-layer biases is subtracted from each.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .target import ArchDescriptor, WeightVector, arch_weight_count, layer_blocks
from .tensor import Tensor


class GaugeError(ValueError):
    """A filter is identically zero, so its scale is undefined."""


def _incoming(block: Tensor, info_next, channels: int) -> Tensor:
    g, f, _ = block.shape
    e = info_next.filter_elements
    return block[:, :, :e].reshape(g, f, e // channels, channels)


def gauge_fix(w, arch: ArchDescriptor):
    """Canonical representative of ``w`` under the scaling and logits'-bias symmetries.

    Accepts a WeightVector (returns a WeightVector flagged gauge_fixed) or a
    tensor of shape (P,) or (G, P) (returns a tensor of the same shape, with
    gradients flowing through the map).
    """
    if isinstance(w, WeightVector):
        with T.no_grad():
            out = gauge_fix(Tensor(w.flat), arch)
        return WeightVector(out.data, arch, gauge_fixed=True)

    theta = T.as_tensor(w)
    single = theta.ndim == 1
    if single:
        theta = theta.reshape(1, -1)
    if theta.shape[1] != arch_weight_count(arch):
        raise ValueError(f"weight length {theta.shape[1]} does not match architecture")
    g = theta.shape[0]
    infos = arch.infos
    blocks = [layer_blocks(theta, info) for info in infos]

    for l in range(len(infos) - 1):
        info, nxt = infos[l], infos[l + 1]
        ss = T.sum_squares(blocks[l], axis=-1)  # (G, F)
        if np.any(ss.data <= 0.0):
            bad = np.argwhere(ss.data <= 0.0)[0]
            raise GaugeError(f"filter {bad[1]} of layer {l} is all zeros (sample {bad[0]})")
        s = T.sqrt(T.div(float(info.block_size), ss))
        blocks[l] = blocks[l] * s.reshape(g, info.layer.filters, 1)
        channels = info.layer.filters
        incoming = _incoming(blocks[l + 1], nxt, channels) / s.reshape(g, 1, 1, channels)
        blocks[l + 1] = T.concat(
            [incoming.reshape(g, nxt.layer.filters, nxt.filter_elements), blocks[l + 1][:, :, nxt.filter_elements :]],
            axis=-1,
        )

    last, info = blocks[-1], infos[-1]
    bias = last[:, :, info.filter_elements]
    centered = bias - T.mean(bias, axis=1, keepdims=True)
    blocks[-1] = T.concat([last[:, :, : info.filter_elements], centered.reshape(g, info.layer.filters, 1)], axis=-1)

    out = T.concat([b.reshape(g, -1) for b in blocks], axis=1)
    return out.reshape(-1) if single else out


def is_gauge_fixed(w, arch: ArchDescriptor, tol: float = 1e-9) -> bool:
    flat = np.asarray(w.flat if isinstance(w, WeightVector) else w, dtype=np.float64)
    infos = arch.infos
    for info in infos[:-1]:
        blocks = flat[info.offset : info.offset + info.size].reshape(info.layer.filters, info.block_size)
        n = info.block_size
        if np.any(np.abs((blocks**2).sum(axis=1) - n) > tol * n):
            return False
    last = infos[-1]
    biases = flat[last.offset : last.offset + last.size].reshape(last.layer.filters, last.block_size)[:, -1]
    return bool(abs(biases.sum()) <= tol)


# -- symmetry transformations (used to probe the gauge) ---------------------------


def apply_scaling(w: np.ndarray, arch: ArchDescriptor, layer: int, scales: np.ndarray) -> np.ndarray:
    """Scale filter i of ``layer`` by scales[i] > 0 and divide the matching incoming channel of the next layer."""
    if layer >= len(arch.infos) - 1:
        raise ValueError("the last layer has no next layer to compensate")
    scales = np.asarray(scales, dtype=np.float64)
    if np.any(scales <= 0):
        raise ValueError("scales must be positive")
    out = np.array(w, dtype=np.float64)
    info, nxt = arch.infos[layer], arch.infos[layer + 1]
    blocks = out[info.offset : info.offset + info.size].reshape(info.layer.filters, info.block_size)
    blocks *= scales[:, None]
    nblocks = out[nxt.offset : nxt.offset + nxt.size].reshape(nxt.layer.filters, nxt.block_size)
    incoming = nblocks[:, : nxt.filter_elements].reshape(nxt.layer.filters, -1, info.layer.filters) / scales
    nblocks[:, : nxt.filter_elements] = incoming.reshape(nxt.layer.filters, -1)
    return out


def shift_logit_bias(w: np.ndarray, arch: ArchDescriptor, c: float) -> np.ndarray:
    out = np.array(w, dtype=np.float64)
    last = arch.infos[-1]
    blocks = out[last.offset : last.offset + last.size].reshape(last.layer.filters, last.block_size)
    blocks[:, -1] += c
    return out


def random_symmetry(w: np.ndarray, arch: ArchDescriptor, rng: np.random.Generator, spread: float = 1.0) -> np.ndarray:
    """Compose random positive rescalings of every hidden layer with a random logits' bias shift."""
    out = np.array(w, dtype=np.float64)
    for layer in range(len(arch.infos) - 1):
        scales = np.exp(rng.uniform(-spread, spread, size=arch.infos[layer].layer.filters))
        out = apply_scaling(out, arch, layer, scales)
    return shift_logit_bias(out, arch, rng.normal() * 3.0)
