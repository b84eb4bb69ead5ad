"""Small reverse-mode automatic differentiation engine on top of numpy.

Every operation is eager: calling it computes the value immediately and, unless
``no_grad`` is active, records a node (op name, parents, backward closure) so
that :func:`grad` can later walk the graph in reverse topological order.

All values are float64. Every op output is checked for NaN/Inf; a non-finite
value raises :class:`NonFiniteError` naming the op and its node id.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64

_node_ids = itertools.count()
_grad_enabled = True
check_finite = True


class NonFiniteError(FloatingPointError):
    def __init__(self, op: str, node_id: int):
        super().__init__(f"non-finite value produced by '{op}' (node {node_id})")
        self.op = op
        self.node_id = node_id


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (values are still computed)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        if check_finite and not np.isfinite(arr).all():
            raise NonFiniteError("leaf", -1)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self.node_id = next(_node_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _make(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data if data.dtype == DTYPE else data.astype(DTYPE)
        out.grad = None
        out.op = op
        out.node_id = next(_node_ids)
        if check_finite and not np.isfinite(out.data).all():
            raise NonFiniteError(op, out.node_id)
        needs = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        if needs:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, seed=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
        leaves = [n for n in topo_order(self) if n.requires_grad and n._backward is None]
        grads = grad(self, leaves, seed)
        for leaf, g in zip(leaves, grads):
            leaf.grad = g if leaf.grad is None else leaf.grad + g

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- graph traversal and gradients -------------------------------------------


def topo_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, each after all of its inputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, wrt: Sequence[Tensor], seed=None) -> list[np.ndarray]:
    """Gradients of ``output`` with respect to each tensor in ``wrt``.

    ``seed`` is the upstream gradient dL/d(output); it defaults to 1 for a
    scalar output and must match ``output.shape`` otherwise. Tensors in
    ``wrt`` that do not influence ``output`` get a zero gradient.
    """
    if seed is None:
        if output.size != 1:
            raise ValueError(f"seed required for non-scalar output of shape {output.shape}")
        seed = np.ones_like(output.data)
    else:
        seed = np.asarray(seed, dtype=DTYPE)
        if seed.shape != output.shape:
            raise ValueError(f"seed shape {seed.shape} does not match output shape {output.shape}")

    grads: dict[int, np.ndarray] = {id(output): seed}
    if output.requires_grad:
        wanted = {id(t) for t in wrt}
        for node in reversed(topo_order(output)):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            if id(node) not in wanted and node is not output:
                del grads[id(node)]
    return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(out, (a, b), backward, "div")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return Tensor._make(a.data * c, (a,), lambda g: (g * c,), "scale")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data**p

    def backward(g):
        return (g * p * a.data ** (p - 1.0),)

    return Tensor._make(out, (a,), backward, "pow")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return Tensor._make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def leaky_relu(a, slope: float = 0.0) -> Tensor:
    """max(x, 0) + slope * min(x, 0); the derivative at exactly 0 is 1."""
    a = as_tensor(a)
    positive = a.data >= 0
    out = np.where(positive, a.data, slope * a.data)
    return Tensor._make(out, (a,), lambda g: (np.where(positive, g, slope * g),), "leaky_relu")


def relu(a) -> Tensor:
    return leaky_relu(a, 0.0)


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return Tensor._make(out, (a,), lambda g: (g / a.data,), "log")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,), "exp")


# -- reductions and shape ops ------------------------------------------------


def _expand_reduced(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)),)

    return Tensor._make(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims))
    count = a.size // max(out.size, 1)

    def backward(g):
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)) / count,)

    return Tensor._make(out, (a,), backward, "mean")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inverse = None if axes is None else tuple(np.argsort(axes))
    return Tensor._make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    out = np.broadcast_to(a.data, shape)
    return Tensor._make(out, (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast_to")


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(p is None or p is Ellipsis or isinstance(p, (int, slice)) for p in parts)


def take(a, index) -> Tensor:
    """``a[index]`` for basic slices or integer-array (fancy) indices."""
    a = as_tensor(a)
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        if _is_basic_index(index):
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return Tensor._make(np.array(out), (a,), backward, "take")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._make(out, ts, backward, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return Tensor._make(out, ts, backward, "stack")


# -- linear algebra ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    """``a @ b`` with numpy batching/broadcasting over leading axes (ndim >= 2)."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(a.data @ b.data, (a, b), backward, "matmul")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (a,), backward, "log_softmax")


def sum_squares(a, axis=None, keepdims=False) -> Tensor:
    """Squared L2 norm over the given axes."""
    a = as_tensor(a)
    out = np.asarray((a.data * a.data).sum(axis=axis, keepdims=keepdims))

    def backward(g):
        return (2.0 * a.data * _expand_reduced(g, a.shape, axis, keepdims),)

    return Tensor._make(out, (a,), backward, "sum_squares")


def l2_norm(a, axis=None, keepdims=False) -> Tensor:
    return sqrt(sum_squares(a, axis, keepdims))


def pairwise_sqdist(x, y=None) -> Tensor:
    """Squared Euclidean distances between rows: out[i, j] = |x_i - y_j|^2.

    The forward pass works on explicit differences (not the Gram expansion) so
    it stays accurate for nearby points and is exactly shift invariant
    whenever the shift itself is exactly representable.
    """
    x = as_tensor(x)
    y = x if y is None else as_tensor(y)
    n, dim = x.shape
    m = y.shape[0]
    out = np.empty((n, m), dtype=DTYPE)
    chunk = max(1, (1 << 22) // max(m * dim, 1))
    for start in range(0, n, chunk):
        diff = x.data[start : start + chunk, None, :] - y.data[None, :, :]
        out[start : start + chunk] = np.einsum("ijk,ijk->ij", diff, diff)

    def backward(g):
        gx = gy = None
        if x.requires_grad:
            gx = 2.0 * (g.sum(axis=1)[:, None] * x.data - g @ y.data)
        if y.requires_grad:
            gy = 2.0 * (g.sum(axis=0)[:, None] * y.data - g.T @ x.data)
        return gx, gy

    return Tensor._make(out, (x, y), backward, "pairwise_sqdist")


# -- convolution, pooling, normalization -------------------------------------


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """(output size, pad before, pad after); the odd pixel goes after."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # xp: (N, Hp, Wp, C) already padded
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    n, c = xp.shape[0], xp.shape[3]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c)


# images per im2col chunk are chosen so one chunk of columns stays near this size (cache friendly)
COL_CHUNK_BYTES = 8_000_000


def conv2d(x, w, stride: int = 1, padding: str = "SAME") -> Tensor:
    """2-D cross-correlation on NHWC images with HWCF kernels.

    Shapes: x (N, H, W, C) with w (kh, kw, C, F) gives (N, Ho, Wo, F).
    Grouped form, one kernel per generated network: w (G, kh, kw, C, F) with
    x either (G, N, H, W, C) or shared (N, H, W, C) gives (G, N, Ho, Wo, F).
    """
    x, w = as_tensor(x), as_tensor(w)
    if stride not in (1, 2):
        raise ValueError(f"unsupported stride {stride}")
    grouped = w.ndim == 5
    wd = w.data if grouped else w.data[None]
    shared = x.ndim == 4 and grouped
    xd = x.data if (grouped and not shared) else x.data[None]
    if xd.ndim != 5 or wd.ndim != 5:
        raise ValueError(f"conv2d shape mismatch: x {x.shape}, w {w.shape}")
    groups, kh, kw, c, f = wd.shape
    if xd.shape[-1] != c:
        raise ValueError(f"conv2d channel mismatch: x has {xd.shape[-1]}, kernel expects {c}")
    if not shared and xd.shape[0] != groups:
        raise ValueError(f"conv2d group mismatch: x {x.shape}, w {w.shape}")
    n, h, wi = xd.shape[1], xd.shape[2], xd.shape[3]
    if padding == "SAME":
        ho, pt, pb = same_padding(h, kh, stride)
        wo, pl, pr = same_padding(wi, kw, stride)
    elif padding == "VALID":
        ho, pt, pb = (h - kh) // stride + 1, 0, 0
        wo, pl, pr = (wi - kw) // stride + 1, 0, 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    pads = ((0, 0), (0, 0), (pt, pb), (pl, pr), (0, 0))
    xp = np.pad(xd, pads) if (pt or pb or pl or pr) else xd
    wm = wd.reshape(groups, kh * kw * c, f)
    step = max(1, COL_CHUNK_BYTES // (ho * wo * kh * kw * max(c, f) * 8))
    chunks = [(s, min(s + step, n)) for s in range(0, n, step)]

    out = np.empty((groups, n, ho, wo, f), dtype=DTYPE)
    for s, e in chunks:
        cols = _im2col(xp[0, s:e], kh, kw, stride, ho, wo) if shared else None
        for gi in range(groups):
            if not shared:
                cols = _im2col(xp[gi, s:e], kh, kw, stride, ho, wo)
            out[gi, s:e] = (cols @ wm[gi]).reshape(e - s, ho, wo, f)

    def backward(g):
        g = g if grouped else g[None]
        gw = np.zeros_like(wm) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            # stride 1 works on the unpadded input directly; stride 2 scatters into the padded one
            gx = np.zeros((xd.shape[0], n, h, wi, c) if stride == 1 else xp.shape, dtype=DTYPE)
            if stride == 1:
                # the input gradient of a stride-1 correlation is a full correlation with the flipped kernel
                wflip = wd[:, ::-1, ::-1].transpose(0, 1, 2, 4, 3).reshape(groups, kh * kw * f, c)
                gpads = ((0, 0), (kh - 1 - pt, kh - 1 - pb), (kw - 1 - pl, kw - 1 - pr), (0, 0))
        for s, e in chunks:
            cols = _im2col(xp[0, s:e], kh, kw, stride, ho, wo) if (shared and gw is not None) else None
            for gi in range(groups):
                gm = g[gi, s:e].reshape(-1, f)
                if gw is not None:
                    if not shared:
                        cols = _im2col(xp[gi, s:e], kh, kw, stride, ho, wo)
                    gw[gi] += cols.T @ gm
                if gx is None:
                    continue
                target = gx[0, s:e] if shared else gx[gi, s:e]
                if stride == 1:
                    gcols = _im2col(np.pad(g[gi, s:e], gpads), kh, kw, 1, h, wi)
                    target += (gcols @ wflip[gi]).reshape(e - s, h, wi, c)
                else:
                    gcols = (gm @ wm[gi].T).reshape(e - s, ho, wo, kh, kw, c)
                    for i in range(kh):
                        for j in range(kw):
                            target[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += gcols[:, :, :, i, j]
        if gx is not None:
            if stride != 1:
                gx = gx[:, :, pt : pt + h, pl : pl + wi]
            gx = gx[0] if (shared or not grouped) else gx
        if gw is not None:
            gw = gw.reshape(wd.shape) if grouped else gw.reshape(w.shape)
        return gx, gw

    return Tensor._make(out if grouped else out[0], (x, w), backward, "conv2d")


def maxpool2x2(x) -> Tensor:
    """2x2 max pool with stride 2 over axes (-3, -2); odd sizes padded bottom/right.

    Ties route the gradient to the first maximal element in row-major order.
    """
    x = as_tensor(x)
    *lead, h, w, c = x.shape
    ho, wo = -(-h // 2), -(-w // 2)
    xd = x.data.reshape(-1, h, w, c)
    if (h % 2) or (w % 2):
        xd = np.pad(xd, [(0, 0), (0, 2 * ho - h), (0, 2 * wo - w), (0, 0)], constant_values=-np.inf)
    m = xd.shape[0]
    step = max(1, COL_CHUNK_BYTES // (xd[0].size * 8))
    corners = ((0, 0), (0, 1), (1, 0), (1, 1))
    out = np.empty((m, ho, wo, c), dtype=DTYPE)
    for s in range(0, m, step):
        blk = xd[s : s + step]
        np.maximum(np.maximum(blk[:, 0::2, 0::2], blk[:, 0::2, 1::2]), np.maximum(blk[:, 1::2, 0::2], blk[:, 1::2, 1::2]), out=out[s : s + step])

    def backward(g):
        g = g.reshape(m, ho, wo, c)
        gx = np.empty(xd.shape, dtype=DTYPE)
        for s in range(0, m, step):
            blk, o, gs, gb = xd[s : s + step], out[s : s + step], g[s : s + step], gx[s : s + step]
            taken = np.zeros(o.shape, dtype=bool)
            hit = np.empty(o.shape, dtype=bool)
            for i, j in corners:
                np.equal(blk[:, i::2, j::2], o, out=hit)
                hit &= ~taken
                taken |= hit
                np.multiply(gs, hit, out=gb[:, i::2, j::2])
        return (gx[:, :h, :w].reshape(x.shape),)

    return Tensor._make(out.reshape(*lead, ho, wo, c), (x,), backward, "maxpool2x2")


BN_EPS = 1e-5
BN_MOMENTUM = 0.99


def batch_norm(
    x,
    gamma,
    beta,
    running_mean: np.ndarray | None = None,
    running_var: np.ndarray | None = None,
    training: bool = True,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Batch normalization over axis 0 of a (N, D) input.

    Training mode normalizes with batch statistics and, if running buffers
    are given, updates them in place (running = m * running + (1 - m) * batch).
    Inference mode uses the running buffers.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if training:
        n = x.shape[0]
        if n < 2:
            raise ValueError("batch norm in training mode needs a batch of at least 2")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        if running_mean is not None:
            running_mean *= momentum
            running_mean += (1.0 - momentum) * mu
            running_var *= momentum
            running_var += (1.0 - momentum) * var * (n / (n - 1))
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data * xhat + beta.data

    def backward(g):
        ggamma = (g * xhat).sum(axis=0)
        gbeta = g.sum(axis=0)
        gxhat = g * gamma.data
        if training:
            gx = inv * (gxhat - gxhat.mean(axis=0) - xhat * (gxhat * xhat).mean(axis=0))
        else:
            gx = gxhat * inv
        return gx, ggamma, gbeta

    return Tensor._make(out, (x, gamma, beta), backward, "batch_norm")


# -- numerical gradient checking ---------------------------------------------


def numerical_grad(f: Callable[[], Tensor], x: Tensor, h: float = 1e-5, seed=None) -> np.ndarray:
    """Central finite-difference gradient of ``sum(seed * f())`` w.r.t. ``x.data``."""
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f().data.copy()
            flat[i] = orig - h
            down = f().data.copy()
            flat[i] = orig
            diff = up - down if seed is None else (up - down) * seed
            gflat[i] = diff.sum() / (2 * h)
    return g


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradcheck(f: Callable[[], Tensor], inputs: Iterable[Tensor], h: float = 1e-5, seed=None) -> float:
    """Worst relative error between analytic and central-difference gradients."""
    inputs = list(inputs)
    out = f()
    if seed is None and out.size != 1:
        seed = np.random.default_rng(0).standard_normal(out.shape)
    analytic = grad(out, inputs, seed)
    worst = 0.0
    for x, ga in zip(inputs, analytic):
        gn = numerical_grad(f, x, h, seed)
        worst = max(worst, max_relative_error(ga, gn))
    return worst


__all__ = [
    "Tensor", "NonFiniteError", "no_grad", "grad", "topo_order", "as_tensor",
    "add", "sub", "mul", "div", "scale", "power", "sqrt", "leaky_relu", "relu", "log", "exp",
    "sum_", "mean", "reshape", "transpose", "broadcast_to", "take", "concat", "stack",
    "matmul", "log_softmax", "sum_squares", "l2_norm", "pairwise_sqdist",
    "conv2d", "maxpool2x2", "batch_norm", "same_padding",
    "numerical_grad", "gradcheck", "max_relative_error",
]
