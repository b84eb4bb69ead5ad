"""Post-training diagnostics on banks of generated weight vectors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import Dataset, GaussianMixture, mixture_density
from .entropy import nearest_neighbors
from .hypernet import HyperNetParams, generate, sample_z
from .target import ArchDescriptor, WeightVector, forward

# keep (networks x images) per forward call small enough for the conv buffers
EVAL_PAIRS = 1024


@dataclass(frozen=True)
class WeightBank:
    """Ordered (z, theta) samples with provenance."""

    z: np.ndarray  # (M, z_dim)
    theta: np.ndarray  # (M, P)
    arch: ArchDescriptor | None = None
    gauge_fixed: bool = False
    seed: int | None = None

    def __post_init__(self):
        z = np.ascontiguousarray(self.z, dtype=np.float64)
        theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if theta.ndim != 2 or len(theta) < 1:
            raise ValueError("a bank needs at least one weight vector, stored as an (M, P) array")
        if z.ndim != 2 or len(z) != len(theta):
            raise ValueError(f"z has shape {z.shape} for {len(theta)} members")
        if self.arch is not None and theta.shape[1] != self.arch.weight_count:
            raise ValueError(f"weight length {theta.shape[1]} does not match the architecture")
        z.setflags(write=False)
        theta.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "theta", theta)

    def __len__(self) -> int:
        return len(self.theta)

    @property
    def z_dim(self) -> int:
        return self.z.shape[1]

    def member(self, i: int) -> WeightVector:
        return WeightVector(self.theta[i], self.arch, gauge_fixed=self.gauge_fixed)

    def subset(self, index) -> "WeightBank":
        return WeightBank(self.z[index], self.theta[index], self.arch, self.gauge_fixed, self.seed)


def _generate_infer(params: HyperNetParams, z: np.ndarray, chunk: int = 256) -> np.ndarray:
    with T.no_grad():
        return np.concatenate([generate(z[s : s + chunk], params, "infer").data for s in range(0, len(z), chunk)])


def sample_bank(params: HyperNetParams, n: int, rng: np.random.Generator, seed: int | None = None) -> WeightBank:
    """Ancestral sampling: draw z from the prior and map it through the generator."""
    z = sample_z(n, params.cfg, rng)
    return WeightBank(z, _generate_infer(params, z), params.arch, False, seed)


# -- classification with many networks ---------------------------------------


def _check_classifier(bank: WeightBank, arch: ArchDescriptor | None) -> ArchDescriptor:
    arch = arch if arch is not None else bank.arch
    if arch is None:
        raise ValueError("evaluating a bank needs a classifier architecture")
    if bank.theta.shape[1] != arch.weight_count:
        raise ValueError("bank weight length does not match the architecture")
    if bank.arch is not None and bank.arch.hash64() != arch.hash64():
        raise ValueError("bank was generated for a different architecture")
    return arch


def member_log_probs(theta: np.ndarray, arch: ArchDescriptor, inputs: np.ndarray) -> np.ndarray:
    """(M, N, C) log-probabilities of every network on every input."""
    theta = np.atleast_2d(theta)
    m, n = len(theta), len(inputs)
    out = np.empty((m, n, arch.num_classes))
    per = max(1, min(m, EVAL_PAIRS // max(1, min(n, EVAL_PAIRS))))
    step = max(1, EVAL_PAIRS // per)
    with T.no_grad():
        for a in range(0, m, per):
            for b in range(0, n, step):
                out[a : a + per, b : b + step] = forward(inputs[b : b + step], theta[a : a + per], arch).data
    return out


def member_predictions(bank: WeightBank, ds: Dataset, arch: ArchDescriptor | None = None) -> np.ndarray:
    arch = _check_classifier(bank, arch)
    return member_log_probs(bank.theta, arch, ds.inputs).argmax(axis=-1)


def member_accuracies(bank: WeightBank, ds: Dataset, arch: ArchDescriptor | None = None) -> np.ndarray:
    return (member_predictions(bank, ds, arch) == ds.labels).mean(axis=1)


def majority_vote(predictions: np.ndarray, num_classes: int) -> np.ndarray:
    """Per-column plurality of an (M, N) array of class indices; ties go to the lowest class."""
    counts = np.zeros((predictions.shape[1], num_classes), dtype=np.int64)
    cols = np.broadcast_to(np.arange(predictions.shape[1]), predictions.shape)
    np.add.at(counts, (cols, predictions), 1)
    return counts.argmax(axis=1)


def ensemble_predict(logp: np.ndarray, rule: str) -> np.ndarray:
    if rule == "majority":
        return majority_vote(logp.argmax(axis=-1), logp.shape[-1])
    if rule == "mean":
        return np.exp(logp).mean(axis=0).argmax(axis=-1)
    raise ValueError(f"unknown ensemble rule {rule!r} (use 'mean' or 'majority')")


def ensemble_eval(bank: WeightBank, ds: Dataset, rule: str = "majority", arch: ArchDescriptor | None = None) -> float:
    """Accuracy of the whole bank used as one classifier."""
    arch = _check_classifier(bank, arch)
    if rule not in ("mean", "majority"):
        raise ValueError(f"unknown ensemble rule {rule!r} (use 'mean' or 'majority')")
    logp = member_log_probs(bank.theta, arch, ds.inputs)
    return float((ensemble_predict(logp, rule) == ds.labels).mean())


@dataclass(frozen=True)
class Histogram:
    counts: np.ndarray
    edges: np.ndarray
    values: np.ndarray


def accuracy_histogram(bank: WeightBank, ds: Dataset, bins: int = 20, value_range=None, arch=None) -> Histogram:
    acc = member_accuracies(bank, ds, arch)
    counts, edges = np.histogram(acc, bins=bins, range=value_range)
    return Histogram(counts, edges, acc)


# -- paths ---------------------------------------------------------------------


@dataclass(frozen=True)
class PathSpec:
    z1: np.ndarray
    z2: np.ndarray
    k: int = 21
    kind: str = "interpolated"  # or "direct"

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("a path needs at least two points")
        if self.kind not in ("direct", "interpolated"):
            raise ValueError(f"unknown path kind {self.kind!r}")
        z1, z2 = np.asarray(self.z1, dtype=np.float64), np.asarray(self.z2, dtype=np.float64)
        if z1.shape != z2.shape or z1.ndim != 1:
            raise ValueError("path endpoints must be latent vectors of equal length")
        object.__setattr__(self, "z1", z1)
        object.__setattr__(self, "z2", z2)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.k)


def path_weights(params: HyperNetParams, spec: PathSpec) -> np.ndarray:
    """(K, P) weights along the path; t=1 gives G(z1) and t=0 gives G(z2) for both kinds."""
    t = spec.t[:, None]
    if spec.kind == "interpolated":
        return _generate_infer(params, spec.z1 * t + spec.z2 * (1.0 - t))
    ends = _generate_infer(params, np.stack([spec.z1, spec.z2]))
    return ends[0] * t + ends[1] * (1.0 - t)


@dataclass(frozen=True)
class PathProfile:
    t: np.ndarray
    accuracy: np.ndarray
    kind: str


def path_eval(params: HyperNetParams, arch: ArchDescriptor, ds: Dataset, spec: PathSpec) -> PathProfile:
    theta = path_weights(params, spec)
    acc = (member_log_probs(theta, arch, ds.inputs).argmax(axis=-1) == ds.labels).mean(axis=1)
    return PathProfile(spec.t, acc, spec.kind)


# -- PCA -----------------------------------------------------------------------


@dataclass(frozen=True)
class PCAResult:
    eigenvalues: np.ndarray  # all, descending
    components: np.ndarray  # (k, D), orthonormal rows
    projections: np.ndarray  # (n, k)
    mean: np.ndarray

    @property
    def k(self) -> int:
        return len(self.components)


def pca_scatter(samples, k: int = 2, rank_tol: float = 1e-10) -> PCAResult:
    """Principal components of the rows of ``samples`` (or of a bank's weights).

    Uses the covariance when the dimension is at most the sample count and the
    Gram matrix otherwise. Each component's sign is fixed so its largest-magnitude
    entry is positive.
    """
    x = np.asarray(samples.theta if isinstance(samples, WeightBank) else samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("PCA input must be an (n, D) matrix")
    n, dim = x.shape
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < sample count ({n}), got k={k}")
    mean = x.mean(axis=0)
    xc = x - mean
    if dim <= n:
        vals, vecs = np.linalg.eigh(xc.T @ xc / (n - 1))
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order].T
    else:
        vals, u = np.linalg.eigh(xc @ xc.T / (n - 1))
        order = np.argsort(vals)[::-1]
        vals, u = vals[order], u[:, order]
        keep = vals > 0
        vecs = np.zeros((n, dim))
        vecs[keep] = (xc.T @ u[:, keep] / np.sqrt((n - 1) * vals[keep])).T
    vals = np.maximum(vals, 0.0)
    rank = int(np.sum(vals > rank_tol * max(1.0, vals[0])))
    if k > rank:
        raise ValueError(f"k={k} exceeds the rank of the samples ({rank})")
    comps = vecs[:k].copy()
    flip = np.sign(comps[np.arange(k), np.abs(comps).argmax(axis=1)])
    comps *= flip[:, None]
    return PCAResult(vals, comps, xc @ comps.T, mean)


def filter_block(bank: WeightBank, layer: int, index: int | None = None) -> np.ndarray:
    """Weights of one filter (bias included) or a whole layer for every member."""
    if bank.arch is None:
        raise ValueError("selecting filters needs the bank's architecture")
    info = bank.arch.infos[layer]
    blocks = bank.theta[:, info.offset : info.offset + info.size].reshape(len(bank), info.layer.filters, info.block_size)
    return blocks.reshape(len(bank), -1) if index is None else blocks[:, index]


# -- adversarial examples ------------------------------------------------------


def _target_nll_grad(x: np.ndarray, theta: np.ndarray, y_target: np.ndarray, arch: ArchDescriptor) -> np.ndarray:
    """Gradient of -log p(y_target | x) with respect to each input (rows independent)."""
    xt = T.Tensor(x, requires_grad=True)
    logp = forward(xt, theta, arch)
    idx = np.indices(y_target.shape)
    picked = T.take(logp, (*idx, y_target))
    return T.grad(-T.sum_(picked), [xt])[0]


def fgsm_targeted(x, y_true, y_target, theta, eps: float, arch: ArchDescriptor) -> np.ndarray:
    """Targeted fast-gradient-sign step: move each image toward ``y_target`` by ``eps`` per pixel.

    ``x`` is (N, H, W, C) with a single weight vector, or (G, N, H, W, C) with
    ``theta`` (G, P). The result is clipped to the pixel range [0, 1].
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    y_true, y_target = np.asarray(y_true), np.asarray(y_target)
    if np.any(y_true == y_target):
        raise ValueError("target class must differ from the true class")
    x = np.asarray(x, dtype=np.float64)
    w = theta.flat if isinstance(theta, WeightVector) else np.asarray(theta, dtype=np.float64)
    direction = np.sign(_target_nll_grad(x, w, y_target, arch))
    return np.clip(x - eps * direction, 0.0, 1.0)


EPS_GRID = tuple(round(0.02 * i, 2) for i in range(13))


@dataclass(frozen=True)
class AdversarialSweep:
    eps: np.ndarray
    single: np.ndarray  # success probability per eps, attacked network
    ensemble: np.ndarray  # success probability per eps, fresh majority-vote ensemble
    trials: int


def adversarial_transfer_experiment(
    params: HyperNetParams,
    arch: ArchDescriptor,
    ds: Dataset,
    eps_grid=EPS_GRID,
    ensemble_size: int = 100,
    rng: np.random.Generator | None = None,
    trials: int | None = None,
) -> AdversarialSweep:
    """Transfer of targeted FGSM examples from one generated network to an ensemble.

    For every validation example (or the first ``trials``): generate a network,
    draw a target class different from the label, build FGSM examples for every
    eps against that network, then record whether they are classified as the
    target by that network and by a freshly generated majority-vote ensemble.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    eps = np.asarray(eps_grid, dtype=np.float64)
    n = len(ds) if trials is None else min(trials, len(ds))
    x, y = ds.inputs[:n], ds.labels[:n]
    k = ds.num_classes
    y_target = (y + rng.integers(1, k, size=n)) % k
    theta = _generate_infer(params, sample_z(n, params.cfg, rng))

    single = np.zeros(len(eps))
    ensemble = np.zeros(len(eps))
    step = 32
    for s in range(0, n, step):
        xs, ts, th = x[s : s + step, None], y_target[s : s + step, None], theta[s : s + step]
        direction = np.sign(_target_nll_grad(xs, th, ts, arch))
        adv = np.clip(xs[None] - eps[:, None, None, None, None, None] * direction[None], 0.0, 1.0)  # (E, g, 1, H, W, C)
        adv = np.moveaxis(adv, 0, 1)[:, :, 0]  # (g, E, H, W, C)
        with T.no_grad():
            pred = forward(adv, th, arch).data.argmax(axis=-1)  # (g, E)
        single += (pred == ts).sum(axis=0)
        for i in range(len(th)):
            members = _generate_infer(params, sample_z(ensemble_size, params.cfg, rng))
            logp = member_log_probs(members, arch, adv[i])
            ensemble += ensemble_predict(logp, "majority") == ts[i]
    return AdversarialSweep(eps, single / n, ensemble / n, n)


# -- distillation ----------------------------------------------------------------


def distill(bank: WeightBank) -> WeightVector:
    """Elementwise mean of the raw member weight vectors.

    Accumulated as deviations from the first member, so a bank of identical
    members returns that member exactly.
    """
    if bank.arch is None:
        raise ValueError("distillation needs the bank's architecture")
    base = bank.theta[0]
    return WeightVector(base + (bank.theta - base).mean(axis=0), bank.arch, gauge_fixed=False)


# -- toy problem -------------------------------------------------------------------


@dataclass(frozen=True)
class ToyProfile:
    z: np.ndarray
    points: np.ndarray  # (K, 2)
    density: np.ndarray
    nn_distance: np.ndarray

    @property
    def correlation(self) -> float:
        return float(np.corrcoef(self.density, self.nn_distance)[0, 1])

    def min_mode_distance(self, gm: GaussianMixture) -> np.ndarray:
        """Distance from every mixture mean to the closest path point."""
        d = np.linalg.norm(self.points[None, :, :] - gm.means[:, None, :], axis=-1)
        return d.min(axis=1)


def toy_path_profile(params: HyperNetParams, gm: GaussianMixture, k: int = 400) -> ToyProfile:
    """Generator output for K evenly spaced z in [-1, 1], with density and neighbour spacing."""
    if params.cfg.z_dim != 1 or params.cfg.output_dim != 2:
        raise ValueError("the toy profile needs a generator from 1-D z to 2-D points")
    if k < 2:
        raise ValueError("need at least two path points")
    z = np.linspace(-1.0, 1.0, k)[:, None]
    pts = _generate_infer(params, z)
    _, d2 = nearest_neighbors(pts)
    return ToyProfile(z[:, 0], pts, mixture_density(pts, gm), np.sqrt(d2))


# -- filter images -----------------------------------------------------------------


@dataclass(frozen=True)
class FilterGrid:
    image: np.ndarray  # (rows, cols) in [0, 1]
    side: int  # tiles per row and per column
    tile: tuple[int, int]


def normalize_tile(tile: np.ndarray) -> np.ndarray:
    lo, hi = tile.min(), tile.max()
    if hi == lo:
        return np.full(tile.shape, 0.5)
    return (tile - lo) / (hi - lo)


def export_filter_images(bank: WeightBank, layer: int, index: int, count: int = 25, channel: int = 0, gap: int = 1) -> FilterGrid:
    """Grid of one kernel slice (input ``channel`` of filter ``index``) across ``count`` members."""
    if bank.arch is None:
        raise ValueError("filter images need the bank's architecture")
    info = bank.arch.infos[layer]
    if info.layer.kind != "conv":
        raise ValueError(f"layer {layer} is {info.layer.kind}; filter images need a conv layer")
    if not 0 <= index < info.layer.filters or not 0 <= channel < info.in_channels:
        raise ValueError("filter or channel index out of range")
    count = min(count, len(bank))
    if count < 1:
        raise ValueError("count must be positive")
    kh, kw = info.layer.kernel
    block = filter_block(bank, layer, index)[:count, : info.filter_elements]
    tiles = block.reshape(count, kh, kw, info.in_channels)[..., channel]
    side = math.isqrt(count - 1) + 1
    img = np.ones((side * kh + (side - 1) * gap, side * kw + (side - 1) * gap))
    for i in range(side * side):
        r, c = divmod(i, side)
        tile = normalize_tile(tiles[i]) if i < count else np.zeros((kh, kw))
        img[r * (kh + gap) : r * (kh + gap) + kh, c * (kw + gap) : c * (kw + gap) + kw] = tile
    return FilterGrid(img, side, (kh, kw))
