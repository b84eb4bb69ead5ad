"""Training objective and loop for the weight generator.

The objective is ``lam * L_accuracy + L_diversity``. The diversity term is
selected by ``TrainConfig.diversity``:

weight-entropy      minus the entropy estimate of the (gauge-fixed) generated weights
output-entropy      minus the entropy estimate of the concatenated class
                    probabilities of every generated network on a probe batch
ensemble-aggregate  class loss of the probability-averaged ensemble on a probe batch
l2-reg              weight-entropy without gauge fixing plus an l2 penalty on phi
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .data import Dataset, GaussianMixture, minibatch
from .entropy import CollapseError, EntropyConfig, kl_entropy
from .gauge import gauge_fix
from .hypernet import HyperNetConfig, HyperNetParams, build, generate, sample_z
from .optim import AdamConfig, AdamState, adam_step
from .target import ArchDescriptor, class_loss, forward, toy_loss
from .tensor import Tensor

DIVERSITY_MODES = ("weight-entropy", "output-entropy", "ensemble-aggregate", "l2-reg")

__all__ = [
    "TrainConfig", "TrainLog", "TrainingDiverged", "LossTerms", "total_loss", "train", "adam_step",
    "DIVERSITY_MODES",
]


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1e3
    diversity: str = "weight-entropy"
    z_batch: int = 32
    images_per_z: int = 32
    adam: AdamConfig = AdamConfig()
    steps: int = 4000
    seed: int = 0
    gauge: bool = True
    entropy_subsample: int | None = None
    l2_coef: float = 1e-4
    l2_target: str = "generator"  # l2-reg mode: penalise the generator parameters or the generated vectors
    probe_size: int = 32  # probe images for the output-space diversity modes
    checkpoint_every: int = 0
    lam_start: float | None = None  # geometric ramp from lam_start to lam over lam_ramp steps
    lam_ramp: int = 0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lam must be >= 0")
        if self.diversity not in DIVERSITY_MODES:
            raise ValueError(f"unknown diversity mode {self.diversity!r}")
        if self.z_batch < 2:
            raise ValueError("z_batch must be >= 2 for the entropy estimate")
        if self.images_per_z < 1 or self.probe_size < 1:
            raise ValueError("image batch sizes must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.l2_target not in ("generator", "output"):
            raise ValueError("l2_target must be 'generator' or 'output'")
        if self.l2_coef < 0:
            raise ValueError("l2_coef must be >= 0")
        if self.lam_start is not None and not (self.lam_start > 0 and self.lam > 0 and self.lam_ramp >= 1):
            raise ValueError("a lam ramp needs lam_start > 0, lam > 0 and lam_ramp >= 1")
        if self.entropy_subsample is not None and not 1 <= self.entropy_subsample <= self.z_batch:
            raise ValueError("entropy_subsample must lie in [1, z_batch]")


def lam_at(cfg: TrainConfig, step: int) -> float:
    """Accuracy weight at ``step`` (1-based)."""
    if cfg.lam_start is None:
        return cfg.lam
    frac = min(1.0, (step - 1) / cfg.lam_ramp)
    return float(cfg.lam_start * (cfg.lam / cfg.lam_start) ** frac)


@dataclass
class TrainLog:
    step: list[int] = field(default_factory=list)
    acc_loss: list[float] = field(default_factory=list)
    diversity: list[float] = field(default_factory=list)
    total: list[float] = field(default_factory=list)
    ms: list[float] = field(default_factory=list)

    HEADER = ("step", "acc_loss", "diversity", "total", "ms")

    def append(self, step: int, acc: float, div: float, total: float, ms: float) -> None:
        if self.step and step <= self.step[-1]:
            raise ValueError("log steps must increase")
        for v in (acc, div, total):
            if not np.isfinite(v):
                raise ValueError("log values must be finite")
        self.step.append(step)
        self.acc_loss.append(acc)
        self.diversity.append(div)
        self.total.append(total)
        self.ms.append(ms)

    def __len__(self) -> int:
        return len(self.step)

    def to_csv(self, include_time: bool = True) -> str:
        """CSV text; with ``include_time`` false the ms column is left empty so output is reproducible."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for row in zip(self.step, self.acc_loss, self.diversity, self.total, self.ms):
            s, a, d, t, ms = row
            w.writerow([s, repr(a), repr(d), repr(t), f"{ms:.3f}" if include_time else ""])
        return buf.getvalue()


@dataclass
class LossTerms:
    total: Tensor
    accuracy: Tensor
    diversity: Tensor


def _log_mean_prob(logp: Tensor) -> Tensor:
    """log of the probability average over axis 0 of (G, N, C) log-probabilities."""
    m = Tensor(logp.data.max(axis=0, keepdims=True))
    return T.log(T.mean(T.exp(logp - m), axis=0)) + Tensor(m.data[0])


def total_loss(
    theta: Tensor,
    batch,
    cfg: TrainConfig,
    arch: ArchDescriptor | None,
    z_dim: int,
    rng: np.random.Generator | None = None,
    probe=None,
    phi: dict[str, Tensor] | None = None,
) -> LossTerms:
    """Objective for a batch of generated weight vectors ``theta`` (G, P).

    ``batch`` is (x, y) with x (G, n, H, W, C), y (G, n) for a classifier, or a
    GaussianMixture when the generated vectors are points. ``probe`` is a
    shared (x, y) batch for the output-space modes; ``phi`` holds the
    generator leaves for the l2 penalty.
    """
    theta = T.as_tensor(theta)
    if theta.ndim != 2 or theta.shape[0] < 2:
        raise ValueError("total_loss needs a (G, P) batch with G >= 2")
    if isinstance(batch, GaussianMixture):
        acc = toy_loss(theta, batch)
    else:
        x, y = batch
        acc = class_loss(forward(x, theta, arch), y)

    ecfg = EntropyConfig(d=z_dim, subsample=cfg.entropy_subsample)
    mode = cfg.diversity
    if mode == "weight-entropy":
        w = gauge_fix(theta, arch) if (cfg.gauge and arch is not None) else theta
        div = -kl_entropy(w, ecfg, rng)
    elif mode == "l2-reg":
        div = -kl_entropy(theta, ecfg, rng)
        if cfg.l2_target == "output":
            penalty = T.scale(T.sum_squares(theta), 1.0 / theta.shape[0])
        else:
            if phi is None:
                raise ValueError("l2-reg mode needs the generator parameters")
            norms = [T.sum_squares(v) for v in phi.values()]
            penalty = norms[0]
            for n in norms[1:]:
                penalty = penalty + n
        div = div + T.scale(penalty, cfg.l2_coef)
    else:
        if arch is None or probe is None:
            raise ValueError(f"{mode} mode needs a classifier and a probe batch")
        px, py = probe
        logp = forward(px, theta, arch)  # (G, n, C)
        if mode == "output-entropy":
            outputs = T.exp(logp).reshape(theta.shape[0], -1)
            div = -kl_entropy(outputs, ecfg, rng)
        else:
            div = class_loss(_log_mean_prob(logp), py)
    return LossTerms(T.scale(acc, cfg.lam) + div, acc, div)


class TrainingDiverged(FloatingPointError):
    """Non-finite loss or gradient; carries the last good parameters and the log so far."""

    def __init__(self, step: int, params: HyperNetParams, log: TrainLog, cause: Exception):
        super().__init__(f"training diverged at step {step}: {cause}")
        self.step = step
        self.params = params
        self.log = log


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("init", "z", "data", "entropy", "probe")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, seqs)}


def _image_batch(ds: Dataset, groups: int, n: int, rng: np.random.Generator):
    xs, ys = [], []
    for _ in range(groups):
        x, y = minibatch(ds, n, rng)
        xs.append(x)
        ys.append(y)
    return np.stack(xs), np.stack(ys)


def train(
    hcfg: HyperNetConfig,
    arch: ArchDescriptor | None,
    data,
    tcfg: TrainConfig,
    params: HyperNetParams | None = None,
    log_every: int = 0,
    checkpoint=None,
    progress=None,
) -> tuple[HyperNetParams, TrainLog]:
    """Train the generator on a Dataset (classifier) or a GaussianMixture (points).

    Each step draws ``z_batch`` latent vectors and, for a classifier, a
    separate image minibatch for every one of them. ``checkpoint(step,
    params)`` is called every ``checkpoint_every`` steps; ``progress(step,
    terms)`` every ``log_every`` steps.
    """
    rngs = _streams(tcfg.seed)
    params = build(hcfg, arch, rngs["init"]) if params is None else params.copy()
    state = AdamState()
    log = TrainLog()
    toy = isinstance(data, GaussianMixture)
    if not toy and arch is None:
        raise ValueError("a classifier run needs a target architecture")
    start = time.perf_counter()
    for step in range(1, tcfg.steps + 1):
        z = sample_z(tcfg.z_batch, hcfg, rngs["z"])
        batch = data if toy else _image_batch(data, tcfg.z_batch, tcfg.images_per_z, rngs["data"])
        probe = None
        if tcfg.diversity in ("output-entropy", "ensemble-aggregate"):
            probe = minibatch(data, tcfg.probe_size, rngs["probe"])
        good = params.copy()
        leaves = {k: Tensor(v, requires_grad=True) for k, v in params.values.items()}
        try:
            theta = generate(z, params, "train", leaves)
            cfg = tcfg if tcfg.lam_start is None else replace(tcfg, lam=lam_at(tcfg, step), lam_start=None)
            terms = total_loss(theta, batch, cfg, arch, hcfg.z_dim, rngs["entropy"], probe, leaves)
            grads = T.grad(terms.total, list(leaves.values()))
            new_values, state = adam_step(params.values, dict(zip(leaves, grads)), state, tcfg.adam)
        except CollapseError:
            raise
        except FloatingPointError as exc:
            raise TrainingDiverged(step, good, log, exc) from exc
        params = params.replace_values(new_values)
        ms = (time.perf_counter() - start) * 1e3
        log.append(step, terms.accuracy.item(), terms.diversity.item(), terms.total.item(), ms)
        if progress is not None and log_every and step % log_every == 0:
            progress(step, terms)
        if checkpoint is not None and tcfg.checkpoint_every and step % tcfg.checkpoint_every == 0:
            checkpoint(step, params)
    return params, log
