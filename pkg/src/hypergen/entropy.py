"""Nearest-neighbour (Kozachenko-Leonenko) differential entropy estimate.

    H = psi(N) + (d / N) * sum_i log eps_i

where eps_i is the Euclidean distance from row i to its nearest other row and
d is the intrinsic dimension (the latent size of the generator). The
neighbour index is chosen on the forward pass and held fixed for the
gradient, so the estimate is differentiable almost everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

DISTANCE_FLOOR = 1e-12

# Bernoulli-number coefficients B_2k / (2k) of the asymptotic digamma series
_ASYMPTOTIC = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)


def digamma(x: float) -> float:
    """psi(x) for x > 0, via upward recurrence to x >= 6 and the asymptotic series."""
    x = float(x)
    if not x > 0.0 or not math.isfinite(x):
        raise ValueError(f"digamma is only defined here for finite x > 0, got {x}")
    acc = 0.0
    while x < 6.0:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    power = inv2
    for c in _ASYMPTOTIC:
        series += c * power
        power *= inv2
    return acc + math.log(x) - 0.5 / x - series


def log_unit_ball_volume(d: int) -> float:
    return 0.5 * d * math.log(math.pi) - math.lgamma(0.5 * d + 1.0)


class CollapseError(FloatingPointError):
    """Two samples coincide (nearest-neighbour distance below the floor)."""


@dataclass(frozen=True)
class EntropyConfig:
    d: int
    subsample: int | None = None
    # add -psi(1) + log V_d so the value estimates the differential entropy itself
    complete: bool = False

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("intrinsic dimension d must be >= 1")
        if self.subsample is not None and self.subsample < 1:
            raise ValueError("subsample must be a positive count")


def nearest_neighbors(points: np.ndarray, rows: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(index, squared distance) of each selected row's nearest other row."""
    n = len(points)
    rows = np.arange(n) if rows is None else np.asarray(rows)
    with T.no_grad():
        d2 = T.pairwise_sqdist(points[rows], points).data.copy()
    d2[np.arange(len(rows)), rows] = np.inf
    nn = d2.argmin(axis=1)
    return nn, d2[np.arange(len(rows)), nn]


def kl_entropy(samples, cfg: EntropyConfig, rng: np.random.Generator | None = None) -> Tensor:
    """Differentiable entropy estimate of the rows of an (N, D) sample matrix.

    With ``cfg.subsample = M`` only M random rows contribute a distance, each
    still measured against all N rows.
    """
    x = T.as_tensor(samples)
    if x.ndim != 2:
        raise ValueError(f"samples must be an (N, D) matrix, got shape {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise ValueError("the entropy estimate needs at least two samples")
    if cfg.subsample is None or cfg.subsample >= n:
        rows = np.arange(n)
    else:
        rng = rng if rng is not None else np.random.default_rng()
        rows = np.sort(rng.choice(n, size=cfg.subsample, replace=False))
    nn, d2 = nearest_neighbors(x.data, rows)
    if np.any(d2 < DISTANCE_FLOOR**2):
        i = int(rows[np.argmin(d2)])
        raise CollapseError(f"collapsed samples: row {i} has a neighbour closer than {DISTANCE_FLOOR:g}")

    diff = T.take(x, rows) - T.take(x, nn)
    log_eps = T.scale(T.log(T.sum_squares(diff, axis=1)), 0.5)
    h = T.scale(T.mean(log_eps), float(cfg.d))
    const = digamma(n)
    if cfg.complete:
        const += -digamma(1.0) + log_unit_ball_volume(cfg.d)
    return h + const


def gaussian_entropy(dim: int, var: float = 1.0) -> float:
    """Differential entropy of an isotropic Gaussian in ``dim`` dimensions."""
    return 0.5 * dim * math.log(2.0 * math.pi * math.e * var)
