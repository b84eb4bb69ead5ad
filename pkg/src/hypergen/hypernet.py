"""The weight generator G(z; phi).

For a target network the generator has two stages. An extractor MLP maps z to
one code per filter (and a single code for the whole last layer). Each layer
then owns a small weight-generator MLP, shared by all filters of that layer,
which turns a code into the filter's weights and bias. Without a target
architecture the generator is a plain MLP from z to ``output_dim`` values.

All hidden layers use leaky-ReLU; batch norm sits on every layer except each
sub-network's output layer.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .target import ArchDescriptor
from .tensor import Tensor


@dataclass(frozen=True)
class HyperNetConfig:
    z_dim: int = 300
    z_dist: str = "uniform"  # uniform on [-1, 1]^z_dim, or "normal"
    z_scale: float = 1.0  # std of the normal option
    code_size: int = 15
    extractor_hidden: tuple[int, ...] = (300, 300)
    generator_hidden: tuple[tuple[int, ...], ...] = ((40, 40), (100, 100), (100, 100), (60, 60))
    slope: float = 0.1
    batch_norm: bool = True
    bias_free: bool = True
    output_dim: int | None = None  # set for a plain MLP generator (no target architecture)
    target_init: bool = False  # rescale generator output layers to the target layer's Glorot variance

    def __post_init__(self):
        if self.z_dim < 1:
            raise ValueError("z_dim must be >= 1")
        if self.z_dist not in ("uniform", "normal"):
            raise ValueError(f"unknown z distribution {self.z_dist!r}")
        if self.code_size < 1:
            raise ValueError("code_size must be >= 1")
        if any(h < 1 for h in self.extractor_hidden) or any(h < 1 for g in self.generator_hidden for h in g):
            raise ValueError("hidden sizes must be positive")
        if self.output_dim is not None and self.output_dim < 1:
            raise ValueError("output_dim must be positive")
        object.__setattr__(self, "extractor_hidden", tuple(self.extractor_hidden))
        object.__setattr__(self, "generator_hidden", tuple(tuple(g) for g in self.generator_hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["extractor_hidden"] = list(self.extractor_hidden)
        d["generator_hidden"] = [list(g) for g in self.generator_hidden]
        return d


def mnist_hypernet_config() -> HyperNetConfig:
    return HyperNetConfig()


def toy_hypernet_config() -> HyperNetConfig:
    return HyperNetConfig(z_dim=1, extractor_hidden=(30, 10, 10), generator_hidden=(), bias_free=False, output_dim=2)


@dataclass(frozen=True)
class SubNet:
    name: str
    sizes: tuple[int, ...]  # input, hidden..., output
    invocations: int = 1  # rows fed per z (filters sharing this generator)


def subnets(cfg: HyperNetConfig, arch: ArchDescriptor | None) -> list[SubNet]:
    if cfg.output_dim is not None:
        return [SubNet("mlp", (cfg.z_dim, *cfg.extractor_hidden, cfg.output_dim))]
    if arch is None:
        raise ValueError("a filter-wise generator needs a target architecture")
    infos = arch.infos
    if len(cfg.generator_hidden) != len(infos):
        raise ValueError(f"{len(cfg.generator_hidden)} weight generators configured for {len(infos)} target layers")
    counts = [info.layer.filters for info in infos[:-1]] + [1]
    nets = [SubNet("E", (cfg.z_dim, *cfg.extractor_hidden, cfg.code_size * sum(counts)))]
    for l, info in enumerate(infos):
        out = info.block_size if l < len(infos) - 1 else info.size
        nets.append(SubNet(f"W{l + 1}", (cfg.code_size, *cfg.generator_hidden[l], out), counts[l]))
    return nets


@dataclass
class HyperNetParams:
    """phi: trainable arrays plus batch-norm running statistics."""

    cfg: HyperNetConfig
    arch: ArchDescriptor | None
    values: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return list(self.values)

    @property
    def count(self) -> int:
        return int(sum(v.size for v in self.values.values()))

    def subnet_counts(self, include_bn: bool = False) -> dict[str, int]:
        out: dict[str, int] = {}
        for name, v in self.values.items():
            net, kind = name.split(".")[0], name.split(".")[1]
            if include_bn or kind in ("w", "b"):
                out[net] = out.get(net, 0) + v.size
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.values.values()])

    def state_vector(self) -> np.ndarray:
        """Trainable values followed by batch-norm buffers, for persistence."""
        parts = [v.ravel() for v in self.values.values()] + [b.ravel() for b in self.buffers.values()]
        return np.concatenate(parts)

    def with_state_vector(self, vec: np.ndarray) -> "HyperNetParams":
        vec = np.asarray(vec, dtype=np.float64)
        total = self.count + sum(b.size for b in self.buffers.values())
        if vec.shape != (total,):
            raise ValueError(f"state vector has length {vec.size}, expected {total}")
        values, buffers, pos = {}, {}, 0
        for src, dst in ((self.values, values), (self.buffers, buffers)):
            for name, v in src.items():
                dst[name] = vec[pos : pos + v.size].reshape(v.shape).copy()
                pos += v.size
        return HyperNetParams(self.cfg, self.arch, values, buffers)

    def copy(self) -> "HyperNetParams":
        return HyperNetParams(
            self.cfg,
            self.arch,
            {k: v.copy() for k, v in self.values.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def replace_values(self, values: dict[str, np.ndarray]) -> "HyperNetParams":
        return HyperNetParams(self.cfg, self.arch, dict(values), self.buffers)


def _target_gain(cfg: HyperNetConfig, arch: ArchDescriptor, layer: int, width: int) -> float:
    """Limit factor giving generated weights the Glorot variance of the target layer.

    A hidden unit after batch norm and leaky-ReLU has second moment about
    (1 + slope^2) / 2, so an output column of ``width`` inputs needs weight
    variance target_var / (width * that moment).
    """
    info = arch.infos[layer]
    kh, kw = info.layer.kernel if info.layer.kind == "conv" else (1, 1)
    target_var = 2.0 / (info.filter_elements + info.layer.filters * kh * kw)
    moment = (1.0 + cfg.slope**2) / 2.0 if cfg.batch_norm else 1.0
    return np.sqrt(3.0 * target_var / (width * moment))


def build(cfg: HyperNetConfig, arch: ArchDescriptor | None, rng: np.random.Generator) -> HyperNetParams:
    """Glorot-uniform matrices, unit BN scales, zero BN shifts and biases.

    With ``cfg.target_init`` the output matrix of each weight generator is
    drawn instead so that generated weights start at the target layer's own
    Glorot scale.
    """
    values: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    for net in subnets(cfg, arch):
        last = len(net.sizes) - 2
        for k, (fan_in, fan_out) in enumerate(zip(net.sizes[:-1], net.sizes[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            if cfg.target_init and k == last and net.name.startswith("W"):
                limit = _target_gain(cfg, arch, int(net.name[1:]) - 1, fan_in)
            values[f"{net.name}.w.{k}"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            if not cfg.bias_free:
                values[f"{net.name}.b.{k}"] = np.zeros(fan_out)
            if k < last and cfg.batch_norm:
                values[f"{net.name}.gamma.{k}"] = np.ones(fan_out)
                values[f"{net.name}.beta.{k}"] = np.zeros(fan_out)
                buffers[f"{net.name}.mean.{k}"] = np.zeros(fan_out)
                buffers[f"{net.name}.var.{k}"] = np.ones(fan_out)
    return HyperNetParams(cfg, arch, values, buffers)


def _run(net: SubNet, h: Tensor, params: HyperNetParams, leaves: dict[str, Tensor], training: bool, update: bool) -> Tensor:
    cfg = params.cfg
    last = len(net.sizes) - 2
    for k in range(last + 1):
        h = h @ leaves[f"{net.name}.w.{k}"]
        if not cfg.bias_free:
            h = h + leaves[f"{net.name}.b.{k}"]
        if k == last:
            break
        if cfg.batch_norm:
            rm = params.buffers[f"{net.name}.mean.{k}"]
            rv = params.buffers[f"{net.name}.var.{k}"]
            h = T.batch_norm(
                h,
                leaves[f"{net.name}.gamma.{k}"],
                leaves[f"{net.name}.beta.{k}"],
                rm if update or not training else None,
                rv if update or not training else None,
                training=training,
            )
        h = T.leaky_relu(h, cfg.slope)
    return h


def generate(
    z,
    params: HyperNetParams,
    mode: str = "infer",
    leaves: dict[str, Tensor] | None = None,
    update_stats: bool = True,
) -> Tensor:
    """Generated weight vectors, one row per row of ``z``.

    ``leaves`` maps parameter names to Tensors to differentiate through; by
    default the stored values are wrapped as constants. Train mode uses batch
    statistics (and updates the running buffers unless ``update_stats`` is
    false); infer mode uses the stored running statistics.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    cfg = params.cfg
    z = T.as_tensor(z)
    if z.ndim != 2 or z.shape[1] != cfg.z_dim:
        raise ValueError(f"z must have shape (B, {cfg.z_dim}), got {z.shape}")
    training = mode == "train"
    b = z.shape[0]
    if training and cfg.batch_norm and b < 2:
        raise ValueError("train mode needs at least two z rows for batch statistics")
    if leaves is None:
        leaves = {name: Tensor(v) for name, v in params.values.items()}
    nets = subnets(cfg, params.arch)
    if cfg.output_dim is not None:
        return _run(nets[0], z, params, leaves, training, update_stats)

    codes = _run(nets[0], z, params, leaves, training, update_stats)
    parts, start = [], 0
    for net in nets[1:]:
        width = cfg.code_size * net.invocations
        c = codes[:, start : start + width].reshape(b * net.invocations, cfg.code_size)
        start += width
        out = _run(net, c, params, leaves, training, update_stats)
        parts.append(out.reshape(b, -1))
    return T.concat(parts, axis=1)


def sample_z(n: int, cfg: HyperNetConfig, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("need at least one latent sample")
    if cfg.z_dist == "uniform":
        return rng.uniform(-1.0, 1.0, size=(n, cfg.z_dim))
    return rng.normal(0.0, cfg.z_scale, size=(n, cfg.z_dim))
