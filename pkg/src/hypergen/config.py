"""Strict JSON experiment configuration.

Unknown keys are rejected, every omitted value is filled with its default,
and relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import jsonschema

from .data import GaussianMixture, default_toy_mixture
from .hypernet import HyperNetConfig, mnist_hypernet_config, toy_hypernet_config
from .optim import AdamConfig
from .target import ArchDescriptor, DirectTrainConfig, Layer, mnist_arch
from .trainer import DIVERSITY_MODES, TrainConfig


class ConfigError(ValueError):
    pass


_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG = {"type": "number", "minimum": 0}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False, "required": list(required)}


SCHEMA = _obj(
    {
        "experiment": {"enum": ["toy", "mnist"]},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "output_dir": {"type": "string"},
        "data": _obj({"mnist_dir": {"type": "string"}, "validation_count": _POS_INT}),
        "mixture": _obj(
            {
                "components": {
                    "type": "array",
                    "minItems": 1,
                    "items": _obj(
                        {
                            "mean": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                            "covariance": {
                                "type": "array",
                                "minItems": 2,
                                "maxItems": 2,
                                "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                            },
                            "weight": _NONNEG,
                        },
                        required=("mean", "covariance", "weight"),
                    ),
                }
            },
            required=("components",),
        ),
        "arch": _obj(
            {
                "input_shape": {"type": "array", "items": _POS_INT, "minItems": 3, "maxItems": 3},
                "layers": {
                    "type": "array",
                    "minItems": 1,
                    "items": _obj(
                        {
                            "kind": {"enum": ["conv", "dense"]},
                            "filters": _POS_INT,
                            "kernel": {"type": "array", "items": _POS_INT, "minItems": 2, "maxItems": 2},
                            "stride": {"enum": [1, 2]},
                            "activation": {"anyOf": [_NONNEG, {"type": "null"}]},
                            "pool": {"type": "boolean"},
                        },
                        required=("kind", "filters"),
                    ),
                },
            },
            required=("input_shape", "layers"),
        ),
        "hypernet": _obj(
            {
                "z_dim": _POS_INT,
                "z_dist": {"enum": ["uniform", "normal"]},
                "z_scale": {"type": "number", "exclusiveMinimum": 0},
                "code_size": _POS_INT,
                "extractor_hidden": {"type": "array", "items": _POS_INT},
                "generator_hidden": {"type": "array", "items": {"type": "array", "items": _POS_INT}},
                "slope": _NONNEG,
                "batch_norm": {"type": "boolean"},
                "bias_free": {"type": "boolean"},
                "target_init": {"type": "boolean"},
                "output_dim": {"anyOf": [_POS_INT, {"type": "null"}]},
            }
        ),
        "train": _obj(
            {
                "lam": _NONNEG,
                "diversity": {"enum": list(DIVERSITY_MODES)},
                "z_batch": {"type": "integer", "minimum": 2},
                "images_per_z": _POS_INT,
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "eps": {"type": "number", "exclusiveMinimum": 0},
                "steps": {"type": "integer", "minimum": 0},
                "gauge": {"type": "boolean"},
                "entropy_subsample": {"anyOf": [_POS_INT, {"type": "null"}]},
                "l2_coef": _NONNEG,
                "l2_target": {"enum": ["generator", "output"]},
                "lam_start": {"anyOf": [{"type": "number", "exclusiveMinimum": 0}, {"type": "null"}]},
                "lam_ramp": {"type": "integer", "minimum": 0},
                "probe_size": _POS_INT,
                "checkpoint_every": {"type": "integer", "minimum": 0},
                "record_wall_time": {"type": "boolean"},
            }
        ),
        "analysis": _obj(
            {
                "bank_size": _POS_INT,
                "histogram_bins": _POS_INT,
                "eval_count": {"anyOf": [_POS_INT, {"type": "null"}]},
                "path_pairs": _POS_INT,
                "path_points": {"type": "integer", "minimum": 2},
                "pca_components": _POS_INT,
                "adversarial_trials": {"anyOf": [_POS_INT, {"type": "null"}]},
                "ensemble_size": _POS_INT,
                "eps_grid": {"type": "array", "items": _NONNEG, "minItems": 1},
                "filter_layer": {"type": "integer", "minimum": 0},
                "filter_index": {"type": "integer", "minimum": 0},
                "filter_channel": {"type": "integer", "minimum": 0},
                "filter_count": _POS_INT,
                "toy_path_points": {"type": "integer", "minimum": 2},
            }
        ),
        "baseline": _obj({"steps": {"type": "integer", "minimum": 0}, "batch_size": _POS_INT, "lr": {"type": "number", "exclusiveMinimum": 0}}),
    },
    required=("experiment",),
)


@dataclass(frozen=True)
class AnalysisConfig:
    bank_size: int = 100
    histogram_bins: int = 20
    eval_count: int | None = None  # validation examples used by eval/paths/distill (None = all)
    path_pairs: int = 10
    path_points: int = 21
    pca_components: int = 4
    adversarial_trials: int | None = 1000
    ensemble_size: int = 100
    eps_grid: tuple[float, ...] = tuple(round(0.02 * i, 2) for i in range(13))
    filter_layer: int = 0
    filter_index: int = 0
    filter_channel: int = 0
    filter_count: int = 25
    toy_path_points: int = 400


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int
    output_dir: Path
    hypernet: HyperNetConfig
    train: TrainConfig
    analysis: AnalysisConfig
    arch: ArchDescriptor | None = None
    mixture: GaussianMixture | None = None
    mnist_dir: Path | None = None
    validation_count: int = 10_000
    baseline: DirectTrainConfig = field(default_factory=DirectTrainConfig)
    record_wall_time: bool = False

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed, train=replace(self.train, seed=seed), baseline=replace(self.baseline, seed=seed))

    def to_dict(self) -> dict:
        """The fully resolved configuration as plain JSON data."""
        t = self.train
        d = {
            "experiment": self.kind,
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "hypernet": self.hypernet.to_dict(),
            "train": {
                "lam": t.lam, "diversity": t.diversity, "z_batch": t.z_batch, "images_per_z": t.images_per_z,
                "lr": t.adam.lr, "beta1": t.adam.beta1, "beta2": t.adam.beta2, "eps": t.adam.eps,
                "steps": t.steps, "gauge": t.gauge, "entropy_subsample": t.entropy_subsample,
                "l2_coef": t.l2_coef, "l2_target": t.l2_target, "lam_start": t.lam_start, "lam_ramp": t.lam_ramp,
                "probe_size": t.probe_size, "checkpoint_every": t.checkpoint_every,
                "record_wall_time": self.record_wall_time,
            },
            "analysis": {**asdict(self.analysis), "eps_grid": list(self.analysis.eps_grid)},
        }
        if self.kind == "mnist":
            d["data"] = {"mnist_dir": str(self.mnist_dir), "validation_count": self.validation_count}
            d["arch"] = self.arch.to_dict()
            b = self.baseline
            d["baseline"] = {"steps": b.steps, "batch_size": b.batch_size, "lr": b.adam.lr}
        else:
            d["mixture"] = self.mixture.to_dict()
        return d


# per-experiment training defaults (everything else comes from the dataclasses)
TOY_TRAIN = dict(lam=100.0, diversity="l2-reg", z_batch=64, steps=6000, gauge=False, lr=1e-3, l2_coef=1e-4)
MNIST_TRAIN = dict(lam=1e3, diversity="weight-entropy", z_batch=32, images_per_z=32, steps=13_000, gauge=True)


def _path(parts) -> str:
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in parts)


def _schema_error(err: jsonschema.ValidationError) -> ConfigError:
    parts = list(err.absolute_path)
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        return ConfigError(f"{_path(parts + extra[:1])}: unknown key")
    if err.validator == "required":
        return ConfigError(f"{_path(parts)}: {err.message}")
    return ConfigError(f"{_path(parts)}: {err.message}")


def _arch_from(d: dict) -> ArchDescriptor:
    layers = []
    for spec in d["layers"]:
        layers.append(
            Layer(
                spec["kind"],
                spec["filters"],
                tuple(spec.get("kernel", (1, 1))),
                spec.get("stride", 1),
                spec.get("activation", 0.0),
                spec.get("pool", False),
            )
        )
    return ArchDescriptor(tuple(d["input_shape"]), tuple(layers))


def _mixture_from(d: dict) -> GaussianMixture:
    comps = d["components"]
    return GaussianMixture([c["mean"] for c in comps], [c["covariance"] for c in comps], [c["weight"] for c in comps])


def _invariant(where: str, fn):
    try:
        return fn()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(doc: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    try:
        jsonschema.validate(doc, SCHEMA, cls=jsonschema.Draft202012Validator)
    except jsonschema.ValidationError as err:
        best = jsonschema.exceptions.best_match([err])
        raise _schema_error(best) from None
    kind = doc["experiment"]
    wrong = ("data", "arch", "baseline") if kind == "toy" else ("mixture",)
    for key in wrong:
        if key in doc:
            raise ConfigError(f"$.{key}: not used by a {kind} experiment")
    seed = doc.get("seed", 0)
    out = base_dir / doc.get("output_dir", f"runs/{kind}")

    hdefault = (toy_hypernet_config() if kind == "toy" else mnist_hypernet_config()).to_dict()
    hdict = {**hdefault, **doc.get("hypernet", {})}
    hyper = _invariant("$.hypernet", lambda: HyperNetConfig(**hdict))

    tdict = {**(TOY_TRAIN if kind == "toy" else MNIST_TRAIN), **doc.get("train", {})}
    record = tdict.pop("record_wall_time", False)
    adam = AdamConfig(*(tdict.pop(k, getattr(AdamConfig(), k)) for k in ("lr", "beta1", "beta2", "eps")))
    train = _invariant("$.train", lambda: TrainConfig(adam=adam, seed=seed, **tdict))

    adict = dict(doc.get("analysis", {}))
    if "eps_grid" in adict:
        adict["eps_grid"] = tuple(adict["eps_grid"])
    analysis = AnalysisConfig(**adict)

    if kind == "toy":
        mixture = _invariant("$.mixture", lambda: _mixture_from(doc["mixture"])) if "mixture" in doc else default_toy_mixture()
        if hyper.output_dim != 2:
            raise ConfigError("$.hypernet.output_dim: the toy generator must output 2-D points")
        return ExperimentConfig(kind, seed, out, hyper, train, analysis, mixture=mixture, record_wall_time=record)

    arch = _invariant("$.arch", lambda: _arch_from(doc["arch"])) if "arch" in doc else mnist_arch()
    if hyper.output_dim is not None:
        raise ConfigError("$.hypernet.output_dim: must be null for a classifier generator")
    if len(hyper.generator_hidden) != len(arch.layers):
        raise ConfigError(f"$.hypernet.generator_hidden: {len(hyper.generator_hidden)} generators for {len(arch.layers)} layers")
    data = doc.get("data", {})
    mnist_dir = base_dir / data.get("mnist_dir", "data/mnist")
    if not mnist_dir.is_dir():
        raise ConfigError(f"$.data.mnist_dir: directory {mnist_dir} does not exist")
    if analysis.filter_layer >= len(arch.layers):
        raise ConfigError("$.analysis.filter_layer: layer index out of range")
    bdict = doc.get("baseline", {})
    base = DirectTrainConfig(bdict.get("steps", 1000), bdict.get("batch_size", 32), AdamConfig(lr=bdict.get("lr", 1e-3)), seed)
    return ExperimentConfig(
        kind, seed, out, hyper, train, analysis, arch=arch, mnist_dir=mnist_dir,
        validation_count=data.get("validation_count", 10_000), baseline=base, record_wall_time=record,
    )


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: JSON syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return config_from_dict(doc, path.parent)
