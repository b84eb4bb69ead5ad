"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime or
numerical failure (including corrupted or mismatched bank files).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis as A
from .bank import BankError, load_bank, load_params, save_bank, save_params
from .config import ConfigError, ExperimentConfig, parse_config
from .data import load_mnist
from .gauge import gauge_fix
from .hypernet import sample_z
from .report import atomic_write, svg_histogram, svg_lines, svg_scatter, hue_colors, pgm_bytes, write_csv
from .target import accuracy, train_target_direct
from .trainer import TrainingDiverged, train

log = logging.getLogger("hypergen")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="experiment JSON file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (default: the config's output_dir)")
    common.add_argument("--bank", help="weight bank path (default: <out>/bank.hwb)")
    common.add_argument("--params", help="generator checkpoint (default: <out>/phi.hwb)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="hypergen", description="Train weight generators and analyse the networks they produce.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    t = sub.add_parser("train", parents=[common], help="train the generator")
    t.add_argument("--steps", type=int, help="override the number of training steps")
    s = sub.add_parser("sample", parents=[common], help="ancestral sampling into a weight bank")
    s.add_argument("--n", type=int, help="number of samples (default: analysis.bank_size)")
    s.add_argument("--gauge", action="store_true", help="store gauge-fixed weights")
    sub.add_parser("eval", parents=[common], help="accuracy histogram and ensembles of a bank")
    sub.add_parser("paths", parents=[common], help="accuracy along direct and interpolated paths")
    pc = sub.add_parser("pca", parents=[common], help="PCA of bank weights")
    pc.add_argument("--layer", type=int, help="restrict to one layer")
    pc.add_argument("--filter", type=int, help="restrict to one filter of --layer")
    sub.add_parser("adversarial", parents=[common], help="targeted FGSM transfer to ensembles")
    sub.add_parser("distill", parents=[common], help="average a bank into one network")
    sub.add_parser("toy-profile", parents=[common], help="density and spacing along the toy path")
    f = sub.add_parser("filters", parents=[common], help="image grid of one filter slice across a bank")
    f.add_argument("--layer", type=int)
    f.add_argument("--filter", type=int)
    f.add_argument("--channel", type=int)
    f.add_argument("--count", type=int)
    sub.add_parser("baseline", parents=[common], help="train one target network directly")
    return p


class Context:
    def __init__(self, cfg: ExperimentConfig, args):
        self.cfg = cfg
        self.args = args
        self.out = Path(args.out) if args.out else cfg.output_dir
        self.bank_path = Path(args.bank) if args.bank else self.out / "bank.hwb"
        self.params_path = Path(args.params) if args.params else self.out / "phi.hwb"
        self._seeds = np.random.SeedSequence(cfg.seed)

    def rng(self) -> np.random.Generator:
        """A fresh, deterministic stream for the next consumer."""
        return np.random.default_rng(self._seeds.spawn(1)[0])

    def require(self, kind: str) -> None:
        if self.cfg.kind != kind:
            raise ConfigError(f"'{self.args.command}' needs a {kind} experiment, config is {self.cfg.kind}")

    def data(self):
        train_ds, val_ds = load_mnist(self.cfg.mnist_dir, self.cfg.validation_count)
        n = self.cfg.analysis.eval_count
        return train_ds, (val_ds if n is None else val_ds.subset(slice(0, n)))

    def params(self):
        return load_params(self.params_path, self.cfg.hypernet, self.cfg.arch)

    def bank(self):
        return load_bank(self.bank_path, self.cfg.arch)

    def write(self, name: str, data) -> Path:
        path = self.out / name
        atomic_write(path, data)
        log.info("wrote %s", path)
        return path

    def csv(self, name: str, header, rows) -> None:
        write_csv(self.out / name, header, rows)
        log.info("wrote %s", self.out / name)


def cmd_train(ctx: Context) -> int:
    cfg = ctx.cfg
    tcfg = cfg.train
    if ctx.args.steps is not None:
        if ctx.args.steps < 0:
            raise UsageError("--steps must be >= 0")
        tcfg = replace(tcfg, steps=ctx.args.steps)
    data = cfg.mixture if cfg.kind == "toy" else ctx.data()[0]
    ctx.write("config.resolved.json", json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    def checkpoint(step, params):
        save_params(ctx.out / "checkpoint.hwb", params, step)

    def progress(step, terms):
        log.info("step %d  acc %.4f  div %.4f  total %.4f", step, terms.accuracy.item(), terms.diversity.item(), terms.total.item())

    status = EXIT_OK
    try:
        params, tlog = train(cfg.hypernet, cfg.arch, data, tcfg, log_every=max(1, tcfg.steps // 50), checkpoint=checkpoint, progress=progress)
    except TrainingDiverged as exc:
        log.error("%s; saving the last good parameters", exc)
        params, tlog, status = exc.params, exc.log, EXIT_RUNTIME
    save_params(ctx.params_path, params, len(tlog))
    ctx.write("train_log.csv", tlog.to_csv(include_time=cfg.record_wall_time))
    if len(tlog):
        ctx.write("train_loss.svg", svg_lines({"accuracy term": (tlog.step, tlog.acc_loss)}, "training", "step", "accuracy loss"))
    return status


def cmd_sample(ctx: Context) -> int:
    n = ctx.args.n if ctx.args.n is not None else ctx.cfg.analysis.bank_size
    if n < 1:
        raise UsageError("--n must be >= 1")
    bank = A.sample_bank(ctx.params(), n, ctx.rng(), seed=ctx.cfg.seed)
    if ctx.args.gauge:
        if bank.arch is None:
            raise ConfigError("gauge fixing needs a target architecture")
        fixed = np.stack([gauge_fix(bank.member(i), bank.arch).flat for i in range(len(bank))])
        bank = A.WeightBank(bank.z, fixed, bank.arch, True, bank.seed)
    save_bank(ctx.bank_path, bank)
    log.info("wrote %s", ctx.bank_path)
    return EXIT_OK


def cmd_eval(ctx: Context) -> int:
    ctx.require("mnist")
    _, val = ctx.data()
    bank = ctx.bank()
    hist = A.accuracy_histogram(bank, val, ctx.cfg.analysis.histogram_bins)
    ctx.csv("accuracies.csv", ("member", "accuracy"), list(enumerate(hist.values)))
    ctx.csv("histogram.csv", ("bin_lo", "bin_hi", "count"), list(zip(hist.edges[:-1], hist.edges[1:], hist.counts)))
    rows = [(rule, len(bank), A.ensemble_eval(bank, val, rule)) for rule in ("majority", "mean")]
    rows.append(("member_mean", len(bank), float(hist.values.mean())))
    ctx.csv("ensemble.csv", ("rule", "members", "accuracy"), rows)
    ctx.write("histogram.svg", svg_histogram(hist.counts, hist.edges, "generated networks", "validation accuracy"))
    return EXIT_OK


def cmd_paths(ctx: Context) -> int:
    ctx.require("mnist")
    _, val = ctx.data()
    params, a = ctx.params(), ctx.cfg.analysis
    rng = ctx.rng()
    rows, summary, first = [], [], {}
    for pair in range(a.path_pairs):
        z1, z2 = sample_z(2, params.cfg, rng)
        mins = {}
        for kind in ("direct", "interpolated"):
            prof = A.path_eval(params, ctx.cfg.arch, val, A.PathSpec(z1, z2, a.path_points, kind))
            rows += [(pair, kind, t, acc) for t, acc in zip(prof.t, prof.accuracy)]
            mins[kind] = float(prof.accuracy.min())
            if pair == 0:
                first[kind] = (prof.t, prof.accuracy)
        summary.append((pair, mins["direct"], mins["interpolated"]))
    ctx.csv("paths.csv", ("pair", "kind", "t", "accuracy"), rows)
    ctx.csv("paths_summary.csv", ("pair", "min_direct", "min_interpolated"), summary)
    ctx.write("paths.svg", svg_lines(first, "paths between two generated networks", "t", "accuracy", dashed=("direct",)))
    return EXIT_OK


def cmd_pca(ctx: Context) -> int:
    bank = ctx.bank()
    if ctx.args.filter is not None and ctx.args.layer is None:
        raise UsageError("--filter needs --layer")
    x = bank.theta if ctx.args.layer is None else A.filter_block(bank, ctx.args.layer, ctx.args.filter)
    k = min(ctx.cfg.analysis.pca_components, len(bank) - 1, x.shape[1])
    res = A.pca_scatter(x, k)
    ctx.csv("pca_eigenvalues.csv", ("component", "eigenvalue"), list(enumerate(res.eigenvalues)))
    ctx.csv("pca_projections.csv", ("member", *[f"pc{i + 1}" for i in range(k)]), [(i, *row) for i, row in enumerate(res.projections)])
    if k >= 2:
        ctx.write("pca.svg", svg_scatter(res.projections[:, 0], res.projections[:, 1], "PCA of generated weights", "pc1", "pc2"))
    return EXIT_OK


def cmd_adversarial(ctx: Context) -> int:
    ctx.require("mnist")
    _, val = ctx.data()
    a = ctx.cfg.analysis
    sweep = A.adversarial_transfer_experiment(ctx.params(), ctx.cfg.arch, val, a.eps_grid, a.ensemble_size, ctx.rng(), a.adversarial_trials)
    ctx.csv("adversarial.csv", ("eps", "single", "ensemble"), list(zip(sweep.eps, sweep.single, sweep.ensemble)))
    series = {"single": (sweep.eps, sweep.single), "ensemble": (sweep.eps, sweep.ensemble)}
    ctx.write("adversarial.svg", svg_lines(series, "targeted FGSM success", "eps", "success probability", dashed=("single",)))
    return EXIT_OK


def cmd_distill(ctx: Context) -> int:
    ctx.require("mnist")
    _, val = ctx.data()
    bank = ctx.bank()
    w = A.distill(bank)
    members = A.member_accuracies(bank, val)
    rows = [("members", len(bank)), ("member_mean_accuracy", float(members.mean())), ("distilled_accuracy", accuracy(w, bank.arch, val))]
    ctx.csv("distill.csv", ("quantity", "value"), rows)
    save_bank(ctx.out / "distilled.hwb", A.WeightBank(np.zeros((1, 0)), w.flat[None], bank.arch, False, bank.seed))
    return EXIT_OK


def cmd_toy_profile(ctx: Context) -> int:
    ctx.require("toy")
    gm = ctx.cfg.mixture
    prof = A.toy_path_profile(ctx.params(), gm, ctx.cfg.analysis.toy_path_points)
    rows = [(i, z, p[0], p[1], d, e) for i, (z, p, d, e) in enumerate(zip(prof.z, prof.points, prof.density, prof.nn_distance))]
    ctx.csv("toy_profile.csv", ("index", "z", "x", "y", "density", "nn_distance"), rows)
    modes = prof.min_mode_distance(gm)
    summary = [("correlation", prof.correlation)] + [(f"mode_{j}_distance", float(d)) for j, d in enumerate(modes)]
    ctx.csv("toy_summary.csv", ("quantity", "value"), summary)
    ctx.write("toy_path.svg", svg_scatter(prof.points[:, 0], prof.points[:, 1], "generated points", "x", "y", hue_colors(len(prof.z))))
    idx = np.arange(len(prof.z))
    scale = prof.density.max() / max(prof.nn_distance.max(), 1e-300)
    series = {"density": (idx, prof.density), "nn distance (scaled)": (idx, prof.nn_distance * scale)}
    ctx.write("toy_profile.svg", svg_lines(series, "along the path", "point index", "value", dashed=("nn distance (scaled)",)))
    return EXIT_OK


def cmd_filters(ctx: Context) -> int:
    ctx.require("mnist")
    a, args = ctx.cfg.analysis, ctx.args
    grid = A.export_filter_images(
        ctx.bank(),
        a.filter_layer if args.layer is None else args.layer,
        a.filter_index if args.filter is None else args.filter,
        a.filter_count if args.count is None else args.count,
        a.filter_channel if args.channel is None else args.channel,
    )
    ctx.write("filters.pgm", pgm_bytes(grid.image))
    return EXIT_OK


def cmd_baseline(ctx: Context) -> int:
    ctx.require("mnist")
    train_ds, val = ctx.data()
    w, losses = train_target_direct(ctx.cfg.arch, train_ds, ctx.cfg.baseline)
    ctx.csv("baseline.csv", ("step", "loss"), list(enumerate(losses)))
    ctx.csv("baseline_summary.csv", ("quantity", "value"), [("steps", len(losses)), ("validation_accuracy", accuracy(w, ctx.cfg.arch, val))])
    save_bank(ctx.out / "baseline.hwb", A.WeightBank(np.zeros((1, 0)), w.flat[None], ctx.cfg.arch, False, ctx.cfg.seed))
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "paths": cmd_paths,
    "pca": cmd_pca,
    "adversarial": cmd_adversarial,
    "distill": cmd_distill,
    "toy-profile": cmd_toy_profile,
    "filters": cmd_filters,
    "baseline": cmd_baseline,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise UsageError("--seed must be an unsigned 64-bit integer")
            cfg = cfg.with_seed(args.seed)
        return COMMANDS[args.command](Context(cfg, args))
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BankError, FloatingPointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
