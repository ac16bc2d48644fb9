"""Command-line harness.

Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
import time
from typing import Dict, List, Optional

import numpy as np

from . import autoencoder as ae
from .curriculum import PaceSchedule, pace
from .data_io import export_run, load_dataset, load_embeddings_csv, synth_blobs, write_feature_csv
from .numerics import make_rng, rank_index
from .pipeline import RunConfig, TrainingDiverged, evaluate, kmeans_baseline, run_training

log = logging.getLogger("idcl")

GRADCHECK_TOL = 1e-4

# config-file section for each RunConfig field
SECTIONS: Dict[str, List[str]] = {
    "model": ["layer_widths", "latent_dim"],
    "train": ["alpha", "lr", "pretrain_lr", "batch_size", "pretrain_epochs", "max_iter", "mu", "seed",
              "augment_pretrain", "augment_train"],
    "curriculum": ["lambda1", "zeta0", "zeta_max", "t_grow"],
    "assignment": ["k", "lambda2", "warm_start", "kmeans_max_iter", "kmeans_tol",
                   "kmeans_restarts", "latent_scale"],
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _widths(text: str):
    try:
        return tuple(int(w) for w in text.split(",") if w.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


_BOOL_FIELDS = {"augment_pretrain", "augment_train", "warm_start"}


def _convert(name: str, raw: str):
    default = RunConfig.__dataclass_fields__[name].default
    if name == "layer_widths":
        return _widths(raw)
    if name in _BOOL_FIELDS:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{name}: expected a boolean, got {raw!r}")
    if name in ("seed",) or isinstance(default, int) and not isinstance(default, bool):
        return int(raw)
    return float(raw)


def read_config_file(path) -> dict:
    """``key = value`` lines under ``[section]`` headers; returns RunConfig kwargs."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise UsageError(f"{path}: {exc}") from None
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise UsageError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise UsageError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                values[key] = _convert(key, raw)
            except ValueError:
                raise UsageError(f"{path}: bad value for {key}: {raw!r}") from None
    return values


def _add_run_flags(p):
    g = p.add_argument_group("run configuration (overrides --config)")
    g.add_argument("--config", help="key = value file with [model]/[train]/[curriculum]/[assignment]")
    g.add_argument("--k", type=int)
    g.add_argument("--alpha", type=float)
    g.add_argument("--lambda1", type=float)
    g.add_argument("--lambda2", type=float)
    g.add_argument("--zeta0", type=float)
    g.add_argument("--zeta-max", dest="zeta_max", type=float)
    g.add_argument("--tgrow", dest="t_grow", type=int)
    g.add_argument("--mu", type=float)
    g.add_argument("--max-iter", dest="max_iter", type=int)
    g.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int)
    g.add_argument("--batch-size", dest="batch_size", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--pretrain-lr", dest="pretrain_lr", type=float,
                   help="pretraining learning rate (default: --lr)")
    g.add_argument("--seed", type=int)
    g.add_argument("--widths", dest="layer_widths", type=_widths,
                   help="hidden widths, e.g. 512,512,3072")
    g.add_argument("--latent-dim", dest="latent_dim", type=int)
    g.add_argument("--kmeans-restarts", dest="kmeans_restarts", type=int)
    g.add_argument("--latent-scale", dest="latent_scale", type=float,
                   help="rescale the embedding so the cutoff distance equals this (0 = off)")
    for flag, dest in (("--augment-pretrain", "augment_pretrain"),
                       ("--augment-train", "augment_train"), ("--warm-start", "warm_start")):
        g.add_argument(flag, dest=dest, action="store_const", const=True)


def _add_data_flags(p):
    p.add_argument("--data", required=True, help="optdigits CSV, feature CSV, or IDX images")
    p.add_argument("--labels", help="IDX labels file (with IDX images)")


def _run_config(args) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for name in RunConfig.field_names():
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    cfg = RunConfig(**values)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="idcl", description="Density-driven curriculum deep clustering.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("pretrain", help="reconstruction-only pretraining to a checkpoint")
    _add_data_flags(p)
    _add_run_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path")

    p = sub.add_parser("train", help="full clustering run")
    _add_data_flags(p)
    _add_run_flags(p)
    p.add_argument("--init", help="start from this checkpoint instead of pretraining")
    p.add_argument("--out", help="output prefix (default: data file stem)")
    p.add_argument("--figures", action="store_true", help="also render PNG figures")
    p.add_argument("--baseline", action="store_true",
                   help="also score raw-feature k-means (best of 10 seeds)")

    p = sub.add_parser("eval", help="score predicted labels against ground truth")
    _add_data_flags(p)
    p.add_argument("--pred", help="embeddings CSV written by train")
    p.add_argument("--baseline-k", type=int, help="score raw-feature k-means with this K")

    p = sub.add_parser("pace", help="print the pacing schedule as CSV")
    p.add_argument("--zeta0", type=float, default=0.6)
    p.add_argument("--zeta-max", dest="zeta_max", type=float, default=0.95)
    p.add_argument("--tgrow", type=int, default=50)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--n", type=int, default=1797, help="cluster size for the selected count")

    p = sub.add_parser("blobs", help="write a synthetic Gaussian-blob dataset")
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--separation", type=float, default=20.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)

    p = sub.add_parser("report", help="render figures from a run's exports")
    p.add_argument("--prefix", required=True, help="output prefix used by train")
    return parser


def _load(args):
    return load_dataset(args.data, args.labels)


def cmd_pretrain(args) -> int:
    cfg = _run_config(args).validate()
    data = _load(args)
    rng_init, rng_shuffle = (np.random.Generator(np.random.PCG64(s))
                             for s in np.random.SeedSequence(cfg.seed).spawn(2))
    params = ae.init_params(data.x.shape[1], cfg.layer_widths, cfg.latent_dim, rng_init)
    opt = ae.init_optimizer(params, lr=cfg.pretrain_lr or cfg.lr)
    hist: list = []
    ae.pretrain(params, data.x, max(cfg.pretrain_epochs, 1), cfg.batch_size, rng_shuffle,
                opt=opt, history=hist)
    ae.save_checkpoint(args.out, params, opt)
    print(f"epochs,{len(hist)}\nl_rec,{hist[-1]!r}\ncheckpoint,{args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    if cfg.seed is None:
        raise UsageError("train: --seed is required")
    cfg.validate()
    data = _load(args)
    prefix = args.out or os.path.splitext(args.data)[0]
    params = None
    if args.init:
        params, _ = ae.load_checkpoint(args.init)
        if params.input_dim != data.x.shape[1]:
            raise UsageError(f"checkpoint expects {params.input_dim} features, data has {data.x.shape[1]}")
    start = time.perf_counter()
    result = run_training(cfg, data, params, checkpoint_path=prefix + ".ckpt")
    ae.save_checkpoint(prefix + ".ckpt", result.params, result.optimizer)
    metrics_path, emb_path = export_run(result.history, result.embeddings, prefix,
                                        result.labels, data.labels)
    last = result.history[-1]
    print(f"epochs,{last.epoch}\nconverged,{int(result.converged)}")
    if last.acc is not None:
        print(f"acc,{last.acc:.6f}\nnmi,{last.nmi:.6f}")
    if args.baseline and data.labels is not None:
        base = kmeans_baseline(data, cfg.k)
        print(f"baseline_acc,{base.acc:.6f}\nbaseline_nmi,{base.nmi:.6f}")
    print(f"metrics,{metrics_path}\nembeddings,{emb_path}\ncheckpoint,{prefix}.ckpt")
    if args.figures:
        for path in _render(prefix):
            print(f"figure,{path}")
    log.info("train finished in %.1f s", time.perf_counter() - start)
    return 0


def _render(prefix) -> List[str]:
    from .plotting import plot_embeddings, plot_history, read_metrics

    records = read_metrics(prefix + ".metrics.jsonl")
    out = [plot_history(records, prefix + ".history.png", os.path.basename(prefix))]
    emb = prefix + ".embeddings.csv"
    if os.path.exists(emb):
        Z, pred, true = load_embeddings_csv(emb)
        out.append(plot_embeddings(Z, pred, prefix + ".embeddings.png", true))
    return out


def cmd_eval(args) -> int:
    data = _load(args)
    if data.labels is None:
        raise UsageError("eval: dataset has no ground-truth labels")
    if args.pred is None and args.baseline_k is None:
        raise UsageError("eval: give --pred and/or --baseline-k")
    print("source,acc,nmi")
    if args.pred:
        _, pred, _ = load_embeddings_csv(args.pred)
        if len(pred) != data.n:
            raise UsageError(f"eval: {len(pred)} predictions for {data.n} samples")
        rep = evaluate(pred, data)
        print(f"pred,{rep.acc:.6f},{rep.nmi:.6f}")
    if args.baseline_k:
        rep = kmeans_baseline(data, args.baseline_k)
        print(f"kmeans,{rep.acc:.6f},{rep.nmi:.6f}")
    return 0


def cmd_pace(args) -> int:
    sched = PaceSchedule(args.zeta0, args.zeta_max, args.tgrow)
    if args.epochs < 0 or args.n < 1:
        raise UsageError("pace: need --epochs >= 0 and --n >= 1")
    lines = ["epoch,zeta,selected"]
    for t in range(args.epochs + 1):
        z = pace(t, sched)
        lines.append(f"{t},{z!r},{rank_index(z, args.n)}")
    print("\n".join(lines))
    return 0


def cmd_blobs(args) -> int:
    data = synth_blobs(args.n, args.k, args.dim, args.separation, args.sigma, make_rng(args.seed))
    write_feature_csv(args.out, data)
    print(f"samples,{data.n}\nfeatures,{data.x.shape[1]}\npath,{args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import random_network_check, random_clu_check

    rng = make_rng(args.seed)
    clu = max(random_clu_check(rng) for _ in range(args.trials))
    net = max(random_network_check(rng) for _ in range(args.trials))
    worst = max(clu, net)
    print(f"check,max_rel_err\nclu_grad,{clu:.3e}\nnetwork,{net:.3e}")
    if worst >= GRADCHECK_TOL:
        print(f"gradient check failed: {worst:.3e} >= {GRADCHECK_TOL:g}", file=sys.stderr)
        return 2
    return 0


def cmd_report(args) -> int:
    if not os.path.exists(args.prefix + ".metrics.jsonl"):
        raise UsageError(f"report: {args.prefix}.metrics.jsonl not found")
    for path in _render(args.prefix):
        print(f"figure,{path}")
    return 0


COMMANDS = {
    "pretrain": cmd_pretrain, "train": cmd_train, "eval": cmd_eval, "pace": cmd_pace,
    "blobs": cmd_blobs, "gradcheck": cmd_gradcheck, "report": cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"idcl {args.command}: {exc}", file=sys.stderr)
        return 1
    except (TrainingDiverged, RuntimeError, FloatingPointError, OSError) as exc:
        print(f"idcl {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
