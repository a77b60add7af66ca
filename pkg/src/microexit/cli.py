"""Command-line entry point: ``microexit <command> [--config FILE] [--seed N] [--out DIR]``.

Every command works inside the ``--out`` directory, which holds the
artifacts passed between steps::

    segments.mxs   synth / preprocess
    model.mxw      train  (plus train_log.csv)
    tree.mxt       train-obp  (plus exit_labels.csv, obp_report.*)
    evaluation.*   evaluate
    cost.*         cost
    cdln_sweep.*   cdln-sweep

Set ``MICROEXIT_LOG=DEBUG`` (or INFO) for progress logging.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import engine, model as modelmod, obp, preprocess, synth, trainer
from .errors import ConfigError, DataError, MicroExitError, NumericalError
from .metrics import compute_metrics, confusion

log = logging.getLogger("microexit")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

SEGMENTS = "segments.mxs"
MODEL = "model.mxw"
TREE = "tree.mxt"

VARIANTS = ("fob", "baseline", "cdln", "adaptive")


# -- reports ----------------------------------------------------------------


class Context:
    def __init__(self, args):
        self.command = args.command
        self.cfg = cfgmod.load_config(args.config, args.seed, args.profile)
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts = {}

    @property
    def seed(self):
        return self.cfg["seed"]

    def path(self, name):
        return self.out / name

    def require(self, name, producer):
        p = self.path(name)
        if not p.is_file():
            raise ConfigError(f"missing artifact {p}; run `microexit {producer}` first")
        return p

    def note(self, path):
        self.artifacts[Path(path).name] = modelmod.checksum64(Path(path).read_bytes()).hex()

    def header(self):
        lines = [f"# microexit {self.command}",
                 f"# config_sha256={cfgmod.config_hash(self.cfg)}",
                 f"# seed={self.seed}"]
        lines += [f"# artifact {name} blake2b64={digest}"
                  for name, digest in sorted(self.artifacts.items())]
        return "\n".join(lines) + "\n"

    def report(self, name, columns, rows, extra_text=""):
        """Write ``name.csv`` and ``name.txt`` with the provenance header."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)
        head = self.header()
        self.path(f"{name}.csv").write_text(head + buf.getvalue())
        text = head + "\n" + engine.format_table(columns, rows)
        if extra_text:
            text += "\n" + extra_text
        self.path(f"{name}.txt").write_text(text)
        return text


def _pct(x):
    return f"{100 * x:.2f}"


def _metric_cells(m):
    return [_pct(m.weighted_f1), _pct(m.accuracy), _pct(m.precision), _pct(m.recall)]


def _matrix_text(title, cm, labels=None):
    labels = labels or [str(i) for i in range(len(cm))]
    rows = [[f"true {lab}"] + [str(v) for v in row] for lab, row in zip(labels, cm)]
    return f"{title}\n" + engine.format_table([""] + [f"pred {lab}" for lab in labels], rows)


# -- shared loading ------------------------------------------------------------


def _load_segments(ctx, path=None):
    p = Path(path) if path else ctx.require(SEGMENTS, "synth` or `microexit preprocess")
    if not p.is_file():
        raise ConfigError(f"segment file {p} does not exist")
    ctx.note(p)
    return preprocess.read_segments(p)


def _dataset(ctx, segments_path=None):
    """``(X, F, y, fold)`` for the configured split."""
    segs = _load_segments(ctx, segments_path)
    split = ctx.cfg["split"]
    kind = split.get("kind", "stratified_kfold")
    if kind == "fixed":
        parts = [segs]
        for key in ("val", "test"):
            if split.get(key):
                p = Path(split[key])
                if not p.is_file():
                    raise ConfigError(f"split.{key} file {p} does not exist")
                ctx.note(p)
                parts.append(preprocess.read_segments(p))
            else:
                parts.append([])
        sizes = np.cumsum([0] + [len(p) for p in parts])
        fold = trainer.Fold(*(np.arange(sizes[i], sizes[i + 1]) for i in range(3)))
        segs = [s for p in parts for s in p]
    x, f, y = preprocess.stack(segs)
    if kind == "stratified_kfold":
        k, which = int(split.get("k", 5)), int(split.get("fold", 0))
        if not 0 <= which < k:
            raise ConfigError(f"split.fold must lie in [0, {k})")
        fold = trainer.stratified_kfold(y, k, ctx.seed, split.get("val_fraction", 0.2))[which]
    elif kind == "none":
        everything = np.arange(len(y))
        fold = trainer.Fold(everything, np.array([], dtype=int), everything)
    elif kind != "fixed":
        raise ConfigError(f"unknown split kind {kind!r}; use stratified_kfold, fixed or none")
    if (y < 0).any():
        raise DataError("segment file contains unlabelled segments")
    return x, f, y, fold


def _load_model(ctx):
    p = ctx.require(MODEL, "train")
    ctx.note(p)
    return modelmod.load(p)


def _load_tree(ctx):
    p = ctx.require(TREE, "train-obp")
    ctx.note(p)
    return obp.load_tree(p)


# -- commands -------------------------------------------------------------------


def cmd_synth(ctx, args):
    spec = cfgmod.synthetic_spec(ctx.cfg)
    segs = synth.generate(spec)
    p = ctx.path(SEGMENTS)
    preprocess.write_segments(p, segs)
    ctx.note(p)
    labels = np.array([s.label for s in segs])
    rows = [[c, int((labels == c).sum())] for c in range(spec.n_classes)]
    print(ctx.report("synth_summary", ["class", "segments"], rows))


def cmd_preprocess(ctx, args):
    if not args.input:
        raise ConfigError("preprocess needs --input CSV")
    profile = cfgmod.dataset_profile(ctx.cfg)
    paths = [Path(p) for p in args.input]
    segs = []
    for p in paths:
        if not p.is_file():
            raise ConfigError(f"input file {p} does not exist")
        stream = preprocess.read_csv_stream(p, profile, cfgmod.column_map(ctx.cfg))
        segs += preprocess.preprocess_stream(stream, profile)
        ctx.note(p)
    out = ctx.path(SEGMENTS)
    preprocess.write_segments(out, segs)
    ctx.note(out)
    labels = np.array([s.label for s in segs], dtype=int)
    classes = sorted(set(labels.tolist()))
    rows = [[c, int((labels == c).sum())] for c in classes]
    flagged = sum(1 for s in segs if len(s.constant_channels))
    extra = f"segments={len(segs)}\nconstant-channel segments={flagged}\n"
    print(ctx.report("preprocess_summary", ["label", "segments"], rows, extra))


def cmd_train(ctx, args):
    x, _, y, fold = _dataset(ctx, args.segments)
    n_c = int(ctx.cfg["model"].get("num_classes", y.max() + 1))
    mcfg = cfgmod.model_config(ctx.cfg, n_c)
    tcfg = cfgmod.train_config(ctx.cfg)
    net = modelmod.build(mcfg, ctx.seed)
    log.info("training %d segments for %d epochs", len(fold.train), tcfg.epochs)
    result = trainer.train(net, x, y, tcfg, fold)
    modelmod.save(result.model, ctx.path(MODEL))
    trainer.write_log(ctx.path("train_log.csv"), result.log)
    ctx.note(ctx.path(MODEL))
    fob, base = trainer.predictions(result.model, x[fold.train])
    rows = [["train", len(fold.train), _pct(np.mean(fob == y[fold.train])),
             _pct(np.mean(base == y[fold.train]))]]
    if len(fold.val):
        fob, base = trainer.predictions(result.model, x[fold.val])
        rows.append(["val", len(fold.val), _pct(np.mean(fob == y[fold.val])),
                     _pct(np.mean(base == y[fold.val]))])
    extra = f"best_epoch={result.best_epoch}\n"
    print(ctx.report("train_summary", ["partition", "segments", "fob_accuracy",
                                       "baseline_accuracy"], rows, extra))


def cmd_train_obp(ctx, args):
    x, f, y, fold = _dataset(ctx, args.segments)
    net = _load_model(ctx)
    fob, base = trainer.predictions(net, x)
    labels = obp.label_exits(fob, base, y)
    o = ctx.cfg["obp"]
    tree = obp.train_tree(f[fold.train], labels[fold.train], o.get("max_depth", 6),
                          o.get("min_leaf", 5), o.get("class_weight", "balanced"), ctx.seed)
    obp.save_tree(tree, ctx.path(TREE))
    ctx.note(ctx.path(TREE))

    part = np.full(len(y), "", dtype=object)
    for name in ("train", "val", "test"):
        part[getattr(fold, name)] = name
    with open(ctx.path("exit_labels.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment", "partition", "label", "fob_pred", "baseline_pred", "exit_label"])
        for i in range(len(y)):
            w.writerow([i, part[i], y[i], fob[i], base[i], labels[i]])

    rows, extra = [], ""
    for name in ("train", "test"):
        ids = getattr(fold, name)
        if not len(ids):
            continue
        cm, m = obp.obp_confusion(tree, f[ids], labels[ids])
        rows.append([name, len(ids), *_metric_cells(m)])
        extra += _matrix_text(f"output block predictor, {name} partition", cm,
                              ["FOB", "baseline"]) + "\n"
    extra += f"tree depth={tree.depth()} nodes={len(tree.nodes)}\n"
    print(ctx.report("obp_report", ["partition", "segments", "weighted_f1", "accuracy",
                                    "precision", "recall"], rows, extra))


def _test_partition(x, f, y, fold):
    ids = fold.test if len(fold.test) else np.arange(len(y))
    return x[ids], f[ids], y[ids]


def cmd_evaluate(ctx, args):
    x, f, y, fold = _dataset(ctx, args.segments)
    net = _load_model(ctx)
    tree = _load_tree(ctx)
    x, f, y = _test_partition(x, f, y, fold)
    threshold = ctx.cfg["cdln"]["threshold"]
    rows, extra = [], ""
    for variant in VARIANTS:
        routing = engine.route(net, x, variant, tree=tree, features=f, threshold=threshold)
        cm = confusion(y, routing.predictions, net.num_classes)
        m = compute_metrics(cm)
        name = f"cdln (th={threshold})" if variant == "cdln" else variant
        rows.append([name, *_metric_cells(m), routing.n_fob, routing.n_base])
        extra += _matrix_text(name, cm) + "\n"
    print(ctx.report("evaluation", ["variant", "weighted_f1", "accuracy", "precision", "recall",
                                    "fob_exits", "baseline_exits"], rows, extra))


def cmd_cost(ctx, args):
    x, f, y, fold = _dataset(ctx, args.segments)
    net = _load_model(ctx)
    tree = _load_tree(ctx)
    x, f, y = _test_partition(x, f, y, fold)
    profile = cfgmod.cost_profile(ctx.cfg)
    fob, base = trainer.predictions(net, x)
    routings = {"predictor": engine.route(net, x, "adaptive", tree=tree, features=f),
                "oracle": engine.oracle_routing(fob, base, y)}
    rows, extra = [], f"cost profile: {profile.name}\n"
    for label, routing in routings.items():
        ledger = engine.build_ledger(profile, routing, fob == y, base == y)
        for r in ledger.cells():
            rows.append([label] + r)
        verdict = engine.energy_feasible(profile, routing.n, routing.n_fob, routing.n_base)
        avg = engine.adaptive_average(profile, routing.n_fob, routing.n_base)
        extra += (f"{label} routing: N={routing.n} N1={routing.n_fob} N2={routing.n_base}; "
                  f"energy constraint {'satisfied' if verdict.feasible else 'VIOLATED'} "
                  f"({engine.money(verdict.adaptive_energy)} < "
                  f"{engine.money(verdict.baseline_energy)} uJ: {verdict.feasible}); "
                  f"adaptive average {engine.money(avg.energy_uj)} uJ, "
                  f"{engine.money(avg.time_ms)} ms per segment\n")
    print(ctx.report("cost", ["routing", *engine.Ledger.COLUMNS], rows, extra))


def cmd_cdln_sweep(ctx, args):
    x, f, y, fold = _dataset(ctx, args.segments)
    net = _load_model(ctx)
    x, f, y = _test_partition(x, f, y, fold)
    thresholds = args.thresholds or ctx.cfg["cdln"]["thresholds"]
    rows = []
    for th in thresholds:
        routing = engine.route(net, x, "cdln", threshold=float(th))
        m = compute_metrics(confusion(y, routing.predictions, net.num_classes))
        rows.append([f"cdln (th={th})", *_metric_cells(m), routing.n_fob, routing.n_base])
    print(ctx.report("cdln_sweep", ["variant", "weighted_f1", "accuracy", "precision", "recall",
                                    "fob_exits", "baseline_exits"], rows))


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "train-obp": cmd_train_obp,
    "evaluate": cmd_evaluate,
    "cost": cmd_cost,
    "cdln-sweep": cmd_cdln_sweep,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="microexit", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML pipeline config")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--out", default=".", help="artifact and report directory")
    common.add_argument("--profile", help="dataset profile: whar or opportunity")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "preprocess":
            p.add_argument("--input", nargs="+", help="raw CSV recording(s)")
        elif name != "synth":
            p.add_argument("--segments", help=f"segment file (default: OUT/{SEGMENTS})")
        if name == "cdln-sweep":
            p.add_argument("--thresholds", type=float, nargs="+")
    return parser


def main(argv=None):
    level = os.environ.get("MICROEXIT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](Context(args), args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MicroExitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
