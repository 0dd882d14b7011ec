"""Command line entry point: ``msd <command> [options]``.

Commands write under the configured ``output_dir``::

    data.jsonl                    gen-data (unless --out is given)
    teacher.json                  train-teacher
    students/<method>_seed<s>.json        best-validation checkpoint
    students/<method>_seed<s>.final.json  last iterate
    metanets/<method>_seed<s>.json        msd-meta weighting network
    traces/<method>_seed<s>.csv
    metrics.csv, metrics_final.csv        evaluate
    reports/<kind>.csv                    report
    sweeps/...                            sweep
    manifest.json                 config, seeds and input hashes per artifact

Exit codes: 0 ok, 2 config error or unsupported task, 3 numeric divergence,
4 missing input or malformed dataset.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import nn
from .config import RunConfig, load_config
from .data import DatasetParseError, generate_dataset, load_dataset, save_dataset
from .exceptions import ConfigError, DivergenceError, UnsupportedTaskError
from .reports import (
    DENSITY_COLUMNS,
    GAP_COLUMNS,
    HEATMAP_COLUMNS,
    METRIC_COLUMNS,
    SCATTER_COLUMNS,
    density_report,
    dominance_scatter,
    evaluate,
    gap_report,
    heatmap_report,
    metric_row,
    size_sweep,
    write_csv,
)
from .training import METHODS, train_student, train_teacher
from .weighting import grid_search_population

logger = logging.getLogger("msdistill")

EXIT_CONFIG, EXIT_DIVERGED, EXIT_MISSING = 2, 3, 4
REPORT_KINDS = ("gap", "density", "heatmap", "curve", "scatter")
SWEEP_KINDS = ("population-grid", "student-size")


class MissingInput(Exception):
    pass


# ----------------------------------------------------------------- helpers


def git_hash(path):
    """Content hash computed the way ``git hash-object`` does."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _require(path):
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"missing input: {path}")
    return path


class Run:
    """Resolved config + output directory for one command invocation."""

    def __init__(self, args):
        self.cfg = load_config(_require(args.config)) if args.config else RunConfig.from_dict({})
        self.out = Path(self.cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = args.command

    def path(self, *parts):
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def data_path(self, args):
        return _require(args.data) if args.data else _require(self.out / "data.jsonl")

    def teacher_path(self, args):
        return _require(args.teacher) if args.teacher else _require(self.out / "teacher.json")

    def load_data(self, args):
        path = self.data_path(args)
        return load_dataset(path, self.cfg.data.num_classes), path

    def record(self, artifacts, inputs=(), seeds=None):
        """Merge artifact entries into manifest.json (deterministic content)."""
        mpath = self.out / "manifest.json"
        manifest = json.loads(mpath.read_text()) if mpath.exists() else {"artifacts": {}}
        manifest["config"] = self.cfg.to_dict()
        manifest["config_hash"] = self.cfg.hash()
        entry = {
            "command": self.command,
            "config_hash": self.cfg.hash(),
            "seeds": list(seeds) if seeds is not None else None,
            "inputs": {_rel(p, self.out): git_hash(p) for p in inputs},
        }
        for a in artifacts:
            manifest["artifacts"][_rel(a, self.out)] = dict(entry, sha1=git_hash(a))
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _rel(path, root):
    try:
        return str(Path(path).resolve().relative_to(root.resolve()))
    except ValueError:
        return str(path)


def _splits(ds):
    return {s: ds.subset(s) for s in ("train", "meta", "test")}


def _triple(d):
    return d.text, d.image, d.labels


def _student_files(out):
    """(method, seed, path) for every best-checkpoint student, stable order."""
    found = []
    for p in sorted((out / "students").glob("*.json")):
        if p.name.endswith(".final.json"):
            continue
        method, _, seed = p.stem.rpartition("_seed")
        if method in METHODS and seed.isdigit():
            found.append((method, int(seed), p))
    return sorted(found, key=lambda r: (METHODS.index(r[0]), r[1]))


def _jobs_map(fn, items, jobs):
    if jobs <= 1:
        return [fn(x) for x in items]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=jobs)(delayed(fn)(x) for x in items)


# ---------------------------------------------------------------- commands


def cmd_gen_data(args, run):
    ds = generate_dataset(run.cfg.data)
    out = Path(args.out) if args.out else run.path("data.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    counts = Counter(zip(ds.splits.tolist(), ds.labels.tolist()))
    for split in ("train", "meta", "test"):
        per = ", ".join(f"class {c}: {counts[(split, c)]}" for c in range(ds.num_classes))
        print(f"{split}: {int(np.sum(ds.splits == split))} samples ({per})")
    print(f"wrote {out}")
    run.record([out])


def cmd_train_teacher(args, run):
    ds, dpath = run.load_data(args)
    tr = ds.subset("train")
    tc = run.cfg.teacher
    teacher = train_teacher(
        tr.text, tr.image, tr.labels, ds.num_classes, hidden=tc.hidden, activation=tc.activation,
        epochs=tc.epochs, batch_size=tc.batch_size, lr=tc.lr, weight_decay=tc.weight_decay,
        view_dropout=tc.view_dropout, seed=tc.seed,
    )
    out = Path(args.out) if args.out else run.path("teacher.json")
    nn.save_net(teacher, out)
    te = ds.subset("test")
    print(f"teacher test accuracy {evaluate(teacher, te.text, te.image, te.labels).accuracy:.4f}")
    print(f"wrote {out}")
    run.record([out], [dpath], [tc.seed])


def _train_one(run, ds, teacher, method, seed, population, hidden=None):
    cfg = run.cfg
    sp = _splits(ds)
    return train_student(
        method, _triple(sp["train"]), None if method == "small" else teacher,
        hidden=cfg.student.hidden if hidden is None else hidden,
        activation=cfg.student.activation, tau=cfg.distill.tau, lam=cfg.distill.lam,
        meta_cfg=cfg.meta, population=population, meta_hidden=cfg.weighting.meta_hidden,
        seed=seed, val=_triple(sp["meta"]), test=_triple(sp["test"]),
        eval_interval=cfg.eval_interval, optimizer=cfg.student.optimizer,
        lr=cfg.student.lr, weight_decay=cfg.student.weight_decay,
    )


def cmd_distill(args, run):
    ds, dpath = run.load_data(args)
    inputs = [dpath]
    teacher = None
    if args.method != "small":
        tpath = run.teacher_path(args)
        teacher = nn.load_net(tpath)
        inputs.append(tpath)
    population = tuple(args.population) if args.population else run.cfg.weighting.population
    seeds = args.seeds or list(run.cfg.seeds)

    results = _jobs_map(lambda s: _train_one(run, ds, teacher, args.method, s, population), seeds, args.jobs)
    written = []
    for seed, res in zip(seeds, results):
        stem = f"{args.method}_seed{seed}"
        for net, p in ((res.best, run.path("students", stem + ".json")),
                       (res.student, run.path("students", stem + ".final.json"))):
            nn.save_net(net, p)
            written.append(p)
        tp = run.path("traces", stem + ".csv")
        tp.write_text(res.trace.to_csv())
        written.append(tp)
        if res.meta is not None:
            mp = run.path("metanets", stem + ".json")
            nn.save_net(res.meta, mp)
            written.append(mp)
        print(f"{stem}: best iteration {res.best_iteration}")
    run.record(written, inputs, seeds)


def cmd_evaluate(args, run):
    ds, dpath = run.load_data(args)
    sp = _splits(ds)
    inputs = [dpath]
    models = []
    tpath = Path(args.teacher) if args.teacher else run.out / "teacher.json"
    if tpath.exists():
        models.append(("teacher", run.cfg.teacher.seed, nn.load_net(tpath), nn.load_net(tpath)))
        inputs.append(tpath)
    for method, seed, p in _student_files(run.out):
        final = p.with_name(p.stem + ".final.json")
        models.append((method, seed, nn.load_net(p), nn.load_net(_require(final))))
        inputs += [p, final]
    if not models:
        raise MissingInput(f"no teacher or student checkpoints under {run.out}")
    best_rows, final_rows = [], []
    for method, seed, best, final in models:
        for split in ("train", "meta", "test"):
            d = sp[split]
            best_rows.append(metric_row(method, seed, split, evaluate(best, d.text, d.image, d.labels)))
            final_rows.append(metric_row(method, seed, split, evaluate(final, d.text, d.image, d.labels)))
    out, out_final = run.path("metrics.csv"), run.path("metrics_final.csv")
    write_csv(out, best_rows, METRIC_COLUMNS)
    write_csv(out_final, final_rows, METRIC_COLUMNS)
    for r in best_rows:
        if r["split"] == "test":
            print(f"{r['method']:16s} seed {r['seed']}: test accuracy {r['accuracy']:.4f}")
    run.record([out, out_final], inputs)


def cmd_report(args, run):
    kind = args.kind
    out = run.path("reports", f"{kind}.csv")
    inputs = []
    if kind == "heatmap":
        if run.cfg.data.num_classes != 2:
            raise UnsupportedTaskError(f"heatmap report needs C = 2, config has C = {run.cfg.data.num_classes}")
        mpath = Path(args.metanet) if args.metanet else None
        if mpath is None:
            candidates = sorted((run.out / "metanets").glob("*.json"))
            if not candidates:
                raise MissingInput(f"missing input: no meta-net checkpoint under {run.out / 'metanets'}")
            mpath = candidates[0]
        meta = nn.load_net(_require(mpath))
        write_csv(out, heatmap_report(meta), HEATMAP_COLUMNS)
        run.record([out], [mpath])
        print(f"wrote {out}")
        return
    if kind == "curve":
        rows = []
        for method, seed, p in _student_files(run.out):
            tp = _require(run.out / "traces" / f"{method}_seed{seed}.csv")
            inputs.append(tp)
            for rec in csv.DictReader(io.StringIO(tp.read_text())):
                if rec["test_acc"]:
                    rows.append({"method": method, "seed": seed, "iteration": int(rec["iteration"]),
                                 "test_acc": float(rec["test_acc"])})
        write_csv(out, rows, ("method", "seed", "iteration", "test_acc"))
        run.record([out], inputs)
        print(f"wrote {out}")
        return

    ds, dpath = run.load_data(args)
    te = ds.subset("test")
    tpath = run.teacher_path(args)
    teacher = nn.load_net(tpath)
    inputs += [dpath, tpath]
    if kind == "scatter":
        rows = dominance_scatter(teacher, te.text, te.image, te.labels, te.dominance, te.ids)
        write_csv(out, rows, SCATTER_COLUMNS)
    else:
        students = _student_files(run.out)
        inputs += [p for _, _, p in students]
        if kind == "gap":
            models = {"teacher": [teacher]}
            for method, _, p in students:
                models.setdefault(method, []).append(nn.load_net(p))
            write_csv(out, gap_report(teacher, models, te.text, te.image), GAP_COLUMNS)
        else:  # density
            if ds.num_classes != 2:
                raise UnsupportedTaskError(f"density report needs C = 2, data has C = {ds.num_classes}")
            models = {"teacher": teacher}
            models.update({f"{m}_seed{s}": nn.load_net(p) for m, s, p in students})
            mask = None if args.subset == "all" else te.labels == int(args.subset[-1])
            write_csv(out, density_report(models, te.text, te.image, mask), DENSITY_COLUMNS)
    run.record([out], inputs)
    print(f"wrote {out}")


def cmd_sweep(args, run):
    ds, dpath = run.load_data(args)
    tpath = run.teacher_path(args)
    teacher = nn.load_net(tpath)
    cfg = run.cfg
    seed = cfg.seeds[0]
    if args.kind == "population-grid":
        va = ds.subset("meta")

        def score(triple):
            res = _train_one(run, ds, teacher, "msd-population", seed, triple)
            return evaluate(res.best, va.text, va.image, va.labels).accuracy

        result = grid_search_population(cfg.weighting.grid, score, n_jobs=args.jobs)
        out = run.path("sweeps", "population_grid.csv")
        rows = [{"w": c.weights[0], "w_v": c.weights[1], "w_t": c.weights[2],
                 "val_accuracy": c.metric, "error": c.error} for c in result.table]
        write_csv(out, rows, ("w", "w_v", "w_t", "val_accuracy", "error"))
        best = run.path("sweeps", "population_best.json")
        best.write_text(json.dumps({"population": result.best, "seed": seed}) + "\n")
        print(f"best population weights {result.best}; {len(result.failures)} failed cells")
        run.record([out, best], [dpath, tpath], [seed])
        return
    te = ds.subset("test")

    def score(depth, method, s):
        res = _train_one(run, ds, teacher, method, s, cfg.weighting.population,
                         hidden=(cfg.sweep.width,) * depth)
        return evaluate(res.best, te.text, te.image, te.labels).accuracy

    rows = size_sweep(cfg.sweep.depths, score, seeds=cfg.seeds)
    out = run.path("sweeps", "student_size.csv")
    write_csv(out, rows, ("layers", "method", "accuracy_mean", "accuracy_std"))
    run.record([out], [dpath, tpath], cfg.seeds)
    print(f"wrote {out}")


def cmd_run(args, run):
    """gen-data, train-teacher, distill (all methods), evaluate, reports."""
    ns = argparse.Namespace(**vars(args))
    ns.out, ns.data, ns.teacher, ns.seeds, ns.population = None, None, None, None, None
    cmd_gen_data(ns, run)
    cmd_train_teacher(ns, run)
    for method in METHODS:
        ns.method = method
        cmd_distill(ns, run)
    cmd_evaluate(ns, run)
    kinds = ["gap", "curve", "scatter"]
    if run.cfg.data.num_classes == 2:
        kinds += ["density", "heatmap"]
    for kind in kinds:
        ns.kind, ns.metanet, ns.subset = kind, None, "label0"
        cmd_report(ns, run)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "sweep": cmd_sweep,
    "run": cmd_run,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="msd", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON run config (defaults if omitted)")
        return p

    p = add("gen-data", "generate the synthetic dataset")
    p.add_argument("--out", help="dataset path (.jsonl or .jsonl.gz)")

    p = add("train-teacher", "train and freeze the teacher")
    p.add_argument("--data")
    p.add_argument("--out")

    p = add("distill", "train students with one method")
    p.add_argument("--data")
    p.add_argument("--teacher")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--population", type=float, nargs=3, metavar=("W", "W_V", "W_T"))
    p.add_argument("--jobs", type=int, default=1)

    p = add("evaluate", "metrics for the teacher and every student checkpoint")
    p.add_argument("--data")
    p.add_argument("--teacher")

    p = add("report", "diagnostic tables")
    p.add_argument("--kind", required=True, choices=REPORT_KINDS)
    p.add_argument("--data")
    p.add_argument("--teacher")
    p.add_argument("--metanet", help="meta-net checkpoint for --kind heatmap")
    p.add_argument("--subset", default="label0", choices=("label0", "label1", "all"),
                   help="test samples for --kind density")

    p = add("sweep", "population grid search or student-size sweep")
    p.add_argument("--kind", required=True, choices=SWEEP_KINDS)
    p.add_argument("--data")
    p.add_argument("--teacher")
    p.add_argument("--jobs", type=int, default=1)

    p = add("run", "full pipeline with the given config")
    p.add_argument("--jobs", type=int, default=1)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = Run(args)
        COMMANDS[args.command](args, run)
    except (ConfigError, UnsupportedTaskError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: numeric divergence at iteration {exc.iteration}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (MissingInput, DatasetParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    return 0


if __name__ == "__main__":
    sys.exit(main())
