"""Command-line surface: subcommands composing the experiment pipeline.

Every subcommand writes its outputs under a run directory together with a
manifest recording inputs, derived seeds, tool version, and wall time. One
--seed flag per command acts as a master seed; all internal streams derive
from it by labeled hashing, so a single number reproduces a whole run.

Exit codes: 0 success, 2 usage errors, 1 runtime failures (with a single
machine-parseable `error category=<cat>: <message>` line on stderr).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import baseline_estimator, build_stats, load_stats, save_stats
from .constraints import ConstraintKind
from .dataset import generate_dataset, load_dataset, save_dataset
from .errors import ConfigError, CordonError
from .evalkit import (
    DKS_CONSISTENCY,
    DKS_PKFK_EQUALITY,
    PICK_ALL,
    PICK_LARGEST,
    evaluate,
    find_dks,
    qerrors_long_csv,
    violation_probes,
    violation_ratio,
)
from .mscn import Featurizer, load_model, mscn_estimator, save_model
from .oracle import counting_estimator
from .queries import read_workload, write_workload
from .report import render_report
from .schema import ORIENTATIONS, lab_schema, load_schema, save_schema
from .trainer import TrainConfig, train
from .util import derive_seed
from .workload import generate_workload, subquery_closure
from .queries import canonical_key


def _manifest(out_dir: Path, cmd: str, args: argparse.Namespace, seeds: dict, t0: float) -> None:
    mdir = out_dir / "manifests"
    mdir.mkdir(parents=True, exist_ok=True)
    doc = {
        "cmd": cmd,
        "argv": getattr(args, "_argv", sys.argv[1:]),
        "args": {k: str(v) for k, v in vars(args).items() if k not in ("func", "_argv")},
        "seeds": seeds,
        "versions": {"cordonlab": __version__},
        "seconds": round(time.time() - t0, 3),
    }
    name = getattr(args, "name", None)
    suffix = f"_{name}" if name else ""
    with open(mdir / f"{cmd}{suffix}.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _cmd_gen_schema(args) -> None:
    t0 = time.time()
    schema = lab_schema(
        orientation=args.orientation,
        fact_rows=args.fact_rows,
        dim_rows=args.dim_rows,
        n_dims=args.dims,
        correlation=args.correlation,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_schema(schema, out)
    print(f"wrote schema with {len(schema.tables)} tables to {out}")
    _manifest(out.parent, "gen-schema", args, {}, t0)


def _cmd_gen_data(args) -> None:
    t0 = time.time()
    schema = load_schema(args.schema)
    seed = derive_seed(args.seed, "dataset")
    ds = generate_dataset(schema, seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    rows = ", ".join(f"{t.name}={t.row_count}" for t in schema.tables)
    print(f"wrote dataset ({rows}) to {out}")
    _manifest(out.parent, "gen-data", args, {"dataset": seed}, t0)


def _parse_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError as exc:
        raise ConfigError(f"range '{text}' must look like lo:hi") from exc


def _cmd_gen_workload(args) -> None:
    t0 = time.time()
    schema = load_schema(args.schema)
    ds = load_dataset(args.data)
    join_range = _parse_range(args.join_range)
    pred_range = _parse_range(args.pred_range)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = {}

    if args.n is not None:
        seeds["workload"] = derive_seed(args.seed, "workload", "single")
        exclude = set()
        for path in args.exclude:
            exclude |= {canonical_key(lq.query) for lq in read_workload(path)}
        queries = generate_workload(
            schema, ds, args.n, join_range, pred_range, seeds["workload"], exclude=exclude
        )
        out = out_dir / args.out_name
        write_workload(out, queries)
        print(f"wrote {len(queries)} labeled queries to {out}")
    else:
        total = args.train + args.test
        seeds["workload"] = derive_seed(args.seed, "workload", "pool")
        pool = generate_workload(schema, ds, total, join_range, pred_range, seeds["workload"])
        seeds["split"] = derive_seed(args.seed, "workload", "split")
        order = np.random.default_rng(seeds["split"]).permutation(total)
        train_set = [pool[i] for i in sorted(order[: args.train])]
        test_set = [pool[i] for i in sorted(order[args.train :])]
        write_workload(out_dir / "train.jsonl", train_set)
        write_workload(out_dir / "test.jsonl", test_set)
        print(f"wrote {len(train_set)} train / {len(test_set)} test queries to {out_dir}")
        if args.ood_parents > 0:
            if args.ood_parents > len(test_set):
                raise ConfigError(
                    f"--ood-parents {args.ood_parents} exceeds the test set size {len(test_set)}"
                )
            seeds["ood"] = derive_seed(args.seed, "workload", "ood")
            pick = np.random.default_rng(seeds["ood"]).choice(
                len(test_set), size=args.ood_parents, replace=False
            )
            parents = [test_set[i] for i in sorted(pick)]
            train_keys = {canonical_key(lq.query) for lq in train_set}
            ood = subquery_closure(schema, ds, parents, exclude=train_keys)
            write_workload(out_dir / "ood.jsonl", ood)
            print(f"wrote {len(ood)} OOD subqueries to {out_dir / 'ood.jsonl'}")
    _manifest(out_dir, "gen-workload", args, seeds, t0)


def _cmd_train(args) -> None:
    t0 = time.time()
    schema = load_schema(args.schema)
    ds = load_dataset(args.data)
    workload = read_workload(args.workload)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        omega=args.omega,
        constraint_mode=args.mode,
        inequality_mode=args.ineq_mode,
        pseudo_k=args.pseudo_k,
        label_fraction=args.label_fraction,
        seed=derive_seed(args.seed, "train"),
        clamp_floor=args.clamp_floor,
        hinge_space=args.hinge_space,
        augmentation=not args.no_augmentation,
        hidden=args.hidden,
        bitmap_s=args.bitmap_s,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    def progress(stats):
        if not args.quiet:
            print(
                f"epoch {stats.epoch:3d}  emp={stats.emp_loss:.4f}  logic={stats.logic_loss:.4f}  "
                f"({stats.seconds:.1f}s)"
            )

    model, log = train(schema, ds, workload, cfg, progress=progress)
    save_model(model, out)
    log_path = Path(args.log) if args.log else out.parent / f"trainlog_{out.stem}.csv"
    log.to_csv(log_path)
    print(f"wrote checkpoint to {out} and training log to {log_path}")
    _manifest(out.parent, "train", args, {"train": cfg.seed}, t0)


def _build_estimator(args, schema, ds):
    if args.estimator == "oracle":
        return counting_estimator(ds)
    if args.estimator == "baseline":
        stats_path = Path(args.stats) if args.stats else None
        if stats_path and stats_path.exists():
            stats = load_stats(stats_path)
        else:
            stats = build_stats(ds, buckets=args.buckets)
            if stats_path:
                save_stats(stats, stats_path)
        return baseline_estimator(stats, schema)
    if args.estimator == "mscn":
        if not args.model:
            raise ConfigError("--model is required for the mscn estimator")
        model = load_model(args.model, expect_fingerprint=schema.fingerprint())
        featurizer = Featurizer(schema, ds, s=model.s, seed=model.bitmap_seed)
        return mscn_estimator(model, featurizer)
    raise ConfigError(f"unknown estimator '{args.estimator}'")


def _cmd_eval(args) -> None:
    t0 = time.time()
    schema = load_schema(args.schema)
    ds = load_dataset(args.data)
    workload = read_workload(args.workload)
    estimator = _build_estimator(args, schema, ds)
    summary, errs = evaluate(estimator, workload)

    out_dir = Path(args.out_dir)
    (out_dir / "eval").mkdir(parents=True, exist_ok=True)
    doc = {"estimator": args.name, "query_set": args.set, **summary}
    with open(out_dir / "eval" / f"{args.name}__{args.set}.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    qerrors_long_csv(out_dir / "eval" / f"qerrors__{args.name}__{args.set}.csv",
                     [(args.name, args.set, errs)])
    print(
        f"{args.name} on {args.set}: median={summary['median']:.3g} p95={summary['p95']:.3g} "
        f"p99={summary['p99']:.3g} max={summary['max']:.3g} (n={summary['count']})"
    )
    _manifest(out_dir, "eval", args, {}, t0)


_KIND_NAMES = {k.value: k for k in ConstraintKind}


def _cmd_probe_violations(args) -> None:
    t0 = time.time()
    schema = load_schema(args.schema)
    ds = load_dataset(args.data)
    workload = read_workload(args.workload)
    estimator = _build_estimator(args, schema, ds)
    queries = [lq.query for lq in workload]
    kinds = (
        list(ConstraintKind)
        if args.kinds == "all"
        else [_KIND_NAMES[k.strip()] for k in args.kinds.split(",")]
    )
    seeds = {}
    rows = []
    for kind in kinds:
        seeds[kind.value] = derive_seed(args.seed, "probes", kind.value)
        probes = violation_probes(
            schema, ds, queries, kind, seeds[kind.value], per_query=args.per_query
        )
        if args.count and len(probes) > args.count:
            probes = probes[: args.count]
        ratio = violation_ratio(estimator, probes, kind)
        rows.append({"kind": kind.value, "ratio": ratio, "probes": len(probes)})
        print(f"{args.name}: {kind.value} violation ratio {ratio:.4f} over {len(probes)} probes")

    out_dir = Path(args.out_dir)
    (out_dir / "violations").mkdir(parents=True, exist_ok=True)
    with open(out_dir / "violations" / f"{args.name}.json", "w", encoding="utf-8") as fh:
        json.dump({"estimator": args.name, "rows": rows}, fh, indent=2)
        fh.write("\n")
    _manifest(out_dir, "probe-violations", args, seeds, t0)


def _cmd_find_dks(args) -> None:
    t0 = time.time()
    schema = load_schema(args.schema)
    ds = load_dataset(args.data)
    candidates = [lq.query for lq in read_workload(args.candidates)]
    estimator = _build_estimator(args, schema, ds)
    cheap = None
    if args.pick == PICK_LARGEST:
        stats = build_stats(ds, buckets=args.buckets)
        cheap = baseline_estimator(stats, schema)
    seed = derive_seed(args.seed, "dks")
    ranking = find_dks(
        estimator,
        schema,
        candidates,
        k=args.k,
        kind=args.kind,
        pick_mode=args.pick,
        cheap_estimator=cheap,
        seed=seed,
        max_joins=args.max_joins,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ranking.to_jsonl(out)
    if ranking.entries:
        print(
            f"wrote top-{len(ranking.entries)} ranking to {out} "
            f"(degrees {ranking.entries[0].degree:.3g} .. {ranking.entries[-1].degree:.3g})"
        )
    else:
        print(f"wrote empty ranking to {out}")
    _manifest(out.parent, "find-dks", args, {"dks": seed}, t0)


def _cmd_report(args) -> None:
    t0 = time.time()
    artifacts = render_report(args.run)
    print(f"wrote {artifacts['report_csv']}")
    for fig in artifacts["figures"]:
        print(f"wrote {fig}")
    _manifest(Path(args.run), "report", args, {}, t0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cordonlab",
        description="constraint-regularized learned cardinality estimation lab",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-schema", help="write a laboratory star schema")
    p.add_argument("--out", required=True)
    p.add_argument("--orientation", choices=ORIENTATIONS, default="fact_holds_fk")
    p.add_argument("--fact-rows", type=int, default=50_000)
    p.add_argument("--dim-rows", type=int, default=1_000)
    p.add_argument("--dims", type=int, default=4)
    p.add_argument("--correlation", type=float, default=0.8)
    p.set_defaults(func=_cmd_gen_schema)

    p = sub.add_parser("gen-data", help="generate the dataset for a schema")
    p.add_argument("--schema", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("gen-workload", help="generate labeled query workloads")
    p.add_argument("--schema", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--join-range", default="0:4")
    p.add_argument("--pred-range", default="1:8")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--n", type=int, help="single-file mode: number of queries")
    group.add_argument("--train", type=int, help="split mode: training set size")
    p.add_argument("--test", type=int, default=0, help="split mode: test set size")
    p.add_argument("--ood-parents", type=int, default=0,
                   help="split mode: test queries whose subquery closure forms the OOD set")
    p.add_argument("--out-name", default="workload.jsonl", help="single-file mode output name")
    p.add_argument("--exclude", action="append", default=[],
                   help="single-file mode: workload files whose queries must not reappear")
    p.set_defaults(func=_cmd_gen_workload)

    p = sub.add_parser("train", help="train the set-based estimator")
    p.add_argument("--schema", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--workload", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="training log CSV path")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--omega", type=float, default=1.0)
    p.add_argument("--mode", choices=("off", "random", "all"), default="random")
    p.add_argument("--ineq-mode", choices=("bound", "pseudo"), default="bound")
    p.add_argument("--pseudo-k", type=int, default=5)
    p.add_argument("--label-fraction", type=float, default=1.0)
    p.add_argument("--clamp-floor", type=float, default=1.0)
    p.add_argument("--hinge-space", choices=("log", "linear"), default="log")
    p.add_argument("--no-augmentation", action="store_true")
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--bitmap-s", type=int, default=64)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_train)

    def estimator_flags(p):
        p.add_argument("--estimator", choices=("mscn", "baseline", "oracle"), required=True)
        p.add_argument("--model", default=None)
        p.add_argument("--stats", default=None, help="baseline statistics JSON (built if absent)")
        p.add_argument("--buckets", type=int, default=32)

    p = sub.add_parser("eval", help="q-error evaluation of an estimator on a workload")
    p.add_argument("--schema", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--workload", required=True)
    p.add_argument("--set", required=True, help="query set label, e.g. indis or ood")
    p.add_argument("--name", required=True, help="estimator label in reports")
    p.add_argument("--out-dir", required=True)
    estimator_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("probe-violations", help="constraint violation ratios of an estimator")
    p.add_argument("--schema", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--workload", required=True, help="probe source queries")
    p.add_argument("--name", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--kinds", default="all")
    p.add_argument("--count", type=int, default=0, help="cap on probes per kind (0 = no cap)")
    p.add_argument("--per-query", type=int, default=1)
    p.add_argument("--seed", type=int, required=True)
    estimator_flags(p)
    p.set_defaults(func=_cmd_probe_violations)

    p = sub.add_parser("find-dks", help="rank domain-knowledge-sensitive queries")
    p.add_argument("--schema", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--kind", choices=(DKS_CONSISTENCY, DKS_PKFK_EQUALITY), default=DKS_CONSISTENCY)
    p.add_argument("--pick", choices=(PICK_ALL, PICK_LARGEST), default=PICK_ALL)
    p.add_argument("--max-joins", type=int, default=4)
    p.add_argument("--seed", type=int, required=True)
    estimator_flags(p)
    p.set_defaults(func=_cmd_find_dks)

    p = sub.add_parser("report", help="join eval outputs into report.csv and render figures")
    p.add_argument("--run", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = list(argv) if argv is not None else sys.argv[1:]
    try:
        args.func(args)
    except CordonError as exc:
        print(f"error category={exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error category=io: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
