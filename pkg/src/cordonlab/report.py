"""Run-directory reporting: one joined CSV plus rendered figures.

`render_report` is pure over the run directory: it scans the eval,
violation, and training-log files the other subcommands emitted, joins the
summaries into ``report.csv`` (one row per estimator, columns per query set
and metric, violation ratios per constraint kind), and renders matplotlib
figures next to it under ``figures/``.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import ConfigError

QERROR_METRICS = ("median", "p95", "p99", "max")


def _load_eval_rows(run: Path) -> list[dict]:
    rows = []
    for path in sorted((run / "eval").glob("*.json")):
        with open(path, "r", encoding="utf-8") as fh:
            rows.append(json.load(fh))
    return rows


def _load_violation_rows(run: Path) -> list[dict]:
    rows = []
    for path in sorted((run / "violations").glob("*.json")):
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        for entry in doc["rows"]:
            rows.append({"estimator": doc["estimator"], **entry})
    return rows


def _load_qerror_samples(run: Path) -> dict:
    samples = defaultdict(list)
    for path in sorted((run / "eval").glob("qerrors__*.csv")):
        with open(path, "r", encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                samples[(row["estimator"], row["query_set"])].append(float(row["qerror"]))
    return samples


def write_report_csv(path, eval_rows: list[dict], violation_rows: list[dict]) -> None:
    sets = sorted({r["query_set"] for r in eval_rows})
    kinds = sorted({r["kind"] for r in violation_rows})
    estimators = sorted(
        {r["estimator"] for r in eval_rows} | {r["estimator"] for r in violation_rows}
    )
    by_eval = {(r["estimator"], r["query_set"]): r for r in eval_rows}
    by_vio = {(r["estimator"], r["kind"]): r for r in violation_rows}

    header = ["estimator"]
    for s in sets:
        header += [f"{s}_{m}" for m in QERROR_METRICS]
    for k in kinds:
        header += [f"violation_{k}", f"probes_{k}"]

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for est in estimators:
            row = [est]
            for s in sets:
                r = by_eval.get((est, s))
                row += ["" if r is None else f"{r[m]:.4g}" for m in QERROR_METRICS]
            for k in kinds:
                r = by_vio.get((est, k))
                row += ["", ""] if r is None else [f"{r['ratio']:.4g}", r["probes"]]
            writer.writerow(row)


def _fig_qerror_box(samples: dict, out: Path) -> None:
    keys = sorted(samples)
    data = [samples[k] for k in keys]
    labels = [f"{est}\n{qs}" for est, qs in keys]
    fig, ax = plt.subplots(figsize=(max(6, 1.4 * len(keys)), 4.5))
    ax.boxplot(data, tick_labels=labels, showfliers=True)
    ax.set_yscale("log")
    ax.set_ylabel("q-error")
    ax.set_title("q-error distributions")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def _fig_violations(violation_rows: list[dict], out: Path) -> None:
    kinds = sorted({r["kind"] for r in violation_rows})
    estimators = sorted({r["estimator"] for r in violation_rows})
    by = {(r["estimator"], r["kind"]): r["ratio"] for r in violation_rows}
    width = 0.8 / max(1, len(estimators))
    fig, ax = plt.subplots(figsize=(max(6, 2.0 * len(kinds)), 4.0))
    for i, est in enumerate(estimators):
        xs = [j + i * width for j in range(len(kinds))]
        ys = [by.get((est, k), 0.0) for k in kinds]
        ax.bar(xs, ys, width=width, label=est)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(kinds))])
    ax.set_xticklabels(kinds)
    ax.set_ylabel("violation ratio")
    ax.set_title("constraint violations")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def _fig_training_curves(run: Path, out: Path) -> bool:
    logs = sorted(run.glob("**/trainlog_*.csv"))
    if not logs:
        return False
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4.0))
    for path in logs:
        name = path.stem.replace("trainlog_", "")
        epochs, emp, logic = [], [], []
        with open(path, "r", encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                epochs.append(int(row["epoch"]))
                emp.append(float(row["emp_loss"]))
                logic.append(float(row["logic_loss"]))
        ax1.plot(epochs, emp, label=name)
        ax2.plot(epochs, logic, label=name)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("empirical loss")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("logic loss")
    ax1.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return True


def render_report(run_dir) -> dict:
    """Join everything under the run directory; returns the artifact paths."""
    run = Path(run_dir)
    if not run.is_dir():
        raise ConfigError(f"run directory '{run}' does not exist")
    eval_rows = _load_eval_rows(run)
    violation_rows = _load_violation_rows(run)
    if not eval_rows and not violation_rows:
        raise ConfigError(f"run directory '{run}' holds no eval or violation outputs to report")

    out_csv = run / "report.csv"
    write_report_csv(out_csv, eval_rows, violation_rows)
    artifacts = {"report_csv": str(out_csv), "figures": []}

    figures = run / "figures"
    figures.mkdir(exist_ok=True)
    samples = _load_qerror_samples(run)
    if samples:
        path = figures / "qerror_distributions.png"
        _fig_qerror_box(samples, path)
        artifacts["figures"].append(str(path))
    if violation_rows:
        path = figures / "violations.png"
        _fig_violations(violation_rows, path)
        artifacts["figures"].append(str(path))
    curves = figures / "training_curves.png"
    if _fig_training_curves(run, curves):
        artifacts["figures"].append(str(curves))
    return artifacts
