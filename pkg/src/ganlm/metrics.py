"""Classification metrics and the CSV reports built from them.

Precision, recall and F1 are computed one-vs-rest for ``positive_class``
(default ``"fake"``).  A ratio whose denominator is zero is *absent*
(``None``) and prints as ``N/A``; it is never silently reported as 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import ContractError, LabelError

NA = "N/A"
RESULTS_HEADER = ["model", "n_labeled", "accuracy", "precision", "recall", "f1"]
CURVE_HEADER = ["epoch", "test_accuracy"]
TRAINLOG_HEADER = ["epoch", "d_sup", "d_unsup_real", "d_unsup_fake", "g_feat", "g_unsup",
                   "test_accuracy", "test_precision", "test_recall", "test_f1"]


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision: float | None
    recall: float | None
    f1: float | None
    positive_class: str
    n_test: int


def _ratio(num: float, den: float) -> float | None:
    return num / den if den else None


def compute_metrics(predictions: Sequence[str], gold_labels: Sequence[str], positive_class: str = "fake",
                    classes: Sequence[str] | None = None) -> MetricsReport:
    if len(predictions) != len(gold_labels):
        raise ContractError(f"{len(predictions)} predictions but {len(gold_labels)} gold labels")
    if classes is not None:
        allowed = set(classes)
        for lab in list(predictions) + list(gold_labels):
            if lab not in allowed:
                raise LabelError(f"label {lab!r} is not one of {sorted(allowed)}")
    tp = fp = fn = tn = correct = 0
    for p, g in zip(predictions, gold_labels):
        correct += p == g
        if p == positive_class:
            if g == positive_class:
                tp += 1
            else:
                fp += 1
        elif g == positive_class:
            fn += 1
        else:
            tn += 1
    n = len(predictions)
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = None
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    accuracy = correct / n if n else 0.0
    return MetricsReport(tp, fp, fn, tn, accuracy, precision, recall, f1, positive_class, n)


def fmt(x: float | None) -> str:
    return NA if x is None else f"{x:.5f}"


def parse_num(s: str) -> float | None:
    return None if s == NA else float(s)


# --------------------------------------------------------------------- reports


@dataclass(frozen=True)
class RunResult:
    model: str
    n_labeled: int
    report: MetricsReport


def emit_results_table(runs: Sequence[RunResult], path) -> None:
    """CSV shaped like a results table: one row per (model, n_labeled).

    Rows keep the first-seen order of model names and ascend in n_labeled.
    """
    if not runs:
        raise ContractError("emit_results_table needs at least one run")
    model_order = {m: i for i, m in reversed(list(enumerate(r.model for r in runs)))}
    rows = sorted(runs, key=lambda r: (model_order[r.model], r.n_labeled))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for r in rows:
            m = r.report
            w.writerow([r.model, r.n_labeled, fmt(m.accuracy), fmt(m.precision), fmt(m.recall), fmt(m.f1)])


def read_results_table(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        out = []
        for row in reader:
            out.append({
                "model": row["model"],
                "n_labeled": int(row["n_labeled"]),
                **{k: parse_num(row[k]) for k in ("accuracy", "precision", "recall", "f1")},
            })
    return out


def curve_path(directory, model: str, n_labeled: int) -> Path:
    safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in model)
    return Path(directory) / f"{safe}_{n_labeled}.csv"


def emit_curves(train_log, directory) -> Path:
    """Write (epoch, test_accuracy) for one run; returns the file path."""
    if not train_log.records:
        raise ContractError("emit_curves needs a non-empty training log")
    path = curve_path(directory, train_log.model_name, train_log.n_labeled)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for rec in train_log.records:
            w.writerow([rec.epoch, fmt(rec.metrics.accuracy)])
    return path


def read_curve(path) -> list[tuple[int, float]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [(int(r["epoch"]), float(r["test_accuracy"])) for r in csv.DictReader(fh)]


def write_trainlog(train_log, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAINLOG_HEADER)
        for rec in train_log.records:
            m = rec.metrics
            w.writerow([rec.epoch, *(fmt(v) for v in rec.losses.values()),
                        fmt(m.accuracy), fmt(m.precision), fmt(m.recall), fmt(m.f1)])


def read_trainlog(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [{k: (int(v) if k == "epoch" else parse_num(v)) for k, v in row.items()} for row in csv.DictReader(fh)]
