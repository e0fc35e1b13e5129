"""Evaluation metrics (accuracy at the 0.5 threshold, average precision) and
the per-source result matrix."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import LABEL_FAKE, LABEL_REAL, Corpus
from .errors import MetricError


@dataclass
class EvalRecord:
    p_fake: float
    y: int
    source_tag: str = ""


def accuracy(records: Sequence[EvalRecord]) -> float:
    """Percent of records whose thresholded verdict (fake iff p > 0.5)
    matches the label."""
    if not records:
        raise MetricError("accuracy undefined on an empty record set")
    correct = sum(1 for r in records if (r.p_fake > 0.5) == (r.y == LABEL_FAKE))
    return 100.0 * correct / len(records)


def average_precision(records: Sequence[EvalRecord]) -> float:
    """Area under the precision-recall curve by rank-based step
    interpolation over descending scores, with tied scores grouped."""
    if not records:
        raise MetricError("average precision undefined on an empty record set")
    labels = {r.y for r in records}
    if labels != {LABEL_REAL, LABEL_FAKE}:
        raise MetricError("average precision requires both classes present")

    ordered = sorted(records, key=lambda r: -r.p_fake)
    n_pos = sum(1 for r in ordered if r.y == LABEL_FAKE)
    ap = 0.0
    tp = fp = 0
    prev_recall = 0.0
    i = 0
    while i < len(ordered):
        j = i
        while j < len(ordered) and ordered[j].p_fake == ordered[i].p_fake:
            tp += ordered[j].y == LABEL_FAKE
            fp += ordered[j].y == LABEL_REAL
            j += 1
        recall = tp / n_pos
        precision = tp / (tp + fp)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j
    return 100.0 * ap


@dataclass
class RowMetrics:
    acc: float
    ap: float
    n_real: int
    n_fake: int


@dataclass
class MetricsReport:
    """Per-source accuracy/AP matrix plus the run context it was measured in."""

    rows: dict = field(default_factory=dict)  # tag -> RowMetrics
    baseline_rows: dict = field(default_factory=dict)
    beta_history: list = field(default_factory=list)
    config_digest: str = ""
    dataset_digests: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def report_digest(self) -> str:
        payload = json.dumps(
            {"config": self.config_digest, "datasets": dict(sorted(self.dataset_digests.items()))},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()

    def to_dict(self) -> dict:
        def rows_out(rows):
            return {
                tag: {"acc": m.acc, "ap": m.ap, "n_real": m.n_real, "n_fake": m.n_fake}
                for tag, m in rows.items()
            }

        return {
            "rows": rows_out(self.rows),
            "baseline_rows": rows_out(self.baseline_rows),
            "beta_history": [list(map(float, b)) for b in self.beta_history],
            "config_digest": self.config_digest,
            "dataset_digests": self.dataset_digests,
            "report_digest": self.report_digest,
            "extras": self.extras,
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["source_tag", "detector", "acc", "ap", "n_real", "n_fake"])
            for name, rows in (("mccl", self.rows), ("baseline", self.baseline_rows)):
                for tag, m in rows.items():
                    writer.writerow([tag, name, f"{m.acc:.4f}", f"{m.ap:.4f}", m.n_real, m.n_fake])

    @classmethod
    def from_dict(cls, payload: dict) -> "MetricsReport":
        def rows_in(rows):
            return {tag: RowMetrics(**vals) for tag, vals in rows.items()}

        return cls(
            rows=rows_in(payload.get("rows", {})),
            baseline_rows=rows_in(payload.get("baseline_rows", {})),
            beta_history=payload.get("beta_history", []),
            config_digest=payload.get("config_digest", ""),
            dataset_digests=payload.get("dataset_digests", {}),
            extras=payload.get("extras", {}),
        )


def records_for_corpus(scores: Sequence[float], corpus: Corpus, tag: str) -> list[EvalRecord]:
    return [EvalRecord(p, item.label, tag) for p, item in zip(scores, corpus)]


def summarize(records: Sequence[EvalRecord]) -> RowMetrics:
    return RowMetrics(
        acc=accuracy(records),
        ap=average_precision(records),
        n_real=sum(r.y == LABEL_REAL for r in records),
        n_fake=sum(r.y == LABEL_FAKE for r in records),
    )


def build_matrix(bundle, test_corpora: Mapping[str, Corpus], *, log=None) -> MetricsReport:
    """Run the detector on every tagged corpus and collect one (Acc, AP) row
    per tag. Failures inside detection propagate with their corpus tag."""
    from .training import batch_predictions  # local import; training imports nothing from metrics

    batch_size = int(bundle.config["training.batch_size"])
    report = MetricsReport(beta_history=[list(map(float, b)) for b in bundle.beta_history])
    for tag, corpus in test_corpora.items():
        preds = batch_predictions(bundle, [item.image for item in corpus], batch_size=batch_size)
        records = [
            EvalRecord(float(np.mean([p.p_fake for p in per_image])), item.label, tag)
            for per_image, item in zip(preds, corpus)
        ]
        report.rows[tag] = summarize(records)
        if log:
            log(f"[eval] {tag}: acc={report.rows[tag].acc:.2f} ap={report.rows[tag].ap:.2f}")
    return report
