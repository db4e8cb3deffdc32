"""Accuracy metrics, run summaries, and CSV/JSON emission.

CSV schema: step,phase,epoch,loss,lr,top1_big,top5_big,top1_compact,
top5_compact,epoch_time_s. Training rows fill loss and lr; evaluation
rows fill the accuracy columns (percent, 2 decimals). The epoch_time_s
column stays empty in metrics.csv so that identical runs produce
byte-identical files; wall times go to a separate timings.csv.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

CSV_COLUMNS = ["step", "phase", "epoch", "loss", "lr",
               "top1_big", "top5_big", "top1_compact", "top5_compact", "epoch_time_s"]


def topk_accuracy(logits, labels, k: int) -> float:
    """Fraction of rows whose label is among the k highest logits.

    Equal logits rank by lower class index, so results do not depend on
    sort internals.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or len(logits) == 0:
        raise ValueError("need a non-empty n x C logit matrix")
    if len(labels) != len(logits):
        raise ValueError(f"{len(logits)} logit rows vs {len(labels)} labels")
    if not 1 <= k <= logits.shape[1]:
        raise ValueError(f"k={k} outside [1, {logits.shape[1]}]")
    order = np.argsort(-logits, axis=1, kind="stable")
    hits = (order[:, :k] == labels[:, None]).any(axis=1)
    return float(hits.mean())


def average_incremental_accuracy(per_step) -> float:
    """Arithmetic mean of after-step accuracies."""
    per_step = list(per_step)
    if not per_step:
        raise ValueError("no per-step accuracies")
    return float(np.mean(per_step))


@dataclass
class EpochRecord:
    step: int
    phase: str  # bootstrap | expand | compress
    epoch: int
    loss: float
    lr: float
    time_s: float


@dataclass
class StepEval:
    step: int
    num_classes: int
    top1_big: float
    top5_big: float
    top1_compact: float
    top5_compact: float
    params_big: int
    params_compact: int
    params_extractor: int


@dataclass
class RunSummary:
    seed: int
    steps: list = field(default_factory=list)  # StepEval per step
    epoch_time_ratio: float = None  # filled by ablation harness

    @property
    def avg_top1_compact(self) -> float:
        return average_incremental_accuracy([s.top1_compact for s in self.steps])

    @property
    def last_top1_compact(self) -> float:
        return self.steps[-1].top1_compact

    @property
    def avg_top1_big(self) -> float:
        return average_incremental_accuracy([s.top1_big for s in self.steps])

    @property
    def last_top1_big(self) -> float:
        return self.steps[-1].top1_big

    def to_dict(self):
        d = {
            "seed": self.seed,
            "avg_top1_compact": _pct(self.avg_top1_compact),
            "last_top1_compact": _pct(self.last_top1_compact),
            "avg_top1_big": _pct(self.avg_top1_big),
            "last_top1_big": _pct(self.last_top1_big),
            "steps": [{
                "step": s.step,
                "num_classes": s.num_classes,
                "top1_big": _pct(s.top1_big),
                "top5_big": _pct(s.top5_big),
                "top1_compact": _pct(s.top1_compact),
                "top5_compact": _pct(s.top5_compact),
                "params_big": s.params_big,
                "params_compact": s.params_compact,
                "params_extractor": s.params_extractor,
            } for s in self.steps],
        }
        if self.epoch_time_ratio is not None:
            d["epoch_time_ratio"] = self.epoch_time_ratio
        return d


def _pct(x: float) -> float:
    """Fraction to percent, rounded to the 2 decimals the tables use."""
    return round(100.0 * x, 2)


def _fmt_pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def write_metrics_csv(path, epoch_records, step_evals) -> None:
    """Interleave training rows and per-step evaluation rows by step."""
    evals = {s.step: s for s in step_evals}
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        last_step = None
        for r in epoch_records:
            if last_step is not None and r.step != last_step and last_step in evals:
                _write_eval_row(w, evals[last_step])
            w.writerow([r.step, r.phase, r.epoch, f"{r.loss:.6f}", f"{r.lr:.6f}",
                        "", "", "", "", ""])
            last_step = r.step
        if last_step is not None and last_step in evals:
            _write_eval_row(w, evals[last_step])


def _write_eval_row(w, s: StepEval) -> None:
    w.writerow([s.step, "eval", "", "", "",
                _fmt_pct(s.top1_big), _fmt_pct(s.top5_big),
                _fmt_pct(s.top1_compact), _fmt_pct(s.top5_compact), ""])


def write_timings_csv(path, epoch_records) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "phase", "epoch", "epoch_time_s"])
        for r in epoch_records:
            w.writerow([r.step, r.phase, r.epoch, f"{r.time_s:.6f}"])


def write_summary_json(path, summary: RunSummary) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(summary.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def read_eval_rows(path):
    """Per-step accuracy series from a metrics.csv, for plotting."""
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        for row in reader:
            if row["phase"] == "eval":
                rows.append({
                    "step": int(row["step"]),
                    "top1_big": float(row["top1_big"]),
                    "top5_big": float(row["top5_big"]),
                    "top1_compact": float(row["top1_compact"]),
                    "top5_compact": float(row["top5_compact"]),
                })
    return rows
