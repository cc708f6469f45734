"""Anomaly scores, threshold selection, labels and detection metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

THRESHOLD_MODES = ("fixed", "quantile", "best_f1")


def score(pred, target) -> np.ndarray:
    """Per-cell squared prediction error (standardized scale)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return (pred - target) ** 2


def total_score(scores) -> float:
    """Aggregate over all cells; a diagnostic, not the detection unit."""
    return float(np.sum(scores))


def apply_threshold(scores, tau: float) -> np.ndarray:
    """1 where ``score > tau``; equality maps to 0."""
    return (np.asarray(scores) > tau).astype(np.int8)


def confusion(labels_pred, labels_true) -> dict[str, int]:
    p = np.asarray(labels_pred).astype(bool).ravel()
    t = np.asarray(labels_true).astype(bool).ravel()
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return {"TP": tp, "FP": fp, "FN": fn, "TN": int(p.size) - tp - fp - fn}


def _ratio(a: float, b: float) -> float:
    return a / b if b else 0.0


def f1_from_counts(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    pre = _ratio(tp, tp + fp)
    rec = _ratio(tp, tp + fn)
    return pre, rec, _ratio(2 * pre * rec, pre + rec)


def metrics(labels_pred, labels_true) -> dict:
    """Precision, recall, F1 plus the confusion counts; 0/0 gives 0."""
    c = confusion(labels_pred, labels_true)
    pre, rec, f1 = f1_from_counts(c["TP"], c["FP"], c["FN"])
    return {"Pre": pre, "Rec": rec, "F1": f1, **c}


def f1_sweep(scores, labels_true) -> tuple[np.ndarray, np.ndarray]:
    """F1 at every distinct score used as ``tau``; returns ``(taus ascending, f1)``."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels_true).astype(bool).ravel()
    if s.shape != y.shape:
        raise ValueError(f"shape mismatch {s.shape} vs {y.shape}")
    taus, inverse = np.unique(s, return_inverse=True)
    pos_at = np.bincount(inverse, weights=y, minlength=len(taus))
    cnt_at = np.bincount(inverse, minlength=len(taus)).astype(np.float64)
    # flagged at tau_k are the cells with score strictly above tau_k
    tp = pos_at[::-1].cumsum()[::-1] - pos_at
    flagged = cnt_at[::-1].cumsum()[::-1] - cnt_at
    fp = flagged - tp
    fn = y.sum() - tp
    # same arithmetic as f1_from_counts, so ties break identically
    pre = np.divide(tp, tp + fp, out=np.zeros_like(tp), where=tp + fp > 0)
    rec = np.divide(tp, tp + fn, out=np.zeros_like(tp), where=tp + fn > 0)
    f1 = np.divide(2 * pre * rec, pre + rec, out=np.zeros_like(tp), where=pre + rec > 0)
    return taus, f1


def select_threshold(scores, labels_true=None, mode: str = "quantile", tau: float | None = None, q: float = 0.995) -> float:
    """Pick ``tau`` from validation scores.

    ``fixed`` returns ``tau``; ``quantile`` the ``q``-th quantile of the scores;
    ``best_f1`` the distinct score maximizing F1, smallest on ties.
    """
    if mode == "fixed":
        if tau is None:
            raise ValueError("fixed threshold mode needs tau")
        return float(tau)
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("no validation scores to select a threshold from")
    if mode == "quantile":
        if not 0.0 <= q <= 1.0:
            raise ValueError(f"quantile must be in [0, 1], got {q}")
        return float(np.quantile(s, q))
    if mode == "best_f1":
        if labels_true is None:
            raise ValueError("best_f1 threshold selection needs validation labels")
        taus, f1 = f1_sweep(s, labels_true)
        return float(taus[int(np.argmax(f1))])
    raise ValueError(f"unknown threshold mode {mode!r}; expected one of {THRESHOLD_MODES}")


@dataclass
class DetectionReport:
    scores: np.ndarray  # [B, N, M]
    labels_pred: np.ndarray
    tau: float
    mode: str
    labels_true: np.ndarray | None = None
    window_starts: np.ndarray | None = None
    metrics: dict = field(default_factory=dict)

    def metrics_dict(self) -> dict:
        out = {"tau": self.tau, "mode": self.mode, "n_windows": int(self.scores.shape[0])}
        out.update(self.metrics)
        return out


def build_report(scores, tau: float, mode: str, labels_true=None, window_starts=None) -> DetectionReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels_pred = apply_threshold(scores, tau)
    m = metrics(labels_pred, labels_true) if labels_true is not None else {}
    return DetectionReport(scores, labels_pred, float(tau), mode, labels_true, window_starts, m)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_scores_csv(
    path: str | Path,
    report: DetectionReport,
    node_ids: Sequence,
    modality_names: Sequence[str],
) -> None:
    b, n, m = report.scores.shape
    starts = report.window_starts if report.window_starts is not None else np.arange(b)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["window_start", "node_id", "modality", "score", "label_pred", "label_true"])
        for k in range(b):
            for i in range(n):
                for j in range(m):
                    lt = "" if report.labels_true is None else int(report.labels_true[k, i, j])
                    wr.writerow([int(starts[k]), node_ids[i], modality_names[j], _fmt(report.scores[k, i, j]), int(report.labels_pred[k, i, j]), lt])


def read_scores_csv(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def write_metrics_json(path: str | Path, report: DetectionReport, extra: dict | None = None) -> None:
    payload = {k: _json_safe(v) for k, v in report.metrics_dict().items()}
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def persistence_predictions(windows: np.ndarray) -> np.ndarray:
    """Last observed value of each window as the next-step prediction."""
    return np.asarray(windows)[..., -1]
