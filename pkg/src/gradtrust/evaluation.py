"""Percentile-binned accuracy/F1 curves over trust scores, and their areas.

For each percentile level p the harness keeps the samples whose score is at
least the p-th percentile of all scores (nearest-rank rule, ties kept) and
measures accuracy and macro-F1 on what remains.  A trustworthy metric pushes
mispredictions below the rising threshold, so its curve climbs; the area
under the curve (0-100 scale) summarizes it in one number: AUAC for
accuracy, AUFC for F1.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .baselines import (ALL_METRICS, MetricId, entropy_trust, gradnorm_trust,
                        margin_trust, nll_trust, softmax_confidence)
from .bundle import LastLayerBundle, ensure_logits
from .trust import DEGENERATE_SENTINEL, batch_gradtrust

__all__ = [
    "ScoreTable",
    "EvalCurve",
    "percentile_threshold",
    "accuracy_curve",
    "f1_curve",
    "area",
    "emit_curves",
    "build_score_table",
    "write_score_csv",
    "read_score_csv",
    "MalformedScoreCSV",
]

DEGENERATE_POLICIES = ("bottom", "top")
DEGENERATE_TOKEN = "degenerate"


class MalformedScoreCSV(ValueError):
    """scores.csv violates the interchange contract; message names the line."""


@dataclass(frozen=True)
class ScoreTable:
    """Per-sample predictions, correctness, and one score column per metric.

    Degenerate scores (trust ratio 0/0) are stored as the -inf sentinel with
    the metric's row flagged in `degenerate`; NaN never appears.
    """

    sample_ids: np.ndarray
    labels: np.ndarray
    predictions: np.ndarray
    correct: np.ndarray
    scores: dict[str, np.ndarray]
    degenerate: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        m = self.sample_ids.size
        if m < 1:
            raise ValueError("score table must have at least one row")
        if np.unique(self.sample_ids).size != m:
            raise ValueError("sample_ids must be unique")
        if not np.array_equal(self.correct, self.labels == self.predictions):
            raise ValueError("correct flags disagree with label == prediction")
        for name, col in self.scores.items():
            if col.shape != (m,):
                raise ValueError(f"score column {name!r} has wrong length")
            if np.any(np.isnan(col)):
                raise ValueError(f"score column {name!r} contains NaN")

    @property
    def n_rows(self) -> int:
        return self.sample_ids.size

    @property
    def metrics(self) -> tuple[str, ...]:
        return tuple(self.scores)

    @property
    def overall_accuracy(self) -> float:
        return float(np.mean(self.correct))

    def degenerate_mask(self, metric: str) -> np.ndarray:
        mask = self.degenerate.get(metric)
        if mask is None:
            return np.zeros(self.n_rows, dtype=bool)
        return mask


@dataclass(frozen=True)
class EvalCurve:
    """One metric's retained-accuracy (or F1) value per percentile bin."""

    metric: str
    kind: str  # "accuracy" or "f1"
    percentiles: np.ndarray
    values: np.ndarray

    @property
    def area(self) -> float:
        # 0-100 scale: 100 * mean over the bins.
        return 100.0 * float(np.mean(self.values))


def percentile_threshold(scores, p: int) -> float:
    """Nearest-rank percentile: the ceil(p*M/100)-th smallest score."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size < 1:
        raise ValueError("scores must be a nonempty 1-D array")
    if not 1 <= p <= 100:
        raise ValueError(f"percentile must be in 1..100, got {p}")
    rank = -(-int(p) * s.size // 100)  # ceil in integer arithmetic
    return float(np.sort(s)[rank - 1])


def _ranked_scores(table: ScoreTable, metric: str, degenerate_policy: str) -> np.ndarray:
    if degenerate_policy not in DEGENERATE_POLICIES:
        raise ValueError(
            f"degenerate policy must be one of {DEGENERATE_POLICIES}, got {degenerate_policy!r}")
    try:
        scores = table.scores[metric]
    except KeyError:
        raise KeyError(f"metric column {metric!r} not present in score table") from None
    if degenerate_policy == "top":
        mask = table.degenerate_mask(metric)
        if mask.any():
            scores = scores.copy()
            scores[mask] = np.inf
    return scores


def _bin_retention(scores: np.ndarray, bins: int):
    """Yield (percentile_level, retained_index_array) per bin, ties retained.

    Retention at level p keeps every row whose score >= the value at ascending
    rank ceil(p*M/bins); the threshold row itself is always kept, so the
    retained set is never empty.
    """
    m = scores.size
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    for p in range(1, bins + 1):
        rank = -(-p * m // bins)  # ceil without float round-off
        threshold = sorted_scores[rank - 1]
        start = int(np.searchsorted(sorted_scores, threshold, side="left"))
        yield p * 100.0 / bins, order[start:]


def accuracy_curve(table: ScoreTable, metric: str, bins: int = 100,
                   degenerate_policy: str = "bottom") -> EvalCurve:
    """Fraction correct among retained rows, per percentile bin."""
    scores = _ranked_scores(table, metric, degenerate_policy)
    percentiles = np.empty(bins)
    values = np.empty(bins)
    for i, (level, retained) in enumerate(_bin_retention(scores, bins)):
        percentiles[i] = level
        values[i] = float(np.mean(table.correct[retained]))
    return EvalCurve(metric=metric, kind="accuracy", percentiles=percentiles, values=values)


def _macro_f1(labels: np.ndarray, predictions: np.ndarray) -> float:
    # Macro over classes with nonzero support among the retained labels;
    # micro-F1 would just repeat accuracy.
    width = int(max(labels.max(), predictions.max())) + 1
    support = np.bincount(labels, minlength=width)
    predicted = np.bincount(predictions, minlength=width)
    tp = np.bincount(labels[labels == predictions], minlength=width)
    f1s = []
    for c in np.nonzero(support)[0]:
        prec = tp[c] / predicted[c] if predicted[c] else 0.0
        rec = tp[c] / support[c]
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return float(np.mean(f1s))


def f1_curve(table: ScoreTable, metric: str, bins: int = 100,
             degenerate_policy: str = "bottom") -> EvalCurve:
    """Macro-F1 among retained rows, per percentile bin."""
    scores = _ranked_scores(table, metric, degenerate_policy)
    percentiles = np.empty(bins)
    values = np.empty(bins)
    for i, (level, retained) in enumerate(_bin_retention(scores, bins)):
        percentiles[i] = level
        values[i] = _macro_f1(table.labels[retained], table.predictions[retained])
    return EvalCurve(metric=metric, kind="f1", percentiles=percentiles, values=values)


def area(curve: EvalCurve) -> float:
    """Area under the curve on the 0-100 scale: 100 * mean of bin values."""
    return curve.area


def build_score_table(bundle: LastLayerBundle, metrics=ALL_METRICS, k: int = 10,
                      variance_mode: str = "squared",
                      denominator_mode: str = "counterfactuals",
                      margin_mode: str = "probability") -> ScoreTable:
    """Score every sample of a bundle with the requested metrics."""
    bundle = ensure_logits(bundle)
    m = bundle.n_samples
    predictions = np.argmax(bundle.logits, axis=1).astype(np.int64)
    scores: dict[str, np.ndarray] = {}
    degenerate: dict[str, np.ndarray] = {}
    for metric in metrics:
        metric = MetricId(metric).value
        if metric == "gradtrust":
            scores[metric], degenerate[metric] = batch_gradtrust(
                bundle, k, variance_mode=variance_mode, denominator_mode=denominator_mode)
            continue
        col = np.empty(m)
        for i in range(m):
            logits = bundle.logits[i]
            if metric == "softmax":
                col[i] = softmax_confidence(logits)
            elif metric == "entropy":
                col[i] = entropy_trust(logits)
            elif metric == "nll":
                col[i] = nll_trust(logits)
            elif metric == "margin":
                col[i] = margin_trust(logits, mode=margin_mode)
            else:  # gradnorm
                col[i] = gradnorm_trust(bundle.features[i], logits)
        scores[metric] = col
    return ScoreTable(
        sample_ids=np.arange(m, dtype=np.int64),
        labels=bundle.labels.copy(),
        predictions=predictions,
        correct=bundle.labels == predictions,
        scores=scores,
        degenerate=degenerate,
    )


def _format_score(value: float, is_degenerate: bool) -> str:
    if is_degenerate:
        return DEGENERATE_TOKEN
    return repr(value)


def write_score_csv(table: ScoreTable, path) -> None:
    """Write the score table as UTF-8, LF-terminated CSV (deterministic bytes)."""
    metrics = table.metrics
    lines = ["sample_id,label,prediction,correct," + ",".join(metrics)]
    masks = {name: table.degenerate_mask(name) for name in metrics}
    for i in range(table.n_rows):
        cells = [
            str(int(table.sample_ids[i])),
            str(int(table.labels[i])),
            str(int(table.predictions[i])),
            "true" if table.correct[i] else "false",
        ]
        cells += [_format_score(float(table.scores[name][i]), bool(masks[name][i]))
                  for name in metrics]
        lines.append(",".join(cells))
    with open(os.fspath(path), "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_score_csv(path) -> ScoreTable:
    """Parse scores.csv back into a ScoreTable; errors name the bad line."""
    with open(os.fspath(path), encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise MalformedScoreCSV("line 1: empty file")
    header = lines[0].split(",")
    if header[:4] != ["sample_id", "label", "prediction", "correct"]:
        raise MalformedScoreCSV(
            "line 1: header must start with sample_id,label,prediction,correct")
    metrics = header[4:]
    if not metrics:
        raise MalformedScoreCSV("line 1: no metric columns")

    rows = [line for line in lines[1:] if line]
    m = len(rows)
    sample_ids = np.empty(m, dtype=np.int64)
    labels = np.empty(m, dtype=np.int64)
    predictions = np.empty(m, dtype=np.int64)
    correct = np.empty(m, dtype=bool)
    scores = {name: np.empty(m) for name in metrics}
    degenerate = {name: np.zeros(m, dtype=bool) for name in metrics}
    for i, line in enumerate(rows):
        lineno = i + 2
        cells = line.split(",")
        if len(cells) != 4 + len(metrics):
            raise MalformedScoreCSV(
                f"line {lineno}: expected {4 + len(metrics)} cells, got {len(cells)}")
        try:
            sample_ids[i] = int(cells[0])
            labels[i] = int(cells[1])
            predictions[i] = int(cells[2])
        except ValueError:
            raise MalformedScoreCSV(f"line {lineno}: non-integer id/label/prediction") from None
        if cells[3] not in ("true", "false"):
            raise MalformedScoreCSV(f"line {lineno}: correct must be true/false, got {cells[3]!r}")
        correct[i] = cells[3] == "true"
        for name, cell in zip(metrics, cells[4:]):
            if cell == DEGENERATE_TOKEN:
                scores[name][i] = DEGENERATE_SENTINEL
                degenerate[name][i] = True
                continue
            try:
                value = float(cell)
            except ValueError:
                raise MalformedScoreCSV(
                    f"line {lineno}: column {name!r} has non-numeric value {cell!r}") from None
            if math.isnan(value):
                raise MalformedScoreCSV(f"line {lineno}: column {name!r} is NaN")
            scores[name][i] = value
    try:
        return ScoreTable(sample_ids=sample_ids, labels=labels, predictions=predictions,
                          correct=correct, scores=scores, degenerate=degenerate)
    except ValueError as exc:
        raise MalformedScoreCSV(str(exc)) from None


def _svg_chart(metric: str, curves: list[EvalCurve]) -> str:
    # Minimal self-contained polyline chart: axes box plus one polyline per kind.
    width, height, pad = 480, 320, 40
    colors = {"accuracy": "#1f77b4", "f1": "#ff7f0e"}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
        'fill="none" stroke="#333" stroke-width="1"/>',
        f'<text x="{width // 2}" y="20" text-anchor="middle" font-size="14">{metric}</text>',
        f'<text x="{width // 2}" y="{height - 8}" text-anchor="middle" font-size="11">'
        'score percentile</text>',
    ]
    for slot, curve in enumerate(curves):
        lo, hi = curve.percentiles[0], curve.percentiles[-1]
        span = (hi - lo) or 1.0
        pts = []
        for p, v in zip(curve.percentiles, curve.values):
            x = pad + (p - lo) / span * (width - 2 * pad)
            y = height - pad - v * (height - 2 * pad)
            pts.append(f"{x:.2f},{y:.2f}")
        color = colors.get(curve.kind, "#2ca02c")
        parts.append(f'<polyline points="{" ".join(pts)}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{width - pad}" y="{pad + 16 + 14 * slot}" '
                     f'text-anchor="end" font-size="11" fill="{color}">'
                     f'{curve.kind} (area {curve.area:.2f})</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_curves(table: ScoreTable, metrics, out_dir, bins: int = 100,
                degenerate_policy: str = "bottom", svg: bool = False) -> dict[str, dict[str, EvalCurve]]:
    """Write curves.csv and summary.csv (plus per-metric SVGs when asked).

    Output bytes are deterministic for a fixed table.  Returns the curves as
    {metric: {"accuracy": curve, "f1": curve}}.
    """
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    results: dict[str, dict[str, EvalCurve]] = {}
    for metric in metrics:
        results[metric] = {
            "accuracy": accuracy_curve(table, metric, bins=bins,
                                       degenerate_policy=degenerate_policy),
            "f1": f1_curve(table, metric, bins=bins, degenerate_policy=degenerate_policy),
        }

    curve_lines = ["metric,kind,percentile,value"]
    for metric in metrics:
        for kind in ("accuracy", "f1"):
            curve = results[metric][kind]
            for p, v in zip(curve.percentiles, curve.values):
                curve_lines.append(f"{metric},{kind},{p:g},{v!r}")
    with open(os.path.join(out_dir, "curves.csv"), "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(curve_lines) + "\n")

    summary_lines = ["metric,auac,aufc,overall_accuracy,m"]
    for metric in metrics:
        auac = results[metric]["accuracy"].area
        aufc = results[metric]["f1"].area
        summary_lines.append(
            f"{metric},{auac:.2f},{aufc:.2f},{table.overall_accuracy!r},{table.n_rows}")
    with open(os.path.join(out_dir, "summary.csv"), "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(summary_lines) + "\n")

    if svg:
        for metric in metrics:
            chart = _svg_chart(metric, [results[metric]["accuracy"], results[metric]["f1"]])
            with open(os.path.join(out_dir, f"curve_{metric}.svg"), "w",
                      encoding="utf-8", newline="\n") as f:
                f.write(chart)
    return results
