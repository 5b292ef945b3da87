"""Recording-level aggregation, F-scores, bootstrap comparison, report tables.

Segment decisions are collapsed to one decision per recording by majority
vote (ties go to "present"); segment severity predictions are averaged and
rescaled to the 0-60 range. Per-class F1 uses 2TP/(2TP+FP+FN) with the
0/0 case defined as 0, which reproduces the degenerate all-absent
baseline pattern F_P = 0, F_M = F_A/2.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import N_SYMPTOMS, SYMPTOMS
from .seeding import derive_seed


def majority_vote(decisions: Sequence[int]) -> int:
    """Most frequent class across segments; a tie counts as present (1)."""
    decisions = np.asarray(decisions)
    if decisions.size == 0:
        raise ValueError("cannot vote over zero segments")
    ones = int((decisions == 1).sum())
    zeros = decisions.size - ones
    return 1 if ones >= zeros else 0


def aggregate_severity(predictions: Sequence[float], scale: float = 60.0) -> float:
    """Mean normalized segment prediction, rescaled and clamped to [0, scale]."""
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.size == 0:
        raise ValueError("cannot aggregate zero segment predictions")
    return float(np.clip(scale * predictions.mean(), 0.0, scale))


def f_scores(decisions: Sequence[int], labels: Sequence[int]) -> tuple[float, float, float]:
    """(F_A, F_P, F_M) as percentages for one symptom's recording decisions."""
    decisions = np.asarray(decisions)
    labels = np.asarray(labels)
    if decisions.shape != labels.shape:
        raise ValueError(f"{decisions.shape[0]} decisions vs {labels.shape[0]} labels")
    if decisions.size == 0:
        raise ValueError("cannot score zero recordings")
    tp = int(((decisions == 1) & (labels == 1)).sum())
    fp = int(((decisions == 1) & (labels == 0)).sum())
    fn = int(((decisions == 0) & (labels == 1)).sum())
    tn = int(((decisions == 0) & (labels == 0)).sum())
    f_p = 200.0 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) > 0 else 0.0
    f_a = 200.0 * tn / (2 * tn + fn + fp) if (2 * tn + fn + fp) > 0 else 0.0
    return f_a, f_p, (f_a + f_p) / 2.0


def rmse(estimates: Sequence[float], targets: Sequence[float]) -> float:
    estimates = np.asarray(estimates, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if estimates.shape != targets.shape:
        raise ValueError(f"{estimates.shape[0]} estimates vs {targets.shape[0]} targets")
    return float(np.sqrt(np.mean((estimates - targets) ** 2)))


@dataclass
class PredictionSet:
    """Per-segment outputs and the aggregated per-recording decisions.

    Aggregates are always derived through majority_vote / aggregate_severity;
    construct via from_segments (or merge) rather than by hand.
    """

    recording_ids: tuple[str, ...]
    symptom_decisions: dict[int, np.ndarray]
    severity: np.ndarray | None
    segment_decisions: dict[int, list[np.ndarray]] | None = None
    segment_severity: list[np.ndarray] | None = None

    @classmethod
    def from_segments(
        cls,
        segment_recording_ids: Sequence[str],
        class_probs: Mapping[int, np.ndarray],
        severity: np.ndarray | None,
        severity_scale: float = 60.0,
    ) -> "PredictionSet":
        order: list[str] = []
        groups: dict[str, list[int]] = {}
        for row, rec in enumerate(segment_recording_ids):
            if rec not in groups:
                groups[rec] = []
                order.append(rec)
            groups[rec].append(row)

        segment_decisions: dict[int, list[np.ndarray]] = {}
        symptom_decisions: dict[int, np.ndarray] = {}
        for i, probs in sorted(class_probs.items()):
            per_segment = np.argmax(probs, axis=1)
            rec_segments = [per_segment[groups[rec]] for rec in order]
            segment_decisions[i] = rec_segments
            symptom_decisions[i] = np.array([majority_vote(s) for s in rec_segments])

        agg_severity = None
        segment_severity = None
        if severity is not None:
            severity = np.asarray(severity, dtype=np.float64)
            segment_severity = [severity[groups[rec]] for rec in order]
            agg_severity = np.array(
                [aggregate_severity(s, severity_scale) for s in segment_severity]
            )
        return cls(
            recording_ids=tuple(order),
            symptom_decisions=symptom_decisions,
            severity=agg_severity,
            segment_decisions=segment_decisions,
            segment_severity=segment_severity,
        )

    @classmethod
    def merge(cls, parts: Sequence["PredictionSet"]) -> "PredictionSet":
        """Union of symptom/severity predictions covering identical recordings."""
        if not parts:
            raise ValueError("nothing to merge")
        ids = parts[0].recording_ids
        for part in parts[1:]:
            if part.recording_ids != ids:
                raise ValueError("prediction sets cover different recordings")
        merged = cls(recording_ids=ids, symptom_decisions={}, severity=None)
        merged.segment_decisions = {}
        for part in parts:
            merged.symptom_decisions.update(part.symptom_decisions)
            if part.segment_decisions:
                merged.segment_decisions.update(part.segment_decisions)
            if part.severity is not None:
                merged.severity = part.severity
                merged.segment_severity = part.segment_severity
        return merged

    def concat(self, other: "PredictionSet") -> "PredictionSet":
        """Append another fold's recordings (disjoint ids, same heads)."""
        overlap = set(self.recording_ids) & set(other.recording_ids)
        if overlap:
            raise ValueError(f"recordings predicted twice: {sorted(overlap)[:3]}")
        if set(self.symptom_decisions) != set(other.symptom_decisions):
            raise ValueError("prediction sets carry different symptom heads")
        decisions = {
            i: np.concatenate([self.symptom_decisions[i], other.symptom_decisions[i]])
            for i in self.symptom_decisions
        }
        severity = None
        if (self.severity is None) != (other.severity is None):
            raise ValueError("one prediction set has severity, the other does not")
        if self.severity is not None:
            severity = np.concatenate([self.severity, other.severity])
        seg_d = None
        if self.segment_decisions is not None and other.segment_decisions is not None:
            seg_d = {
                i: self.segment_decisions[i] + other.segment_decisions[i]
                for i in self.segment_decisions
            }
        seg_s = None
        if self.segment_severity is not None and other.segment_severity is not None:
            seg_s = self.segment_severity + other.segment_severity
        return PredictionSet(
            recording_ids=self.recording_ids + other.recording_ids,
            symptom_decisions=decisions,
            severity=severity,
            segment_decisions=seg_d,
            segment_severity=seg_s,
        )


@dataclass(frozen=True)
class FoldScores:
    """Metrics for one fold: per-symptom (F_A, F_P, F_M) and severity RMSE."""

    symptom_f: Mapping[int, tuple[float, float, float]]
    severity_rmse: float | None


@dataclass
class MetricsReport:
    """Per-fold scores plus their mean, with optional single-model baselines."""

    folds: list[FoldScores]
    mean_symptom_f: dict[int, tuple[float, float, float]] = field(default_factory=dict)
    mean_rmse: float | None = None
    reference_fm: dict[int, float] | None = None
    reference_rmse: float | None = None

    @classmethod
    def from_folds(
        cls,
        folds: Sequence[FoldScores],
        reference_fm: Mapping[int, float] | None = None,
        reference_rmse: float | None = None,
    ) -> "MetricsReport":
        if not folds:
            raise ValueError("no fold scores")
        symptoms = sorted(folds[0].symptom_f)
        mean_symptom_f = {}
        for i in symptoms:
            triples = np.array([fold.symptom_f[i] for fold in folds])
            mean_symptom_f[i] = tuple(float(x) for x in triples.mean(axis=0))
        rmses = [fold.severity_rmse for fold in folds if fold.severity_rmse is not None]
        mean_rmse = float(np.mean(rmses)) if rmses else None
        return cls(
            folds=list(folds),
            mean_symptom_f=mean_symptom_f,
            mean_rmse=mean_rmse,
            reference_fm=dict(reference_fm) if reference_fm else None,
            reference_rmse=reference_rmse,
        )


def score_predictions(
    preds: PredictionSet,
    labels: Mapping[str, Sequence[int]],
    severity_targets: Mapping[str, float] | None = None,
) -> FoldScores:
    """Score one fold's aggregated predictions against recording labels."""
    symptom_f = {}
    for i, decisions in sorted(preds.symptom_decisions.items()):
        truth = np.array([labels[rec][i] for rec in preds.recording_ids])
        symptom_f[i] = f_scores(decisions, truth)
    severity_rmse = None
    if preds.severity is not None and severity_targets is not None:
        targets = np.array([severity_targets[rec] for rec in preds.recording_ids])
        severity_rmse = rmse(preds.severity, targets)
    return FoldScores(symptom_f=symptom_f, severity_rmse=severity_rmse)


@dataclass(frozen=True)
class BootstrapResult:
    metric: str
    mean_diff: float
    ci_low: float
    ci_high: float
    n_resamples: int
    level: float
    seed: int

    def __post_init__(self) -> None:
        if not self.ci_low <= self.mean_diff <= self.ci_high:
            raise ValueError(
                f"{self.metric}: mean {self.mean_diff} outside interval "
                f"[{self.ci_low}, {self.ci_high}]"
            )

    @property
    def significant(self) -> bool:
        return self.ci_low > 0.0 or self.ci_high < 0.0


def _fm_from_counts(tp, fp, fn, tn) -> np.ndarray:
    denom_p = 2 * tp + fp + fn
    denom_a = 2 * tn + fn + fp
    f_p = np.divide(200.0 * tp, denom_p, out=np.zeros_like(denom_p, dtype=np.float64),
                    where=denom_p > 0)
    f_a = np.divide(200.0 * tn, denom_a, out=np.zeros_like(denom_a, dtype=np.float64),
                    where=denom_a > 0)
    return (f_a + f_p) / 2.0


def bootstrap_compare(
    preds_a: PredictionSet,
    preds_b: PredictionSet,
    labels: Mapping[str, Sequence[int]],
    n_resamples: int = 10000,
    level: float = 95.0,
    seed: int = 0,
) -> list[BootstrapResult]:
    """Percentile bootstrap of per-symptom F_M differences (A - B).

    Recordings are resampled with replacement; both models are evaluated
    on each resample and the difference distribution summarized by its
    mean and the central ``level``% interval.
    """
    if n_resamples < 1:
        raise ValueError(f"n_resamples must be >= 1, got {n_resamples}")
    if not 0.0 < level < 100.0:
        raise ValueError(f"confidence level must be in (0, 100), got {level}")
    if set(preds_a.recording_ids) != set(preds_b.recording_ids):
        raise ValueError("prediction sets cover different recordings")
    shared = sorted(set(preds_a.symptom_decisions) & set(preds_b.symptom_decisions))
    if not shared:
        raise ValueError("prediction sets share no symptom heads")

    ids = preds_a.recording_ids
    n = len(ids)
    label_matrix = np.array([labels[rec] for rec in ids])

    rng = np.random.default_rng(derive_seed(seed, "bootstrap"))
    idx = rng.integers(0, n, size=(n_resamples, n))

    position_b = {rec: i for i, rec in enumerate(preds_b.recording_ids)}
    b_order = np.array([position_b[rec] for rec in ids])
    results = []
    alpha = (100.0 - level) / 2.0
    for i in shared:
        da = np.asarray(preds_a.symptom_decisions[i])
        db = np.asarray(preds_b.symptom_decisions[i])[b_order]
        lab = label_matrix[:, i]
        da_s = da[idx]
        db_s = db[idx]
        lab_s = lab[idx]
        diffs = _resampled_fm(da_s, lab_s) - _resampled_fm(db_s, lab_s)
        ci_low, ci_high = np.percentile(diffs, [alpha, 100.0 - alpha])
        mean_diff = float(diffs.mean())
        results.append(
            BootstrapResult(
                metric=f"F_M[{SYMPTOMS[i]}]",
                mean_diff=mean_diff,
                ci_low=float(min(ci_low, mean_diff)),
                ci_high=float(max(ci_high, mean_diff)),
                n_resamples=n_resamples,
                level=level,
                seed=seed,
            )
        )
    return results


def _resampled_fm(decisions: np.ndarray, labels: np.ndarray) -> np.ndarray:
    tp = ((decisions == 1) & (labels == 1)).sum(axis=1)
    fp = ((decisions == 1) & (labels == 0)).sum(axis=1)
    fn = ((decisions == 0) & (labels == 1)).sum(axis=1)
    tn = ((decisions == 0) & (labels == 0)).sum(axis=1)
    return _fm_from_counts(tp, fp, fn, tn)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _delta_annotation(value: int, reference: int) -> str:
    delta = value - reference
    if delta > 0:
        return f"{value} ({delta}↑)"
    if delta < 0:
        return f"{value} ({-delta}↓)"
    return str(value)


def render_report(report: MetricsReport, style: str = "table2") -> str:
    """Format mean metrics as an aligned text table.

    table2 cells read "F_M (F_A, F_P)" with integer rounding; table4
    shows F_M with a delta against the best single-model baseline, e.g.
    "65 (3^)" when the fusion model improves by 3 points.
    """
    if style not in ("table2", "table4"):
        raise ValueError(f"unknown report style {style!r}")
    rows: list[tuple[str, str]] = []
    for i in sorted(report.mean_symptom_f):
        f_a, f_p, f_m = report.mean_symptom_f[i]
        label = f"({i + 1}) {SYMPTOMS[i]}"
        if style == "table2":
            cell = f"{round_half_up(f_m)} ({round_half_up(f_a)}, {round_half_up(f_p)})"
        else:
            fm_int = round_half_up(f_m)
            if report.reference_fm and i in report.reference_fm:
                cell = _delta_annotation(fm_int, round_half_up(report.reference_fm[i]))
            else:
                cell = str(fm_int)
        rows.append((label, cell))
    if report.mean_rmse is not None:
        if style == "table4" and report.reference_rmse is not None:
            delta = report.mean_rmse - report.reference_rmse
            arrow = "↓" if delta < 0 else "↑"
            cell = f"{report.mean_rmse:.2f}"
            if abs(delta) >= 0.005:
                cell += f" ({abs(delta):.2f}{arrow})"
        else:
            cell = f"{report.mean_rmse:.2f}"
        rows.append(("MADRS(RMSE)", cell))

    left = max(len(r[0]) for r in rows)
    header = f"{'Symptom'.ljust(left)}  Score"
    body = "\n".join(f"{label.ljust(left)}  {cell}" for label, cell in rows)
    return f"{header}\n{'-' * len(header)}\n{body}\n"


_REPORT_COLUMNS = ("fold", "row", "f_a", "f_p", "f_m", "rmse", "ref_fm", "ref_rmse")


def write_report_csv(report: MetricsReport, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_REPORT_COLUMNS)
        folds: list[tuple[str, FoldScores]] = [
            (str(k), fold) for k, fold in enumerate(report.folds)
        ]
        folds.append(
            ("mean", FoldScores(symptom_f=report.mean_symptom_f, severity_rmse=report.mean_rmse))
        )
        for fold_key, scores in folds:
            for i in sorted(scores.symptom_f):
                f_a, f_p, f_m = scores.symptom_f[i]
                ref = ""
                if fold_key == "mean" and report.reference_fm and i in report.reference_fm:
                    ref = repr(report.reference_fm[i])
                writer.writerow(
                    [fold_key, SYMPTOMS[i], repr(f_a), repr(f_p), repr(f_m), "", ref, ""]
                )
            if scores.severity_rmse is not None:
                ref_rmse = ""
                if fold_key == "mean" and report.reference_rmse is not None:
                    ref_rmse = repr(report.reference_rmse)
                writer.writerow(
                    [fold_key, "MADRS", "", "", "", repr(scores.severity_rmse), "", ref_rmse]
                )


def read_report_csv(path: str | Path) -> MetricsReport:
    path = Path(path)
    fold_rows: dict[str, dict[int, tuple[float, float, float]]] = {}
    fold_rmse: dict[str, float] = {}
    reference_fm: dict[int, float] = {}
    reference_rmse: float | None = None
    symptom_index = {abbr: i for i, abbr in enumerate(SYMPTOMS)}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            fold = row["fold"]
            if row["row"] == "MADRS":
                fold_rmse[fold] = float(row["rmse"])
                if fold == "mean" and row.get("ref_rmse"):
                    reference_rmse = float(row["ref_rmse"])
                continue
            i = symptom_index[row["row"]]
            fold_rows.setdefault(fold, {})[i] = (
                float(row["f_a"]), float(row["f_p"]), float(row["f_m"])
            )
            if fold == "mean" and row.get("ref_fm"):
                reference_fm[i] = float(row["ref_fm"])
    numbered = sorted((k for k in fold_rows if k != "mean"), key=int)
    folds = [
        FoldScores(symptom_f=fold_rows[k], severity_rmse=fold_rmse.get(k)) for k in numbered
    ]
    report = MetricsReport(
        folds=folds,
        mean_symptom_f=fold_rows.get("mean", {}),
        mean_rmse=fold_rmse.get("mean"),
        reference_fm=reference_fm or None,
        reference_rmse=reference_rmse,
    )
    return report


def write_bootstrap_csv(results: Iterable[BootstrapResult], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("symptom", "mean_diff", "ci_low", "ci_high", "n", "level", "seed"))
        for res in results:
            writer.writerow(
                [
                    res.metric,
                    repr(res.mean_diff),
                    repr(res.ci_low),
                    repr(res.ci_high),
                    res.n_resamples,
                    repr(res.level),
                    res.seed,
                ]
            )


def render_bootstrap_table(results: Sequence[BootstrapResult]) -> str:
    lines = [f"{'metric':<14} {'mean_diff':>10} {'ci_low':>10} {'ci_high':>10}  significant"]
    for res in results:
        lines.append(
            f"{res.metric:<14} {res.mean_diff:>10.3f} {res.ci_low:>10.3f} "
            f"{res.ci_high:>10.3f}  {'yes' if res.significant else 'no'}"
        )
    return "\n".join(lines) + "\n"


def write_predictions_csv(
    preds: PredictionSet,
    labels: Mapping[str, Sequence[int]],
    severity_targets: Mapping[str, float] | None,
    path: str | Path,
) -> None:
    """Aggregated per-recording predictions plus their labels, one row each."""
    path = Path(path)
    header = ["recording_id"]
    header += [f"pred_s{i + 1}" for i in range(N_SYMPTOMS)]
    header += [f"label_s{i + 1}" for i in range(N_SYMPTOMS)]
    header += ["severity_pred", "severity_true"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row_idx, rec in enumerate(preds.recording_ids):
            row: list[str] = [rec]
            for i in range(N_SYMPTOMS):
                if i in preds.symptom_decisions:
                    row.append(str(int(preds.symptom_decisions[i][row_idx])))
                else:
                    row.append("")
            row += [str(int(labels[rec][i])) for i in range(N_SYMPTOMS)]
            row.append(repr(float(preds.severity[row_idx])) if preds.severity is not None else "")
            row.append(
                repr(float(severity_targets[rec])) if severity_targets is not None else ""
            )
            writer.writerow(row)


def read_predictions_csv(
    path: str | Path,
) -> tuple[PredictionSet, dict[str, np.ndarray], dict[str, float] | None]:
    """Inverse of write_predictions_csv (aggregates only, no segment detail)."""
    path = Path(path)
    ids: list[str] = []
    decisions: dict[int, list[int]] = {}
    labels: dict[str, np.ndarray] = {}
    severity: list[float] = []
    severity_true: dict[str, float] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rec = row["recording_id"]
            ids.append(rec)
            for i in range(N_SYMPTOMS):
                cell = row[f"pred_s{i + 1}"]
                if cell != "":
                    decisions.setdefault(i, []).append(int(cell))
            labels[rec] = np.array([int(row[f"label_s{i + 1}"]) for i in range(N_SYMPTOMS)])
            if row["severity_pred"] != "":
                severity.append(float(row["severity_pred"]))
            if row["severity_true"] != "":
                severity_true[rec] = float(row["severity_true"])
    preds = PredictionSet(
        recording_ids=tuple(ids),
        symptom_decisions={i: np.array(v) for i, v in decisions.items()},
        severity=np.array(severity) if severity else None,
    )
    return preds, labels, severity_true or None
