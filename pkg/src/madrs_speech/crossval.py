"""Speaker-independent cross-validation: split, train, predict, aggregate, score.

One fold trains either a single multi-task model or, for single_task
specs, one model per symptom plus one regression model, whose test
predictions are merged. Per-fold seeds derive from the experiment seed,
so folds are independent and may run in parallel without changing any
result.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import metrics
from .dataset import FoldPlan, Recording, split_for_fold
from .features import read_embedding_file, segment_features
from .models import (
    ModelSpec,
    SegmentBatch,
    SymptomModel,
    TrainConfig,
    average_pool_time,
    build_model,
    predict_segments,
    train,
)
from .seeding import derive_seed


def recording_labels(
    recordings: Sequence[Recording],
) -> tuple[dict[str, np.ndarray], dict[str, float]]:
    """Binarized symptom labels and severity targets keyed by recording id."""
    labels = {rec.recording_id: rec.labels.as_array() for rec in recordings}
    severity = {rec.recording_id: float(rec.madrs_total) for rec in recordings}
    return labels, severity


def build_segment_dataset(
    recordings: Sequence[Recording],
    spec: ModelSpec,
    base_dir: str | Path,
    segment_seconds: float = 10.0,
    severity_scale: float = 60.0,
) -> SegmentBatch:
    """Load features, cut 10 s segments, and shape them for one model kind.

    Head models receive one time-pooled vector per segment and stream;
    the CNN receives raw (channels, time) segment frames. Labels are the
    recording's labels repeated over its segments.
    """
    base_dir = Path(base_dir)
    pooled = spec.kind != "cnn_baseline"
    stream_names = [name for name, _ in spec.streams]
    per_stream: list[list[np.ndarray]] = [[] for _ in stream_names]
    present_rows: list[np.ndarray] = []
    severity_rows: list[float] = []
    segment_recs: list[str] = []

    for rec in recordings:
        stream_segments = []
        for (name, dim) in spec.streams:
            if name not in rec.feature_refs:
                raise ValueError(f"recording {rec.recording_id!r}: missing stream {name!r}")
            path = base_dir / rec.feature_refs[name]
            seq = read_embedding_file(path, stream_name=name)
            if seq.dim != dim:
                raise ValueError(
                    f"recording {rec.recording_id!r} stream {name!r}: dim {seq.dim} != "
                    f"declared {dim}"
                )
            segs = segment_features(seq, segment_seconds, recording_id=rec.recording_id)
            stream_segments.append(segs.segments)
        n_segments = min(len(s) for s in stream_segments)
        if n_segments == 0:
            continue
        labels = rec.labels.as_array()
        severity = rec.madrs_total / severity_scale
        for k in range(n_segments):
            for j, segs in enumerate(stream_segments):
                seq = segs[k]
                if pooled:
                    per_stream[j].append(average_pool_time(seq))
                else:
                    per_stream[j].append(seq.values.T)
            present_rows.append(labels)
            severity_rows.append(severity)
            segment_recs.append(rec.recording_id)

    inputs = [np.asarray(chunks, dtype=np.float32) for chunks in per_stream]
    return SegmentBatch(
        inputs=inputs,
        present=np.asarray(present_rows, dtype=np.int8).reshape(len(segment_recs), -1),
        severity=np.asarray(severity_rows, dtype=np.float32),
        recording_ids=tuple(segment_recs),
    )


@dataclass
class FoldOutcome:
    fold: int
    scores: metrics.FoldScores
    predictions: metrics.PredictionSet
    checkpoints: dict[str, list]          # model key -> ParamTensors
    epoch_logs: dict[str, list]           # model key -> EpochLog list


def _subset(recordings: Sequence[Recording], ids: Sequence[str]) -> list[Recording]:
    wanted = set(ids)
    return [rec for rec in recordings if rec.recording_id in wanted]


def run_fold(
    recordings: Sequence[Recording],
    plan: FoldPlan,
    spec: ModelSpec,
    cfg: TrainConfig,
    fold: int,
    base_dir: str | Path,
    val_fraction: float = 0.10,
) -> FoldOutcome:
    """Train on one fold's split and score its test recordings."""
    split = split_for_fold(
        recordings, plan, fold, val_fraction, seed=derive_seed(cfg.seed, "split", fold)
    )
    fold_cfg = replace(cfg, seed=derive_seed(cfg.seed, "fold", fold))

    if spec.head_mode == "single_task":
        sub_modes = spec.single_task_modes
        sub_specs = [replace(spec, head_mode=mode) for mode in sub_modes]
    else:
        sub_specs = [spec]

    predictions: list[metrics.PredictionSet] = []
    checkpoints: dict[str, list] = {}
    epoch_logs: dict[str, list] = {}
    for sub_spec in sub_specs:
        train_data = build_segment_dataset(
            _subset(recordings, split.train_ids), sub_spec, base_dir,
            severity_scale=cfg.severity_scale,
        )
        val_data = build_segment_dataset(
            _subset(recordings, split.val_ids), sub_spec, base_dir,
            severity_scale=cfg.severity_scale,
        ) if split.val_ids else None
        test_data = build_segment_dataset(
            _subset(recordings, split.test_ids), sub_spec, base_dir,
            severity_scale=cfg.severity_scale,
        )
        model = build_model(sub_spec, seed=fold_cfg.seed)
        logs = train(model, train_data, val_data, fold_cfg)
        out = predict_segments(model, test_data)
        predictions.append(
            metrics.PredictionSet.from_segments(
                test_data.recording_ids, out.class_probs, out.severity,
                severity_scale=cfg.severity_scale,
            )
        )
        key = sub_spec.head_mode
        checkpoints[key] = model.params()
        epoch_logs[key] = logs

    merged = predictions[0] if len(predictions) == 1 else metrics.PredictionSet.merge(predictions)
    labels, severity_targets = recording_labels(_subset(recordings, split.test_ids))
    scores = metrics.score_predictions(merged, labels, severity_targets)
    return FoldOutcome(
        fold=fold, scores=scores, predictions=merged,
        checkpoints=checkpoints, epoch_logs=epoch_logs,
    )


def _run_fold_args(args) -> FoldOutcome:
    return run_fold(*args)


def crossval(
    recordings: Sequence[Recording],
    plan: FoldPlan,
    spec: ModelSpec,
    cfg: TrainConfig,
    base_dir: str | Path,
    val_fraction: float = 0.10,
    jobs: int = 1,
    reference_fm: Mapping[int, float] | None = None,
    reference_rmse: float | None = None,
) -> tuple[metrics.MetricsReport, metrics.PredictionSet, list[FoldOutcome]]:
    """Run every fold and average the fold metrics.

    Returns the report, the pooled test predictions (each recording
    predicted exactly once, by the fold that held it out), and the raw
    per-fold outcomes.
    """
    fold_args = [
        (recordings, plan, spec, cfg, fold, base_dir, val_fraction)
        for fold in range(plan.k)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_fold_args, fold_args))
    else:
        outcomes = [run_fold(*args) for args in fold_args]

    report = metrics.MetricsReport.from_folds(
        [o.scores for o in outcomes], reference_fm=reference_fm, reference_rmse=reference_rmse
    )
    pooled = outcomes[0].predictions
    for outcome in outcomes[1:]:
        pooled = pooled.concat(outcome.predictions)
    return report, pooled, outcomes
