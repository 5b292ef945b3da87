"""Command-line entry point.

Subcommands: features, synth, crossval, train, compare, report. Configs
live in files; flags override files. All randomness flows from --seed
through derived per-component seeds, so reruns with identical inputs
produce byte-identical artifacts (timestamps live only in the run
record). --jobs enables fold- or file-level parallelism without changing
any output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

from . import crossval as cv
from . import metrics, models, synthgen
from .dataset import (
    ManifestError,
    Recording,
    load_manifest,
    make_folds,
    write_fold_plan,
    write_manifest,
)
from .features import (
    AudioFormatError,
    load_audio,
    mel_spectrogram,
    write_embedding_file,
)
from .neuralcore import save_checkpoint
from .seeding import derive_seed


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _run_id(command: str, payload: dict) -> str:
    text = command + json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def _write_run_record(
    out_dir: Path, command: str, config: dict, seeds: dict, outputs: list[Path], started: float
) -> None:
    record = {
        "run_id": _run_id(command, {"config": config, "seeds": seeds}),
        "command": command,
        "config": config,
        "seeds": seeds,
        "outputs": sorted(str(p.relative_to(out_dir)) for p in outputs),
        "started_unix": started,
        "duration_seconds": time.time() - started,
    }
    (out_dir / "runrecord.json").write_text(
        json.dumps(record, indent=2, default=str) + "\n", encoding="utf-8"
    )


def _extract_one(rec: Recording, manifest_dir: Path, out_dir: Path) -> tuple[Recording, str]:
    if rec.audio_ref is None:
        raise AudioFormatError(f"recording {rec.recording_id!r} has no audio path")
    audio_path = Path(rec.audio_ref)
    if not audio_path.is_absolute():
        audio_path = manifest_dir / audio_path
    samples, rate = load_audio(audio_path)
    seq = mel_spectrogram(samples, rate)
    rel = Path("emb") / "spectro" / f"{rec.recording_id}.emb1"
    target = out_dir / rel
    target.parent.mkdir(parents=True, exist_ok=True)
    write_embedding_file(seq, target)
    return rec, str(rel)


def cmd_features(args: argparse.Namespace) -> int:
    started = time.time()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        recordings = load_manifest(args.manifest)
    except ManifestError as exc:
        return _fail(str(exc))
    manifest_dir = Path(args.manifest).parent

    results: dict[str, str] = {}
    failures: list[str] = []

    def worker(rec: Recording):
        try:
            return _extract_one(rec, manifest_dir, out_dir), None
        except (AudioFormatError, ValueError, OSError) as exc:
            return None, f"{rec.recording_id}: {exc}"

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(worker, recordings))
    else:
        outcomes = [worker(rec) for rec in recordings]
    for ok, err in outcomes:
        if err is not None:
            failures.append(err)
        else:
            rec, rel = ok
            results[rec.recording_id] = rel

    augmented = [
        replace(
            rec,
            feature_refs={**rec.feature_refs, "spectro": results[rec.recording_id]},
        )
        if rec.recording_id in results
        else rec
        for rec in recordings
    ]
    manifest_out = out_dir / "manifest.csv"
    write_manifest(augmented, manifest_out)
    outputs = [manifest_out] + [out_dir / rel for rel in results.values()]
    _write_run_record(
        out_dir, "features", {"manifest": str(args.manifest)}, {}, outputs, started
    )
    for failure in failures:
        print(f"error: {failure}", file=sys.stderr)
    print(f"wrote {len(results)} spectrogram files to {out_dir}")
    return 1 if failures else 0


def cmd_synth(args: argparse.Namespace) -> int:
    started = time.time()
    out_dir = Path(args.out)
    try:
        cfg = synthgen.load_synth_config(args.config) if args.config else synthgen.SynthConfig()
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
    except (ValueError, FileNotFoundError) as exc:
        return _fail(str(exc))
    manifest = synthgen.generate(cfg, out_dir)
    outputs = sorted(out_dir.rglob("*.emb1")) + [manifest]
    _write_run_record(out_dir, "synth", asdict(cfg), {"seed": cfg.seed}, outputs, started)
    print(f"wrote {cfg.n_speakers * cfg.recordings_per_speaker} recordings to {out_dir}")
    return 0


def _load_configs(args) -> tuple[models.ModelSpec, models.TrainConfig]:
    spec = models.load_model_config(args.model_config)
    cfg = models.load_train_config(args.train_config) if args.train_config else models.TrainConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return spec, cfg


def cmd_crossval(args: argparse.Namespace) -> int:
    started = time.time()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        recordings = load_manifest(args.manifest)
        spec, cfg = _load_configs(args)
    except (ManifestError, ValueError, FileNotFoundError) as exc:
        return _fail(str(exc))
    base_dir = Path(args.manifest).parent
    plan = make_folds(recordings, k=args.folds, seed=derive_seed(cfg.seed, "folds"))
    try:
        report, pooled, outcomes = cv.crossval(
            recordings, plan, spec, cfg, base_dir,
            val_fraction=args.val_fraction, jobs=args.jobs,
        )
    except ValueError as exc:
        return _fail(str(exc))

    labels, severity_targets = cv.recording_labels(recordings)
    outputs = []
    plan_path = out_dir / "foldplan.csv"
    write_fold_plan(plan, plan_path)
    outputs.append(plan_path)
    report_csv = out_dir / "report.csv"
    metrics.write_report_csv(report, report_csv)
    outputs.append(report_csv)
    report_txt = out_dir / "report.txt"
    report_txt.write_text(metrics.render_report(report, style="table2"), encoding="utf-8")
    outputs.append(report_txt)
    preds_path = out_dir / "predictions.csv"
    metrics.write_predictions_csv(pooled, labels, severity_targets, preds_path)
    outputs.append(preds_path)
    for outcome in outcomes:
        for key, params in outcome.checkpoints.items():
            ckpt = out_dir / f"fold{outcome.fold}.{key}.ckpt"
            save_checkpoint(ckpt, params, cfg.optimizer)
            outputs.append(ckpt)
    _write_run_record(
        out_dir,
        "crossval",
        {"manifest": str(args.manifest), "model": asdict(spec), "train": asdict(cfg)},
        {"seed": cfg.seed},
        outputs,
        started,
    )
    sys.stdout.write(metrics.render_report(report, style="table2"))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    started = time.time()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        recordings = load_manifest(args.manifest)
        spec, cfg = _load_configs(args)
        if spec.head_mode == "single_task":
            return _fail("train runs one model; use crossval for single_task expansion")
    except (ManifestError, ValueError, FileNotFoundError) as exc:
        return _fail(str(exc))
    base_dir = Path(args.manifest).parent
    plan = make_folds(recordings, k=args.folds, seed=derive_seed(cfg.seed, "folds"))
    try:
        outcome = cv.run_fold(
            recordings, plan, spec, cfg, args.test_fold, base_dir,
            val_fraction=args.val_fraction,
        )
    except ValueError as exc:
        return _fail(str(exc))
    outputs = []
    for key, params in outcome.checkpoints.items():
        ckpt = out_dir / f"fold{args.test_fold}.{key}.ckpt"
        save_checkpoint(ckpt, params, cfg.optimizer)
        outputs.append(ckpt)
    labels, severity_targets = cv.recording_labels(recordings)
    preds_path = out_dir / "predictions.csv"
    metrics.write_predictions_csv(outcome.predictions, labels, severity_targets, preds_path)
    outputs.append(preds_path)
    log_path = out_dir / "train_log.csv"
    lines = ["model,epoch,train_loss,val_macro_f,val_rmse"]
    for key, logs in outcome.epoch_logs.items():
        for entry in logs:
            lines.append(
                f"{key},{entry.epoch},{entry.train_loss!r},"
                f"{'' if entry.val_macro_f is None else repr(entry.val_macro_f)},"
                f"{'' if entry.val_rmse is None else repr(entry.val_rmse)}"
            )
    log_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    outputs.append(log_path)
    _write_run_record(
        out_dir,
        "train",
        {"manifest": str(args.manifest), "model": asdict(spec), "train": asdict(cfg),
         "test_fold": args.test_fold},
        {"seed": cfg.seed},
        outputs,
        started,
    )
    print(f"trained fold {args.test_fold}; artifacts in {out_dir}")
    return 0


def _predictions_path(target: str | Path) -> Path:
    target = Path(target)
    return target / "predictions.csv" if target.is_dir() else target


def cmd_compare(args: argparse.Namespace) -> int:
    started = time.time()
    try:
        preds_a, labels_a, _ = metrics.read_predictions_csv(_predictions_path(args.preds_a))
        preds_b, labels_b, _ = metrics.read_predictions_csv(_predictions_path(args.preds_b))
    except (OSError, KeyError, ValueError) as exc:
        return _fail(f"cannot read predictions: {exc}")
    for rec, row in labels_a.items():
        if rec in labels_b and not (labels_b[rec] == row).all():
            return _fail(f"label mismatch for recording {rec!r}")
    try:
        results = metrics.bootstrap_compare(
            preds_a, preds_b, labels_a,
            n_resamples=args.n, level=args.level, seed=args.seed or 0,
        )
    except ValueError as exc:
        return _fail(str(exc))
    sys.stdout.write(metrics.render_bootstrap_table(results))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        table = out_dir / "bootstrap.csv"
        metrics.write_bootstrap_csv(results, table)
        _write_run_record(
            out_dir,
            "compare",
            {"preds_a": str(args.preds_a), "preds_b": str(args.preds_b),
             "n": args.n, "level": args.level},
            {"seed": args.seed or 0},
            [table],
            started,
        )
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    try:
        report = metrics.read_report_csv(args.report)
    except (OSError, KeyError, ValueError) as exc:
        return _fail(f"cannot read report: {exc}")
    text = metrics.render_report(report, style=args.style)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="madrs-speech",
        description="Train and evaluate speech-based MADRS symptom detection models.",
    )
    parser.add_argument("--seed", type=int, default=None, help="override config seeds")
    parser.add_argument("--jobs", type=int, default=1, help="parallel workers (default 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="extract log-mel spectrograms into EMB1 files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", default=None, help="synth config file (defaults used if omitted)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("crossval", help="run speaker-independent cross-validation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model-config", required=True)
    p.add_argument("--train-config", default=None)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--val-fraction", type=float, default=0.10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("train", help="train one fold and save its checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model-config", required=True)
    p.add_argument("--train-config", default=None)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--test-fold", type=int, default=0)
    p.add_argument("--val-fraction", type=float, default=0.10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="bootstrap comparison of two prediction sets")
    p.add_argument("--preds-a", required=True)
    p.add_argument("--preds-b", required=True)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--level", type=float, default=95.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="render a saved report as a text table")
    p.add_argument("--report", required=True)
    p.add_argument("--style", choices=("table2", "table4"), default="table2")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
