"""Recordings, clinical labels, manifest files, and speaker-independent folds.

A recording is one speech sample from one participant, scored on the ten
MADRS symptoms (0-6 each) plus a 0-60 total. Labels for classification are
the binarized symptoms: a score of 0-1 means absent, 2-6 means present.
Cross-validation folds partition *speakers*, never recordings, so no
speaker contributes to more than one fold.
"""

from __future__ import annotations

import csv
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .seeding import derive_seed

SYMPTOMS = ("ASad", "RSad", "InTen", "RSlp", "RApp", "ConD", "Lass", "IFeel", "PesT", "SuiT")
N_SYMPTOMS = len(SYMPTOMS)
SCORE_MIN = 0
SCORE_MAX = 6
TOTAL_MIN = 0
TOTAL_MAX = 60
PRESENT_MIN_SCORE = 2

_SCORE_COLUMNS = tuple(f"s{i + 1}" for i in range(N_SYMPTOMS))
_BASE_COLUMNS = ("recording_id", "speaker_id", "audio_path") + _SCORE_COLUMNS + ("madrs_total",)
_EMB_PREFIX = "emb:"


class ManifestError(ValueError):
    """A manifest file or row violates the schema."""


@dataclass(frozen=True)
class Recording:
    """One speech sample with its clinical scores and feature-file references."""

    recording_id: str
    speaker_id: str
    symptom_scores: tuple[int, ...]
    madrs_total: int
    audio_ref: str | None = None
    feature_refs: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.symptom_scores) != N_SYMPTOMS:
            raise ValueError(
                f"recording {self.recording_id!r}: expected {N_SYMPTOMS} symptom scores, "
                f"got {len(self.symptom_scores)}"
            )
        for abbr, score in zip(SYMPTOMS, self.symptom_scores):
            if not SCORE_MIN <= int(score) <= SCORE_MAX:
                raise ValueError(
                    f"recording {self.recording_id!r}: {abbr} score {score} outside "
                    f"[{SCORE_MIN}, {SCORE_MAX}]"
                )
        if not TOTAL_MIN <= int(self.madrs_total) <= TOTAL_MAX:
            raise ValueError(
                f"recording {self.recording_id!r}: madrs_total {self.madrs_total} outside "
                f"[{TOTAL_MIN}, {TOTAL_MAX}]"
            )
        score_sum = sum(self.symptom_scores)
        if score_sum != self.madrs_total:
            # Clinician-entered totals are treated as authoritative, so a
            # mismatch with the per-symptom sum is reported but accepted.
            warnings.warn(
                f"recording {self.recording_id!r}: madrs_total {self.madrs_total} "
                f"!= sum of symptom scores {score_sum}",
                stacklevel=2,
            )

    @property
    def labels(self) -> "BinaryLabels":
        return binarize(self.symptom_scores)


@dataclass(frozen=True)
class BinaryLabels:
    """Presence flags for the ten symptoms, in canonical symptom order."""

    present: tuple[bool, ...]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.present, dtype=np.int8)


def binarize(scores: Sequence[int]) -> BinaryLabels:
    """Map 0-6 symptom scores to absent (0-1) / present (2-6) flags."""
    if len(scores) != N_SYMPTOMS:
        raise ValueError(f"expected {N_SYMPTOMS} scores, got {len(scores)}")
    for abbr, score in zip(SYMPTOMS, scores):
        if not SCORE_MIN <= int(score) <= SCORE_MAX:
            raise ValueError(f"{abbr} score {score} outside [{SCORE_MIN}, {SCORE_MAX}]")
    return BinaryLabels(tuple(int(s) >= PRESENT_MIN_SCORE for s in scores))


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of every speaker to exactly one of k folds."""

    k: int
    assignment: Mapping[str, int]
    seed: int

    def __post_init__(self) -> None:
        if self.k < 2:
            raise ValueError(f"fold count must be >= 2, got {self.k}")
        sizes = [0] * self.k
        for speaker, fold in self.assignment.items():
            if not 0 <= fold < self.k:
                raise ValueError(f"speaker {speaker!r} assigned to fold {fold} outside [0, {self.k})")
            sizes[fold] += 1
        if sizes and max(sizes) - min(sizes) > 1:
            raise ValueError(f"fold sizes {sizes} differ by more than one speaker")

    def speakers_in_fold(self, fold: int) -> list[str]:
        return [s for s, f in self.assignment.items() if f == fold]


@dataclass(frozen=True)
class SplitView:
    """Disjoint train/validation/test recording ids for one fold."""

    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


def load_manifest(path: str | Path) -> list[Recording]:
    """Read a manifest file, validating every row.

    Raises ManifestError naming the offending row and column on any
    schema violation.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest") from None
        col_index = {name: i for i, name in enumerate(header)}
        for required in _BASE_COLUMNS:
            if required not in col_index:
                raise ManifestError(f"{path}: missing column {required!r}")
        emb_columns = [c for c in header if c.startswith(_EMB_PREFIX)]

        recordings: list[Recording] = []
        seen_ids: set[str] = set()
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ManifestError(f"{path} row {row_no}: expected {len(header)} cells, got {len(row)}")
            cells = {name: row[i] for name, i in col_index.items()}
            rec_id = cells["recording_id"]
            if not rec_id:
                raise ManifestError(f"{path} row {row_no}: empty recording_id")
            if rec_id in seen_ids:
                raise ManifestError(f"{path} row {row_no}: duplicate recording_id {rec_id!r}")
            seen_ids.add(rec_id)
            scores = []
            for col in _SCORE_COLUMNS:
                score = _parse_int(cells[col], path, row_no, col)
                if not SCORE_MIN <= score <= SCORE_MAX:
                    raise ManifestError(
                        f"{path} row {row_no}: column {col}: score {score} outside "
                        f"[{SCORE_MIN}, {SCORE_MAX}]"
                    )
                scores.append(score)
            total = _parse_int(cells["madrs_total"], path, row_no, "madrs_total")
            if not TOTAL_MIN <= total <= TOTAL_MAX:
                raise ManifestError(
                    f"{path} row {row_no}: column madrs_total: {total} outside "
                    f"[{TOTAL_MIN}, {TOTAL_MAX}]"
                )
            feature_refs = {
                col[len(_EMB_PREFIX):]: cells[col] for col in emb_columns if cells[col]
            }
            recordings.append(
                Recording(
                    recording_id=rec_id,
                    speaker_id=cells["speaker_id"],
                    audio_ref=cells["audio_path"] or None,
                    feature_refs=feature_refs,
                    symptom_scores=tuple(scores),
                    madrs_total=total,
                )
            )
    return recordings


def write_manifest(recordings: Iterable[Recording], path: str | Path) -> None:
    """Write recordings back to the manifest format (inverse of load_manifest)."""
    recordings = list(recordings)
    streams: list[str] = []
    for rec in recordings:
        for name in rec.feature_refs:
            if name not in streams:
                streams.append(name)
    header = list(_BASE_COLUMNS) + [f"{_EMB_PREFIX}{s}" for s in streams]
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in recordings:
            row = [rec.recording_id, rec.speaker_id, rec.audio_ref or ""]
            row += [str(s) for s in rec.symptom_scores]
            row.append(str(rec.madrs_total))
            row += [rec.feature_refs.get(s, "") for s in streams]
            writer.writerow(row)


def _parse_int(text: str, path: Path, row_no: int, col: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ManifestError(f"{path} row {row_no}: column {col}: {text!r} is not an integer") from None


def make_folds(recordings: Sequence[Recording], k: int = 5, seed: int = 0) -> FoldPlan:
    """Deal speakers into k folds: seeded shuffle, then round-robin.

    Speakers are sorted before shuffling so the plan depends only on the
    speaker set and the seed, not on manifest row order.
    """
    if k < 2:
        raise ValueError(f"fold count must be >= 2, got {k}")
    speakers = sorted({rec.speaker_id for rec in recordings})
    if len(speakers) < k:
        raise ValueError(f"need at least {k} distinct speakers for {k} folds, got {len(speakers)}")
    rng = np.random.default_rng(derive_seed(seed, "fold-shuffle"))
    order = rng.permutation(len(speakers))
    assignment = {speakers[j]: i % k for i, j in enumerate(order)}
    return FoldPlan(k=k, assignment=assignment, seed=seed)


def split_for_fold(
    recordings: Sequence[Recording],
    plan: FoldPlan,
    test_fold: int,
    val_fraction: float = 0.10,
    seed: int = 0,
) -> SplitView:
    """Build the train/val/test recording split for one test fold.

    The test set is every recording of the test fold's speakers. The
    validation set is sampled from the remaining speakers *by whole
    speaker*, adding speakers until their recordings reach at least
    ``val_fraction`` of the non-test recordings.
    """
    if not 0 <= test_fold < plan.k:
        raise ValueError(f"test_fold {test_fold} outside [0, {plan.k})")
    if not 0.0 < val_fraction <= 0.5:
        raise ValueError(f"val_fraction {val_fraction} outside (0, 0.5]")
    for rec in recordings:
        if rec.speaker_id not in plan.assignment:
            raise ValueError(f"speaker {rec.speaker_id!r} missing from fold plan")

    by_speaker: dict[str, list[str]] = {}
    for rec in recordings:
        by_speaker.setdefault(rec.speaker_id, []).append(rec.recording_id)

    test_speakers = {s for s in by_speaker if plan.assignment[s] == test_fold}
    pool = sorted(s for s in by_speaker if s not in test_speakers)
    n_pool_recordings = sum(len(by_speaker[s]) for s in pool)
    target = val_fraction * n_pool_recordings

    rng = np.random.default_rng(derive_seed(seed, "val-sample", test_fold))
    order = rng.permutation(len(pool))
    val_speakers: set[str] = set()
    val_count = 0
    for j in order:
        if val_count >= target:
            break
        val_speakers.add(pool[j])
        val_count += len(by_speaker[pool[j]])

    train_ids, val_ids, test_ids = [], [], []
    for rec in recordings:
        if rec.speaker_id in test_speakers:
            test_ids.append(rec.recording_id)
        elif rec.speaker_id in val_speakers:
            val_ids.append(rec.recording_id)
        else:
            train_ids.append(rec.recording_id)
    if not train_ids:
        raise ValueError("validation sampling consumed every training speaker")
    return SplitView(tuple(train_ids), tuple(val_ids), tuple(test_ids))


def write_fold_plan(plan: FoldPlan, path: str | Path) -> None:
    path = Path(path)
    lines = [f"# seed={plan.seed}"]
    lines += [f"{speaker},{fold}" for speaker, fold in sorted(plan.assignment.items())]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_fold_plan(path: str | Path) -> FoldPlan:
    path = Path(path)
    seed = 0
    assignment: dict[str, int] = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            match = re.search(r"seed=(-?\d+)", line)
            if match:
                seed = int(match.group(1))
            continue
        try:
            speaker, fold_text = line.split(",")
            assignment[speaker] = int(fold_text)
        except ValueError:
            raise ManifestError(f"{path} line {line_no}: malformed fold row {line!r}") from None
    if not assignment:
        raise ManifestError(f"{path}: no fold assignments found")
    k = max(assignment.values()) + 1
    return FoldPlan(k=k, assignment=assignment, seed=seed)
