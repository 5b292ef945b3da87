import numpy as np
import pytest
from hypothesis import given, strategies as st

from madrs_speech.dataset import (
    ManifestError,
    Recording,
    binarize,
    load_fold_plan,
    load_manifest,
    make_folds,
    split_for_fold,
    write_fold_plan,
    write_manifest,
)

from conftest import make_recording

HEADER = "recording_id,speaker_id,audio_path," + ",".join(f"s{i}" for i in range(1, 11)) + ",madrs_total"


def write_rows(path, rows, header=HEADER):
    path.write_text("\n".join([header] + rows) + "\n", encoding="utf-8")


class TestLoadManifest:
    def test_direct_field_mapping(self, tmp_path):
        p = tmp_path / "m.csv"
        write_rows(p, ["r1,spkA,audio/r1.wav,2,2,1,0,0,1,2,2,2,4,16"])
        (rec,) = load_manifest(p)
        assert rec.recording_id == "r1"
        assert rec.speaker_id == "spkA"
        assert rec.audio_ref == "audio/r1.wav"
        assert rec.symptom_scores == (2, 2, 1, 0, 0, 1, 2, 2, 2, 4)
        assert rec.madrs_total == 16

    def test_score_out_of_range_names_column(self, tmp_path):
        p = tmp_path / "m.csv"
        write_rows(p, ["r1,spkA,,2,2,1,0,0,1,7,2,2,4,21"])
        with pytest.raises(ManifestError, match=r"row 2.*s7"):
            load_manifest(p)

    def test_duplicate_recording_id(self, tmp_path):
        p = tmp_path / "m.csv"
        write_rows(p, ["r1,spkA,,0,0,0,0,0,0,0,0,0,0,0", "r1,spkB,,0,0,0,0,0,0,0,0,0,0,0"])
        with pytest.raises(ManifestError, match="duplicate"):
            load_manifest(p)

    def test_missing_column(self, tmp_path):
        p = tmp_path / "m.csv"
        header = HEADER.replace(",madrs_total", "")
        write_rows(p, ["r1,spkA,,0,0,0,0,0,0,0,0,0,0"], header=header)
        with pytest.raises(ManifestError, match="madrs_total"):
            load_manifest(p)

    def test_505_distinct_speakers(self, tmp_path):
        p = tmp_path / "m.csv"
        rows = [f"r{i},spk{i},,0,0,0,0,0,0,0,0,0,0,0" for i in range(505)]
        write_rows(p, rows)
        recs = load_manifest(p)
        assert len(recs) == 505
        assert len({r.speaker_id for r in recs}) == 505

    def test_total_mismatch_warns(self, tmp_path):
        p = tmp_path / "m.csv"
        write_rows(p, ["r1,spkA,,2,2,1,0,0,1,2,2,2,4,20"])
        with pytest.warns(UserWarning, match="madrs_total"):
            (rec,) = load_manifest(p)
        assert rec.madrs_total == 20

    def test_embedding_columns(self, tmp_path):
        p = tmp_path / "m.csv"
        header = HEADER + ",emb:hubert,emb:wavlm"
        write_rows(p, ["r1,spkA,,0,0,0,0,0,0,0,0,0,0,0,emb/h/r1.emb1,"], header=header)
        (rec,) = load_manifest(p)
        assert rec.feature_refs == {"hubert": "emb/h/r1.emb1"}

    def test_round_trip_identity(self, tmp_path, tiny_recordings):
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        write_manifest(tiny_recordings, p1)
        loaded = load_manifest(p1)
        assert loaded == tiny_recordings
        write_manifest(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestBinarize:
    def test_score_one_is_absent(self):
        labels = binarize((1,) * 10)
        assert labels.present == (False,) * 10

    def test_score_two_is_present(self):
        labels = binarize((2,) * 10)
        assert labels.present == (True,) * 10

    def test_all_zero(self):
        assert binarize((0,) * 10).present == (False,) * 10

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            binarize((7,) + (0,) * 9)

    @given(st.lists(st.integers(0, 6), min_size=10, max_size=10), st.integers(0, 9))
    def test_monotone_in_each_score(self, scores, idx):
        before = binarize(scores).present
        raised = list(scores)
        raised[idx] = min(6, raised[idx] + 1)
        after = binarize(raised).present
        for b, a in zip(before, after):
            assert not (b and not a)


class TestMakeFolds:
    def test_505_speakers_five_folds(self):
        recs = [make_recording(i) for i in range(505)]
        plan = make_folds(recs, k=5, seed=1)
        sizes = [len(plan.speakers_in_fold(f)) for f in range(5)]
        assert sizes == [101] * 5

    def test_ten_speakers_five_folds(self):
        recs = [make_recording(i) for i in range(10)]
        plan = make_folds(recs, k=5, seed=1)
        assert sorted(len(plan.speakers_in_fold(f)) for f in range(5)) == [2] * 5

    def test_deterministic(self):
        recs = [make_recording(i) for i in range(23)]
        assert make_folds(recs, 5, seed=7).assignment == make_folds(recs, 5, seed=7).assignment

    def test_too_few_speakers(self):
        recs = [make_recording(i) for i in range(3)]
        with pytest.raises(ValueError, match="speakers"):
            make_folds(recs, k=5, seed=0)

    @given(st.integers(5, 60), st.integers(2, 5), st.integers(0, 100))
    def test_partition_properties(self, n_speakers, k, seed):
        recs = [make_recording(i) for i in range(n_speakers)]
        plan = make_folds(recs, k=k, seed=seed)
        folds = [set(plan.speakers_in_fold(f)) for f in range(k)]
        for i in range(k):
            for j in range(i + 1, k):
                assert not folds[i] & folds[j]
        assert set().union(*folds) == {r.speaker_id for r in recs}
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1


class TestSplitForFold:
    def _recs(self, n_speakers=25, per_speaker=2):
        recs = []
        for s in range(n_speakers):
            for j in range(per_speaker):
                recs.append(
                    make_recording(s * per_speaker + j, speaker=f"spk{s:03d}")
                )
        return recs

    def test_test_fold_is_exact(self):
        recs = self._recs()
        plan = make_folds(recs, k=5, seed=3)
        split = split_for_fold(recs, plan, test_fold=0, val_fraction=0.1, seed=0)
        by_id = {r.recording_id: r for r in recs}
        test_speakers = {by_id[i].speaker_id for i in split.test_ids}
        assert test_speakers == set(plan.speakers_in_fold(0))

    def test_val_size_whole_speakers(self):
        recs = self._recs(n_speakers=40, per_speaker=5)
        plan = make_folds(recs, k=5, seed=3)
        split = split_for_fold(recs, plan, test_fold=1, val_fraction=0.10, seed=4)
        by_id = {r.recording_id: r for r in recs}
        n_train_pool = len(split.train_ids) + len(split.val_ids)
        assert len(split.val_ids) >= 0.10 * n_train_pool
        # whole speakers: every val speaker contributes all their non-test recordings
        val_speakers = {by_id[i].speaker_id for i in split.val_ids}
        train_speakers = {by_id[i].speaker_id for i in split.train_ids}
        assert not val_speakers & train_speakers

    def test_pairwise_disjoint_speakers(self):
        recs = self._recs()
        plan = make_folds(recs, k=5, seed=3)
        split = split_for_fold(recs, plan, 2, 0.1, seed=9)
        by_id = {r.recording_id: r for r in recs}
        groups = [
            {by_id[i].speaker_id for i in ids}
            for ids in (split.train_ids, split.val_ids, split.test_ids)
        ]
        assert not groups[0] & groups[1]
        assert not groups[0] & groups[2]
        assert not groups[1] & groups[2]

    def test_val_fraction_bounds(self):
        recs = self._recs()
        plan = make_folds(recs, k=5, seed=3)
        for bad in (0.0, 0.6, -0.1):
            with pytest.raises(ValueError, match="val_fraction"):
                split_for_fold(recs, plan, 0, bad, seed=0)

    def test_bad_test_fold(self):
        recs = self._recs()
        plan = make_folds(recs, k=5, seed=3)
        with pytest.raises(ValueError, match="test_fold"):
            split_for_fold(recs, plan, 5, 0.1, seed=0)


class TestFoldPlanIO:
    def test_round_trip(self, tmp_path):
        recs = [make_recording(i) for i in range(17)]
        plan = make_folds(recs, k=4, seed=11)
        path = tmp_path / "folds.csv"
        write_fold_plan(plan, path)
        loaded = load_fold_plan(path)
        assert loaded.assignment == dict(plan.assignment)
        assert loaded.seed == plan.seed
        assert loaded.k == plan.k
