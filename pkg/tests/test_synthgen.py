import hashlib

import numpy as np
import pytest

from madrs_speech import synthgen
from madrs_speech.dataset import PRESENT_MIN_SCORE, load_manifest
from madrs_speech.features import read_embedding_file
from madrs_speech.models import average_pool_time


def tree_hash(root):
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            digest.update(path.name.encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


def test_same_seed_byte_identical(tmp_path):
    cfg = synthgen.SynthConfig(n_speakers=8, seconds_per_recording=20.0, seed=3)
    a = tmp_path / "a"
    b = tmp_path / "b"
    synthgen.generate(cfg, a)
    synthgen.generate(cfg, b)
    assert tree_hash(a) == tree_hash(b)


def test_different_seed_differs(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    synthgen.generate(synthgen.SynthConfig(n_speakers=8, seconds_per_recording=20.0, seed=3), a)
    synthgen.generate(synthgen.SynthConfig(n_speakers=8, seconds_per_recording=20.0, seed=4), b)
    assert tree_hash(a) != tree_hash(b)


def test_scores_respect_binarization_boundary(tmp_path):
    cfg = synthgen.SynthConfig(n_speakers=40, seconds_per_recording=10.0, seed=6)
    recs = load_manifest(synthgen.generate(cfg, tmp_path))
    for rec in recs:
        assert rec.madrs_total == sum(rec.symptom_scores)
        for score, present in zip(rec.symptom_scores, rec.labels.present):
            assert present == (score >= PRESENT_MIN_SCORE)


def test_priors_within_binomial_bounds(tmp_path):
    cfg = synthgen.SynthConfig(
        n_speakers=400, seconds_per_recording=10.0, streams=(("emb", 4),), seed=7
    )
    recs = load_manifest(synthgen.generate(cfg, tmp_path))
    present = np.array([r.labels.as_array() for r in recs])
    rates = present.mean(axis=0)
    for rate, prior in zip(rates, cfg.symptom_priors):
        sigma = np.sqrt(prior * (1 - prior) / len(recs))
        assert abs(rate - prior) <= 3 * sigma


def test_planted_signal_separates_means(tmp_path):
    cfg = synthgen.SynthConfig(
        n_speakers=60, seconds_per_recording=30.0, streams=(("emb", 16),),
        signal_strength=3.0, noise_scale=1.0, seed=8,
    )
    recs = load_manifest(synthgen.generate(cfg, tmp_path))
    directions = synthgen.symptom_directions(cfg, "emb", 16)
    pooled, present = [], []
    for rec in recs:
        seq = read_embedding_file(tmp_path / rec.feature_refs["emb"], stream_name="emb")
        pooled.append(average_pool_time(seq))
        present.append(rec.labels.as_array())
    pooled = np.array(pooled)
    present = np.array(present)
    for i in range(10):
        proj = pooled @ directions[i]
        gap = proj[present[:, i] == 1].mean() - proj[present[:, i] == 0].mean()
        assert gap == pytest.approx(cfg.signal_strength, abs=1.0)


def test_null_signal_has_no_separation(tmp_path):
    cfg = synthgen.SynthConfig(
        n_speakers=200, seconds_per_recording=10.0, streams=(("emb", 8),),
        signal_strength=0.0, seed=9,
    )
    recs = load_manifest(synthgen.generate(cfg, tmp_path))
    directions = synthgen.symptom_directions(cfg, "emb", 8)
    pooled = []
    present = []
    for rec in recs:
        seq = read_embedding_file(tmp_path / rec.feature_refs["emb"], stream_name="emb")
        pooled.append(average_pool_time(seq))
        present.append(rec.labels.as_array())
    pooled = np.array(pooled)
    present = np.array(present)
    for i in range(10):
        proj = pooled @ directions[i]
        gap = proj[present[:, i] == 1].mean() - proj[present[:, i] == 0].mean()
        assert abs(gap) < 0.2


def test_invalid_prior_rejected():
    with pytest.raises(ValueError, match="prior"):
        synthgen.SynthConfig(symptom_priors=(1.5,) + (0.4,) * 9)


def test_config_round_trip(tmp_path):
    cfg = synthgen.SynthConfig(
        n_speakers=33,
        seconds_per_recording=45.0,
        frame_hop_seconds=0.25,
        streams=(("a", 12), ("b", 6)),
        symptom_priors=tuple(np.linspace(0.2, 0.6, 10).round(3)),
        signal_strength=2.0,
        noise_scale=1.5,
        seed=123,
    )
    path = tmp_path / "synth.ini"
    synthgen.save_synth_config(cfg, path)
    assert synthgen.load_synth_config(path) == cfg
