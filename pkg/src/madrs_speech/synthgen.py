"""Deterministic synthetic datasets with a planted embedding-symptom signal.

Each symptom gets a fixed random unit direction per stream. A recording
whose speaker has the symptom present gets its frame means shifted by
signal_strength along that direction; white noise is added on top. MADRS
scores are drawn consistently with the binarization boundary: present
symptoms score uniform 2-6, absent ones 0-1, and the total is their sum.
Everything is a pure function of the config, so reruns are byte-identical.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dataset import N_SYMPTOMS, Recording, write_manifest
from .features import FeatureSequence, write_embedding_file
from .seeding import derive_seed

# Graded class imbalance, rarest for RApp and SuiT.
DEFAULT_PRIORS = (0.35, 0.45, 0.55, 0.45, 0.25, 0.45, 0.40, 0.35, 0.40, 0.25)


@dataclass(frozen=True)
class SynthConfig:
    n_speakers: int = 200
    recordings_per_speaker: int = 1
    seconds_per_recording: float = 240.0
    frame_hop_seconds: float = 0.5
    streams: tuple[tuple[str, int], ...] = (("emb", 32),)
    symptom_priors: tuple[float, ...] = DEFAULT_PRIORS
    signal_strength: float = 3.0
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_speakers < 1:
            raise ValueError(f"n_speakers must be >= 1, got {self.n_speakers}")
        if self.recordings_per_speaker < 1:
            raise ValueError(
                f"recordings_per_speaker must be >= 1, got {self.recordings_per_speaker}"
            )
        if self.seconds_per_recording <= 0:
            raise ValueError(
                f"seconds_per_recording must be positive, got {self.seconds_per_recording}"
            )
        if self.frame_hop_seconds <= 0:
            raise ValueError(f"frame_hop_seconds must be positive, got {self.frame_hop_seconds}")
        if len(self.symptom_priors) != N_SYMPTOMS:
            raise ValueError(f"expected {N_SYMPTOMS} symptom priors")
        for p in self.symptom_priors:
            if not 0.0 < p < 1.0:
                raise ValueError(f"symptom prior {p} outside (0, 1)")
        if not self.streams:
            raise ValueError("need at least one stream")
        for name, dim in self.streams:
            if dim < 1:
                raise ValueError(f"stream {name!r} dim must be >= 1, got {dim}")
        if self.signal_strength < 0:
            raise ValueError(f"signal_strength must be >= 0, got {self.signal_strength}")
        if self.noise_scale < 0:
            raise ValueError(f"noise_scale must be >= 0, got {self.noise_scale}")


def symptom_directions(cfg: SynthConfig, stream: str, dim: int) -> np.ndarray:
    """The fixed (n_symptoms, dim) unit directions planted in one stream."""
    rng = np.random.default_rng(derive_seed(cfg.seed, "directions", stream))
    raw = rng.standard_normal((N_SYMPTOMS, dim))
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def generate(cfg: SynthConfig, out_dir: str | Path) -> Path:
    """Write the manifest and all embedding files; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    directions = {
        name: symptom_directions(cfg, name, dim) for name, dim in cfg.streams
    }
    frames = int(round(cfg.seconds_per_recording / cfg.frame_hop_seconds))

    label_rng = np.random.default_rng(derive_seed(cfg.seed, "labels"))
    priors = np.asarray(cfg.symptom_priors)
    recordings = []
    for spk_idx in range(cfg.n_speakers):
        speaker = f"spk{spk_idx:04d}"
        present = label_rng.random(N_SYMPTOMS) < priors
        scores = np.where(
            present,
            label_rng.integers(2, 7, size=N_SYMPTOMS),
            label_rng.integers(0, 2, size=N_SYMPTOMS),
        )
        for rec_idx in range(cfg.recordings_per_speaker):
            rec_id = f"{speaker}_r{rec_idx}"
            feature_refs = {}
            for name, dim in cfg.streams:
                shift = cfg.signal_strength * (present @ directions[name])
                noise_rng = np.random.default_rng(
                    derive_seed(cfg.seed, "noise", name, rec_id)
                )
                values = shift + cfg.noise_scale * noise_rng.standard_normal((frames, dim))
                seq = FeatureSequence(name, values.astype(np.float32), cfg.frame_hop_seconds)
                rel_path = Path("emb") / name / f"{rec_id}.emb1"
                target = out_dir / rel_path
                target.parent.mkdir(parents=True, exist_ok=True)
                write_embedding_file(seq, target)
                feature_refs[name] = str(rel_path)
            recordings.append(
                Recording(
                    recording_id=rec_id,
                    speaker_id=speaker,
                    audio_ref=None,
                    feature_refs=feature_refs,
                    symptom_scores=tuple(int(s) for s in scores),
                    madrs_total=int(scores.sum()),
                )
            )
    manifest_path = out_dir / "manifest.csv"
    write_manifest(recordings, manifest_path)
    return manifest_path


def save_synth_config(cfg: SynthConfig, path: str | Path) -> None:
    parser = configparser.ConfigParser()
    parser["synth"] = {
        "n_speakers": str(cfg.n_speakers),
        "recordings_per_speaker": str(cfg.recordings_per_speaker),
        "seconds_per_recording": str(cfg.seconds_per_recording),
        "frame_hop_seconds": str(cfg.frame_hop_seconds),
        "symptom_priors": ", ".join(str(p) for p in cfg.symptom_priors),
        "signal_strength": str(cfg.signal_strength),
        "noise_scale": str(cfg.noise_scale),
        "seed": str(cfg.seed),
    }
    for name, dim in cfg.streams:
        parser[f"stream:{name}"] = {"dim": str(dim)}
    with Path(path).open("w", encoding="utf-8") as fh:
        parser.write(fh)


def load_synth_config(path: str | Path) -> SynthConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path, encoding="utf-8")
    if not read:
        raise FileNotFoundError(path)
    section = parser["synth"] if "synth" in parser else {}
    streams = []
    for name in parser.sections():
        if name.startswith("stream:"):
            streams.append((name.split(":", 1)[1], parser[name].getint("dim")))
    kwargs = {}
    if "symptom_priors" in section:
        kwargs["symptom_priors"] = tuple(
            float(tok) for tok in section["symptom_priors"].split(",") if tok.strip()
        )
    cfg = SynthConfig(
        n_speakers=int(section.get("n_speakers", 200)),
        recordings_per_speaker=int(section.get("recordings_per_speaker", 1)),
        seconds_per_recording=float(section.get("seconds_per_recording", 240.0)),
        frame_hop_seconds=float(section.get("frame_hop_seconds", 0.5)),
        streams=tuple(streams) if streams else (("emb", 32),),
        signal_strength=float(section.get("signal_strength", 3.0)),
        noise_scale=float(section.get("noise_scale", 1.0)),
        seed=int(section.get("seed", 0)),
        **kwargs,
    )
    return cfg


def with_seed(cfg: SynthConfig, seed: int) -> SynthConfig:
    return replace(cfg, seed=seed)
