"""Audio loading, log-mel spectrograms, fixed-length segmentation, feature files.

The spectrogram front end is pinned for reproducibility: 25 ms Hann
window, 10 ms hop, 512-point FFT, 80 triangular mel filters spanning
0-8000 Hz (HTK mel scale, unit peak), natural log with a 1e-10 floor.
Frame-level features move between tools in the EMB1 container, a small
little-endian binary format that round-trips matrices bit-exactly.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

AUDIO_RATE = 16000
WINDOW_SECONDS = 0.025
HOP_SECONDS = 0.010
N_FFT = 512
N_MELS = 80
MEL_FMIN = 0.0
MEL_FMAX = 8000.0
LOG_FLOOR = 1e-10
SEGMENT_SECONDS = 10.0

EMB1_MAGIC = b"EMB1"
EMB1_VERSION = 1
_EMB1_HEADER = struct.Struct("<4sIIId")


class AudioFormatError(ValueError):
    """Input audio does not satisfy the 16 kHz mono 16-bit PCM contract."""


class FeatureFormatError(ValueError):
    """A feature file is malformed; the message carries the byte offset."""


@dataclass(frozen=True)
class FeatureSequence:
    """A frames x dim matrix of feature vectors from one stream.

    ``frame_hop_seconds`` is the stride between consecutive frames; 0 marks
    a pre-pooled sequence with no temporal axis semantics. Values are
    stored float32 and frozen read-only so sequences can be shared across
    workers.
    """

    stream_name: str
    values: np.ndarray
    frame_hop_seconds: float

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise ValueError(f"feature values must be 2-D, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"feature matrix must be non-empty, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"stream {self.stream_name!r}: non-finite feature value")
        if self.frame_hop_seconds < 0:
            raise ValueError(f"frame_hop_seconds must be >= 0, got {self.frame_hop_seconds}")
        values = values.copy() if values.flags.writeable else values
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SegmentSet:
    """Time-ordered fixed-length segments cut from one recording's features."""

    recording_id: str
    segments: tuple[FeatureSequence, ...]

    def __post_init__(self) -> None:
        dims = {seg.dim for seg in self.segments}
        if len(dims) > 1:
            raise ValueError(f"segments have mixed dims {sorted(dims)}")


def load_audio(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a 16 kHz mono 16-bit PCM WAV file, scaled to [-1, 1)."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wav:
            channels = wav.getnchannels()
            sampwidth = wav.getsampwidth()
            rate = wav.getframerate()
            if channels != 1:
                raise AudioFormatError(f"{path}: expected mono audio, got {channels} channels")
            if sampwidth != 2:
                raise AudioFormatError(
                    f"{path}: expected 16-bit PCM, got sample width {sampwidth * 8} bits"
                )
            if rate != AUDIO_RATE:
                raise AudioFormatError(f"{path}: expected {AUDIO_RATE} Hz, got {rate} Hz")
            raw = wav.readframes(wav.getnframes())
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"{path}: not a readable PCM WAV file ({exc})") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    return samples, rate


def hz_to_mel(hz: np.ndarray | float) -> np.ndarray | float:
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel: np.ndarray | float) -> np.ndarray | float:
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=4)
def mel_filterbank(
    n_mels: int = N_MELS,
    n_fft: int = N_FFT,
    rate: int = AUDIO_RATE,
    fmin: float = MEL_FMIN,
    fmax: float = MEL_FMAX,
) -> np.ndarray:
    """Triangular mel filterbank, unit peak, shape (n_mels, n_fft//2 + 1)."""
    points = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bin_freqs = np.fft.rfftfreq(n_fft, d=1.0 / rate)
    weights = np.zeros((n_mels, bin_freqs.size))
    for j in range(n_mels):
        lo, center, hi = points[j], points[j + 1], points[j + 2]
        rising = (bin_freqs - lo) / (center - lo)
        falling = (hi - bin_freqs) / (hi - center)
        weights[j] = np.clip(np.minimum(rising, falling), 0.0, 1.0)
    weights.flags.writeable = False
    return weights


def mel_filter_centers() -> np.ndarray:
    """Center frequencies (Hz) of the default 80 mel filters."""
    points = mel_to_hz(np.linspace(hz_to_mel(MEL_FMIN), hz_to_mel(MEL_FMAX), N_MELS + 2))
    return np.asarray(points[1:-1])


def mel_spectrogram(samples: np.ndarray, rate: int) -> FeatureSequence:
    """80-band log-mel spectrogram of a 16 kHz waveform.

    Frames start at sample 0 with no padding, so a signal of n samples
    yields 1 + (n - window) // hop frames.
    """
    if rate != AUDIO_RATE:
        raise AudioFormatError(f"expected {AUDIO_RATE} Hz input, got {rate} Hz")
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    win = int(round(WINDOW_SECONDS * rate))
    hop = int(round(HOP_SECONDS * rate))
    if samples.size < win:
        raise ValueError(f"input of {samples.size} samples is shorter than one {win}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(samples, win)[::hop]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)
    spectrum = np.fft.rfft(frames * window, n=N_FFT, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    mel = power @ mel_filterbank().T
    logmel = np.log(np.maximum(mel, LOG_FLOOR))
    return FeatureSequence("spectro", logmel.astype(np.float32), HOP_SECONDS)


def segment_features(
    seq: FeatureSequence,
    segment_seconds: float = SEGMENT_SECONDS,
    recording_id: str = "",
) -> SegmentSet:
    """Cut a frame sequence into consecutive fixed-length segments.

    A trailing remainder of at least half a segment is kept, padded to
    full length by repeating its final frame; shorter remainders are
    dropped.
    """
    if segment_seconds <= 0:
        raise ValueError(f"segment_seconds must be positive, got {segment_seconds}")
    if seq.frame_hop_seconds <= 0:
        raise ValueError("cannot segment a sequence without a positive frame hop")
    frames_per_segment = int(round(segment_seconds / seq.frame_hop_seconds))
    if frames_per_segment < 1:
        raise ValueError(
            f"segment of {segment_seconds}s spans no frames at hop {seq.frame_hop_seconds}s"
        )
    n_full = seq.frames // frames_per_segment
    remainder = seq.frames - n_full * frames_per_segment

    segments = []
    for i in range(n_full):
        chunk = seq.values[i * frames_per_segment:(i + 1) * frames_per_segment]
        segments.append(FeatureSequence(seq.stream_name, chunk, seq.frame_hop_seconds))
    if remainder * 2 >= frames_per_segment:
        tail = seq.values[n_full * frames_per_segment:]
        pad = np.repeat(tail[-1:], frames_per_segment - remainder, axis=0)
        padded = np.concatenate([tail, pad], axis=0)
        segments.append(FeatureSequence(seq.stream_name, padded, seq.frame_hop_seconds))
    return SegmentSet(recording_id=recording_id, segments=tuple(segments))


def write_embedding_file(seq: FeatureSequence, path: str | Path) -> None:
    """Serialize a FeatureSequence to the EMB1 container."""
    path = Path(path)
    header = _EMB1_HEADER.pack(
        EMB1_MAGIC, EMB1_VERSION, seq.dim, seq.frames, float(seq.frame_hop_seconds)
    )
    payload = np.ascontiguousarray(seq.values, dtype="<f4").tobytes()
    path.write_bytes(header + payload)


def read_embedding_file(path: str | Path, stream_name: str | None = None) -> FeatureSequence:
    """Deserialize an EMB1 file; format errors name the offending byte offset."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _EMB1_HEADER.size:
        raise FeatureFormatError(
            f"{path}: truncated header, file ends at byte {len(data)} of {_EMB1_HEADER.size}"
        )
    magic, version, dim, frames, hop = _EMB1_HEADER.unpack_from(data, 0)
    if magic != EMB1_MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r} at byte 0")
    if version != EMB1_VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version} at byte 4")
    if dim < 1 or frames < 1:
        raise FeatureFormatError(f"{path}: invalid shape {frames}x{dim} in header at byte 8")
    expected = _EMB1_HEADER.size + 4 * dim * frames
    if len(data) < expected:
        raise FeatureFormatError(
            f"{path}: truncated payload, file ends at byte {len(data)} of {expected}"
        )
    if len(data) > expected:
        raise FeatureFormatError(f"{path}: {len(data) - expected} trailing bytes at byte {expected}")
    values = np.frombuffer(data, dtype="<f4", offset=_EMB1_HEADER.size).reshape(frames, dim)
    finite = np.isfinite(values)
    if not finite.all():
        bad = int(np.flatnonzero(~finite.ravel())[0])
        raise FeatureFormatError(
            f"{path}: non-finite value at byte {_EMB1_HEADER.size + 4 * bad}"
        )
    name = stream_name if stream_name is not None else path.stem
    return FeatureSequence(name, values, hop)


def read_feature_table(
    path: str | Path,
    expected_dim: int,
    stream_name: str | None = None,
    frame_hop_seconds: float = HOP_SECONDS,
    delimiter: str = ",",
) -> FeatureSequence:
    """Read a headerless numeric table (one frame per row) from external tools."""
    path = Path(path)
    rows: list[Sequence[float]] = []
    with path.open(encoding="utf-8") as fh:
        for row_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(delimiter)
            if len(cells) != expected_dim:
                raise FeatureFormatError(
                    f"{path} row {row_no}: expected {expected_dim} columns, got {len(cells)}"
                )
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                raise FeatureFormatError(f"{path} row {row_no}: non-numeric cell") from None
    if not rows:
        raise FeatureFormatError(f"{path}: empty feature table")
    name = stream_name if stream_name is not None else path.stem
    return FeatureSequence(name, np.asarray(rows, dtype=np.float32), frame_hop_seconds)
