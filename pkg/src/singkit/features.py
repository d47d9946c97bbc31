"""Controlling embeddings: content PPG, speaker identity, pitch contour.

The three streams share the 10 ms frame grid of `audio.FrameSpec`, so for
any waveform the content, pitch, and mel frame counts agree exactly.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from weakref import WeakKeyDictionary

import numpy as np

from . import container
from .adapters import CONTENT_SUBSAMPLE, SPEAKER_DIM
from .audio import FrameSpec, Waveform
from .errors import (
    DegenerateAverageError,
    EmptyInputError,
    EncoderBackendError,
    InsufficientAudioError,
    MisalignmentError,
)

MIN_SPEAKER_AUDIO_S = 0.5
PITCH_MIN_HZ = 50.0
PITCH_MAX_HZ = 1100.0
_UNIT_NORM_TOL = 1e-6

_adapter_locks: "WeakKeyDictionary" = WeakKeyDictionary()
_locks_guard = threading.Lock()


def _serialize_if_needed(adapter):
    """Per-adapter lock for adapters that declare thread_safe=False."""
    if getattr(adapter, "thread_safe", False):
        import contextlib

        return contextlib.nullcontext()
    with _locks_guard:
        lock = _adapter_locks.get(adapter)
        if lock is None:
            lock = threading.Lock()
            _adapter_locks[adapter] = lock
    return lock


@dataclass(frozen=True)
class ContentPPG:
    """T x D content matrix; rows are distributions only when normalized."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1:
            raise EmptyInputError("content matrix must be T x D with T >= 1")
        if not np.all(np.isfinite(values)):
            raise EmptyInputError("content entries must be finite")
        if self.normalized:
            if values.min() < -1e-12:
                raise EmptyInputError("normalized rows must be non-negative")
            sums = values.sum(axis=1)
            if np.any(np.abs(sums - 1.0) > 1e-4):
                raise EmptyInputError("normalized rows must sum to 1")
        object.__setattr__(self, "values", values)

    @property
    def num_frames(self) -> int:
        return int(self.values.shape[0])

    def softmaxed(self) -> "ContentPPG":
        """Row-softmax view of raw encoder activations."""
        shifted = self.values - self.values.max(axis=1, keepdims=True)
        expd = np.exp(shifted)
        return ContentPPG(expd / expd.sum(axis=1, keepdims=True), normalized=True)


@dataclass(frozen=True)
class SpeakerEmbedding:
    """256-dim identity vector: unit norm, or all-zero in speaker-dependent mode."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.size != SPEAKER_DIM:
            raise EmptyInputError(f"speaker embedding must have {SPEAKER_DIM} dims")
        if not np.all(np.isfinite(values)):
            raise EmptyInputError("speaker embedding must be finite")
        norm = float(np.linalg.norm(values))
        if norm != 0.0 and abs(norm - 1.0) > _UNIT_NORM_TOL:
            raise EmptyInputError("speaker embedding must be unit-norm or all-zero")
        object.__setattr__(self, "values", values)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)

    @classmethod
    def zero(cls) -> "SpeakerEmbedding":
        return cls(np.zeros(SPEAKER_DIM))

    @classmethod
    def from_raw(cls, values: np.ndarray) -> "SpeakerEmbedding":
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        norm = float(np.linalg.norm(values))
        if norm < 1e-12:
            raise DegenerateAverageError("cannot normalize a near-zero vector")
        return cls(values / norm)


@dataclass(frozen=True)
class PitchContour:
    """Per-frame f0 (Hz); 0 encodes unvoiced."""

    f0_hz: np.ndarray

    def __post_init__(self):
        f0 = np.asarray(self.f0_hz, dtype=np.float64).reshape(-1)
        if f0.size < 1:
            raise EmptyInputError("pitch contour must have at least one frame")
        if not np.all(np.isfinite(f0)):
            raise EmptyInputError("pitch values must be finite")
        voiced = f0 > 0
        if np.any((f0 < 0)) or np.any(voiced & ((f0 < PITCH_MIN_HZ) | (f0 > PITCH_MAX_HZ))):
            raise EmptyInputError(
                f"voiced pitch must lie in [{PITCH_MIN_HZ}, {PITCH_MAX_HZ}] Hz")
        object.__setattr__(self, "f0_hz", f0)

    @property
    def num_frames(self) -> int:
        return int(self.f0_hz.size)

    @property
    def voiced_mask(self) -> np.ndarray:
        return self.f0_hz > 0


@dataclass(frozen=True)
class EmbeddingBundle:
    """Frame-aligned (content, speaker, pitch) triple driving the decoder."""

    content: ContentPPG
    speaker: SpeakerEmbedding
    pitch: PitchContour

    def __post_init__(self):
        if self.content.num_frames != self.pitch.num_frames:
            raise MisalignmentError(
                f"content has {self.content.num_frames} frames, "
                f"pitch has {self.pitch.num_frames}")

    @property
    def num_frames(self) -> int:
        return self.content.num_frames


def extract_content(wave: Waveform, adapter) -> ContentPPG:
    """Adapter content frames, repeat-upsampled x3 onto the 10 ms grid."""
    total_frames = FrameSpec(sample_rate_hz=wave.sample_rate_hz).frame_count(wave.num_samples)
    with _serialize_if_needed(adapter):
        try:
            coarse = np.asarray(adapter.encode(wave), dtype=np.float64)
        except Exception as exc:
            raise EncoderBackendError(
                f"content adapter '{adapter.name}' failed: {exc}",
                adapter=adapter.name, version=getattr(adapter, "version", "")) from exc
    if coarse.ndim != 2 or coarse.shape[0] < 1:
        raise EncoderBackendError(
            f"content adapter '{adapter.name}' returned a bad shape",
            adapter=adapter.name)
    fine = np.repeat(coarse, CONTENT_SUBSAMPLE, axis=0)
    if fine.shape[0] >= total_frames:
        fine = fine[:total_frames]
    else:
        pad = np.repeat(fine[-1:], total_frames - fine.shape[0], axis=0)
        fine = np.concatenate([fine, pad], axis=0)
    return ContentPPG(fine, normalized=False)


def extract_speaker(wave: Waveform, adapter) -> SpeakerEmbedding:
    """Single identity vector per utterance, L2-normalized here."""
    if wave.duration_s < MIN_SPEAKER_AUDIO_S:
        raise InsufficientAudioError(
            f"need >= {MIN_SPEAKER_AUDIO_S}s of audio, got {wave.duration_s:.3f}s")
    with _serialize_if_needed(adapter):
        try:
            raw = np.asarray(adapter.encode(wave), dtype=np.float64).reshape(-1)
        except Exception as exc:
            raise EncoderBackendError(
                f"speaker adapter '{adapter.name}' failed: {exc}",
                adapter=adapter.name, version=getattr(adapter, "version", "")) from exc
    norm = float(np.linalg.norm(raw))
    if raw.size != SPEAKER_DIM or norm < 1e-12:
        raise EncoderBackendError(
            f"speaker adapter '{adapter.name}' returned a degenerate vector",
            adapter=adapter.name)
    return SpeakerEmbedding(raw / norm)


def average_speaker(embeddings: list[SpeakerEmbedding]) -> SpeakerEmbedding:
    """Arithmetic mean of utterance embeddings, re-normalized to unit length."""
    if not embeddings:
        raise EmptyInputError("cannot average zero embeddings")
    mean = np.mean([e.values for e in embeddings], axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-8:
        raise DegenerateAverageError("averaged embeddings cancel out")
    return SpeakerEmbedding(mean / norm)


def estimate_pitch(wave: Waveform, adapter=None) -> PitchContour:
    """Per-hop f0 track; YIN-style autocorrelation unless an adapter is given."""
    spec = FrameSpec(sample_rate_hz=wave.sample_rate_hz)
    total_frames = spec.frame_count(wave.num_samples)
    if adapter is not None:
        with _serialize_if_needed(adapter):
            try:
                f0 = np.asarray(adapter.track(wave), dtype=np.float64).reshape(-1)
            except Exception as exc:
                raise EncoderBackendError(
                    f"pitch adapter '{adapter.name}' failed: {exc}",
                    adapter=adapter.name) from exc
        if f0.size >= total_frames:
            f0 = f0[:total_frames]
        else:
            f0 = np.concatenate([f0, np.zeros(total_frames - f0.size)])
    else:
        from .audio import yin_track

        f0 = yin_track(wave.samples, wave.sample_rate_hz, spec.hop_samples,
                       fmin=PITCH_MIN_HZ, fmax=PITCH_MAX_HZ)
        f0 = f0[:total_frames]
    voiced = f0 > 0
    f0 = np.where(voiced, np.clip(f0, PITCH_MIN_HZ, PITCH_MAX_HZ), 0.0)
    return PitchContour(f0)


def assemble_bundle(content: ContentPPG, speaker: SpeakerEmbedding,
                    pitch: PitchContour) -> EmbeddingBundle:
    """Trim content/pitch to their common length; tolerate <= 3 frames of slack."""
    delta = abs(content.num_frames - pitch.num_frames)
    if delta > 3:
        raise MisalignmentError(
            f"content ({content.num_frames}) and pitch ({pitch.num_frames}) "
            f"frame counts differ by {delta} > 3")
    t = min(content.num_frames, pitch.num_frames)
    trimmed_content = ContentPPG(content.values[:t], content.normalized)
    trimmed_pitch = PitchContour(pitch.f0_hz[:t])
    return EmbeddingBundle(trimmed_content, speaker, trimmed_pitch)


def save_bundle(path, bundle: EmbeddingBundle) -> None:
    container.save_checkpoint(
        path,
        config={"normalized": bundle.content.normalized},
        arrays={
            "content": bundle.content.values,
            "pitch": bundle.pitch.f0_hz,
            "speaker": bundle.speaker.values,
        },
        kind="bundle",
    )


def load_bundle(path) -> EmbeddingBundle:
    config, arrays = container.load_checkpoint(path)
    return EmbeddingBundle(
        ContentPPG(arrays["content"], normalized=bool(config.get("normalized", False))),
        SpeakerEmbedding(arrays["speaker"]),
        PitchContour(arrays["pitch"]),
    )
