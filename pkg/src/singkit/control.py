"""Embedding-space editing: the controllable interface over a trained voice.

Pitch contours can be transposed or replaced wholesale, content frames can
be retimed phoneme-by-phoneme, and the speaker embedding can be swapped.
`synthesize` decodes an edited bundle back to audio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .acoustic import AcousticModel, acoustic_infer
from .audio import Waveform, griffin_lim_invert
from .errors import ConfigError, EmbeddingError, IntervalError
from .features import (
    ContentPPG,
    EmbeddingBundle,
    PitchContour,
    SpeakerEmbedding,
    assemble_bundle,
    estimate_pitch,
)
from .vocoder import Generator, vocode

PITCH_MIN_HZ = 50.0
PITCH_MAX_HZ = 1100.0


@dataclass(frozen=True)
class PhonemeInterval:
    phoneme: str
    start_frame: int
    end_frame: int  # exclusive

    def __post_init__(self):
        if not (0 <= self.start_frame < self.end_frame):
            raise IntervalError(
                f"bad interval [{self.start_frame}, {self.end_frame}) "
                f"for '{self.phoneme}'")

    @property
    def duration(self) -> int:
        return self.end_frame - self.start_frame


def transpose_pitch(contour: PitchContour, semitones: float) -> PitchContour:
    """Shift voiced frames by a (possibly fractional) semitone count."""
    factor = 2.0 ** (semitones / 12.0)
    voiced = contour.f0_hz > 0
    shifted = np.where(voiced,
                       np.clip(contour.f0_hz * factor, PITCH_MIN_HZ, PITCH_MAX_HZ),
                       0.0)
    return PitchContour(shifted)


def replace_melody(bundle: EmbeddingBundle, reference: Waveform) -> EmbeddingBundle:
    """Swap in the pitch contour of another recording (spoken or sung)."""
    new_pitch = estimate_pitch(reference)
    return assemble_bundle(bundle.content, bundle.speaker, new_pitch)


def _check_tiling(intervals: list[PhonemeInterval], total_frames: int) -> None:
    if not intervals:
        raise IntervalError("no intervals given")
    if intervals[0].start_frame != 0:
        raise IntervalError("intervals must start at frame 0")
    for prev, cur in zip(intervals, intervals[1:]):
        if cur.start_frame != prev.end_frame:
            raise IntervalError(
                f"gap or overlap between '{prev.phoneme}' and '{cur.phoneme}'")
    if intervals[-1].end_frame != total_frames:
        raise IntervalError(
            f"intervals end at {intervals[-1].end_frame}, content has "
            f"{total_frames} frames")


def resample_ppg_by_intervals(ppg: ContentPPG, intervals: list[PhonemeInterval],
                              target_durations: list[int]) -> ContentPPG:
    """Retime each phoneme independently by nearest-neighbour row mapping.

    Output row i' of an interval reads source row floor(i' * src / dst), so
    every output row is a copy of some source row and row normalization is
    untouched.
    """
    _check_tiling(intervals, ppg.num_frames)
    if len(target_durations) != len(intervals):
        raise IntervalError("one target duration per interval required")
    if any(d < 1 for d in target_durations):
        raise ConfigError("target durations must be >= 1 frame")
    pieces = []
    for interval, dst in zip(intervals, target_durations):
        src = ppg.values[interval.start_frame:interval.end_frame]
        src_len = interval.duration
        idx = (np.arange(dst) * src_len) // dst
        pieces.append(src[idx])
    return ContentPPG(np.concatenate(pieces, axis=0), ppg.normalized)


def set_timbre(bundle: EmbeddingBundle, speaker) -> EmbeddingBundle:
    """Replace the identity embedding; content and pitch are untouched."""
    if not isinstance(speaker, SpeakerEmbedding):
        values = np.asarray(speaker, dtype=np.float64).reshape(-1)
        norm = float(np.linalg.norm(values))
        if norm != 0.0 and abs(norm - 1.0) > 1e-6:
            raise EmbeddingError(
                f"speaker vector has norm {norm:.4f}; expected 1 or exactly 0")
        try:
            speaker = SpeakerEmbedding(values)
        except Exception as exc:
            raise EmbeddingError(str(exc)) from exc
    return EmbeddingBundle(bundle.content, speaker, bundle.pitch)


def synthesize(bundle: EmbeddingBundle, acoustic: AcousticModel,
               generator: Generator | None = None,
               griffin_lim_iterations: int = 60) -> Waveform:
    """Decode a bundle to audio: acoustic model -> refined mel -> vocoder.

    Without a neural generator the phase-reconstruction fallback renders
    the mel instead. Output length is bundle frames x hop samples.
    """
    output = acoustic_infer(acoustic, bundle)
    mel = output.mel_postnet
    if generator is not None:
        return vocode(generator, mel)
    return griffin_lim_invert(mel, iterations=griffin_lim_iterations)


def parse_intervals(text: str) -> list[PhonemeInterval]:
    """Line format: `phoneme start_frame end_frame` (whitespace separated)."""
    intervals = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise IntervalError(f"line {lineno}: expected 'phoneme start end'")
        intervals.append(PhonemeInterval(parts[0], int(parts[1]), int(parts[2])))
    return intervals


def uniform_intervals(phonemes: list[str], total_frames: int) -> list[PhonemeInterval]:
    """Forced-alignment fallback: split the frame range evenly."""
    if not phonemes:
        raise IntervalError("no phonemes given")
    if total_frames < len(phonemes):
        raise IntervalError("fewer frames than phonemes")
    bounds = np.linspace(0, total_frames, len(phonemes) + 1).astype(int)
    return [PhonemeInterval(p, int(bounds[i]), int(bounds[i + 1]))
            for i, p in enumerate(phonemes)]


def midi_to_hz(note: float) -> float:
    return 440.0 * 2.0 ** ((note - 69) / 12.0)


def parse_melody_script(text: str) -> list[tuple[int, int, float]]:
    """Line format: `start_frame end_frame midi_note`."""
    events = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ConfigError(f"line {lineno}: expected 'start end midi_note'")
        start, end, note = int(parts[0]), int(parts[1]), float(parts[2])
        if not 0 <= start < end:
            raise ConfigError(f"line {lineno}: bad frame range")
        events.append((start, end, note))
    if not events:
        raise ConfigError("melody script has no events")
    return events


def compile_melody(events: list[tuple[int, int, float]],
                   total_frames: int | None = None) -> PitchContour:
    """Render note events to a per-frame contour; gaps stay unvoiced."""
    end = max(e[1] for e in events)
    total = total_frames if total_frames is not None else end
    f0 = np.zeros(max(total, 1))
    for start, stop, note in events:
        f0[start:min(stop, total)] = np.clip(midi_to_hz(note), PITCH_MIN_HZ, PITCH_MAX_HZ)
    return PitchContour(f0[:total] if total_frames is not None else f0)
