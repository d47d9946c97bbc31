"""Pluggable encoder adapters and their self-contained DSP fallbacks.

Production deployments wire pre-trained ASR / speaker-ID / pitch backbones
in through these protocols. The fallbacks below need no downloads and keep
the whole pipeline runnable at desk scale:

- content: cepstral-envelope projection of mel frames. NOT phonetic -- it
  captures spectral envelope, not phoneme posteriors, and deliberately
  drops the fine harmonic comb so pitch stays out of the content stream.
- speaker: mean/spread statistics of 20 mel-cepstral coefficients,
  projected to the 256-dim embedding space. Near scale-invariant.
- pitch: handled by the YIN tracker built into `features.estimate_pitch`.
"""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np
from scipy.fft import dct

from .audio import (
    MEL_FLOOR,
    N_FFT,
    FrameSpec,
    Waveform,
    _stft_power,
    mel_analyze,
    mel_filterbank,
    yin_track,
)

CONTENT_DIM = 320
SPEAKER_DIM = 256
CONTENT_SUBSAMPLE = 3


@runtime_checkable
class ContentEncoderAdapter(Protocol):
    """Maps audio to one content frame per `CONTENT_SUBSAMPLE` hops."""

    name: str
    version: str
    thread_safe: bool

    def encode(self, wave: Waveform) -> np.ndarray: ...


@runtime_checkable
class SpeakerEncoderAdapter(Protocol):
    """Maps an utterance to a single identity vector."""

    name: str
    version: str
    thread_safe: bool

    def encode(self, wave: Waveform) -> np.ndarray: ...


@runtime_checkable
class PitchEstimatorAdapter(Protocol):
    """Maps audio to one f0 value per hop (0 = unvoiced)."""

    name: str
    version: str
    thread_safe: bool

    def track(self, wave: Waveform) -> np.ndarray: ...


def _projection(rng_seed: int, rows: int, cols: int) -> np.ndarray:
    rng = np.random.default_rng(rng_seed)
    return rng.standard_normal((rows, cols)) / np.sqrt(rows)


def _comb_smooth(power: np.ndarray, f0_hz: np.ndarray, sample_rate_hz: int,
                 base_width_hz: float = 420.0) -> np.ndarray:
    """Average each frame's spectrum over (at least) one comb period.

    One smoothing width is used for the whole utterance: the larger of a
    fixed default and 1.3x the median voiced f0. A boxcar at least one
    harmonic spacing wide cancels the comb, and keeping the width constant
    across frames means the envelope's smoothness cannot encode the pitch
    contour (a per-frame width would leak it).
    """
    n_bins = power.shape[1]
    df = sample_rate_hz / N_FFT
    voiced = f0_hz[f0_hz > 0]
    width_hz = max(base_width_hz,
                   1.3 * float(np.median(voiced)) if voiced.size else 0.0)
    half = max(int(round(width_hz / df / 2.0)), 1)
    idx = np.arange(n_bins)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half, n_bins - 1)
    csum = np.concatenate([np.zeros((power.shape[0], 1)),
                           np.cumsum(power, axis=1)], axis=1)
    return (csum[:, hi + 1] - csum[:, lo]) / (hi - lo + 1)


class CepstralContentAdapter:
    """Fallback content encoder: cepstrum of the pitch-equalized envelope.

    Each frame's power spectrum is smoothed over one comb period before
    mel warping, so harmonic (pitch) structure cancels and only the
    spectral envelope reaches the content stream; DCT coefficients
    1..n_coeffs of the log envelope are then embedded in the content space
    with a fixed seeded linear map (coefficient 0 dropped for loudness
    invariance). Deliberately NOT phonetic; it stands in for a pre-trained
    recognizer so the pipeline runs without downloads.
    """

    def __init__(self, dim: int = CONTENT_DIM, n_coeffs: int = 12,
                 min_band: int = 15, seed: int = 13):
        self.name = "cepstral-envelope"
        self.version = "4"
        self.thread_safe = True
        self.dim = dim
        self.n_coeffs = n_coeffs
        self.min_band = min_band  # drop the fundamental's mel region entirely
        self._matrix = _projection(seed, n_coeffs, dim)

    def encode(self, wave: Waveform) -> np.ndarray:
        spec = FrameSpec(sample_rate_hz=wave.sample_rate_hz)
        power = _stft_power(wave.samples, spec)
        f0 = yin_track(wave.samples, wave.sample_rate_hz, spec.hop_samples)
        envelope = _comb_smooth(power, f0[:power.shape[0]], wave.sample_rate_hz)
        mel = envelope @ mel_filterbank(sample_rate_hz=wave.sample_rate_hz).T
        log_mel = np.log(np.maximum(mel, MEL_FLOOR))[:, self.min_band:]
        sub = log_mel[::CONTENT_SUBSAMPLE]
        ceps = dct(sub, type=2, norm="ortho", axis=1)[:, 1:self.n_coeffs + 1]
        return ceps @ self._matrix


class SpectralStatsSpeakerAdapter:
    """Fallback speaker encoder: normalized mel-cepstral statistics.

    Mean and spread of 20 mel-cepstral coefficients (c1..c20) over all
    frames, projected to the embedding dimension. Dropping c0 makes the
    statistics insensitive to overall gain.
    """

    def __init__(self, dim: int = SPEAKER_DIM, n_coeffs: int = 20, seed: int = 29):
        self.name = "spectral-stats"
        self.version = "1"
        self.thread_safe = True
        self.dim = dim
        self.n_coeffs = n_coeffs
        self._matrix = _projection(seed, 2 * n_coeffs, dim)

    def encode(self, wave: Waveform) -> np.ndarray:
        mel = mel_analyze(wave, FrameSpec(sample_rate_hz=wave.sample_rate_hz))
        ceps = dct(mel.values, type=2, norm="ortho", axis=1)[:, 1:self.n_coeffs + 1]
        stats = np.concatenate([ceps.mean(axis=0), ceps.std(axis=0)])
        return stats @ self._matrix


class PassthroughSeparator:
    """Vocal-separation stand-in that returns the mix unchanged."""

    name = "passthrough"
    version = "1"
    thread_safe = True

    def separate_vocals(self, wave: Waveform) -> Waveform:
        return wave
