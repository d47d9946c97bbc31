"""Audio I/O, framing, mel analysis, and phase-reconstruction synthesis.

Everything downstream assumes the canonical format produced here: mono,
24 kHz, 25 ms analysis frames with a 10 ms hop (600/240 samples), so mel,
pitch, and content frames line up one-to-one.
"""

from __future__ import annotations

import wave as _wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile as _wavfile
from scipy.signal import resample_poly

from .errors import DecodeError, EmptyInputError

CANONICAL_RATE = 24000
N_FFT = 1024
N_MELS = 80
MEL_FMIN = 0.0
MEL_FMAX = 12000.0
MEL_FLOOR = 1e-5
LOG_MEL_FLOOR = float(np.log(MEL_FLOOR))

_INT16_FULL_SCALE = 32767.0


@dataclass(frozen=True)
class Waveform:
    """Mono audio samples in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate_hz: int = CANONICAL_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise EmptyInputError("waveform must be mono (1-D samples)")
        if samples.size < 1:
            raise EmptyInputError("waveform must contain at least one sample")
        if not np.all(np.isfinite(samples)):
            raise EmptyInputError("waveform samples must be finite")
        if self.sample_rate_hz <= 0:
            raise EmptyInputError("sample rate must be positive")
        object.__setattr__(self, "samples", samples)

    @property
    def num_samples(self) -> int:
        return int(self.samples.size)

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate_hz


@dataclass(frozen=True)
class FrameSpec:
    """Analysis framing: 25 ms windows advanced by 10 ms."""

    frame_ms: int = 25
    hop_ms: int = 10
    sample_rate_hz: int = CANONICAL_RATE

    @property
    def frame_samples(self) -> int:
        return self.frame_ms * self.sample_rate_hz // 1000

    @property
    def hop_samples(self) -> int:
        return self.hop_ms * self.sample_rate_hz // 1000

    def __post_init__(self):
        if self.frame_samples <= self.hop_samples:
            raise EmptyInputError("frame must be longer than hop")

    def frame_count(self, num_samples: int) -> int:
        return -(-num_samples // self.hop_samples)


@dataclass(frozen=True)
class MelSpectrogram:
    """T x 80 log-mel matrix; entries floored at log(1e-5)."""

    values: np.ndarray
    frame_spec: FrameSpec = field(default_factory=FrameSpec)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != N_MELS:
            raise EmptyInputError(f"mel matrix must be T x {N_MELS}")
        if not np.all(np.isfinite(values)):
            raise EmptyInputError("mel entries must be finite")
        if values.min() < LOG_MEL_FLOOR - 1e-9:
            raise EmptyInputError("mel entries must not fall below the log floor")
        object.__setattr__(self, "values", values)

    @property
    def num_frames(self) -> int:
        return int(self.values.shape[0])


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int = N_MELS, fmin: float = MEL_FMIN,
                           fmax: float = MEL_FMAX) -> np.ndarray:
    """Center frequency (Hz) of each triangular mel filter."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT,
                   sample_rate_hz: int = CANONICAL_RATE,
                   fmin: float = MEL_FMIN, fmax: float = MEL_FMAX) -> np.ndarray:
    """Triangular mel filters (peak 1) over rfft bin frequencies."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fft_freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate_hz)
    lower, center, upper = edges[:-2], edges[1:-1], edges[2:]
    up = (fft_freqs[None, :] - lower[:, None]) / (center - lower)[:, None]
    down = (upper[:, None] - fft_freqs[None, :]) / (upper - center)[:, None]
    return np.maximum(0.0, np.minimum(up, down))


def _reflect_pad(x: np.ndarray, left: int, right: int) -> np.ndarray:
    # np.pad reflect caps each application at len-1; loop for very short inputs
    out = x
    while left > 0 or right > 0:
        dl = min(left, out.size - 1)
        dr = min(right, out.size - 1)
        out = np.pad(out, (dl, dr), mode="reflect")
        left -= dl
        right -= dr
    return out


def _frame_signal(samples: np.ndarray, spec: FrameSpec) -> np.ndarray:
    """Center-padded frames: frame t covers [t*hop - frame/2, t*hop + frame/2)."""
    hop, frame = spec.hop_samples, spec.frame_samples
    n_frames = spec.frame_count(samples.size)
    half = frame // 2
    right_need = (n_frames - 1) * hop + (frame - half) - samples.size
    padded = _reflect_pad(samples, half, max(right_need, 0))
    idx = np.arange(n_frames)[:, None] * hop + np.arange(frame)[None, :]
    return padded[idx]


def _stft_power(samples: np.ndarray, spec: FrameSpec) -> np.ndarray:
    frames = _frame_signal(samples, spec) * np.hanning(spec.frame_samples)[None, :]
    return np.abs(np.fft.rfft(frames, n=N_FFT, axis=1)) ** 2


def mel_analyze(wave: Waveform, spec: FrameSpec | None = None) -> MelSpectrogram:
    """Log-mel spectrogram with T = ceil(samples / hop) frames.

    Mel energies below 1e-5 are clamped before the log, so silence maps to
    a constant floor value rather than -inf.
    """
    spec = spec or FrameSpec()
    if wave.sample_rate_hz != spec.sample_rate_hz:
        raise EmptyInputError(
            f"waveform rate {wave.sample_rate_hz} != frame spec rate {spec.sample_rate_hz}")
    if wave.num_samples < spec.hop_samples:
        raise EmptyInputError("waveform shorter than one hop")
    power = _stft_power(wave.samples, spec)
    mel_energy = power @ mel_filterbank(sample_rate_hz=spec.sample_rate_hz).T
    return MelSpectrogram(np.log(np.maximum(mel_energy, MEL_FLOOR)), spec)


def _istft(spectrum: np.ndarray, spec: FrameSpec, out_samples: int) -> np.ndarray:
    """Weighted overlap-add inverse of `_stft_power`'s framing."""
    hop, frame = spec.hop_samples, spec.frame_samples
    half = frame // 2
    window = np.hanning(frame)
    n_frames = spectrum.shape[0]
    total = (n_frames - 1) * hop + frame
    acc = np.zeros(total)
    norm = np.zeros(total)
    chunks = np.fft.irfft(spectrum, n=N_FFT, axis=1)[:, :frame] * window[None, :]
    for t in range(n_frames):
        start = t * hop
        acc[start:start + frame] += chunks[t]
        norm[start:start + frame] += window ** 2
    acc = acc / np.maximum(norm, 1e-10)
    return acc[half:half + out_samples]


def griffin_lim_invert(mel: MelSpectrogram, iterations: int = 60,
                       seed: int = 0) -> Waveform:
    """Desk-scale mel inversion: pseudo-inverse filterbank + phase recovery.

    Deterministic for a given seed (initial phases are drawn once from a
    seeded generator). Output has exactly T * hop samples.
    """
    if iterations < 1:
        raise EmptyInputError("iterations must be >= 1")
    spec = mel.frame_spec
    basis = mel_filterbank(sample_rate_hz=spec.sample_rate_hz)
    lin_power = np.maximum(np.exp(mel.values) @ np.linalg.pinv(basis).T, 0.0)
    magnitude = np.sqrt(lin_power)

    rng = np.random.default_rng(seed)
    phases = rng.uniform(-np.pi, np.pi, size=magnitude.shape)
    spectrum = magnitude * np.exp(1j * phases)
    out_samples = mel.num_frames * spec.hop_samples
    x = _istft(spectrum, spec, out_samples)
    for _ in range(iterations - 1):
        frames = _frame_signal(x, spec) * np.hanning(spec.frame_samples)[None, :]
        reanalysis = np.fft.rfft(frames, n=N_FFT, axis=1)
        spectrum = magnitude * np.exp(1j * np.angle(reanalysis))
        x = _istft(spectrum, spec, out_samples)
    return Waveform(np.clip(x, -1.0, 1.0), spec.sample_rate_hz)


def yin_track(samples: np.ndarray, sample_rate_hz: int, hop: int,
              window: int = 1024, threshold: float = 0.15,
              fmin: float = 50.0, fmax: float = 1100.0) -> np.ndarray:
    """YIN pitch per hop: cumulative-mean-normalized difference function
    with parabolic refinement; 0 marks unvoiced frames."""
    tau_min = max(2, int(sample_rate_hz / fmax))
    tau_max = int(np.ceil(sample_rate_hz / fmin))
    n_frames = -(-samples.size // hop)
    frame_len = window + tau_max
    half = frame_len // 2
    right = (n_frames - 1) * hop + (frame_len - half) - samples.size
    padded = _reflect_pad(samples, half, max(right, 0))
    idx = np.arange(n_frames)[:, None] * hop + np.arange(frame_len)[None, :]
    frames = padded[idx]

    nfft = 1 << int(np.ceil(np.log2(frame_len + window)))
    spec_full = np.fft.rfft(frames, nfft, axis=1)
    spec_head = np.fft.rfft(frames[:, :window], nfft, axis=1)
    corr = np.fft.irfft(spec_full * np.conj(spec_head), nfft, axis=1)[:, :tau_max + 1]

    sq = np.cumsum(frames ** 2, axis=1)
    e0 = sq[:, window - 1]
    e_tau = np.empty((n_frames, tau_max + 1))
    e_tau[:, 0] = e0
    e_tau[:, 1:] = sq[:, window:window + tau_max] - sq[:, :tau_max]
    diff = np.maximum(e0[:, None] + e_tau - 2.0 * corr, 0.0)

    cmndf = np.ones_like(diff)
    running = np.cumsum(diff[:, 1:], axis=1)
    taus = np.arange(1, tau_max + 1, dtype=np.float64)
    cmndf[:, 1:] = diff[:, 1:] * taus[None, :] / np.maximum(running, 1e-12)

    f0 = np.zeros(n_frames)
    for t in range(n_frames):
        if e0[t] < 1e-10:
            continue
        row = cmndf[t]
        below = np.nonzero(row[tau_min:tau_max] < threshold)[0]
        if below.size == 0:
            continue
        tau = tau_min + int(below[0])
        while tau + 1 < tau_max and row[tau + 1] < row[tau]:
            tau += 1
        denom = row[tau - 1] - 2.0 * row[tau] + row[tau + 1]
        shift = 0.0
        if abs(denom) > 1e-12:
            shift = float(np.clip(0.5 * (row[tau - 1] - row[tau + 1]) / denom, -1.0, 1.0))
        f0[t] = sample_rate_hz / (tau + shift)
    return f0


def load_audio(path, target_rate: int = CANONICAL_RATE) -> Waveform:
    """Load a PCM WAV file as mono float samples at `target_rate`.

    Multichannel input is averaged to mono; rate conversion uses a
    polyphase anti-aliased resampler.
    """
    path = Path(path)
    if not path.exists():
        raise DecodeError(f"no such file: {path}")
    try:
        rate, data = _wavfile.read(str(path))
    except Exception as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    if data.size == 0:
        raise EmptyInputError(f"empty audio: {path}")
    if data.dtype == np.int16:
        samples = data / _INT16_FULL_SCALE
    elif data.dtype == np.int32:
        samples = data / 2147483647.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 127.0
    else:
        samples = data.astype(np.float64)
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if rate != target_rate:
        g = np.gcd(int(rate), int(target_rate))
        samples = resample_poly(samples, target_rate // g, rate // g)
    return Waveform(np.clip(samples, -1.0, 1.0), target_rate)


def write_wav(wave: Waveform, path) -> None:
    """Write 16-bit PCM mono RIFF/WAVE; round-trips within one LSB."""
    quantized = np.round(np.clip(wave.samples, -1.0, 1.0) * _INT16_FULL_SCALE)
    data = quantized.astype("<i2").tobytes()
    with open(path, "wb") as raw, _wave.open(raw, "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(wave.sample_rate_hz)
        fh.writeframes(data)


def wav_bytes(wave: Waveform) -> bytes:
    """In-memory equivalent of `write_wav`, for service responses."""
    import io

    buf = io.BytesIO()
    quantized = np.round(np.clip(wave.samples, -1.0, 1.0) * _INT16_FULL_SCALE)
    with _wave.open(buf, "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(wave.sample_rate_hz)
        fh.writeframes(quantized.astype("<i2").tobytes())
    return buf.getvalue()
