"""Quantitative checks: speaker-similarity error curves, pitch accuracy, plots.

The speaker verification error (SVE) compares generated utterances to an
anchor embedding: a threshold is chosen so that p% of the training
utterances would be accepted, and the SVE is the fraction of test
utterances falling below that threshold. Higher p means a lower threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .audio import MelSpectrogram, Waveform
from .errors import ConfigError, EmptyInputError, UndefinedMetricError
from .features import PitchContour, SpeakerEmbedding, average_speaker


@dataclass(frozen=True)
class SveReport:
    acceptance_rate_p: float
    threshold: float
    sve: float
    n_test: int

    def __post_init__(self):
        if not -1.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must be a cosine similarity")
        if not 0.0 <= self.sve <= 1.0:
            raise ConfigError("sve is a fraction")

    def to_json(self) -> str:
        payload = asdict(self)
        payload["p"] = payload.pop("acceptance_rate_p")
        return json.dumps(payload)


def anchor_embedding(utterance_embeddings: list[SpeakerEmbedding]) -> SpeakerEmbedding:
    """Overall speaker embedding: the normalized mean over utterances."""
    return average_speaker(utterance_embeddings)


def cosine_similarity(a: SpeakerEmbedding, b: SpeakerEmbedding) -> float:
    return float(np.dot(a.values, b.values))


def sve(anchor: SpeakerEmbedding, train_sims, test_embeddings,
        p: float) -> SveReport:
    """Accept-p% threshold over training similarities, error rate over tests."""
    train_sims = np.asarray(train_sims, dtype=np.float64).reshape(-1)
    if train_sims.size == 0 or not test_embeddings:
        raise EmptyInputError("sve needs training similarities and test embeddings")
    if not 0.0 < p <= 100.0:
        raise ConfigError("acceptance rate p must be in (0, 100]")
    ranked = np.sort(train_sims)[::-1]
    index = math.ceil(p / 100.0 * ranked.size)  # 1-based rank of the cut
    threshold = float(ranked[index - 1])
    test_sims = np.array([cosine_similarity(anchor, e) for e in test_embeddings])
    errors = int(np.count_nonzero(test_sims < threshold))
    return SveReport(p, threshold, errors / test_sims.size, test_sims.size)


def sve_curve(anchor: SpeakerEmbedding, train_sims, test_embeddings,
              p_values) -> list[SveReport]:
    """SVE swept over acceptance rates; non-increasing in p by construction."""
    return [sve(anchor, train_sims, test_embeddings, p) for p in p_values]


@dataclass(frozen=True)
class PitchAccuracy:
    voicing_agreement: float
    cents_mae: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def pitch_accuracy(generated: PitchContour, target: PitchContour) -> PitchAccuracy:
    """Voiced/unvoiced agreement plus mean absolute deviation in cents."""
    t = min(generated.num_frames, target.num_frames)
    gen = generated.f0_hz[:t]
    tgt = target.f0_hz[:t]
    gen_voiced = gen > 0
    tgt_voiced = tgt > 0
    agreement = float(np.mean(gen_voiced == tgt_voiced))
    both = gen_voiced & tgt_voiced
    if not np.any(both):
        raise UndefinedMetricError(
            "no mutually voiced frames; cents error undefined",
            voicing_agreement=agreement)
    cents = 1200.0 * np.log2(gen[both] / tgt[both])
    return PitchAccuracy(agreement, float(np.mean(np.abs(cents))))


def spectral_flatness(wave: Waveform, n_fft: int = 4096,
                      band_hz: tuple = (100.0, 6000.0)) -> float:
    """Geometric over arithmetic mean of band power, averaged over frames.

    Near 0 for harmonic combs, near 1 for noise; a blended choir should sit
    above any single constituent voice.
    """
    hop = n_fft // 2
    x = wave.samples
    if x.size < n_fft:
        x = np.pad(x, (0, n_fft - x.size))
    n_frames = 1 + (x.size - n_fft) // hop
    window = np.hanning(n_fft)
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / wave.sample_rate_hz)
    keep = (freqs >= band_hz[0]) & (freqs <= band_hz[1])
    flatness = []
    for i in range(n_frames):
        frame = x[i * hop:i * hop + n_fft] * window
        power = np.abs(np.fft.rfft(frame)) ** 2
        band = np.maximum(power[keep], 1e-20)
        flatness.append(np.exp(np.mean(np.log(band))) / np.mean(band))
    return float(np.mean(flatness))


def comparison_figure(a, b, labels: tuple = ("reference", "generated")) -> Figure:
    """Deterministic comparison layout; also used directly by tests.

    Mel pairs render as two equal panels with a shared color scale; contour
    pairs render as one axes with two series.
    """
    if isinstance(a, MelSpectrogram) and isinstance(b, MelSpectrogram):
        fig = Figure(figsize=(10, 4), dpi=100)
        axes = fig.subplots(1, 2)
        vmin = min(a.values.min(), b.values.min())
        vmax = max(a.values.max(), b.values.max())
        for ax, mel, label in zip(axes, (a, b), labels):
            ax.imshow(mel.values.T, origin="lower", aspect="auto",
                      vmin=vmin, vmax=vmax, interpolation="nearest")
            ax.set_title(label)
            ax.set_xlabel("frame")
            ax.set_ylabel("mel bin")
        return fig
    if isinstance(a, PitchContour) and isinstance(b, PitchContour):
        fig = Figure(figsize=(10, 4), dpi=100)
        ax = fig.subplots(1, 1)
        for contour, label in zip((a, b), labels):
            series = np.where(contour.f0_hz > 0, contour.f0_hz, np.nan)
            ax.plot(series, label=label)
        ax.set_xlabel("frame")
        ax.set_ylabel("f0 (Hz)")
        ax.legend(loc="upper right")
        return fig
    raise ConfigError("plot_comparison needs two mels or two pitch contours")


def plot_comparison(a, b, out_path, labels: tuple = ("reference", "generated")) -> None:
    """Write the comparison figure as a PNG."""
    fig = comparison_figure(a, b, labels)
    FigureCanvasAgg(fig)
    fig.savefig(out_path, format="png")
