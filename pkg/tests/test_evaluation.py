import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singkit.audio import MelSpectrogram, Waveform
from singkit.errors import ConfigError, EmptyInputError, UndefinedMetricError
from singkit.evaluation import (
    PitchAccuracy,
    anchor_embedding,
    comparison_figure,
    cosine_similarity,
    pitch_accuracy,
    plot_comparison,
    spectral_flatness,
    sve,
    sve_curve,
)
from singkit.features import PitchContour, SpeakerEmbedding


def embedding_with_sim(anchor_vec, target_sim, rng):
    """Unit vector with an exact cosine similarity to the anchor."""
    ortho = rng.normal(size=anchor_vec.size)
    ortho -= ortho @ anchor_vec * anchor_vec
    ortho /= np.linalg.norm(ortho)
    vec = target_sim * anchor_vec + math.sqrt(1 - target_sim ** 2) * ortho
    return SpeakerEmbedding(vec / np.linalg.norm(vec))


def brute_force_sve(anchor, train_sims, test_embeddings, p):
    """Independent oracle: explicit sort and count."""
    ranked = sorted(train_sims, reverse=True)
    k = math.ceil(p / 100.0 * len(ranked))
    threshold = ranked[k - 1]
    errors = 0
    for e in test_embeddings:
        if float(np.dot(anchor.values, e.values)) < threshold:
            errors += 1
    return threshold, errors / len(test_embeddings)


def unit_axis(i):
    v = np.zeros(256)
    v[i] = 1.0
    return SpeakerEmbedding(v)


class TestAnchor:
    def test_single_identity(self):
        e = unit_axis(0)
        assert np.array_equal(anchor_embedding([e]).values, e.values)

    def test_permutation_invariant(self):
        embs = [unit_axis(i) for i in range(4)]
        a = anchor_embedding(embs)
        b = anchor_embedding(list(reversed(embs)))
        assert np.allclose(a.values, b.values)

    def test_antipodal_degenerate(self):
        from singkit.errors import DegenerateAverageError

        u = unit_axis(0)
        v = SpeakerEmbedding(-u.values)
        with pytest.raises(DegenerateAverageError):
            anchor_embedding([u, v])


class TestSve:
    def test_worked_fixture(self):
        rng = np.random.default_rng(0)
        anchor = unit_axis(0)
        train = [0.9, 0.8, 0.7, 0.6]
        test = [embedding_with_sim(anchor.values, 0.65, rng)]
        report = sve(anchor, train, test, p=75)
        assert report.threshold == pytest.approx(0.7)
        assert report.sve == 1.0  # 0.65 < 0.7 counted as an error
        assert report.n_test == 1

    def test_p100_threshold_is_minimum(self):
        rng = np.random.default_rng(1)
        anchor = unit_axis(0)
        train = list(rng.uniform(0.2, 0.9, size=40))
        test = [embedding_with_sim(anchor.values, s, rng) for s in train]
        report = sve(anchor, train, test, p=100)
        assert report.threshold == pytest.approx(min(train))
        assert report.sve == 0.0

    def test_empty_inputs_rejected(self):
        anchor = unit_axis(0)
        with pytest.raises(EmptyInputError):
            sve(anchor, [], [anchor], 50)
        with pytest.raises(EmptyInputError):
            sve(anchor, [0.5], [], 50)

    def test_bad_p_rejected(self):
        anchor = unit_axis(0)
        with pytest.raises(ConfigError):
            sve(anchor, [0.5], [anchor], 0)
        with pytest.raises(ConfigError):
            sve(anchor, [0.5], [anchor], 101)

    @given(st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_agrees_with_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        anchor_vec = rng.normal(size=256)
        anchor_vec /= np.linalg.norm(anchor_vec)
        anchor = SpeakerEmbedding(anchor_vec)
        train = list(rng.uniform(-0.2, 0.99, size=int(rng.integers(1, 50))))
        test = [embedding_with_sim(anchor_vec, s, rng)
                for s in rng.uniform(-0.2, 0.99, size=int(rng.integers(1, 30)))]
        p = float(rng.uniform(1, 100))
        report = sve(anchor, train, test, p)
        threshold, rate = brute_force_sve(anchor, train, test, p)
        assert report.threshold == pytest.approx(threshold, abs=1e-12)
        assert report.sve == pytest.approx(rate, abs=1e-12)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(3)
        anchor_vec = rng.normal(size=256)
        anchor_vec /= np.linalg.norm(anchor_vec)
        anchor = SpeakerEmbedding(anchor_vec)
        test = [embedding_with_sim(anchor_vec, s, rng)
                for s in rng.uniform(0.0, 0.95, size=20)]
        train = list(rng.uniform(0.1, 0.95, size=25))
        base = sve(anchor, train, test, 80)

        raw = rng.normal(size=(256, 256))
        q, _ = np.linalg.qr(raw)
        rot_anchor = SpeakerEmbedding(q @ anchor_vec)
        rot_test = [SpeakerEmbedding(q @ e.values / np.linalg.norm(q @ e.values))
                    for e in test]
        rotated = sve(rot_anchor, train, rot_test, 80)
        assert rotated.sve == pytest.approx(base.sve, abs=1e-9)

    def test_curve_monotone_in_p(self):
        rng = np.random.default_rng(4)
        anchor_vec = rng.normal(size=256)
        anchor_vec /= np.linalg.norm(anchor_vec)
        anchor = SpeakerEmbedding(anchor_vec)
        train = list(rng.uniform(0.3, 0.95, size=60))
        test = [embedding_with_sim(anchor_vec, s, rng)
                for s in rng.uniform(0.2, 0.9, size=40)]
        curve = sve_curve(anchor, train, test, [50, 75, 90, 99])
        values = [r.sve for r in curve]
        assert values == sorted(values, reverse=True)

    def test_report_json_fields(self):
        anchor = unit_axis(0)
        report = sve(anchor, [0.9, 0.5], [anchor], 50)
        import json

        payload = json.loads(report.to_json())
        assert set(payload) == {"p", "threshold", "sve", "n_test"}


class TestPitchAccuracy:
    def test_identical_contours(self):
        c = PitchContour(np.array([0.0, 220.0, 330.0, 0.0, 440.0]))
        result = pitch_accuracy(c, c)
        assert result.voicing_agreement == 1.0
        assert result.cents_mae == 0.0

    def test_semitone_offset_is_100_cents(self):
        base = PitchContour(np.full(20, 220.0))
        up = PitchContour(np.full(20, 220.0 * 2 ** (1 / 12)))
        result = pitch_accuracy(up, base)
        assert result.cents_mae == pytest.approx(100.0, abs=1e-9)

    def test_no_mutual_voicing(self):
        voiced = PitchContour(np.full(10, 220.0))
        unvoiced = PitchContour(np.zeros(10))
        with pytest.raises(UndefinedMetricError) as err:
            pitch_accuracy(unvoiced, voiced)
        assert err.value.voicing_agreement == 0.0

    def test_cents_symmetry(self):
        rng = np.random.default_rng(5)
        a = PitchContour(rng.uniform(100, 800, size=30))
        b = PitchContour(rng.uniform(100, 800, size=30))
        assert pitch_accuracy(a, b).cents_mae == pytest.approx(
            pitch_accuracy(b, a).cents_mae, rel=1e-12)

    def test_trim_to_min(self):
        a = PitchContour(np.full(10, 220.0))
        b = PitchContour(np.full(12, 220.0))
        assert pitch_accuracy(a, b).voicing_agreement == 1.0


class TestPlots:
    def _mel(self, seed=0):
        rng = np.random.default_rng(seed)
        return MelSpectrogram(np.log(np.maximum(rng.uniform(0, 1, (100, 80)), 1e-5)))

    def test_mel_plot_written(self, tmp_path):
        out = tmp_path / "mels.png"
        plot_comparison(self._mel(0), self._mel(1), out)
        assert out.exists() and out.stat().st_size > 0

    def test_identical_inputs_panels_pixel_equal(self):
        mel = self._mel(2)
        fig = comparison_figure(mel, mel, labels=("x", "x"))
        from matplotlib.backends.backend_agg import FigureCanvasAgg

        canvas = FigureCanvasAgg(fig)
        canvas.draw()
        buf = np.asarray(canvas.buffer_rgba())
        panels = []
        for ax in fig.axes:
            bbox = ax.get_window_extent()
            x0, y0 = int(round(bbox.x0)), int(round(bbox.y0))
            x1, y1 = int(round(bbox.x1)), int(round(bbox.y1))
            height = buf.shape[0]
            panels.append(buf[height - y1:height - y0, x0:x1])
        assert panels[0].shape == panels[1].shape
        assert np.array_equal(panels[0], panels[1])

    def test_contour_overlay_single_axes(self, tmp_path):
        a = PitchContour(np.full(50, 220.0))
        b = PitchContour(np.full(50, 246.9))
        fig = comparison_figure(a, b)
        assert len(fig.axes) == 1
        assert len(fig.axes[0].lines) == 2
        out = tmp_path / "contours.png"
        plot_comparison(a, b, out)
        assert out.exists() and out.stat().st_size > 0

    def test_deterministic_bytes(self, tmp_path):
        mel = self._mel(3)
        p1, p2 = tmp_path / "a.png", tmp_path / "b.png"
        plot_comparison(mel, mel, p1)
        plot_comparison(mel, mel, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_mixed_types_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            plot_comparison(self._mel(0), PitchContour(np.full(5, 220.0)),
                            tmp_path / "x.png")


class TestSpectralFlatness:
    def test_noise_flatter_than_tone(self):
        rng = np.random.default_rng(6)
        t = np.arange(24000) / 24000
        tone = Waveform(0.5 * np.sin(2 * np.pi * 440 * t))
        noise = Waveform(np.clip(rng.normal(size=24000) * 0.2, -1, 1))
        assert spectral_flatness(noise) > spectral_flatness(tone) * 10
