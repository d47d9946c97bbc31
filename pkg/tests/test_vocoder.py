import numpy as np
import pytest
import torch

from singkit.audio import LOG_MEL_FLOOR, MelSpectrogram, Waveform, mel_analyze
from singkit.errors import ConfigError, InsufficientAudioError, TrainingDivergenceError
from singkit.vocoder import (
    DiscriminatorSet,
    Generator,
    TorchMelAnalyzer,
    VocoderConfig,
    discriminate,
    gan_step,
    init_vocoder,
    load_vocoder,
    make_gan_optimizers,
    save_vocoder,
    vocode,
)

MICRO = VocoderConfig.toy(base_channels=32, msd_width=4, mpd_channels=(2, 4, 8, 16))


def random_mel(t, seed=0):
    rng = np.random.default_rng(seed)
    return MelSpectrogram(np.maximum(rng.uniform(-9, 2, (t, 80)), LOG_MEL_FLOOR))


def tone_crop(n=8160, freq=220.0, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n) / 24000
    x = 0.4 * np.sin(2 * np.pi * freq * t) + 0.02 * rng.normal(size=n)
    return np.clip(x, -1, 1)


class TestConfig:
    def test_default_rates_multiply_to_hop(self):
        cfg = VocoderConfig()
        assert int(np.prod(cfg.upsample_rates)) == 240

    def test_hop_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            VocoderConfig(upsample_rates=(8, 8, 2, 2),
                          upsample_kernels=(16, 16, 4, 4))  # 256 != 240

    def test_kernel_rate_pairing_enforced(self):
        with pytest.raises(ConfigError):
            VocoderConfig(upsample_rates=(6, 5, 4, 2),
                          upsample_kernels=(12, 10, 8, 6))

    def test_compat_preset_reproduces_published_rates(self):
        cfg = VocoderConfig.compat_256()
        assert cfg.upsample_rates == (8, 8, 2, 2)
        assert cfg.upsample_kernels == (16, 16, 4, 4)
        assert cfg.hop_samples == 256

    def test_segment_rounds_to_hop_multiple(self):
        cfg = VocoderConfig()
        assert cfg.segment_samples == 8192
        assert cfg.effective_segment_samples == 8160
        assert cfg.segment_frames == 34


class TestVocode:
    def test_length_law(self):
        gen, _ = init_vocoder(MICRO, seed=0)
        for t in [1, 7, 34, 100]:
            wave = vocode(gen, random_mel(t, seed=t))
            assert wave.num_samples == t * 240

    def test_output_bounded_and_finite(self):
        gen, _ = init_vocoder(MICRO, seed=1)
        wave = vocode(gen, random_mel(50, seed=2))
        assert np.all(np.isfinite(wave.samples))
        assert np.max(np.abs(wave.samples)) <= 1.0

    def test_all_floor_mel_finite(self):
        gen, _ = init_vocoder(MICRO, seed=2)
        mel = MelSpectrogram(np.full((40, 80), LOG_MEL_FLOOR))
        wave = vocode(gen, mel)
        assert np.all(np.isfinite(wave.samples))

    def test_deterministic(self):
        gen, _ = init_vocoder(MICRO, seed=3)
        mel = random_mel(30, seed=4)
        assert np.array_equal(vocode(gen, mel).samples, vocode(gen, mel).samples)

    def test_hop_mismatch_rejected(self):
        gen, _ = init_vocoder(MICRO, seed=5)
        from singkit.audio import FrameSpec

        mel = MelSpectrogram(np.full((10, 80), LOG_MEL_FLOOR),
                             FrameSpec(frame_ms=20, hop_ms=8))
        with pytest.raises(ConfigError):
            vocode(gen, mel)


class TestDiscriminate:
    def test_eight_score_maps(self):
        _, disc = init_vocoder(MICRO, seed=6)
        scores = discriminate(disc, Waveform(tone_crop(8192)))
        assert len(scores.scores) == 8  # 3 scales + 5 periods
        assert len(scores.features) == 8
        assert all(len(group) > 0 for group in scores.features)

    def test_non_multiple_length_padded(self):
        _, disc = init_vocoder(MICRO, seed=7)
        scores = discriminate(disc, Waveform(tone_crop(8167)))  # not % 11
        assert len(scores.scores) == 8

    def test_short_input_rejected(self):
        _, disc = init_vocoder(MICRO, seed=8)
        with pytest.raises(InsufficientAudioError):
            discriminate(disc, Waveform(tone_crop(4000)))

    def test_deterministic(self):
        _, disc = init_vocoder(MICRO, seed=9)
        wave = Waveform(tone_crop(8160, seed=3))
        a = discriminate(disc, wave)
        b = discriminate(disc, wave)
        for x, y in zip(a.scores, b.scores):
            assert np.array_equal(x, y)


class TestTorchMel:
    def test_matches_numpy_analyzer(self):
        x = tone_crop(8160, freq=330.0, seed=5)
        torch_mel = TorchMelAnalyzer()(torch.tensor(x[None], dtype=torch.float32))
        numpy_mel = mel_analyze(Waveform(x)).values
        assert torch_mel.shape == (1, 34, 80)
        assert np.abs(torch_mel[0].numpy() - numpy_mel).max() < 5e-3

    def test_differentiable(self):
        x = torch.tensor(tone_crop(2400)[None], dtype=torch.float32,
                         requires_grad=True)
        out = TorchMelAnalyzer()(x)
        out.sum().backward()
        assert x.grad is not None
        assert torch.isfinite(x.grad).all()


class TestGanStep:
    def _batch(self, seed=0):
        x = tone_crop(8160, seed=seed)
        mel = mel_analyze(Waveform(x)).values
        return [(mel, x)]

    def test_eval_mode_no_updates_and_repeatable(self):
        gen, disc = init_vocoder(MICRO, seed=10)
        before = [p.detach().clone() for p in gen.parameters()]
        r1 = gan_step(gen, disc, self._batch())
        r2 = gan_step(gen, disc, self._batch())
        assert r1.adv_d == r2.adv_d
        assert r1.mel == r2.mel
        for p, q in zip(gen.parameters(), before):
            assert torch.equal(p, q)

    def test_mel_loss_of_identical_audio_is_zero(self):
        analyzer = TorchMelAnalyzer()
        x = torch.tensor(tone_crop(8160)[None], dtype=torch.float32)
        assert torch.nn.functional.l1_loss(analyzer(x), analyzer(x)).item() == 0.0

    def test_training_step_updates_generator(self):
        gen, disc = init_vocoder(MICRO, seed=11)
        opts = make_gan_optimizers(gen, disc)
        before = [p.detach().clone() for p in gen.parameters()]
        report = gan_step(gen, disc, self._batch(), opts)
        assert all(np.isfinite(v) for v in report.as_dict().values())
        changed = any(not torch.equal(p, q)
                      for p, q in zip(gen.parameters(), before))
        assert changed

    def test_nan_loss_raises_divergence(self):
        gen, disc = init_vocoder(MICRO, seed=12)
        with torch.no_grad():
            # conv_pre is weight-normed; corrupt the underlying parameter
            gen.conv_pre.parametrizations.weight.original1.fill_(float("nan"))
        with pytest.raises(TrainingDivergenceError):
            gan_step(gen, disc, self._batch())


class TestCheckpoint:
    def test_generator_round_trip(self, tmp_path):
        gen, disc = init_vocoder(MICRO, seed=13)
        mel = random_mel(20, seed=6)
        before = vocode(gen, mel)
        path = tmp_path / "vocoder.ckpt"
        save_vocoder(path, gen, disc)
        restored = load_vocoder(path)
        assert isinstance(restored, Generator)
        after = vocode(restored, mel)
        assert np.array_equal(before.samples, after.samples)

    def test_discriminators_round_trip(self, tmp_path):
        gen, disc = init_vocoder(MICRO, seed=14)
        path = tmp_path / "vocoder.ckpt"
        save_vocoder(path, gen, disc)
        gen2, disc2 = load_vocoder(path, with_discriminators=True)
        assert isinstance(disc2, DiscriminatorSet)
        wave = Waveform(tone_crop(8160, seed=7))
        a = discriminate(disc, wave)
        b = discriminate(disc2, wave)
        for x, y in zip(a.scores, b.scores):
            assert np.allclose(x, y)
