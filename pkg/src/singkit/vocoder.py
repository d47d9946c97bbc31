"""Adversarial mel-to-waveform generator and its discriminators.

The generator upsamples mel frames to audio through transposed
convolutions interleaved with multi-receptive-field residual stacks; a
final tanh bounds the output. Fidelity is enforced by three scale
discriminators and five period discriminators under a least-squares GAN
objective with feature-matching and mel-reconstruction terms.

The upsampling product must equal the analysis hop so mel, content, and
pitch frames stay aligned 1:1 with 10 ms of audio. The widely used rate
set {8,8,2,2} multiplies to 256, not 240; the default here is {6,5,4,2}
(product 240), and `VocoderConfig.compat_256()` restores the 256-sample
variant at an effective 10.67 ms hop for comparison runs.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.parametrizations import weight_norm

from .audio import MEL_FLOOR, N_FFT, N_MELS, FrameSpec, MelSpectrogram, Waveform, mel_filterbank
from .errors import ConfigError, InsufficientAudioError, TrainingDivergenceError

DEFAULT_PERIODS = (2, 3, 5, 7, 11)


@dataclass(frozen=True)
class VocoderConfig:
    upsample_rates: tuple = (6, 5, 4, 2)
    upsample_kernels: tuple = (12, 10, 8, 4)
    hop_samples: int = 240
    segment_samples: int = 8192
    base_channels: int = 512
    resblock_kernels: tuple = (3, 7, 11)
    resblock_dilations: tuple = (1, 3, 5)
    periods: tuple = DEFAULT_PERIODS
    n_scales: int = 3
    msd_width: int = 128
    mpd_channels: tuple = (32, 128, 512, 1024)
    fm_weight: float = 2.0
    mel_weight: float = 45.0

    def __post_init__(self):
        if len(self.upsample_rates) != len(self.upsample_kernels):
            raise ConfigError("rates and kernels must pair up")
        if math.prod(self.upsample_rates) != self.hop_samples:
            raise ConfigError(
                f"upsample rates {self.upsample_rates} multiply to "
                f"{math.prod(self.upsample_rates)}, not the hop {self.hop_samples}")
        for r, k in zip(self.upsample_rates, self.upsample_kernels):
            if k != 2 * r:
                raise ConfigError(f"kernel {k} must be twice its rate {r}")
        if self.segment_samples < self.hop_samples:
            raise ConfigError("segment must cover at least one hop")
        if self.base_channels % (2 ** len(self.upsample_rates)) != 0:
            raise ConfigError("base_channels must survive halving per stage")

    @property
    def effective_segment_samples(self) -> int:
        """Training crop: the configured segment rounded down to a hop multiple."""
        return (self.segment_samples // self.hop_samples) * self.hop_samples

    @property
    def segment_frames(self) -> int:
        return self.effective_segment_samples // self.hop_samples

    @classmethod
    def compat_256(cls, **kwargs) -> "VocoderConfig":
        """The common 256-hop rate set; audio no longer frame-aligned at 10 ms."""
        return cls(upsample_rates=(8, 8, 2, 2), upsample_kernels=(16, 16, 4, 4),
                   hop_samples=256, **kwargs)

    @classmethod
    def toy(cls, **kwargs) -> "VocoderConfig":
        """Desk-scale widths for tests and demos."""
        defaults = dict(base_channels=128, msd_width=8, mpd_channels=(4, 8, 16, 32))
        defaults.update(kwargs)
        return cls(**defaults)


class ResidualStack(nn.Module):
    def __init__(self, channels: int, kernel: int, dilations: tuple):
        super().__init__()
        self.convs1 = nn.ModuleList()
        self.convs2 = nn.ModuleList()
        for d in dilations:
            self.convs1.append(weight_norm(nn.Conv1d(
                channels, channels, kernel, dilation=d, padding=(kernel - 1) * d // 2)))
            self.convs2.append(weight_norm(nn.Conv1d(
                channels, channels, kernel, padding=(kernel - 1) // 2)))

    def forward(self, x):
        for c1, c2 in zip(self.convs1, self.convs2):
            h = c2(F.leaky_relu(c1(F.leaky_relu(x, 0.1)), 0.1))
            x = x + h
        return x


class Generator(nn.Module):
    def __init__(self, cfg: VocoderConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.base_channels
        self.conv_pre = weight_norm(nn.Conv1d(N_MELS, ch, 7, padding=3))
        self.ups = nn.ModuleList()
        self.resblocks = nn.ModuleList()
        for i, (rate, kernel) in enumerate(zip(cfg.upsample_rates, cfg.upsample_kernels)):
            in_ch, out_ch = ch // 2 ** i, ch // 2 ** (i + 1)
            self.ups.append(weight_norm(nn.ConvTranspose1d(
                in_ch, out_ch, kernel, stride=rate,
                padding=(rate + rate % 2) // 2, output_padding=rate % 2)))
            self.resblocks.append(nn.ModuleList(
                ResidualStack(out_ch, k, cfg.resblock_dilations)
                for k in cfg.resblock_kernels))
        self.conv_post = weight_norm(nn.Conv1d(ch // 2 ** len(cfg.upsample_rates), 1, 7, padding=3))

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        """mel [B, T, 80] (log scale) -> audio [B, 1, T * hop] in (-1, 1)."""
        x = self.conv_pre(mel.transpose(1, 2))
        for up, stacks in zip(self.ups, self.resblocks):
            x = up(F.leaky_relu(x, 0.1))
            x = sum(stack(x) for stack in stacks) / len(stacks)
        return torch.tanh(self.conv_post(F.leaky_relu(x, 0.1)))


def _grouped(desired: int, in_ch: int, out_ch: int) -> int:
    return math.gcd(math.gcd(in_ch, out_ch), desired)


class ScaleDiscriminator(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        w = width
        chans = [1, w, w, 2 * w, 4 * w, 8 * w, 8 * w, 8 * w]
        kernels = [15, 41, 41, 41, 41, 41, 5]
        strides = [1, 2, 2, 4, 4, 1, 1]
        groups = [1, 4, 16, 16, 16, 16, 1]
        self.convs = nn.ModuleList()
        for i in range(7):
            self.convs.append(weight_norm(nn.Conv1d(
                chans[i], chans[i + 1], kernels[i], strides[i],
                padding=kernels[i] // 2,
                groups=_grouped(groups[i], chans[i], chans[i + 1]))))
        self.post = weight_norm(nn.Conv1d(chans[-1], 1, 3, padding=1))

    def forward(self, x):
        feats = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.1)
            feats.append(x)
        score = self.post(x)
        return score, feats


class PeriodDiscriminator(nn.Module):
    def __init__(self, period: int, channels: tuple):
        super().__init__()
        self.period = period
        chans = [1, *channels, channels[-1]]
        self.convs = nn.ModuleList()
        for i in range(len(chans) - 1):
            stride = (3, 1) if i < len(chans) - 2 else (1, 1)
            self.convs.append(weight_norm(nn.Conv2d(
                chans[i], chans[i + 1], (5, 1), stride, padding=(2, 0))))
        self.post = weight_norm(nn.Conv2d(chans[-1], 1, (3, 1), padding=(1, 0)))

    def forward(self, x):
        b, c, t = x.shape
        if t % self.period:
            x = F.pad(x, (0, self.period - t % self.period))  # right zero-pad
            t = x.size(2)
        x = x.view(b, c, t // self.period, self.period)
        feats = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.1)
            feats.append(x)
        score = self.post(x)
        return score, feats


class DiscriminatorSet(nn.Module):
    """Three scale discriminators plus one period discriminator per period."""

    def __init__(self, cfg: VocoderConfig):
        super().__init__()
        self.cfg = cfg
        self.scales = nn.ModuleList(
            ScaleDiscriminator(cfg.msd_width) for _ in range(cfg.n_scales))
        self.pool = nn.AvgPool1d(4, 2, padding=2)
        self.periods = nn.ModuleList(
            PeriodDiscriminator(p, cfg.mpd_channels) for p in cfg.periods)

    def forward(self, x):
        scores, feats = [], []
        scaled = x
        for i, disc in enumerate(self.scales):
            if i > 0:
                scaled = self.pool(scaled)
            s, f = disc(scaled)
            scores.append(s)
            feats.append(f)
        for disc in self.periods:
            s, f = disc(x)
            scores.append(s)
            feats.append(f)
        return scores, feats


class TorchMelAnalyzer(nn.Module):
    """Differentiable clone of `audio.mel_analyze` for reconstruction losses."""

    def __init__(self, spec: FrameSpec | None = None):
        super().__init__()
        spec = spec or FrameSpec()
        self.spec = spec
        self.register_buffer("window", torch.hann_window(spec.frame_samples, periodic=False))
        basis = mel_filterbank(sample_rate_hz=spec.sample_rate_hz)
        self.register_buffer("basis", torch.from_numpy(basis.astype(np.float32)))

    def forward(self, wave: torch.Tensor) -> torch.Tensor:
        """wave [B, N] -> log-mel [B, ceil(N / hop), 80]."""
        hop, frame = self.spec.hop_samples, self.spec.frame_samples
        n = wave.size(1)
        t = -(-n // hop)
        half = frame // 2
        right = max((t - 1) * hop + (frame - half) - n, 0)
        padded = F.pad(wave.unsqueeze(1), (half, right), mode="reflect").squeeze(1)
        frames = padded.unfold(1, frame, hop)[:, :t] * self.window
        power = torch.fft.rfft(frames, n=N_FFT).abs() ** 2
        mel = power @ self.basis.T
        return torch.log(torch.clamp(mel, min=MEL_FLOOR))


class DiscriminatorScores(NamedTuple):
    scores: list
    features: list


def init_vocoder(config: VocoderConfig, seed: int) -> tuple[Generator, DiscriminatorSet]:
    torch.manual_seed(seed)
    return Generator(config), DiscriminatorSet(config)


def vocode(generator: Generator, mel: MelSpectrogram) -> Waveform:
    """Render a mel matrix to audio: exactly T * hop samples in [-1, 1]."""
    if generator.cfg.hop_samples != mel.frame_spec.hop_samples:
        raise ConfigError(
            f"generator hop {generator.cfg.hop_samples} != mel hop "
            f"{mel.frame_spec.hop_samples}")
    generator.eval()
    with torch.no_grad():
        mel_t = torch.from_numpy(mel.values[None]).float()
        audio = generator(mel_t)[0, 0].numpy()
    return Waveform(np.clip(audio.astype(np.float64), -1.0, 1.0),
                    mel.frame_spec.sample_rate_hz)


def discriminate(discriminators: DiscriminatorSet, wave: Waveform) -> DiscriminatorScores:
    """Score maps and intermediate features from every sub-discriminator."""
    cfg = discriminators.cfg
    if wave.num_samples < cfg.effective_segment_samples:
        raise InsufficientAudioError(
            f"need >= {cfg.effective_segment_samples} samples, got {wave.num_samples}")
    discriminators.eval()
    with torch.no_grad():
        x = torch.from_numpy(wave.samples[None, None]).float()
        scores, feats = discriminators(x)
    return DiscriminatorScores(
        [s[0, 0].numpy() for s in scores],
        [[f[0].numpy() for f in group] for group in feats],
    )


@dataclass(frozen=True)
class GanLossReport:
    adv_g: float
    adv_d: float
    fm: float
    mel: float

    def as_dict(self) -> dict:
        return asdict(self)


class GanOptimizers(NamedTuple):
    generator: torch.optim.Optimizer
    discriminator: torch.optim.Optimizer


def make_gan_optimizers(generator: Generator, discriminators: DiscriminatorSet,
                        lr: float = 2e-4, betas: tuple = (0.8, 0.99)) -> GanOptimizers:
    return GanOptimizers(
        torch.optim.AdamW(generator.parameters(), lr=lr, betas=betas),
        torch.optim.AdamW(discriminators.parameters(), lr=lr, betas=betas),
    )


def _check_finite(report: GanLossReport) -> GanLossReport:
    values = report.as_dict()
    bad = [k for k, v in values.items() if not math.isfinite(v)]
    if bad:
        raise TrainingDivergenceError(f"non-finite GAN losses: {values}")
    return report


def gan_step(generator: Generator, discriminators: DiscriminatorSet,
             batch: list, optimizers: GanOptimizers | None = None,
             mel_analyzer: TorchMelAnalyzer | None = None) -> GanLossReport:
    """One least-squares GAN step over aligned (log-mel, wave) pairs.

    With `optimizers` given, runs one discriminator update followed by one
    generator update; without, evaluates all losses and updates nothing.
    Crops in the batch must share a length that is a whole number of hops.
    """
    cfg = generator.cfg
    if mel_analyzer is None:
        mel_analyzer = TorchMelAnalyzer(FrameSpec())
    mels = torch.stack([torch.as_tensor(m, dtype=torch.float32) for m, _ in batch])
    real = torch.stack([torch.as_tensor(w, dtype=torch.float32) for _, w in batch])
    real = real.unsqueeze(1)
    training = optimizers is not None
    generator.train(training)
    discriminators.train(training)

    fake = generator(mels)

    # discriminator side
    if training:
        optimizers.discriminator.zero_grad()
        real_scores, _ = discriminators(real)
        fake_scores, _ = discriminators(fake.detach())
        adv_d = sum(((r - 1.0) ** 2).mean() + (f ** 2).mean()
                    for r, f in zip(real_scores, fake_scores))
        adv_d.backward()
        optimizers.discriminator.step()
    else:
        with torch.no_grad():
            real_scores, _ = discriminators(real)
            fake_scores, _ = discriminators(fake)
            adv_d = sum(((r - 1.0) ** 2).mean() + (f ** 2).mean()
                        for r, f in zip(real_scores, fake_scores))

    # generator side (discriminator already updated, as usual)
    with torch.set_grad_enabled(training):
        fake_scores, fake_feats = discriminators(fake)
        with torch.no_grad():
            _, real_feats = discriminators(real)
        adv_g = sum(((f - 1.0) ** 2).mean() for f in fake_scores)
        fm = sum(F.l1_loss(ff, rf) for group_f, group_r in zip(fake_feats, real_feats)
                 for ff, rf in zip(group_f, group_r))
        mel_loss = F.l1_loss(mel_analyzer(fake.squeeze(1)), mel_analyzer(real.squeeze(1)))
        if training:
            optimizers.generator.zero_grad()
            total = adv_g + cfg.fm_weight * fm + cfg.mel_weight * mel_loss
            total.backward()
            optimizers.generator.step()

    return _check_finite(GanLossReport(
        float(adv_g.detach()), float(adv_d.detach()),
        float(fm.detach()), float(mel_loss.detach())))


def save_vocoder(path, generator: Generator,
                 discriminators: DiscriminatorSet | None = None) -> None:
    from . import container

    arrays = {f"generator/{k}": v.detach().cpu().numpy()
              for k, v in generator.state_dict().items()}
    if discriminators is not None:
        arrays.update({f"discriminators/{k}": v.detach().cpu().numpy()
                       for k, v in discriminators.state_dict().items()})
    container.save_checkpoint(path, asdict(generator.cfg), arrays, kind="vocoder")


def load_vocoder(path, with_discriminators: bool = False):
    from . import container

    config, arrays = container.load_checkpoint(path)
    config["upsample_rates"] = tuple(config["upsample_rates"])
    config["upsample_kernels"] = tuple(config["upsample_kernels"])
    for key in ("resblock_kernels", "resblock_dilations", "periods", "mpd_channels"):
        config[key] = tuple(config[key])
    cfg = VocoderConfig(**config)
    generator = Generator(cfg)
    gen_state = {k[len("generator/"):]: torch.from_numpy(v)
                 for k, v in arrays.items() if k.startswith("generator/")}
    generator.load_state_dict(gen_state)
    generator.eval()
    if not with_discriminators:
        return generator
    discriminators = DiscriminatorSet(cfg)
    disc_state = {k[len("discriminators/"):]: torch.from_numpy(v)
                  for k, v in arrays.items() if k.startswith("discriminators/")}
    if disc_state:
        discriminators.load_state_dict(disc_state)
    return generator, discriminators
