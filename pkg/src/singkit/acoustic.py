"""Conformer decoder: (content, speaker, pitch) frames -> mel-spectrogram.

Three linear layers project the streams to a common width; the projected
embeddings are summed, passed through a linear layer, decoded by a stack
of Conformer blocks into a mel prediction, and refined by a convolutional
recurrent PostNet whose output is added residually.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .audio import LOG_MEL_FLOOR, FrameSpec, MelSpectrogram
from .errors import ConfigError, SequenceLengthError, ShapeError
from .features import EmbeddingBundle

PITCH_INPUT_SCALE = math.log1p(1100.0)


@dataclass(frozen=True)
class AcousticConfig:
    content_dim: int = 320
    speaker_dim: int = 256
    d_model: int = 320
    n_blocks: int = 6
    n_heads: int = 2
    mel_dim: int = 80
    max_frames: int = 1000
    ff_expansion: int = 4
    conv_kernel: int = 15
    dropout: float = 0.1
    postnet_channels: int = 256
    postnet_kernel: int = 5
    postnet_conv_layers: int = 3
    postnet_rnn_units: int = 128
    # 0 = the plain scalar pitch input through its linear projection.
    # n > 0 expands pitch into n sin/cos pairs of log-f0 first, which makes
    # harmonic placement nearly linear in the features; small models need
    # this to learn pitch control from little data.
    pitch_fourier_bands: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.max_frames < 1:
            raise ConfigError("max_frames must be >= 1")
        if self.conv_kernel % 2 != 1 or self.postnet_kernel % 2 != 1:
            raise ConfigError("convolution kernels must be odd")
        if self.pitch_fourier_bands < 0:
            raise ConfigError("pitch_fourier_bands must be >= 0")

    @property
    def pitch_input_dim(self) -> int:
        return 1 + 2 * self.pitch_fourier_bands


@dataclass(frozen=True)
class AcousticOutput:
    """Paired predictions: pre-PostNet and PostNet-refined mels."""

    mel_linear: MelSpectrogram
    mel_postnet: MelSpectrogram

    def __post_init__(self):
        if self.mel_linear.values.shape != self.mel_postnet.values.shape:
            raise ShapeError("linear and postnet mels must share a shape")


def _sinusoidal_positions(positions: torch.Tensor, dim: int) -> torch.Tensor:
    inv_freq = torch.exp(torch.arange(0, dim, 2, dtype=torch.float32)
                         * (-math.log(10000.0) / dim))
    angles = positions[:, None].float() * inv_freq[None, :]
    enc = torch.zeros(positions.size(0), dim)
    enc[:, 0::2] = torch.sin(angles)
    enc[:, 1::2] = torch.cos(angles)
    return enc


class RelPosSelfAttention(nn.Module):
    """Multi-head self-attention with Transformer-XL relative positions."""

    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.pos_proj = nn.Linear(d_model, d_model, bias=False)
        self.out = nn.Linear(d_model, d_model)
        self.drop = nn.Dropout(dropout)
        self.content_bias = nn.Parameter(torch.zeros(n_heads, self.d_head))
        self.pos_bias = nn.Parameter(torch.zeros(n_heads, self.d_head))

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor | None) -> torch.Tensor:
        bsz, t, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(bsz, t, self.n_heads, self.d_head).transpose(1, 2)
        k = k.view(bsz, t, self.n_heads, self.d_head).transpose(1, 2)
        v = v.view(bsz, t, self.n_heads, self.d_head).transpose(1, 2)

        # rel encodings for distances -(t-1)..(t-1), index r + t - 1
        rel = _sinusoidal_positions(torch.arange(-(t - 1), t, device=x.device), d)
        rel = self.pos_proj(rel.to(x.dtype))
        rel = rel.view(2 * t - 1, self.n_heads, self.d_head).permute(1, 0, 2)

        content = torch.einsum("bhid,bhjd->bhij", q + self.content_bias[:, None], k)
        pos_scores = torch.einsum("bhid,hrd->bhir", q + self.pos_bias[:, None], rel)
        # gather pos_scores at r = i - j for every (i, j)
        ii = torch.arange(t, device=x.device)
        gather_idx = (ii[:, None] - ii[None, :] + t - 1).expand(
            bsz, self.n_heads, t, t)
        pos = torch.gather(pos_scores, 3, gather_idx)

        scores = (content + pos) / math.sqrt(self.d_head)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        attn = self.drop(torch.softmax(scores, dim=-1))
        mixed = torch.einsum("bhij,bhjd->bhid", attn, v)
        mixed = mixed.transpose(1, 2).reshape(bsz, t, d)
        return self.out(mixed)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, expansion: int, dropout: float):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d_model, d_model * expansion),
            nn.SiLU(),
            nn.Dropout(dropout),
            nn.Linear(d_model * expansion, d_model),
            nn.Dropout(dropout),
        )

    def forward(self, x):
        return self.net(x)


class ConvModule(nn.Module):
    def __init__(self, d_model: int, kernel: int, dropout: float):
        super().__init__()
        self.pointwise_in = nn.Conv1d(d_model, 2 * d_model, 1)
        self.depthwise = nn.Conv1d(d_model, d_model, kernel,
                                   padding=kernel // 2, groups=d_model)
        self.norm = nn.LayerNorm(d_model)
        self.pointwise_out = nn.Conv1d(d_model, d_model, 1)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, pad_mask):
        if pad_mask is not None:
            x = x * pad_mask[..., None]
        h = x.transpose(1, 2)
        h = F.glu(self.pointwise_in(h), dim=1)
        h = self.depthwise(h)
        h = F.silu(self.norm(h.transpose(1, 2))).transpose(1, 2)
        h = self.pointwise_out(h)
        return self.drop(h.transpose(1, 2))


class ConformerBlock(nn.Module):
    """Half-step feed-forwards sandwiching attention and convolution."""

    def __init__(self, cfg: AcousticConfig):
        super().__init__()
        d = cfg.d_model
        self.ff1 = FeedForward(d, cfg.ff_expansion, cfg.dropout)
        self.attn = RelPosSelfAttention(d, cfg.n_heads, cfg.dropout)
        self.conv = ConvModule(d, cfg.conv_kernel, cfg.dropout)
        self.ff2 = FeedForward(d, cfg.ff_expansion, cfg.dropout)
        self.norm_ff1 = nn.LayerNorm(d)
        self.norm_attn = nn.LayerNorm(d)
        self.norm_conv = nn.LayerNorm(d)
        self.norm_ff2 = nn.LayerNorm(d)
        self.norm_final = nn.LayerNorm(d)

    def forward(self, x, key_mask):
        x = x + 0.5 * self.ff1(self.norm_ff1(x))
        x = x + self.attn(self.norm_attn(x), key_mask)
        x = x + self.conv(self.norm_conv(x),
                          key_mask.to(x.dtype) if key_mask is not None else None)
        x = x + 0.5 * self.ff2(self.norm_ff2(x))
        return self.norm_final(x)


class PostNet(nn.Module):
    """Convolutional recurrent refiner; its output is a residual correction."""

    def __init__(self, cfg: AcousticConfig):
        super().__init__()
        ch, k = cfg.postnet_channels, cfg.postnet_kernel
        convs = [nn.Conv1d(cfg.mel_dim, ch, k, padding=k // 2), nn.Tanh()]
        for _ in range(cfg.postnet_conv_layers - 1):
            convs += [nn.Conv1d(ch, ch, k, padding=k // 2), nn.Tanh()]
        self.convs = nn.Sequential(*convs)
        self.rnn = nn.GRU(ch, cfg.postnet_rnn_units, batch_first=True,
                          bidirectional=True)
        self.out = nn.Linear(2 * cfg.postnet_rnn_units, cfg.mel_dim)

    def forward(self, mel):
        h = self.convs(mel.transpose(1, 2)).transpose(1, 2)
        h, _ = self.rnn(h)
        return self.out(h)


class AcousticModel(nn.Module):
    def __init__(self, cfg: AcousticConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.proj_content = nn.Linear(cfg.content_dim, d)
        self.proj_speaker = nn.Linear(cfg.speaker_dim, d)
        self.proj_pitch = nn.Linear(cfg.pitch_input_dim, d)
        self.pre_linear = nn.Linear(d, d)
        self.blocks = nn.ModuleList(ConformerBlock(cfg) for _ in range(cfg.n_blocks))
        self.out_linear = nn.Linear(d, cfg.mel_dim)
        self.postnet = PostNet(cfg)

    def _pitch_features(self, pitch: torch.Tensor) -> torch.Tensor:
        scaled = torch.log1p(pitch.clamp_min(0.0))[..., None] / PITCH_INPUT_SCALE
        if self.cfg.pitch_fourier_bands == 0:
            return scaled
        bands = torch.arange(1, self.cfg.pitch_fourier_bands + 1,
                             device=pitch.device, dtype=scaled.dtype)
        angles = 2.0 * math.pi * scaled * bands
        voiced = (pitch > 0).to(scaled.dtype)[..., None]
        return torch.cat([scaled, torch.sin(angles) * voiced,
                          torch.cos(angles) * voiced], dim=-1)

    def forward(self, content: torch.Tensor, speaker: torch.Tensor,
                pitch: torch.Tensor, key_mask: torch.Tensor | None = None):
        """content [B,T,Dc], speaker [B,Ds], pitch [B,T] (Hz), mask [B,T] bool."""
        t = content.size(1)
        if t > self.cfg.max_frames:
            raise SequenceLengthError(
                f"{t} frames exceeds the maximum of {self.cfg.max_frames}")
        spk = speaker[:, None, :].expand(-1, t, -1)
        x = (self.proj_content(content) + self.proj_speaker(spk)
             + self.proj_pitch(self._pitch_features(pitch)))
        x = self.pre_linear(x)
        for block in self.blocks:
            x = block(x, key_mask)
            if key_mask is not None:
                x = x * key_mask[..., None].to(x.dtype)
        mel_linear = self.out_linear(x)
        mel_postnet = mel_linear + self.postnet(mel_linear)
        return mel_linear, mel_postnet


def init_acoustic(config: AcousticConfig, seed: int) -> AcousticModel:
    """Fresh model with seed-deterministic parameters."""
    torch.manual_seed(seed)
    return AcousticModel(config)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def parameter_checksum(model: nn.Module) -> str:
    """Stable digest of all parameters; used by the freeze auditor."""
    digest = hashlib.sha256()
    state = model.state_dict()
    for name in sorted(state):
        digest.update(name.encode())
        digest.update(state[name].detach().cpu().numpy().astype(np.float32).tobytes())
    return digest.hexdigest()


def _bundle_tensors(bundle: EmbeddingBundle):
    content = torch.from_numpy(bundle.content.values[None]).float()
    speaker = torch.from_numpy(bundle.speaker.values[None]).float()
    pitch = torch.from_numpy(bundle.pitch.f0_hz[None]).float()
    return content, speaker, pitch


def _wrap_output(mel_linear: np.ndarray, mel_postnet: np.ndarray) -> AcousticOutput:
    # predictions are floored like analysis mels so the type invariant holds
    spec = FrameSpec()
    def clamp(m):
        return np.maximum(m.astype(np.float64), LOG_MEL_FLOOR)
    return AcousticOutput(MelSpectrogram(clamp(mel_linear), spec),
                          MelSpectrogram(clamp(mel_postnet), spec))


def acoustic_forward(model: AcousticModel, bundle: EmbeddingBundle) -> AcousticOutput:
    """Single-bundle inference; rejects inputs beyond max_frames."""
    if bundle.num_frames > model.cfg.max_frames:
        raise SequenceLengthError(
            f"{bundle.num_frames} frames exceeds the maximum of "
            f"{model.cfg.max_frames}; chunk the input")
    model.eval()
    with torch.no_grad():
        lin, post = model(*_bundle_tensors(bundle))
    return _wrap_output(lin[0].numpy(), post[0].numpy())


def acoustic_infer(model: AcousticModel, bundle: EmbeddingBundle,
                   overlap: int = 100) -> AcousticOutput:
    """Inference for any length: long inputs are chunked at max_frames with
    `overlap` shared frames and linearly cross-faded."""
    t = bundle.num_frames
    max_frames = model.cfg.max_frames
    if t <= max_frames:
        return acoustic_forward(model, bundle)

    from .features import ContentPPG, PitchContour

    step = max_frames - overlap
    lin_acc = np.zeros((t, model.cfg.mel_dim))
    post_acc = np.zeros((t, model.cfg.mel_dim))
    weight = np.zeros(t)
    ramp_in = np.linspace(0.0, 1.0, overlap)
    start = 0
    while start < t:
        stop = min(start + max_frames, t)
        piece = EmbeddingBundle(
            ContentPPG(bundle.content.values[start:stop], bundle.content.normalized),
            bundle.speaker,
            PitchContour(bundle.pitch.f0_hz[start:stop]),
        )
        out = acoustic_forward(model, piece)
        n = stop - start
        fade = np.ones(n)
        if start > 0:
            fade[:min(overlap, n)] = ramp_in[:min(overlap, n)]
        if stop < t:
            fade[-min(overlap, n):] *= ramp_in[:min(overlap, n)][::-1]
        lin_acc[start:stop] += out.mel_linear.values * fade[:, None]
        post_acc[start:stop] += out.mel_postnet.values * fade[:, None]
        weight[start:stop] += fade
        if stop == t:
            break
        start += step
    weight = np.maximum(weight, 1e-8)
    lin_acc /= weight[:, None]
    post_acc /= weight[:, None]
    return _wrap_output(lin_acc, post_acc)


def combined_reconstruction_loss(mel_linear: torch.Tensor, mel_postnet: torch.Tensor,
                                 target: torch.Tensor,
                                 mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean-reduced L1 + MSE for both prediction heads against the target."""
    if mel_linear.shape != target.shape or mel_postnet.shape != target.shape:
        raise ShapeError("prediction and target shapes differ")
    if mask is None:
        terms = [F.l1_loss(mel_linear, target), F.mse_loss(mel_linear, target),
                 F.l1_loss(mel_postnet, target), F.mse_loss(mel_postnet, target)]
        return sum(terms)
    m = mask[..., None].to(target.dtype)
    denom = m.sum() * target.size(-1)
    total = target.new_zeros(())
    for pred in (mel_linear, mel_postnet):
        diff = (pred - target) * m
        total = total + diff.abs().sum() / denom + (diff ** 2).sum() / denom
    return total


def acoustic_loss(out: AcousticOutput, gt: MelSpectrogram) -> float:
    """Combined L1 + mean-squared loss over both heads (mean reduction)."""
    if out.mel_linear.values.shape != gt.values.shape:
        raise ShapeError(
            f"output frames {out.mel_linear.values.shape} != target {gt.values.shape}")
    total = 0.0
    for pred in (out.mel_linear.values, out.mel_postnet.values):
        diff = pred - gt.values
        total += float(np.mean(np.abs(diff))) + float(np.mean(diff ** 2))
    return total


def save_acoustic(path, model: AcousticModel) -> None:
    from . import container

    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    container.save_checkpoint(path, asdict(model.cfg), arrays, kind="acoustic")


def load_acoustic(path) -> AcousticModel:
    from . import container

    config, arrays = container.load_checkpoint(path)
    model = AcousticModel(AcousticConfig(**config))
    state = {k: torch.from_numpy(v) for k, v in arrays.items()}
    model.load_state_dict(state)
    model.eval()
    return model
