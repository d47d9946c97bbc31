"""Training regimes: acoustic reconstruction, vocoder GAN, alternating finetune.

The end-to-end finetune alternates strictly, starting with the vocoder:
update the vocoder with the acoustic model frozen, then update the
acoustic model with the vocoder frozen (frozen means not updated; in the
acoustic phase gradients still flow through the vocoder so the acoustic
model can adapt to it). Every phase is auditable: the frozen side's
parameter checksum is recorded before and after, and a mismatch raises.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch

from .acoustic import AcousticModel, combined_reconstruction_loss, parameter_checksum
from .errors import InternalInvariantError, TrainingDivergenceError
from .vocoder import (
    DiscriminatorSet,
    Generator,
    GanLossReport,
    GanOptimizers,
    TorchMelAnalyzer,
    gan_step,
    make_gan_optimizers,
)


class TrainingExample(NamedTuple):
    """Everything the trainers need for one utterance, all frame-aligned."""

    utterance_id: str
    content: np.ndarray   # [T, content_dim]
    speaker: np.ndarray   # [speaker_dim]
    pitch: np.ndarray     # [T]
    mel: np.ndarray       # [T, 80] log scale
    wave: np.ndarray      # [T * hop]


@dataclass(frozen=True)
class AcousticSchedule:
    batch_size: int = 24
    learning_rate: float = 1e-3
    weight_decay: float = 1e-6
    epochs: int = 2000
    checkpoint_every: int = 0  # 0 = no periodic checkpoints
    crop_frames: int = 0  # 0 = full utterances (up to the model maximum)
    # train-time regularizers for the content stream. Gaussian noise blunts
    # residual fine structure; a random time shift of up to content_shift
    # frames (edge-repeated) destroys frame-precise cues entirely, so
    # harmonic placement has to come from the explicit pitch input. Content
    # itself is ~3-frame granular anyway, so small shifts cost nothing.
    content_noise_sd: float = 0.0
    content_shift_frames: int = 0

    def scaled(self, factor: float) -> "AcousticSchedule":
        return AcousticSchedule(self.batch_size, self.learning_rate,
                                self.weight_decay,
                                max(1, round(self.epochs * factor)),
                                self.checkpoint_every, self.crop_frames,
                                self.content_noise_sd, self.content_shift_frames)


@dataclass(frozen=True)
class VocoderSchedule:
    batch_size: int = 32
    learning_rate: float = 2e-4
    steps: int = 200000
    # exponential decay, applied every lr_decay_every steps
    lr_decay_gamma: float = 0.999
    lr_decay_every: int = 500

    def scaled(self, factor: float) -> "VocoderSchedule":
        return VocoderSchedule(self.batch_size, self.learning_rate,
                               max(1, round(self.steps * factor)),
                               self.lr_decay_gamma, self.lr_decay_every)


@dataclass(frozen=True)
class E2ESchedule:
    rounds: int = 5
    vocoder_steps_per_round: int = 5000
    acoustic_epochs_per_round: int = 100
    batch_size: int = 8
    learning_rate: float = 2e-4

    def scaled(self, factor: float) -> "E2ESchedule":
        return E2ESchedule(self.rounds,
                           max(1, round(self.vocoder_steps_per_round * factor)),
                           max(1, round(self.acoustic_epochs_per_round * factor)),
                           self.batch_size, self.learning_rate)


@dataclass(frozen=True)
class TrainSchedule:
    acoustic: AcousticSchedule = field(default_factory=AcousticSchedule)
    vocoder: VocoderSchedule = field(default_factory=VocoderSchedule)
    e2e: E2ESchedule = field(default_factory=E2ESchedule)

    def scaled(self, factor: float) -> "TrainSchedule":
        return TrainSchedule(self.acoustic.scaled(factor),
                             self.vocoder.scaled(factor),
                             self.e2e.scaled(factor))


@dataclass(frozen=True)
class PhaseRecord:
    phase: str          # "vocoder" | "acoustic"
    round_index: int
    steps: int
    wall_time_s: float
    frozen_checksum_before: str
    frozen_checksum_after: str

    def as_line(self) -> str:
        return json.dumps({"phase": self.phase, "round": self.round_index,
                           "steps": self.steps, "wall_time": self.wall_time_s})


def _phase_seed(seed: int, phase_index: int) -> int:
    return (seed * 1000003 + phase_index * 7919 + 17) % (2 ** 31 - 1)


def _require_finite(value: float, context: str) -> float:
    if not math.isfinite(value):
        raise TrainingDivergenceError(f"{context} produced a non-finite loss")
    return value


def _shifted(content: np.ndarray, shift: int) -> np.ndarray:
    if shift == 0:
        return content
    if shift > 0:
        return np.concatenate([np.repeat(content[:1], shift, axis=0),
                               content[:-shift]], axis=0)
    return np.concatenate([content[-shift:],
                           np.repeat(content[-1:], -shift, axis=0)], axis=0)


def _collate_acoustic(batch: list[TrainingExample], max_frames: int,
                      rng: np.random.Generator, crop_frames: int = 0,
                      content_shift: int = 0):
    limit = min(crop_frames, max_frames) if crop_frames else max_frames
    cropped = []
    for ex in batch:
        content = ex.content
        if content_shift:
            content = _shifted(content, int(rng.integers(-content_shift,
                                                         content_shift + 1)))
        t = content.shape[0]
        if t > limit:
            start = int(rng.integers(0, t - limit + 1))
            cropped.append((content[start:start + limit],
                            ex.pitch[start:start + limit],
                            ex.mel[start:start + limit], ex.speaker))
        else:
            cropped.append((content, ex.pitch, ex.mel, ex.speaker))
    t_max = max(c[0].shape[0] for c in cropped)
    b = len(cropped)
    content = np.zeros((b, t_max, cropped[0][0].shape[1]), dtype=np.float32)
    pitch = np.zeros((b, t_max), dtype=np.float32)
    mel = np.zeros((b, t_max, cropped[0][2].shape[1]), dtype=np.float32)
    speaker = np.zeros((b, cropped[0][3].shape[0]), dtype=np.float32)
    mask = np.zeros((b, t_max), dtype=bool)
    for i, (c, p, m, s) in enumerate(cropped):
        t = c.shape[0]
        content[i, :t] = c
        pitch[i, :t] = p
        mel[i, :t] = m
        speaker[i] = s
        mask[i, :t] = True
    to = torch.from_numpy
    return to(content), to(speaker), to(pitch), to(mel), to(mask)


def train_acoustic(model: AcousticModel, dataset: list[TrainingExample],
                   schedule: AcousticSchedule, seed: int,
                   metrics_path=None, checkpoint_dir=None) -> list[float]:
    """Reconstruction training; returns the per-epoch mean loss curve."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    optimizer = torch.optim.AdamW(model.parameters(), lr=schedule.learning_rate,
                                  weight_decay=schedule.weight_decay,
                                  betas=(0.9, 0.999))
    curve: list[float] = []
    for epoch in range(schedule.epochs):
        order = rng.permutation(len(dataset))
        losses = []
        model.train()
        for lo in range(0, len(order), schedule.batch_size):
            batch = [dataset[i] for i in order[lo:lo + schedule.batch_size]]
            content, speaker, pitch, mel, mask = _collate_acoustic(
                batch, model.cfg.max_frames, rng, schedule.crop_frames,
                schedule.content_shift_frames)
            if schedule.content_noise_sd > 0:
                content = content + schedule.content_noise_sd * torch.randn_like(content)
            lin, post = model(content, speaker, pitch, mask)
            loss = combined_reconstruction_loss(lin, post, mel, mask)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(_require_finite(float(loss.detach()), "acoustic training"))
        curve.append(float(np.mean(losses)))
        if checkpoint_dir and schedule.checkpoint_every and \
                (epoch + 1) % schedule.checkpoint_every == 0:
            from .acoustic import save_acoustic

            save_acoustic(Path(checkpoint_dir) / f"acoustic-epoch{epoch + 1}.ckpt", model)
    if metrics_path is not None:
        with open(metrics_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss"])
            writer.writerows((i, f"{v:.6f}") for i, v in enumerate(curve))
    model.eval()
    return curve


def _sample_crops(dataset: list[TrainingExample], batch_size: int,
                  segment_frames: int, hop: int, rng: np.random.Generator):
    crops = []
    for _ in range(batch_size):
        ex = dataset[int(rng.integers(0, len(dataset)))]
        t = ex.mel.shape[0]
        if t <= segment_frames:
            start = 0
            mel = ex.mel
            wav = ex.wave
            if t < segment_frames:
                mel = np.concatenate(
                    [mel, np.tile(mel[-1:], (segment_frames - t, 1))], axis=0)
                wav = np.concatenate(
                    [wav, np.zeros(segment_frames * hop - wav.size)])
        else:
            start = int(rng.integers(0, t - segment_frames + 1))
            mel = ex.mel[start:start + segment_frames]
            wav = ex.wave[start * hop:(start + segment_frames) * hop]
        crops.append((mel, wav))
    return crops


def train_vocoder(generator: Generator, discriminators: DiscriminatorSet,
                  dataset: list[TrainingExample], schedule: VocoderSchedule,
                  seed: int, metrics_path=None) -> list[GanLossReport]:
    """GAN training on ground-truth mel/wave crops; one report per step."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    optimizers = make_gan_optimizers(generator, discriminators,
                                     lr=schedule.learning_rate)
    schedulers = [torch.optim.lr_scheduler.ExponentialLR(opt, schedule.lr_decay_gamma)
                  for opt in optimizers]
    analyzer = TorchMelAnalyzer()
    cfg = generator.cfg
    reports: list[GanLossReport] = []
    for step in range(schedule.steps):
        crops = _sample_crops(dataset, schedule.batch_size, cfg.segment_frames,
                              cfg.hop_samples, rng)
        reports.append(gan_step(generator, discriminators, crops, optimizers,
                                analyzer))
        if schedule.lr_decay_every and (step + 1) % schedule.lr_decay_every == 0:
            for sched in schedulers:
                sched.step()
    if metrics_path is not None:
        with open(metrics_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "adv_g", "adv_d", "fm", "mel"])
            for i, r in enumerate(reports):
                writer.writerow([i, f"{r.adv_g:.6f}", f"{r.adv_d:.6f}",
                                 f"{r.fm:.6f}", f"{r.mel:.6f}"])
    generator.eval()
    discriminators.eval()
    return reports


def _set_frozen(module: torch.nn.Module, frozen: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(not frozen)
    module.eval() if frozen else module.train()


def _predict_mel(model: AcousticModel, ex: TrainingExample,
                 grad: bool) -> torch.Tensor:
    content = torch.from_numpy(ex.content[None].astype(np.float32))
    speaker = torch.from_numpy(ex.speaker[None].astype(np.float32))
    pitch = torch.from_numpy(ex.pitch[None].astype(np.float32))
    with torch.set_grad_enabled(grad):
        _, post = model(content, speaker, pitch)
    return post[0]


@dataclass
class E2EResult:
    phase_log: list[PhaseRecord]
    vocoder_losses: list[GanLossReport]
    acoustic_losses: list[float]

    def write_phase_log(self, path) -> None:
        with open(path, "w") as fh:
            for record in self.phase_log:
                fh.write(record.as_line() + "\n")


def _optimizer_arrays(opt: torch.optim.Optimizer, prefix: str):
    arrays = {}
    groups = []
    state = opt.state_dict()
    for idx, entry in state["state"].items():
        for key, value in entry.items():
            if torch.is_tensor(value):
                arrays[f"{prefix}/state/{idx}/{key}"] = value.detach().cpu().numpy()
            else:
                arrays[f"{prefix}/state/{idx}/{key}"] = np.asarray(value)
    for group in state["param_groups"]:
        groups.append({k: v for k, v in group.items()})
    return arrays, groups


def _restore_optimizer(opt: torch.optim.Optimizer, arrays: dict, groups: list,
                       prefix: str) -> None:
    state: dict = {}
    marker = f"{prefix}/state/"
    for name, value in arrays.items():
        if not name.startswith(marker):
            continue
        idx_str, key = name[len(marker):].split("/", 1)
        entry = state.setdefault(int(idx_str), {})
        if value.ndim == 0:
            entry[key] = torch.tensor(value.item())
        else:
            entry[key] = torch.from_numpy(value.copy())
    opt.load_state_dict({"state": state, "param_groups": groups})


def save_e2e_state(path, acoustic: AcousticModel, generator: Generator,
                   discriminators: DiscriminatorSet,
                   acoustic_opt: torch.optim.Optimizer,
                   gan_opts: GanOptimizers, completed_phases: int,
                   seed: int) -> None:
    from . import container

    arrays = {}
    for prefix, module in (("acoustic", acoustic), ("generator", generator),
                           ("discriminators", discriminators)):
        arrays.update({f"{prefix}/{k}": v.detach().cpu().numpy()
                       for k, v in module.state_dict().items()})
    meta_groups = {}
    for prefix, opt in (("opt_acoustic", acoustic_opt),
                        ("opt_gen", gan_opts.generator),
                        ("opt_disc", gan_opts.discriminator)):
        opt_arrays, groups = _optimizer_arrays(opt, prefix)
        arrays.update(opt_arrays)
        meta_groups[prefix] = groups
    config = {"completed_phases": completed_phases, "seed": seed,
              "param_groups": meta_groups,
              "acoustic_config": asdict(acoustic.cfg),
              "vocoder_config": asdict(generator.cfg)}
    container.save_checkpoint(path, config, arrays, kind="e2e-state")


def _load_module_state(module: torch.nn.Module, arrays: dict, prefix: str) -> None:
    state = {k[len(prefix) + 1:]: torch.from_numpy(v.copy())
             for k, v in arrays.items()
             if k.startswith(prefix + "/") and "/state/" not in k}
    module.load_state_dict(state)


def finetune_e2e(acoustic: AcousticModel, generator: Generator,
                 discriminators: DiscriminatorSet,
                 dataset: list[TrainingExample], schedule: E2ESchedule,
                 seed: int, resume_from=None, phase_log_path=None,
                 state_path=None) -> E2EResult:
    """Alternating finetune: [vocoder x steps, acoustic x epochs] per round.

    The composite adversarial objective is computed on end-to-end audio in
    both phases. In the acoustic phase the vocoder is frozen but not
    detached, so gradients reach the acoustic model through it.
    """
    acoustic_opt = torch.optim.AdamW(acoustic.parameters(),
                                     lr=schedule.learning_rate, betas=(0.9, 0.999))
    gan_opts = make_gan_optimizers(generator, discriminators,
                                   lr=schedule.learning_rate)
    analyzer = TorchMelAnalyzer()
    completed = 0
    if resume_from is not None:
        from . import container

        config, arrays = container.load_checkpoint(resume_from)
        _load_module_state(acoustic, arrays, "acoustic")
        _load_module_state(generator, arrays, "generator")
        _load_module_state(discriminators, arrays, "discriminators")
        groups = config["param_groups"]
        _restore_optimizer(acoustic_opt, arrays, groups["opt_acoustic"], "opt_acoustic")
        _restore_optimizer(gan_opts.generator, arrays, groups["opt_gen"], "opt_gen")
        _restore_optimizer(gan_opts.discriminator, arrays, groups["opt_disc"], "opt_disc")
        completed = int(config["completed_phases"])
        seed = int(config["seed"])

    cfg = generator.cfg
    result = E2EResult([], [], [])
    total_phases = schedule.rounds * 2
    for phase_index in range(completed, total_phases):
        round_index = phase_index // 2
        vocoder_phase = phase_index % 2 == 0
        phase_seed = _phase_seed(seed, phase_index)
        torch.manual_seed(phase_seed)
        rng = np.random.default_rng(phase_seed)
        started = time.monotonic()

        if vocoder_phase:
            frozen, active = acoustic, "vocoder"
            _set_frozen(acoustic, True)
            _set_frozen(generator, False)
            _set_frozen(discriminators, False)
            before = parameter_checksum(frozen)
            steps = schedule.vocoder_steps_per_round
            for _ in range(steps):
                picks = [dataset[int(rng.integers(0, len(dataset)))]
                         for _ in range(schedule.batch_size)]
                crops = []
                for ex in picks:
                    mel_pred = _predict_mel(acoustic, ex, grad=False).numpy()
                    t = mel_pred.shape[0]
                    if t <= cfg.segment_frames:
                        start = 0
                    else:
                        start = int(rng.integers(0, t - cfg.segment_frames + 1))
                    stop = min(start + cfg.segment_frames, t)
                    crops.append((mel_pred[start:stop],
                                  ex.wave[start * cfg.hop_samples:stop * cfg.hop_samples]))
                result.vocoder_losses.append(
                    gan_step(generator, discriminators, crops, gan_opts, analyzer))
        else:
            frozen, active = generator, "acoustic"
            _set_frozen(generator, True)
            _set_frozen(discriminators, True)
            _set_frozen(acoustic, False)
            before = parameter_checksum(frozen)
            steps = 0
            for _ in range(schedule.acoustic_epochs_per_round):
                order = rng.permutation(len(dataset))
                for i in order:
                    ex = dataset[int(i)]
                    mel_pred = _predict_mel(acoustic, ex, grad=True)
                    t = mel_pred.shape[0]
                    if t <= cfg.segment_frames:
                        start, stop = 0, t
                    else:
                        start = int(rng.integers(0, t - cfg.segment_frames + 1))
                        stop = start + cfg.segment_frames
                    fake = generator(mel_pred[None, start:stop])
                    real = torch.from_numpy(
                        ex.wave[start * cfg.hop_samples:stop * cfg.hop_samples]
                        .astype(np.float32))[None, None]
                    fake_scores, fake_feats = discriminators(fake)
                    with torch.no_grad():
                        _, real_feats = discriminators(real)
                    adv = sum(((f - 1.0) ** 2).mean() for f in fake_scores)
                    fm = sum(torch.nn.functional.l1_loss(ff, rf)
                             for gf, gr in zip(fake_feats, real_feats)
                             for ff, rf in zip(gf, gr))
                    mel_loss = torch.nn.functional.l1_loss(
                        analyzer(fake.squeeze(1)), analyzer(real.squeeze(1)))
                    loss = adv + cfg.fm_weight * fm + cfg.mel_weight * mel_loss
                    acoustic_opt.zero_grad()
                    loss.backward()
                    acoustic_opt.step()
                    value = _require_finite(float(loss.detach()), "e2e acoustic phase")
                    result.acoustic_losses.append(value)
                    steps += 1

        after = parameter_checksum(frozen)
        if before != after:
            raise InternalInvariantError(
                f"frozen {('acoustic' if vocoder_phase else 'vocoder')} model "
                f"changed during the {active} phase of round {round_index}")
        result.phase_log.append(PhaseRecord(
            active, round_index, steps, time.monotonic() - started, before, after))
        if state_path is not None:
            save_e2e_state(state_path, acoustic, generator, discriminators,
                           acoustic_opt, gan_opts, phase_index + 1, seed)

    _audit_phase_log(result.phase_log, schedule, starting_phase=completed)
    _set_frozen(acoustic, True)
    _set_frozen(generator, True)
    _set_frozen(discriminators, True)
    for module in (acoustic, generator, discriminators):
        for p in module.parameters():
            p.requires_grad_(True)
        module.eval()
    if phase_log_path is not None:
        result.write_phase_log(phase_log_path)
    return result


def _audit_phase_log(log: list[PhaseRecord], schedule: E2ESchedule,
                     starting_phase: int = 0) -> None:
    """Phases must strictly alternate, vocoder first, with matching counts."""
    for offset, record in enumerate(log):
        phase_index = starting_phase + offset
        expected = "vocoder" if phase_index % 2 == 0 else "acoustic"
        if record.phase != expected:
            raise InternalInvariantError(
                f"phase {phase_index} was {record.phase}, expected {expected}")
        if record.round_index != phase_index // 2:
            raise InternalInvariantError("phase log round index out of order")
        if record.frozen_checksum_before != record.frozen_checksum_after:
            raise InternalInvariantError("frozen checksum drifted within a phase")
        if record.phase == "vocoder" and record.steps != schedule.vocoder_steps_per_round:
            raise InternalInvariantError("vocoder phase ran a wrong step count")
