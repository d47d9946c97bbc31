"""Shared fixtures: a synthetic corpus and desk-scale trained models.

Training the toy models costs minutes, so the session fixtures cache their
checkpoints in pytest's cache directory, keyed by a fingerprint of the
corpus generator and the training recipe. Deterministic seeds make the
cached checkpoints byte-equivalent to retraining.
"""

import hashlib
from pathlib import Path
from types import SimpleNamespace

import pytest

from singkit.acoustic import AcousticConfig, init_acoustic, load_acoustic, save_acoustic
from singkit.adapters import CepstralContentAdapter, SpectralStatsSpeakerAdapter
from singkit.cache import EmbeddingCache, load_training_set, precompute, speaker_group_hash
from singkit.features import (
    ContentPPG,
    EmbeddingBundle,
    PitchContour,
    SpeakerEmbedding,
)
from singkit.manifest import ingest
from singkit.registry import build_registry
from singkit.training import AcousticSchedule, VocoderSchedule, train_acoustic, train_vocoder
from singkit.vocoder import VocoderConfig, init_vocoder, load_vocoder, save_vocoder

from toyvoice import build_toy_corpus

TOY_ACOUSTIC_CONFIG = AcousticConfig(
    d_model=96, n_blocks=2, n_heads=2, ff_expansion=2,
    postnet_channels=64, postnet_rnn_units=32, dropout=0.0,
    pitch_fourier_bands=16)
TOY_ACOUSTIC_SCHEDULE = AcousticSchedule(
    batch_size=8, learning_rate=1e-3, weight_decay=1e-6, epochs=500,
    crop_frames=16, content_shift_frames=4)
TOY_VOCODER_CONFIG = VocoderConfig.toy()
TOY_VOCODER_SCHEDULE = VocoderSchedule(
    batch_size=2, learning_rate=5e-4, steps=1500,
    lr_decay_gamma=0.997, lr_decay_every=10)
TOY_SEED = 1


def _recipe_fingerprint() -> str:
    source = (Path(__file__).parent / "toyvoice.py").read_bytes()
    recipe = repr((TOY_ACOUSTIC_CONFIG, TOY_ACOUSTIC_SCHEDULE,
                   TOY_VOCODER_CONFIG, TOY_VOCODER_SCHEDULE, TOY_SEED,
                   CepstralContentAdapter().version,
                   SpectralStatsSpeakerAdapter().version)).encode()
    return hashlib.sha256(source + recipe).hexdigest()[:16]


@pytest.fixture(scope="session")
def toy_workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy-data")
    build_toy_corpus(root / "corpus")
    manifest = ingest(root / "corpus", root / "data")
    cache = EmbeddingCache(root / "cache")
    content_adapter = CepstralContentAdapter()
    speaker_adapter = SpectralStatsSpeakerAdapter()
    summary = precompute(manifest, cache, content_adapter, speaker_adapter)
    assert summary.failures == {}
    dataset = load_training_set(manifest, cache, content_adapter, speaker_adapter)
    return SimpleNamespace(root=root, manifest=manifest, cache=cache,
                           dataset=dataset, content_adapter=content_adapter,
                           speaker_adapter=speaker_adapter)


def _checkpoint_dir(request) -> Path:
    return Path(request.config.cache.mkdir(f"singkit-toys-{_recipe_fingerprint()}"))


@pytest.fixture(scope="session")
def toy_acoustic(toy_workspace, request):
    path = _checkpoint_dir(request) / "acoustic.ckpt"
    if path.exists():
        return load_acoustic(path)
    model = init_acoustic(TOY_ACOUSTIC_CONFIG, seed=TOY_SEED)
    train_acoustic(model, toy_workspace.dataset, TOY_ACOUSTIC_SCHEDULE,
                   seed=TOY_SEED)
    save_acoustic(path, model)
    return model


@pytest.fixture(scope="session")
def toy_vocoder(toy_workspace, request):
    path = _checkpoint_dir(request) / "vocoder.ckpt"
    if path.exists():
        return load_vocoder(path)
    generator, discriminators = init_vocoder(TOY_VOCODER_CONFIG, seed=TOY_SEED)
    train_vocoder(generator, discriminators, toy_workspace.dataset,
                  TOY_VOCODER_SCHEDULE, seed=TOY_SEED)
    save_vocoder(path, generator, discriminators)
    return generator


@pytest.fixture(scope="session")
def single_overfit(request):
    """Single-utterance overfit pair + run stats, cached across sessions.

    The vocoder runs the full 2000-step budget recording when (if ever) the
    mel reconstruction first dropped below 0.5; the acoustic model overfits
    the same utterance. Several tests read from this one expensive run.
    """
    import json

    import numpy as np
    import torch

    from singkit.audio import Waveform, mel_analyze
    from singkit.features import extract_content, extract_speaker, estimate_pitch
    from singkit.training import TrainingExample
    from singkit.vocoder import gan_step, make_gan_optimizers

    from toyvoice import single_rich_utterance

    cache_dir = _checkpoint_dir(request)
    stats_path = cache_dir / "single-overfit.json"
    acoustic_path = cache_dir / "single-acoustic.ckpt"
    vocoder_path = cache_dir / "single-vocoder.ckpt"

    wave_np = single_rich_utterance(seed=0)
    wave = Waveform(wave_np)
    mel = mel_analyze(wave).values
    t = mel.shape[0]
    content = extract_content(wave, CepstralContentAdapter())
    pitch = estimate_pitch(wave)
    speaker = extract_speaker(wave, SpectralStatsSpeakerAdapter())
    padded = np.concatenate([wave_np, np.zeros(t * 240 - wave_np.size)])
    example = TrainingExample("one", content.values[:t], speaker.values,
                              pitch.f0_hz[:t], mel, padded[:t * 240])

    if stats_path.exists():
        stats = json.loads(stats_path.read_text())
        return SimpleNamespace(example=example,
                               acoustic=load_acoustic(acoustic_path),
                               generator=load_vocoder(vocoder_path), **stats)

    acoustic = init_acoustic(TOY_ACOUSTIC_CONFIG, seed=3)
    schedule = AcousticSchedule(batch_size=1, learning_rate=1e-3,
                                weight_decay=1e-6, epochs=400)
    acoustic_curve = train_acoustic(acoustic, [example], schedule, seed=3)

    cfg = TOY_VOCODER_CONFIG
    generator, discriminators = init_vocoder(cfg, seed=1)
    optimizers = make_gan_optimizers(generator, discriminators, lr=5e-4)
    schedulers = [torch.optim.lr_scheduler.ExponentialLR(o, 0.997)
                  for o in optimizers]
    rng = np.random.default_rng(0)
    seg = cfg.segment_frames
    hit_step = None
    best_mel = float("inf")
    for step in range(2000):
        crops = []
        for _ in range(2):
            start = int(rng.integers(0, t - seg + 1))
            crops.append((mel[start:start + seg],
                          example.wave[start * 240:(start + seg) * 240]))
        report = gan_step(generator, discriminators, crops, optimizers)
        if (step + 1) % 10 == 0:
            for sched in schedulers:
                sched.step()
        best_mel = min(best_mel, report.mel)
        if report.mel < 0.5 and hit_step is None:
            hit_step = step
    generator.eval()

    stats = {"hit_step": hit_step, "best_mel": best_mel,
             "acoustic_loss_ratio": acoustic_curve[-1] / acoustic_curve[0]}
    save_acoustic(acoustic_path, acoustic)
    save_vocoder(vocoder_path, generator)
    stats_path.write_text(json.dumps(stats))
    return SimpleNamespace(example=example, acoustic=acoustic,
                           generator=generator, **stats)


@pytest.fixture(scope="session")
def toy_prototypes(toy_workspace):
    """(id, name, embedding) per toy speaker, from the cached averages."""
    out = []
    for speaker_id in toy_workspace.manifest.speakers():
        members = [e.utterance_id
                   for e in toy_workspace.manifest.by_speaker(speaker_id)]
        vec = toy_workspace.cache.get(
            "speaker-avg", speaker_group_hash(members),
            toy_workspace.speaker_adapter.name,
            toy_workspace.speaker_adapter.version)
        out.append((speaker_id, speaker_id.title(), SpeakerEmbedding(vec)))
    return out


@pytest.fixture(scope="session")
def toy_melody(toy_workspace):
    ex = toy_workspace.dataset[0]
    return EmbeddingBundle(ContentPPG(ex.content), SpeakerEmbedding(ex.speaker),
                           PitchContour(ex.pitch))


@pytest.fixture(scope="session")
def toy_registry_dir(toy_workspace, toy_acoustic, toy_vocoder, toy_prototypes,
                     toy_melody, tmp_path_factory):
    root = tmp_path_factory.mktemp("toy-registry")
    build_registry(root, toy_acoustic, toy_vocoder, toy_prototypes,
                   melodies={"demo": toy_melody})
    return root
