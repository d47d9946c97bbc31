"""Command line surface: dataset prep, training, editing, rendering, serving.

Synthesis subcommands route through the same registry handlers as the HTTP
service, so for identical payloads the CLI and the service emit identical
bytes.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import container
from .acoustic import AcousticConfig, init_acoustic, load_acoustic, save_acoustic
from .adapters import CepstralContentAdapter, PassthroughSeparator, SpectralStatsSpeakerAdapter
from .audio import load_audio, write_wav
from .cache import EmbeddingCache, load_training_set, precompute
from .choir import JitterSpec, generate_choir_spec
from .control import parse_intervals, resample_ppg_by_intervals, transpose_pitch
from .evaluation import (
    pitch_accuracy,
    plot_comparison,
    sve_curve,
)
from .features import (
    ContentPPG,
    EmbeddingBundle,
    PitchContour,
    SpeakerEmbedding,
    estimate_pitch,
    load_bundle,
    save_bundle,
)
from .manifest import DatasetManifest, ingest as ingest_dataset
from .registry import ModelRegistry
from .training import (
    AcousticSchedule,
    E2ESchedule,
    TrainSchedule,
    VocoderSchedule,
    finetune_e2e,
    train_acoustic,
    train_vocoder,
)
from .vocoder import VocoderConfig, init_vocoder, load_vocoder, save_vocoder


def _load_config(path) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        return yaml.safe_load(text) or {}
    return json.loads(text)


def _schedule_from_config(config: dict) -> TrainSchedule:
    schedule = TrainSchedule()
    if "acoustic" in config:
        schedule = replace(schedule,
                           acoustic=replace(schedule.acoustic, **config["acoustic"]))
    if "vocoder" in config:
        schedule = replace(schedule,
                           vocoder=replace(schedule.vocoder, **config["vocoder"]))
    if "e2e" in config:
        schedule = replace(schedule, e2e=replace(schedule.e2e, **config["e2e"]))
    if "scale" in config:
        schedule = schedule.scaled(float(config["scale"]))
    return schedule


def _parse_weights(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",") if v.strip() != ""])


def _default_adapters():
    return CepstralContentAdapter(), SpectralStatsSpeakerAdapter()


@click.group()
def main():
    """Voice digitization toolkit: train on raw recordings, then control them."""


@main.command("ingest")
@click.argument("root", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="dataset output directory")
@click.option("--separate-vocals", is_flag=True,
              help="run the (passthrough) vocal separator and cache stems")
def ingest_cmd(root, out, separate_vocals):
    """Normalize a directory of recordings into a manifest."""
    separator = PassthroughSeparator() if separate_vocals else None
    manifest = ingest_dataset(root, out, separator=separator)
    click.echo(f"ingested {len(manifest)} utterances "
               f"({len(manifest.speakers())} speakers) -> {out}/manifest.json")


@main.command("precompute")
@click.argument("manifest_path", type=click.Path(exists=True))
@click.option("--cache-dir", required=True, type=click.Path())
def precompute_cmd(manifest_path, cache_dir):
    """Extract and cache embeddings plus mel targets for every utterance."""
    manifest = DatasetManifest.load(manifest_path)
    content, speaker = _default_adapters()
    summary = precompute(manifest, EmbeddingCache(cache_dir), content, speaker)
    click.echo(f"computed {summary.computed}, hits {summary.hits}, "
               f"failures {len(summary.failures)}")
    for uid, message in summary.failures.items():
        click.echo(f"  FAILED {uid}: {message}", err=True)


@main.command("train-acoustic")
@click.argument("manifest_path", type=click.Path(exists=True))
@click.option("--cache-dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--zero-speaker", is_flag=True,
              help="speaker-dependent mode: fix the identity input to zeros")
@click.option("--metrics", type=click.Path(), help="per-epoch loss CSV")
def train_acoustic_cmd(manifest_path, cache_dir, config_path, seed, out,
                       zero_speaker, metrics):
    """Train the mel decoder on cached embeddings."""
    config = _load_config(config_path)
    schedule = _schedule_from_config(config).acoustic
    model_cfg = AcousticConfig(**config.get("acoustic_model", {}))
    manifest = DatasetManifest.load(manifest_path)
    content, speaker = _default_adapters()
    dataset = load_training_set(manifest, EmbeddingCache(cache_dir), content,
                                speaker, zero_speaker=zero_speaker)
    model = init_acoustic(model_cfg, seed)
    curve = train_acoustic(model, dataset, schedule, seed, metrics_path=metrics)
    save_acoustic(out, model)
    if curve:
        click.echo(f"epochs {len(curve)}: loss {curve[0]:.4f} -> {curve[-1]:.4f}")
    click.echo(f"saved {out}")


@main.command("train-vocoder")
@click.argument("manifest_path", type=click.Path(exists=True))
@click.option("--cache-dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--metrics", type=click.Path(), help="per-step GAN loss CSV")
@click.option("--toy", is_flag=True, help="use desk-scale model widths")
def train_vocoder_cmd(manifest_path, cache_dir, config_path, seed, out, metrics, toy):
    """Adversarially train the mel-to-waveform generator."""
    config = _load_config(config_path)
    schedule = _schedule_from_config(config).vocoder
    voc_kwargs = config.get("vocoder_model", {})
    voc_cfg = VocoderConfig.toy(**voc_kwargs) if toy else VocoderConfig(**voc_kwargs)
    manifest = DatasetManifest.load(manifest_path)
    content, speaker = _default_adapters()
    dataset = load_training_set(manifest, EmbeddingCache(cache_dir), content, speaker)
    generator, discriminators = init_vocoder(voc_cfg, seed)
    reports = train_vocoder(generator, discriminators, dataset, schedule, seed,
                            metrics_path=metrics)
    save_vocoder(out, generator, discriminators)
    if reports:
        click.echo(f"steps {len(reports)}: mel {reports[0].mel:.4f} -> "
                   f"{reports[-1].mel:.4f}")
    click.echo(f"saved {out}")


@main.command("finetune")
@click.argument("manifest_path", type=click.Path(exists=True))
@click.option("--cache-dir", required=True, type=click.Path())
@click.option("--acoustic", "acoustic_path", required=True, type=click.Path(exists=True))
@click.option("--vocoder", "vocoder_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True)
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--resume", "resume_path", type=click.Path(exists=True))
@click.option("--phase-log", type=click.Path())
def finetune_cmd(manifest_path, cache_dir, acoustic_path, vocoder_path,
                 config_path, seed, out_dir, resume_path, phase_log):
    """Alternating end-to-end finetune of both models."""
    config = _load_config(config_path)
    schedule = _schedule_from_config(config).e2e
    manifest = DatasetManifest.load(manifest_path)
    content, speaker = _default_adapters()
    dataset = load_training_set(manifest, EmbeddingCache(cache_dir), content, speaker)
    acoustic = load_acoustic(acoustic_path)
    generator, discriminators = load_vocoder(vocoder_path, with_discriminators=True)
    result = finetune_e2e(acoustic, generator, discriminators, dataset, schedule,
                          seed, resume_from=resume_path,
                          phase_log_path=phase_log)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_acoustic(out / "acoustic.ckpt", acoustic)
    save_vocoder(out / "vocoder.ckpt", generator, discriminators)
    click.echo(f"{len(result.phase_log)} phases complete -> {out}")


@main.command("synthesize")
@click.option("--registry", "registry_dir", required=True, type=click.Path(exists=True))
@click.option("--melody", "melody_id", required=True)
@click.option("--weights", required=True, help="comma-separated prototype weights")
@click.option("--seed", default=0, show_default=True,
              help="recorded for reproducibility; synthesis is deterministic")
@click.option("--out", required=True, type=click.Path())
def synthesize_cmd(registry_dir, melody_id, weights, seed, out):
    """Render one voice from interpolated prototype weights."""
    registry = ModelRegistry.load(registry_dir)
    wave = registry.synthesize_with_weights(_parse_weights(weights), melody_id)
    write_wav(wave, out)
    click.echo(f"wrote {out} ({wave.duration_s:.2f}s)")


@main.command("transpose")
@click.option("--bundle", "bundle_path", required=True, type=click.Path(exists=True))
@click.option("--semitones", required=True, type=float)
@click.option("--out", required=True, type=click.Path())
def transpose_cmd(bundle_path, semitones, out):
    """Shift a melody template's pitch contour."""
    bundle = load_bundle(bundle_path)
    shifted = EmbeddingBundle(bundle.content, bundle.speaker,
                              transpose_pitch(bundle.pitch, semitones))
    save_bundle(out, shifted)
    click.echo(f"wrote {out}")


@main.command("resample-duration")
@click.option("--bundle", "bundle_path", required=True, type=click.Path(exists=True))
@click.option("--intervals", "intervals_path", required=True,
              type=click.Path(exists=True),
              help="lines of: phoneme start_frame end_frame")
@click.option("--targets", required=True, help="comma-separated frame counts")
@click.option("--out", required=True, type=click.Path())
def resample_duration_cmd(bundle_path, intervals_path, targets, out):
    """Retime the content stream phoneme by phoneme.

    The pitch contour is stretched with the same interval map so the bundle
    stays frame-aligned.
    """
    bundle = load_bundle(bundle_path)
    intervals = parse_intervals(Path(intervals_path).read_text())
    target_list = [int(v) for v in targets.split(",")]
    content = resample_ppg_by_intervals(bundle.content, intervals, target_list)
    pitch_matrix = resample_ppg_by_intervals(
        ContentPPG(bundle.pitch.f0_hz[:, None]), intervals, target_list)
    pitch = PitchContour(pitch_matrix.values[:, 0])
    save_bundle(out, EmbeddingBundle(content, bundle.speaker, pitch))
    click.echo(f"wrote {out} ({content.num_frames} frames)")


@main.command("interpolate")
@click.option("--registry", "registry_dir", required=True, type=click.Path(exists=True))
@click.option("--weights", required=True)
@click.option("--out", required=True, type=click.Path())
def interpolate_cmd(registry_dir, weights, out):
    """Mint a virtual singer embedding from prototype weights."""
    from .choir import interpolate_timbre

    registry = ModelRegistry.load(registry_dir)
    embedding = interpolate_timbre(registry.prototypes.prototypes,
                                   _parse_weights(weights))
    container.write_array(out, embedding.values)
    click.echo(f"wrote {out}")


@main.command("choir")
@click.option("--registry", "registry_dir", required=True, type=click.Path(exists=True))
@click.option("--melody", "melody_id", required=True)
@click.option("--spec", "spec_path", type=click.Path(exists=True),
              help="existing choir spec JSON; otherwise one is generated")
@click.option("--singers", default=16, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--detune-sd", default=10.0, show_default=True)
@click.option("--onset-sd", default=20.0, show_default=True)
@click.option("--save-spec", type=click.Path(), help="write the generated spec JSON")
@click.option("--out", required=True, type=click.Path())
def choir_cmd(registry_dir, melody_id, spec_path, singers, seed, detune_sd,
              onset_sd, save_spec, out):
    """Render an ensemble of interpolated virtual singers."""
    registry = ModelRegistry.load(registry_dir)
    if spec_path:
        payload = json.loads(Path(spec_path).read_text())
    else:
        spec = generate_choir_spec(registry.prototypes.prototypes, singers,
                                   JitterSpec(detune_sd, onset_sd), seed)
        payload = json.loads(spec.to_json())
        if save_spec:
            Path(save_spec).write_text(spec.to_json())
    wave = registry.render_choir_payload(payload, melody_id)
    write_wav(wave, out)
    click.echo(f"wrote {out} ({len(payload['singers'])} singers, "
               f"{wave.duration_s:.2f}s)")


@main.command("evaluate-sve")
@click.option("--anchor", "anchor_path", required=True, type=click.Path(exists=True),
              help="SFEM vector for the anchor speaker")
@click.option("--train-sims", "train_path", required=True, type=click.Path(exists=True),
              help="JSON list of training cosine similarities")
@click.option("--test-embeddings", "test_path", required=True,
              type=click.Path(exists=True), help="SFEM matrix, one row per utterance")
@click.option("--p", "p_values", default="50,75,90,99", show_default=True)
@click.option("--out", type=click.Path())
def evaluate_sve_cmd(anchor_path, train_path, test_path, p_values, out):
    """Speaker-verification error across acceptance rates."""
    anchor = SpeakerEmbedding(container.read_array(anchor_path))
    train_sims = json.loads(Path(train_path).read_text())
    matrix = np.atleast_2d(container.read_array(test_path))
    tests = [SpeakerEmbedding(row / np.linalg.norm(row)) for row in matrix]
    reports = sve_curve(anchor, train_sims, tests,
                        [float(v) for v in p_values.split(",")])
    lines = [json.loads(r.to_json()) for r in reports]
    text = json.dumps(lines, indent=2)
    if out:
        Path(out).write_text(text)
    click.echo(text)


@main.command("evaluate-pitch")
@click.option("--generated", "generated_path", required=True,
              type=click.Path(exists=True))
@click.option("--target", "target_path", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path())
def evaluate_pitch_cmd(generated_path, target_path, out):
    """Voicing agreement and cents error between two recordings."""
    generated = estimate_pitch(load_audio(generated_path))
    target = estimate_pitch(load_audio(target_path))
    result = pitch_accuracy(generated, target)
    if out:
        Path(out).write_text(result.to_json())
    click.echo(result.to_json())


@main.command("plot")
@click.option("--kind", type=click.Choice(["mel", "pitch"]), required=True)
@click.argument("audio_a", type=click.Path(exists=True))
@click.argument("audio_b", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def plot_cmd(kind, audio_a, audio_b, out):
    """Side-by-side mel panels or overlaid pitch contours for two recordings."""
    from .audio import mel_analyze

    wave_a, wave_b = load_audio(audio_a), load_audio(audio_b)
    if kind == "mel":
        plot_comparison(mel_analyze(wave_a), mel_analyze(wave_b), out)
    else:
        plot_comparison(estimate_pitch(wave_a), estimate_pitch(wave_b), out)
    click.echo(f"wrote {out}")


@main.command("serve")
@click.option("--registry", "registry_dir", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--workers", default=2, show_default=True)
@click.option("--queue-depth", default=16, show_default=True)
@click.option("--timeout", default=120.0, show_default=True)
@click.option("--console", "console_dist", type=click.Path(),
              help="built console assets to mount at /console")
def serve_cmd(registry_dir, host, port, workers, queue_depth, timeout, console_dist):
    """Run the read-only synthesis service."""
    from .service import ServiceConfig, serve

    serve(registry_dir, host=host, port=port,
          config=ServiceConfig(workers, queue_depth, timeout),
          console_dist=console_dist)


if __name__ == "__main__":
    main()
