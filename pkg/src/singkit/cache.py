"""Embedding cache: content-addressed artifacts for every utterance.

Keys are (audio content hash, adapter identity, adapter version), so a hit
is guaranteed to be bit-identical to recomputation. Writers take a file
lock and land atomically; readers never see partial files.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import container
from .audio import FrameSpec, load_audio, mel_analyze
from .errors import CacheMissError, SingkitError
from .features import (
    SpeakerEmbedding,
    average_speaker,
    estimate_pitch,
    extract_content,
    extract_speaker,
)
from .manifest import DatasetManifest
from .training import TrainingExample

MEL_ADAPTER = ("mel-analyzer", "1")
PITCH_ADAPTER = ("yin", "1")


class EmbeddingCache:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path_for(self, kind: str, audio_hash: str, adapter: str, version: str) -> Path:
        return self.root / kind / f"{audio_hash}__{adapter}__{version}.sfem"

    def get(self, kind, audio_hash, adapter, version) -> np.ndarray | None:
        path = self.path_for(kind, audio_hash, adapter, version)
        if not path.exists():
            return None
        return container.read_array(path)

    def put(self, kind, audio_hash, adapter, version, array: np.ndarray) -> Path:
        path = self.path_for(kind, audio_hash, adapter, version)
        path.parent.mkdir(parents=True, exist_ok=True)
        with FileLock(str(path) + ".lock"):
            container.write_array(path, array)
        return path

    def require(self, kind, audio_hash, adapter, version,
                utterance_id: str) -> np.ndarray:
        array = self.get(kind, audio_hash, adapter, version)
        if array is None:
            raise CacheMissError(
                f"no cached {kind} for utterance '{utterance_id}' "
                f"(adapter {adapter} v{version}); run precompute first",
                utterance_id=utterance_id)
        return array


def speaker_group_hash(utterance_ids: list[str]) -> str:
    joined = "|".join(sorted(utterance_ids))
    return hashlib.sha256(joined.encode()).hexdigest()[:16]


@dataclass
class CacheSummary:
    computed: int = 0
    hits: int = 0
    failures: dict = field(default_factory=dict)
    speaker_ids: list = field(default_factory=list)

    @property
    def artifacts(self) -> int:
        return self.computed + self.hits


def precompute(manifest: DatasetManifest, cache: EmbeddingCache,
               content_adapter, speaker_adapter,
               pitch_adapter=None) -> CacheSummary:
    """Cache content, speaker, pitch, and mel for every utterance, then the
    averaged per-speaker embedding. Per-utterance failures are collected;
    the job keeps going."""
    summary = CacheSummary()
    spec = FrameSpec()
    per_speaker: dict[str, list] = {}
    pitch_name, pitch_version = (
        (pitch_adapter.name, pitch_adapter.version) if pitch_adapter else PITCH_ADAPTER)

    for entry in manifest.entries:
        try:
            wave = load_audio(entry.audio_path)
            jobs = (
                ("mel", *MEL_ADAPTER,
                 lambda: mel_analyze(wave, spec).values),
                ("content", content_adapter.name, content_adapter.version,
                 lambda: extract_content(wave, content_adapter).values),
                ("speaker", speaker_adapter.name, speaker_adapter.version,
                 lambda: extract_speaker(wave, speaker_adapter).values),
                ("pitch", pitch_name, pitch_version,
                 lambda: estimate_pitch(wave, pitch_adapter).f0_hz),
            )
            utterance_speaker = None
            for kind, adapter, version, compute in jobs:
                cached = cache.get(kind, entry.utterance_id, adapter, version)
                if cached is None:
                    cached = np.asarray(compute())
                    cache.put(kind, entry.utterance_id, adapter, version, cached)
                    summary.computed += 1
                else:
                    summary.hits += 1
                if kind == "speaker":
                    utterance_speaker = cached
            per_speaker.setdefault(entry.speaker_id, []).append(
                (entry.utterance_id, utterance_speaker))
        except SingkitError as exc:
            summary.failures[entry.utterance_id] = str(exc)

    for speaker_id, members in per_speaker.items():
        group = speaker_group_hash([uid for uid, _ in members])
        name, version = speaker_adapter.name, speaker_adapter.version
        if cache.get("speaker-avg", group, name, version) is None:
            avg = average_speaker([SpeakerEmbedding(vec) for _, vec in members])
            cache.put("speaker-avg", group, name, version, avg.values)
            summary.computed += 1
        else:
            summary.hits += 1
        summary.speaker_ids.append(speaker_id)
    return summary


def load_training_set(manifest: DatasetManifest, cache: EmbeddingCache,
                      content_adapter, speaker_adapter, pitch_adapter=None,
                      zero_speaker: bool = False) -> list[TrainingExample]:
    """Assemble trainer inputs from the cache; any miss is an error naming
    the utterance. `zero_speaker` selects the speaker-dependent mode."""
    pitch_name, pitch_version = (
        (pitch_adapter.name, pitch_adapter.version) if pitch_adapter else PITCH_ADAPTER)
    speaker_avgs = {}
    for speaker_id in manifest.speakers():
        members = [e.utterance_id for e in manifest.by_speaker(speaker_id)]
        group = speaker_group_hash(members)
        speaker_avgs[speaker_id] = cache.require(
            "speaker-avg", group, speaker_adapter.name, speaker_adapter.version,
            utterance_id=f"speaker:{speaker_id}")

    examples = []
    for entry in manifest.entries:
        uid = entry.utterance_id
        mel = cache.require("mel", uid, *MEL_ADAPTER, utterance_id=uid)
        content = cache.require("content", uid, content_adapter.name,
                                content_adapter.version, utterance_id=uid)
        pitch = cache.require("pitch", uid, pitch_name, pitch_version,
                              utterance_id=uid)
        wave = load_audio(entry.audio_path).samples
        t = mel.shape[0]
        hop = FrameSpec().hop_samples
        if wave.size < t * hop:
            wave = np.concatenate([wave, np.zeros(t * hop - wave.size)])
        speaker = (np.zeros(256) if zero_speaker
                   else speaker_avgs[entry.speaker_id])
        examples.append(TrainingExample(uid, content, speaker, pitch, mel,
                                        wave[:t * hop]))
    return examples
