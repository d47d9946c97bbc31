"""Dataset manifests: discovery, normalization, and stable identities.

Utterance ids are content hashes of the raw source files, so re-running
ingestion over an unchanged directory reproduces the manifest exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .audio import CANONICAL_RATE, load_audio, write_wav
from .errors import DecodeError, EmptyDatasetError, EmptyInputError

AUDIO_SUFFIXES = (".wav", ".wave")


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    audio_path: str
    speaker_id: str
    duration_s: float


@dataclass(frozen=True)
class DatasetManifest:
    dataset_id: str
    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        ids = [e.utterance_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise EmptyDatasetError("duplicate utterance ids in manifest")
        if any(e.duration_s <= 0 for e in self.entries):
            raise EmptyDatasetError("all durations must be positive")

    def __len__(self) -> int:
        return len(self.entries)

    def speakers(self) -> list[str]:
        return sorted({e.speaker_id for e in self.entries})

    def by_speaker(self, speaker_id: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.speaker_id == speaker_id]

    def save(self, path) -> None:
        payload = {"dataset_id": self.dataset_id,
                   "entries": [asdict(e) for e in self.entries]}
        Path(path).write_text(json.dumps(payload, indent=2))

    @classmethod
    def load(cls, path, check_paths: bool = True) -> "DatasetManifest":
        payload = json.loads(Path(path).read_text())
        entries = [ManifestEntry(**e) for e in payload["entries"]]
        if check_paths:
            missing = [e.audio_path for e in entries if not Path(e.audio_path).exists()]
            if missing:
                raise EmptyDatasetError(
                    f"manifest references missing audio: {missing[:3]}")
        return cls(payload["dataset_id"], tuple(entries))


def content_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def ingest(root, out_dir, separator=None) -> DatasetManifest:
    """Normalize every decodable WAV under `root` into `out_dir`.

    Copies are mono 24 kHz 16-bit; the speaker id is the file's parent
    directory name (files directly under the root share one speaker).
    A separator adapter, when given, also writes a vocal stem per file.
    """
    root = Path(root)
    out_dir = Path(out_dir)
    normalized_dir = out_dir / "normalized"
    normalized_dir.mkdir(parents=True, exist_ok=True)
    stems_dir = out_dir / "stems"
    if separator is not None:
        stems_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    for path in sorted(root.rglob("*")):
        if path.suffix.lower() not in AUDIO_SUFFIXES or not path.is_file():
            continue
        try:
            wave = load_audio(path, target_rate=CANONICAL_RATE)
        except (DecodeError, EmptyInputError):
            continue
        utterance_id = content_hash(path)
        speaker = path.parent.name if path.parent != root else "default"
        normalized_path = normalized_dir / f"{utterance_id}.wav"
        write_wav(wave, normalized_path)
        if separator is not None:
            stem = separator.separate_vocals(load_audio(normalized_path))
            write_wav(stem, stems_dir / f"{utterance_id}.wav")
        entries.append(ManifestEntry(utterance_id, str(normalized_path),
                                     speaker, wave.duration_s))
    if not entries:
        raise EmptyDatasetError(f"no decodable audio under {root}")
    entries.sort(key=lambda e: e.utterance_id)
    dataset_id = hashlib.sha256(
        "|".join(e.utterance_id for e in entries).encode()).hexdigest()[:16]
    manifest = DatasetManifest(dataset_id, tuple(entries))
    manifest.save(out_dir / "manifest.json")
    return manifest
