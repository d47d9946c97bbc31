"""On-disk model bundle: checkpoints, prototype singers, melody templates.

The registry is the shared substrate of the CLI and the HTTP service; both
route synthesis through the same handlers here, which is what makes their
outputs byte-identical for identical payloads.

Layout under a registry directory:

    acoustic.ckpt           acoustic model checkpoint
    vocoder.ckpt            generator checkpoint (optional; fallback synth without)
    prototypes.json         [{"id": ..., "name": ...}]
    prototypes/<id>.sfem    speaker embedding per prototype
    melodies.json           [{"id": ..., "name": ..., "frames": ...}]
    melodies/<id>.bundle    melody template (content + pitch + speaker)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .acoustic import AcousticModel, load_acoustic, save_acoustic
from .audio import Waveform
from .choir import ChoirSpec, PrototypeRegistry, SingerProfile, interpolate_timbre, render_choir
from .control import set_timbre, synthesize
from .errors import ConfigError
from .features import EmbeddingBundle, SpeakerEmbedding, load_bundle, save_bundle
from .vocoder import Generator, load_vocoder, save_vocoder


@dataclass
class ModelRegistry:
    root: Path
    acoustic: AcousticModel
    generator: Generator | None
    prototypes: PrototypeRegistry
    prototype_names: dict = field(default_factory=dict)
    melody_index: dict = field(default_factory=dict)

    @classmethod
    def load(cls, root) -> "ModelRegistry":
        root = Path(root)
        acoustic_path = root / "acoustic.ckpt"
        if not acoustic_path.exists():
            raise ConfigError(f"no acoustic checkpoint in {root}")
        acoustic = load_acoustic(acoustic_path)
        vocoder_path = root / "vocoder.ckpt"
        generator = load_vocoder(vocoder_path) if vocoder_path.exists() else None

        registry = PrototypeRegistry()
        names = {}
        proto_index = root / "prototypes.json"
        if proto_index.exists():
            for item in json.loads(proto_index.read_text()):
                embedding = SpeakerEmbedding(
                    container.read_array(root / "prototypes" / f"{item['id']}.sfem"))
                registry.add(SingerProfile(item["id"], embedding, "prototype"))
                names[item["id"]] = item.get("name", item["id"])

        melodies = {}
        melody_index = root / "melodies.json"
        if melody_index.exists():
            for item in json.loads(melody_index.read_text()):
                melodies[item["id"]] = {
                    "name": item.get("name", item["id"]),
                    "frames": item.get("frames"),
                    "path": root / "melodies" / f"{item['id']}.bundle",
                }
        return cls(root, acoustic, generator, registry, names, melodies)

    # ---- lookups ----

    def prototype_list(self) -> list[dict]:
        return [{"id": p.id, "name": self.prototype_names.get(p.id, p.id)}
                for p in self.prototypes.prototypes]

    def melody_list(self) -> list[dict]:
        return [{"id": mid, "name": info["name"], "frames": info["frames"]}
                for mid, info in sorted(self.melody_index.items())]

    def melody(self, melody_id: str) -> EmbeddingBundle:
        info = self.melody_index.get(melody_id)
        if info is None:
            raise ConfigError(f"unknown melody '{melody_id}'")
        return load_bundle(info["path"])

    # ---- handlers shared by CLI and service ----

    def synthesize_with_weights(self, weights, melody_id: str) -> Waveform:
        """One voice: interpolate a timbre from the prototypes, then decode."""
        weights = np.asarray(weights, dtype=np.float64)
        embedding = interpolate_timbre(self.prototypes.prototypes, weights)
        template = self.melody(melody_id)
        bundle = set_timbre(template, embedding)
        return synthesize(bundle, self.acoustic, self.generator)

    def render_choir_payload(self, spec_payload: dict, melody_id: str) -> Waveform:
        """Full ensemble from a serialized choir spec."""
        spec = ChoirSpec.from_payload(spec_payload, self.prototypes.prototypes)
        template = self.melody(melody_id)
        return render_choir(spec, template, self.acoustic, self.generator)


def build_registry(root, acoustic: AcousticModel,
                   generator: Generator | None = None,
                   prototypes: list[tuple[str, str, SpeakerEmbedding]] = (),
                   melodies: dict[str, EmbeddingBundle] | None = None) -> Path:
    """Write a complete registry directory; returns its path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    save_acoustic(root / "acoustic.ckpt", acoustic)
    if generator is not None:
        save_vocoder(root / "vocoder.ckpt", generator)
    proto_items = []
    for proto_id, name, embedding in prototypes:
        container.write_array(root / "prototypes" / f"{proto_id}.sfem",
                              embedding.values)
        proto_items.append({"id": proto_id, "name": name})
    (root / "prototypes.json").write_text(json.dumps(proto_items, indent=2))
    melody_items = []
    for melody_id, bundle in (melodies or {}).items():
        save_bundle(root / "melodies" / f"{melody_id}.bundle", bundle)
        melody_items.append({"id": melody_id, "name": melody_id,
                             "frames": bundle.num_frames})
    (root / "melodies.json").write_text(json.dumps(melody_items, indent=2))
    return root
