"""Virtual singers: interpolated timbres, micro-jitter, and choir mixdown.

New voices are minted as convex combinations of prototype speaker
embeddings. A choir is a list of such singers with small per-singer pitch
and onset deviations; rendering synthesizes each voice from one shared
melody template and sums them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .acoustic import AcousticModel
from .audio import Waveform
from .control import set_timbre, synthesize, transpose_pitch
from .errors import ConfigError, DegenerateAverageError, WeightError
from .features import EmbeddingBundle, SpeakerEmbedding
from .vocoder import Generator

MAX_DETUNE_CENTS = 50.0
MAX_ONSET_SHIFT_MS = 60.0
DEFAULT_PEAK_DBFS = -1.0


@dataclass(frozen=True)
class SingerProfile:
    id: str
    embedding: SpeakerEmbedding
    provenance: str = "prototype"  # "prototype" | "interpolated"
    weights: tuple | None = None

    def __post_init__(self):
        if self.provenance not in ("prototype", "interpolated"):
            raise ConfigError(f"unknown provenance '{self.provenance}'")
        if self.provenance == "interpolated":
            if self.weights is None:
                raise ConfigError("interpolated singers must carry their weights")
            w = np.asarray(self.weights, dtype=np.float64)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-6:
                raise WeightError("interpolation weights must be a distribution")


@dataclass(frozen=True)
class ChoirSinger:
    profile: SingerProfile
    detune_cents: float = 0.0
    onset_shift_ms: float = 0.0
    gain: float = 1.0

    def __post_init__(self):
        if abs(self.detune_cents) > MAX_DETUNE_CENTS:
            raise ConfigError(f"|detune| must be <= {MAX_DETUNE_CENTS} cents")
        if abs(self.onset_shift_ms) > MAX_ONSET_SHIFT_MS:
            raise ConfigError(f"|onset shift| must be <= {MAX_ONSET_SHIFT_MS} ms")
        if self.gain <= 0:
            raise ConfigError("gains must be positive")


@dataclass(frozen=True)
class ChoirSpec:
    singers: tuple
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "singers", tuple(self.singers))

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.seed,
            "singers": [
                {
                    "weights": list(s.profile.weights) if s.profile.weights is not None
                    else None,
                    "detune_cents": s.detune_cents,
                    "onset_shift_ms": s.onset_shift_ms,
                    "gain": s.gain,
                }
                for s in self.singers
            ],
        }, indent=2)

    @classmethod
    def from_payload(cls, payload: dict, prototypes: list[SingerProfile]) -> "ChoirSpec":
        singers = []
        for i, entry in enumerate(payload.get("singers", [])):
            weights = entry.get("weights")
            if weights is None:
                raise ConfigError(f"singer {i} is missing interpolation weights")
            embedding = interpolate_timbre(prototypes, np.asarray(weights, dtype=float))
            profile = SingerProfile(f"singer-{i:03d}", embedding, "interpolated",
                                    tuple(float(w) for w in weights))
            singers.append(ChoirSinger(
                profile,
                detune_cents=float(entry.get("detune_cents", 0.0)),
                onset_shift_ms=float(entry.get("onset_shift_ms", 0.0)),
                gain=float(entry.get("gain", 1.0)),
            ))
        if not singers:
            raise ConfigError("choir spec has no singers")
        return cls(tuple(singers), seed=int(payload.get("seed", 0)))


@dataclass(frozen=True)
class JitterSpec:
    detune_sd_cents: float = 10.0
    onset_sd_ms: float = 20.0


def interpolate_timbre(prototypes: list[SingerProfile],
                       weights: np.ndarray) -> SpeakerEmbedding:
    """Convex combination of prototype embeddings, re-normalized to unit length."""
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(prototypes) != weights.size:
        raise WeightError(
            f"{weights.size} weights for {len(prototypes)} prototypes")
    if np.any(weights < -1e-12):
        raise WeightError("weights must be non-negative")
    if abs(weights.sum() - 1.0) > 1e-6:
        raise WeightError(f"weights sum to {weights.sum():.6f}, expected 1")
    mixed = sum(w * p.embedding.values for w, p in zip(weights, prototypes))
    norm = float(np.linalg.norm(mixed))
    if norm < 1e-8:
        raise DegenerateAverageError("interpolated embedding cancels out")
    return SpeakerEmbedding(mixed / norm)


def generate_choir_spec(prototypes: list[SingerProfile], n_singers: int,
                        jitter: JitterSpec | None = None, seed: int = 0) -> ChoirSpec:
    """Seeded ensemble recipe: uniform simplex weights, truncated Gaussian jitter."""
    if n_singers < 1:
        raise ConfigError("a choir needs at least one singer")
    if not prototypes:
        raise ConfigError("at least one prototype required")
    jitter = jitter or JitterSpec()
    rng = np.random.default_rng(seed)
    singers = []
    for i in range(n_singers):
        weights = rng.dirichlet(np.ones(len(prototypes)))
        detune = float(np.clip(rng.normal(0.0, jitter.detune_sd_cents)
                               if jitter.detune_sd_cents > 0 else 0.0,
                               -MAX_DETUNE_CENTS, MAX_DETUNE_CENTS))
        onset = float(np.clip(rng.normal(0.0, jitter.onset_sd_ms)
                              if jitter.onset_sd_ms > 0 else 0.0,
                              -MAX_ONSET_SHIFT_MS, MAX_ONSET_SHIFT_MS))
        embedding = interpolate_timbre(prototypes, weights)
        profile = SingerProfile(f"singer-{i:03d}", embedding, "interpolated",
                                tuple(float(w) for w in weights))
        singers.append(ChoirSinger(profile, detune, onset, 1.0))
    return ChoirSpec(tuple(singers), seed=seed)


def render_choir(spec: ChoirSpec, template: EmbeddingBundle,
                 acoustic: AcousticModel, generator: Generator | None = None,
                 peak_dbfs: float | None = DEFAULT_PEAK_DBFS) -> Waveform:
    """Synthesize every singer from the shared template and mix them down.

    Each voice gets its own timbre, a detune of `detune_cents`, an onset
    shift (zero-padded), and a gain; the sum is peak-normalized unless
    `peak_dbfs` is None.
    """
    if not spec.singers:
        raise ConfigError("choir spec has no singers")
    from .audio import CANONICAL_RATE

    rate = CANONICAL_RATE
    base_len = template.num_frames * 240
    shifts = [int(round(s.onset_shift_ms * rate / 1000.0)) for s in spec.singers]
    total = base_len + max(0, max(shifts))
    mix = np.zeros(total)
    for singer, shift in zip(spec.singers, shifts):
        voiced = set_timbre(template, singer.profile.embedding)
        detuned = EmbeddingBundle(
            voiced.content, voiced.speaker,
            transpose_pitch(voiced.pitch, singer.detune_cents / 100.0))
        rendered = synthesize(detuned, acoustic, generator).samples * singer.gain
        if shift >= 0:
            mix[shift:shift + rendered.size] += rendered
        else:
            clipped = rendered[-shift:]
            mix[:clipped.size] += clipped
    if peak_dbfs is not None:
        peak = float(np.max(np.abs(mix)))
        if peak > 0:
            mix = mix * (10.0 ** (peak_dbfs / 20.0) / peak)
    return Waveform(np.clip(mix, -1.0, 1.0), rate)


@dataclass
class PrototypeRegistry:
    """Named prototype singers backing interpolation and the service."""

    prototypes: list = field(default_factory=list)

    def add(self, profile: SingerProfile) -> None:
        if any(p.id == profile.id for p in self.prototypes):
            raise ConfigError(f"duplicate prototype id '{profile.id}'")
        self.prototypes.append(profile)

    def get(self, profile_id: str) -> SingerProfile:
        for p in self.prototypes:
            if p.id == profile_id:
                return p
        raise ConfigError(f"unknown prototype '{profile_id}'")

    def __len__(self) -> int:
        return len(self.prototypes)
