"""Exception taxonomy shared across the toolkit."""


class SingkitError(Exception):
    """Base class for all toolkit errors."""


class DecodeError(SingkitError):
    """An audio file could not be read or decoded."""


class EmptyInputError(SingkitError):
    """An operation received empty audio, an empty list, or zero frames."""


class InsufficientAudioError(SingkitError):
    """The input audio is too short for the requested operation."""


class DegenerateAverageError(SingkitError):
    """Averaged embeddings cancelled out; no meaningful direction remains."""


class EncoderBackendError(SingkitError):
    """A pluggable encoder adapter failed. Carries the adapter identity."""

    def __init__(self, message: str, adapter: str = "", version: str = ""):
        super().__init__(message)
        self.adapter = adapter
        self.version = version


class MisalignmentError(SingkitError):
    """Frame counts of content and pitch disagree beyond the allowed slack."""


class ConfigError(SingkitError):
    """Invalid configuration value or combination."""


class SequenceLengthError(SingkitError):
    """Input exceeds the model's maximum frame count; caller must chunk."""


class ShapeError(SingkitError):
    """Matrix shapes disagree where they must match."""


class TrainingDivergenceError(SingkitError):
    """A training loss became NaN/Inf; training aborted with diagnostics."""


class CacheMissError(SingkitError):
    """A required cache artifact is absent. Names the missing utterance."""

    def __init__(self, message: str, utterance_id: str = ""):
        super().__init__(message)
        self.utterance_id = utterance_id


class IntervalError(SingkitError):
    """Phoneme intervals do not tile the frame range contiguously."""


class WeightError(SingkitError):
    """Interpolation weights are negative or do not sum to one."""


class EmbeddingError(SingkitError):
    """A speaker embedding violates the unit-norm / zero-sentinel contract."""


class UndefinedMetricError(SingkitError):
    """A metric has no defined value for these inputs."""

    def __init__(self, message: str, voicing_agreement: float | None = None):
        super().__init__(message)
        self.voicing_agreement = voicing_agreement


class EmptyDatasetError(SingkitError):
    """A dataset directory yielded zero decodable audio files."""


class InternalInvariantError(SingkitError):
    """An internal consistency check failed (e.g. the training phase auditor)."""
