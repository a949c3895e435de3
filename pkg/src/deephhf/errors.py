"""Error types raised across the pipeline."""


class DeepHHFError(Exception):
    """Base class for all pipeline errors."""


# --- recording container / duration ---

class CorruptHeader(DeepHHFError):
    """Header file is missing, unparseable, or lacks required fields."""


class LengthMismatch(DeepHHFError):
    """Sample blob size disagrees with the header sample count."""


class BadSampleRate(DeepHHFError):
    """Recording sample rate is not 128 Hz."""


class TooShort(DeepHHFError):
    """Recording has less than 20 hours of valid signal."""


# --- cohort ---

class BadPattern(DeepHHFError):
    """Malformed ICD-9 match pattern."""


class DegenerateSplit(DeepHHFError):
    """A requested split received zero exams."""


# --- sampling ---

class OffsetOutOfRange(DeepHHFError):
    """Window plan offset falls outside the recording."""


# --- model / training ---

class ShapeMismatch(DeepHHFError):
    """Tensor shape inconsistent with the model configuration."""


class AllMasked(DeepHHFError):
    """Every sequence position is padding; no signal to attend to."""


class EmptySplit(DeepHHFError):
    """Training requires a non-empty split with both classes present."""


class IncompatibleCheckpoint(DeepHHFError):
    """Checkpoint does not contain the parameters the caller needs."""


# --- explainability ---

class NoAttentionCaptured(DeepHHFError):
    """Forward pass did not record attention tensors."""


class NoBeatsFound(DeepHHFError):
    """No extractable beats in the selected segments."""


class TooFewBeats(DeepHHFError):
    """Not enough beats for clustering."""


class DegenerateClusters(DeepHHFError):
    """Clustering collapsed (e.g. all inputs identical)."""


# --- clinical ---

class InsufficientValidData(DeepHHFError):
    """Recording does not span the hours needed for the measurement."""


class NoBeatsDetected(DeepHHFError):
    """R-peak detection found nothing in the analysis slice."""


class MissingVariable(DeepHHFError):
    """One or more clinical variables absent inside the lookup window."""

    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__("missing variables: " + ", ".join(self.missing))


# --- evaluation ---

class SingleClass(DeepHHFError):
    """Metric needs both classes present."""


class ZeroExposure(DeepHHFError):
    """Incidence rate undefined for zero person-years."""
