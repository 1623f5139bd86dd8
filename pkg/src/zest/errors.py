"""Exception hierarchy shared across the package.

Validation problems (bad inputs, broken invariants) and stage failures are
kept distinct so the CLI can map them to different exit codes.
"""


class ZestError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(ZestError):
    """An input file, record, or configuration violates an invariant."""


class CorpusLoadError(ValidationError):
    """A corpus file is missing or cannot be parsed."""


class DimensionMismatchError(ValidationError):
    """A vector's length disagrees with the corpus-wide dimension."""


class InfeasibleSplitError(ValidationError):
    """The requested seen/unseen partition cannot be constructed."""


class UndefinedCosineError(ZestError):
    """Cosine similarity was requested against a zero-norm vector."""


class ConfigurationError(ValidationError):
    """A required resource (caption bank, embedding, ...) is not configured."""


class StageError(ZestError):
    """A pipeline stage failed; carries the stage name and input provenance."""

    def __init__(self, stage, message, provenance=None):
        self.stage = stage
        self.provenance = provenance
        detail = f"stage '{stage}': {message}"
        if provenance:
            detail += f" (inputs: {provenance})"
        super().__init__(detail)
