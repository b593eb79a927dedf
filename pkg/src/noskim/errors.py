"""Exception hierarchy.

Every error the package raises on purpose derives from :class:`NoSkimError`.
:class:`DataError` subclasses cover bad inputs (texts, corpora, artifacts) and
map to CLI exit code 2; everything else maps to exit code 3.
"""


class NoSkimError(Exception):
    pass


class DataError(NoSkimError):
    pass


class EmptyTextError(DataError, ValueError):
    pass


class SequenceTooLongError(DataError, ValueError):
    pass


class VocabularyError(DataError, ValueError):
    pass


class EmptyCorpusError(DataError, ValueError):
    pass


class InfeasibleSpecError(DataError, ValueError):
    pass


class ArtifactError(DataError):
    """Missing, corrupt or mismatched pipeline artifact."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class ConfigError(NoSkimError, ValueError):
    pass


class TrainingDivergenceError(NoSkimError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class UnstableMeasurementError(NoSkimError, RuntimeError):
    pass


class UndefinedCorrelationError(NoSkimError, ValueError):
    pass


class NotRankableError(NoSkimError, ValueError):
    pass


class NoEmbeddingError(NoSkimError, LookupError):
    """The selected word maps to UNK, so it has no usable embedding."""
