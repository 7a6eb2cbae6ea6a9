"""Exception hierarchy shared by every stage of the pipeline."""


class AdaptFCError(Exception):
    """Base class for all package errors."""


class ParseError(AdaptFCError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class IntegrityError(AdaptFCError):
    """A corpus violates one of its structural invariants."""


class LabelError(AdaptFCError):
    pass


class SplitError(AdaptFCError):
    pass


class ConfigError(AdaptFCError):
    """Invalid configuration; ``field`` names the offending key when known."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(message)


class TrainingError(AdaptFCError):
    pass


class GenerationError(AdaptFCError):
    pass


class NoEvidenceError(AdaptFCError):
    pass


class EstimationError(AdaptFCError):
    pass


class CheckpointError(AdaptFCError):
    pass


class StageError(AdaptFCError):
    """Wraps a failure inside a multi-stage job with the stage name."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


class DegenerateBatchError(AdaptFCError, ValueError):
    """A statistic needs more rows than the batch provides."""
