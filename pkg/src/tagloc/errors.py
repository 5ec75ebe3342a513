"""Exception types shared across the pipeline."""


class TagLocError(Exception):
    """Base class for all pipeline errors."""


class TraceFormatError(TagLocError):
    """Trace file is malformed or violates trace invariants."""


class ConfigError(TagLocError):
    """Bad configuration key or value."""


class SeparationTooWeak(TagLocError):
    """Two-level separation of the tag signal is below the decode threshold."""


class FlatProfileError(TagLocError):
    """Multipath profile has no usable peak; delay offset is indeterminate."""


class StageError(TagLocError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
