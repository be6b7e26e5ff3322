"""Exception taxonomy shared by all modules.

The CLI maps each class to a machine-parsable error line; library code
raises them directly.
"""


class XnetError(Exception):
    """Base class for all package errors."""


class ValidationError(XnetError):
    """An invariant or file-schema violation (names the offending item)."""


class ConfigError(XnetError):
    """Bad or missing run configuration."""


class StageInputError(XnetError):
    """A pipeline stage's upstream artifact is missing or incompatible."""


class ExtractionError(XnetError):
    """Greedy path extraction dead-ended; the table is under-trained."""

    def __init__(self, src: str, dst: str, partial: tuple[str, ...]):
        self.src = src
        self.dst = dst
        self.partial = partial
        super().__init__(
            f"path extraction failed for {src}->{dst}; walked {'->'.join(partial)} "
            "with no unvisited next hop (retrain with more episodes)"
        )
