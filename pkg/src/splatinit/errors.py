"""Exception hierarchy shared by every stage.

Each class carries the CLI exit code it maps to, so the orchestrator never
has to pattern-match on messages.
"""


class SplatInitError(Exception):
    exit_code = 1


class InvalidInputError(SplatInitError, ValueError):
    exit_code = 2


class FormatError(InvalidInputError):
    """Malformed file content. ``location`` is ``path:line`` when known."""

    def __init__(self, message, location=None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class UnsupportedModelError(FormatError):
    pass


class MissingArtifactError(InvalidInputError):
    pass


class SceneGenerationError(InvalidInputError):
    pass


class NumericalError(SplatInitError, ArithmeticError):
    exit_code = 3


class DegenerateBaselineError(NumericalError):
    pass


class PointAtInfinityError(NumericalError):
    pass


class RankDeficientError(NumericalError):
    pass


class InsufficientControlsError(NumericalError):
    pass
