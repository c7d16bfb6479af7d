"""Exception hierarchy. Everything user-facing derives from EgomemError so the
CLI can map data problems to exit code 1."""


class EgomemError(Exception):
    pass


class ParseError(EgomemError):
    """Malformed input file. Carries file path and 1-based line number."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class UnknownUid(EgomemError):
    pass


class UnknownFrame(EgomemError):
    pass


class StrideMismatch(EgomemError):
    pass


class DegenerateConfiguration(EgomemError):
    pass


class DegenerateRotation6D(EgomemError):
    pass


class ShapeMismatch(EgomemError):
    pass


class NonFiniteActivation(EgomemError):
    pass


class LengthMismatch(EgomemError):
    pass


class ResolutionMismatch(EgomemError):
    pass


class MissingKeypoints(EgomemError):
    pass
