"""Exception hierarchy shared by all modules."""


class LesionTrackError(Exception):
    """Base class; the CLI maps it to exit code 1."""


class ParseError(LesionTrackError):
    pass


class UVMismatch(LesionTrackError):
    pass


class EmptyMesh(LesionTrackError):
    pass


class EmptyIndex(LesionTrackError):
    pass


class SchemaError(LesionTrackError):
    pass


class RangeError(LesionTrackError):
    pass


class MissingConfidence(LesionTrackError):
    pass


class InvalidVertex(LesionTrackError):
    pass


class DisconnectedLesions(LesionTrackError):
    def __init__(self, message, components=None):
        super().__init__(message)
        self.components = components


class TemplateSizeMismatch(LesionTrackError):
    pass


class MeshMismatch(LesionTrackError):
    pass


class NoConvergence(LesionTrackError):
    """ICP did not reach the residual tolerance; ``correspondence`` still holds the map."""

    def __init__(self, message, correspondence=None):
        super().__init__(message)
        self.correspondence = correspondence


class MissingCorrespondence(LesionTrackError):
    pass


class InfeasibleAssignment(LesionTrackError):
    pass


class EmptyGroundTruth(LesionTrackError):
    pass


class InsufficientSubjects(LesionTrackError):
    pass


class ConfigError(LesionTrackError, ValueError):
    pass
