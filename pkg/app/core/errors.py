"""Exception hierarchy shared by the analysis package, the CLI and the HTTP routers.

Every error carries the process exit code the CLI reports for it:
1 for analysis failures, 2 for input/IO problems, 3 for inconclusive runs.
"""


class NashFiberError(Exception):
    exit_code = 1

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.message = message
        self.context = context

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "detail": self.message, **self.context}


class AnalysisError(NashFiberError):
    exit_code = 1


class InputError(NashFiberError):
    exit_code = 2


class Inconclusive(NashFiberError):
    exit_code = 3


# subspace geometry
class DimensionMismatch(AnalysisError):
    pass


class ZeroVector(AnalysisError):
    pass


class DegenerateBasis(AnalysisError):
    pass


class EmptyCloud(AnalysisError):
    pass


# semialgebraic model
class SingularPoint(AnalysisError):
    pass


class OffVariety(AnalysisError):
    pass


class NoConvergence(AnalysisError):
    pass


class SignViolation(AnalysisError):
    pass


# sampling
class EmptySlice(AnalysisError):
    pass


class AllScalesEmpty(AnalysisError):
    pass


class EmptyPatch(AnalysisError):
    pass


# cone / fiber
class NotStabilized(Inconclusive):
    pass


class InsufficientDensity(Inconclusive):
    pass


class NotOnCone(AnalysisError):
    pass


class SingularLocusUnavailable(AnalysisError):
    pass


class RayNotInCone(AnalysisError):
    pass


# harness
class SingularSample(AnalysisError):
    pass


class RayInCone(AnalysisError):
    pass


class ProjectionLoss(AnalysisError):
    pass


class HypothesisFailed(AnalysisError):
    pass


# input
class ParseError(InputError):
    def __init__(self, message: str, position: int | None = None, text: str | None = None):
        super().__init__(message, position=position, text=text)
        self.position = position
        self.text = text

    def __str__(self) -> str:
        if self.position is None:
            return self.message
        return f"{self.message} (at position {self.position})"


class SceneError(InputError):
    pass
