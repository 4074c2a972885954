"""Exception and warning types raised across the package."""


class PFlowError(Exception):
    """Base class for all package errors."""


# mesh / geometry
class MeshError(PFlowError, ValueError):
    """Mesh failed validation (also raised as ValidationError by loaders)."""


ValidationError = MeshError


class NonManifold(MeshError):
    pass


class DegenerateFace(MeshError):
    pass


class InconsistentOrientation(MeshError):
    pass


class ShapeMismatch(PFlowError, ValueError):
    pass


class MeshMismatch(PFlowError, ValueError):
    pass


class InvalidP(PFlowError, ValueError):
    pass


class ParseError(PFlowError, ValueError):
    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + loc)
        self.line = line
        self.column = column


class BadParams(PFlowError, ValueError):
    pass


# eigen solver
class ConstantInput(PFlowError, ValueError):
    pass


class NotRecentered(PFlowError, ValueError):
    pass


class NotConverged(PFlowError, RuntimeError):
    pass


class SolverBreakdown(PFlowError, RuntimeError):
    pass


# flow
class BlowupDetected(PFlowError, RuntimeError):
    pass


class StepUnderflow(PFlowError, RuntimeError):
    pass


class MissingLambda(PFlowError, ValueError):
    pass


class PastBlowup(PFlowError, ValueError):
    pass


class DenominatorVanishes(PFlowError, ValueError):
    pass


class NegativeC(PFlowError, ValueError):
    pass


# monotone quantities and checkers
class BranchMismatch(PFlowError, ValueError):
    pass


class PinchingViolated(PFlowError, ValueError):
    pass


class WrongSign(PFlowError, ValueError):
    pass


class NegativeEps(PFlowError, ValueError):
    pass


class MeshQualityWarning(UserWarning):
    """Some cotan weights are negative (non-Delaunay faces)."""


class NotConvergedWarning(RuntimeWarning):
    pass
