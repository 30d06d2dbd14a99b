"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line front end:
1 for invalid input, 2 for numerical failures.
"""


class HichomError(Exception):
    exit_code = 2


class InputError(HichomError):
    exit_code = 1


class SolverError(HichomError):
    exit_code = 2


# geometry / mesh
class InvalidGeometry(InputError):
    pass


class MeshTooCoarse(InputError):
    pass


class NonUnitCell(InputError):
    pass


class MeshMismatch(InputError):
    pass


class ResolutionTooCoarse(InputError):
    pass


class LadderMismatch(InputError):
    pass


# coefficients
class NonSpdCoefficient(InputError):
    pass


class NonEllipticTensor(InputError):
    pass


class InconsistentConstraints(InputError):
    pass


class EmptyInclusion(InputError):
    pass


class MissingChi(InputError):
    pass


class MissingCorrectors(InputError):
    pass


# numerics
class SolverDiverged(SolverError):
    pass


class SingularSystem(SolverError):
    pass


class IllConditioned(SolverError):
    pass


class BoundsViolation(SolverError):
    pass


class DegenerateRHom(SolverError):
    pass


# configuration
class ParseError(InputError):
    pass


class ValidationError(InputError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
