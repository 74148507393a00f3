"""Exception hierarchy.

Every numerical failure raised by the library derives from
:class:`MorphforgeError`; the CLI reports ``type(err).__name__`` in the
JSON ``"error"`` field and exits with code 3.  Input validation problems
raise :class:`ValidationError` (exit code 2).
"""


class MorphforgeError(Exception):
    """Base class for numerical failures."""


class ValidationError(MorphforgeError, ValueError):
    """Invalid user input (bad config, violated invariant)."""


# geometry
class SingularMetric(MorphforgeError):
    pass


class DegenerateNormal(MorphforgeError):
    pass


class OffManifold(MorphforgeError):
    pass


class NonFiniteInput(MorphforgeError):
    pass


# flow
class LeftDomain(MorphforgeError):
    pass


class NoConvergence(MorphforgeError):
    pass


class InverseFailure(MorphforgeError):
    pass


class GridTooCoarse(MorphforgeError):
    pass


# energy
class DegenerateIntermediate(MorphforgeError):
    pass


# circlemorph
class QuadratureFailure(MorphforgeError):
    pass


class Infeasible(MorphforgeError):
    pass


class BracketFailure(MorphforgeError):
    pass


# spheremorph
class DomainError(MorphforgeError, ValueError):
    pass


class DegenerateMap(MorphforgeError):
    pass


class PoleHit(MorphforgeError):
    pass
