"""Exception types raised by the library.

Plain ``ValueError`` is used for ordinary argument validation; the classes
here mark failures that callers may want to catch and handle individually
(solver breakdowns, degenerate inputs, structural violations).
"""


class MleigError(Exception):
    """Base class for library-specific failures."""


class UnsupportedDegreeError(MleigError):
    """Polynomial degree outside the supported range 1..4."""


class CoefficientError(MleigError):
    """PDE coefficient violates a requirement (e.g. varphi <= 0)."""


class NestingError(MleigError):
    """The two finite element spaces are not nested."""


class SolverFailure(MleigError):
    """Direct linear solve failed or produced an unacceptable residual."""


class PencilDegenerateError(MleigError):
    """Right-hand side matrix of a dense pencil is numerically singular."""


class ClusterSelectionError(MleigError):
    """Requested eigenvalue cluster cannot be extracted."""


class CoarseSpaceTooLargeError(MleigError):
    """Initial space exceeds the dense-solve size limit."""


class AugmentationCollapseError(MleigError):
    """Augmented trial/test basis is rank deficient (correction stagnated)."""


class DegenerateSubspaceError(MleigError):
    """A subspace basis passed to a gap computation is rank deficient."""
