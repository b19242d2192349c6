"""Exception hierarchy for the two-scale solver.

Errors are grouped by how a caller should react: ``ConfigurationError``
(reject the run request), ``NumericalError`` (the discrete problem broke
down) and ``HypothesisGateError`` (the well-posedness hypotheses failed,
so the solver refuses to start).  The service and CLI map these groups to
distinct exit codes.
"""


class PoroscaleError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PoroscaleError):
    """Invalid or inconsistent run configuration."""


class UnknownExperiment(ConfigurationError):
    """Requested experiment name is not in the registry."""


class NumericalError(PoroscaleError):
    """Numerical breakdown while assembling or solving."""


class HypothesisGateError(PoroscaleError):
    """A well-posedness hypothesis check refused the run."""


# -- geometry ---------------------------------------------------------------

class MicroPointOutOfBall(NumericalError):
    """Reference micro point lies outside the closed unit ball."""


class DegenerateMetric(NumericalError):
    """Cell radius left its admissible range, metric would degenerate."""


class TraceMismatch(NumericalError):
    """Micro boundary values disagree with the macro field."""


class BoundaryViolation(NumericalError):
    """Macro field violates the homogeneous Dirichlet boundary data."""


# -- coefficients -----------------------------------------------------------

class EllipticityViolation(NumericalError):
    """A diffusivity evaluated below the ellipticity floor eta."""


class PorosityRangeViolation(NumericalError):
    """Porosity left the admissible interval [M_min, M_max]."""


class BoundViolation(NumericalError):
    """Porosity consumption rate reached its strict upper bound c_g."""


# -- linear algebra ---------------------------------------------------------

class SingularSolve(NumericalError):
    """A direct factorization failed or produced a non-finite solution."""


class TooFewSlices(NumericalError):
    """A time-grid norm needs at least two slices."""


class TooFewLevels(NumericalError):
    """A convergence ladder needs at least three levels."""


# -- iteration control ------------------------------------------------------

class PicardDivergence(NumericalError):
    """Fixed-point iteration hit its cap with growing differences."""


class WindowCollapse(NumericalError):
    """Window halving shrank the time window below four steps."""


class SmallnessViolation(HypothesisGateError):
    """Initial data or sources violate the smallness hypotheses."""


# -- probes -----------------------------------------------------------------

class DegenerateDistance(NumericalError):
    """Lipschitz probe received two identical macro points."""


class ZeroDenominator(NumericalError):
    """Rademacher quotient denominator vanished for every test tuple."""
