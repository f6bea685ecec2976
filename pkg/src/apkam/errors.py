"""Exception hierarchy shared by all apkam modules.

Every error carries the name of the module that raised it so the CLI can
report which precondition failed and where.  ``VALIDATION`` errors mean the
input violated a contract; ``NUMERICAL`` errors mean a computation could not
be completed at the requested accuracy.
"""

VALIDATION = "validation"
NUMERICAL = "numerical"


class ApkamError(Exception):
    kind = NUMERICAL
    module = "apkam"

    def __init__(self, message, module=None, kind=None):
        super().__init__(message)
        if module is not None:
            self.module = module
        if kind is not None:
            self.kind = kind


class ZeroIndex(ApkamError):
    """A nonzero multi-index was required."""
    kind = VALIDATION
    module = "frequency"


class SupportOutOfRange(ApkamError):
    """Multi-index support exceeds the frequency dimension."""
    kind = VALIDATION
    module = "frequency"


class ExhaustedAttempts(ApkamError):
    """Rejection sampler hit its attempt budget (constants too large)."""
    module = "frequency"


class IntervalTooSmall(ApkamError):
    """Rotation interval shorter than the safety margin 4*pi*gamma."""
    kind = VALIDATION
    module = "frequency"


class ContextMismatch(ApkamError):
    """Operands built over different frequency contexts."""
    kind = VALIDATION
    module = "apseries"


class UnverifiedIndex(ApkamError):
    """Series index outside the lattice the context actually verified."""
    kind = VALIDATION
    module = "apseries"


class CompositionDomain(ApkamError):
    """Shift too large for the analyticity margin of the composition."""
    module = "apseries"


class ContractionFailure(ApkamError):
    """Fixed-point iteration did not contract."""
    module = "apseries"


class MeanNotZero(ApkamError):
    """Difference equation right-hand side has a nonzero mean."""
    kind = VALIDATION
    module = "homological"


class SmallDivisorBreakdown(ApkamError):
    """A small divisor fell below the trust floor."""
    module = "homological"


class ResidualCheckFailed(ApkamError):
    """A mandatory self-verification residual exceeded its budget."""
    module = "homological"


class ReparametrizationFailure(ApkamError):
    """Image curve not monotone-invertible in x."""
    module = "twistmap"


class ConditionViolation(ApkamError):
    """A KAM step hypothesis failed in strict mode."""
    module = "kam"


class NoConvergence(ApkamError):
    """KAM iteration stalled above the residual tolerance."""
    module = "kam"


class ChartBreakdown(ApkamError):
    """Large-energy action-angle chart left its validity region."""
    module = "pendulum"


class StepSizeUnderflow(ApkamError):
    """Adaptive integrator failed to advance."""
    module = "pendulum"
