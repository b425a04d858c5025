"""Exception types raised across the toolkit.

Every failure mode that callers are expected to branch on gets its own
class; plain ValueError is reserved for caller contract violations that
indicate a programming error rather than a numerical condition.
"""


class StochflowError(Exception):
    """Base class for all toolkit errors."""


# -- noise ------------------------------------------------------------------

class InvalidGridError(StochflowError):
    """Time grid is empty, has a non-positive step, or is inconsistent."""


class GridMisalignedError(StochflowError):
    """A time is not an integer multiple of the grid step."""


class OutOfWindowError(StochflowError):
    """An operation would reference increments outside the stored window."""


class TailNotNegligibleError(StochflowError):
    """An exponential weight does not decay fast enough (or at all) for the
    requested infinite-interval integral to be truncated below tolerance."""


# -- spectral space ---------------------------------------------------------

class ZeroEigenvalueError(StochflowError):
    """Splitting requested for an operator with a vanishing eigenvalue."""


class NotInMinusSubspaceError(StochflowError):
    """Vector has a component outside the finite unstable block."""


class BasisMismatchError(StochflowError):
    """Arithmetic between mode vectors attached to different bases."""


class SplittingUndefinedError(StochflowError):
    """Operation requires the hyperbolic splitting but none is defined."""


# -- semiflow ---------------------------------------------------------------

class BlowUpError(StochflowError):
    """A trajectory coordinate exceeded the configured magnitude cap."""


class WindowExceededError(StochflowError):
    """A stationary-point lookup fell outside its stored shift window."""


# -- stationary -------------------------------------------------------------

class ConditionViolatedError(StochflowError):
    """Contraction condition mu = L*(1/mu_plus - 1/mu_minus) >= 1."""


class NoConvergenceError(StochflowError):
    """Iteration hit its budget without meeting the tolerance."""


class QuadratureTooCoarseError(StochflowError):
    """Shift-window step too coarse for the requested tolerance."""


# -- spectrum ---------------------------------------------------------------

class DegenerateRError(StochflowError):
    """QR diagonal underflowed; too many vectors or horizon too long."""


class NoSubspaceConvergenceError(StochflowError):
    """Subspace estimates did not become Cauchy over the horizon ladder."""


# -- manifolds --------------------------------------------------------------

class SeriesTooShortError(StochflowError):
    """Not enough usable points above the noise floor for a rate fit."""


class DegeneratePairsError(StochflowError):
    """Sample pairs too close together for a Lipschitz-exponent estimate."""


class ChainTooShortError(StochflowError):
    """History chain shorter than the minimum depth for a rate fit."""


class NoUnstableDirectionsError(StochflowError):
    """Unstable subspace is zero-dimensional; nothing to seed."""


class AllSeedsRejectedError(StochflowError):
    """Every candidate unstable seed failed the envelope after retries."""


class InsufficientSamplesError(StochflowError):
    """Too few manifold samples near the anchor for a tangency fit."""


class FitIllConditionedError(StochflowError):
    """Least-squares graph fit is rank deficient."""


# -- cli / pipeline ---------------------------------------------------------

class ConfigError(StochflowError):
    """Experiment configuration failed validation."""

    def __init__(self, message, section=None, key=None):
        loc = ""
        if section is not None:
            loc = f" [{section}]" + (f" {key}" if key else "")
        super().__init__(message + loc)
        self.section = section
        self.key = key


class StageError(StochflowError):
    """A pipeline stage failed; carries the stage name and the cause."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class NotHyperbolicError(StochflowError):
    """Manifold stage requested but the estimated spectrum has an exponent
    indistinguishable from zero."""
