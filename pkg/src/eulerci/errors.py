"""Exception types shared across the package."""


class EulerCIError(Exception):
    """Base class for all package-specific errors."""


class GridError(EulerCIError):
    """Invalid grid size or incompatible grids in a binary operation."""


class NonZeroMeanError(EulerCIError):
    """An operation requiring a mean-free field received one with a mean."""


class ParameterError(EulerCIError):
    """Scheduling / admissibility constraint violated."""


class GridUnderResolvedError(EulerCIError):
    """A requested frequency band does not fit under the dealias cutoff."""


class NonPositiveProfileError(EulerCIError):
    """An energy profile must be strictly positive."""


class EnergyGapError(EulerCIError):
    """The prescribed energy profile leaves no room for the next perturbation."""


class PositivityError(EulerCIError):
    """A quantity that must be strictly positive failed to be."""


class DisjointnessFailedError(EulerCIError):
    """Tube supports overlap at the verification resolution."""


class PositivityRadiusError(EulerCIError):
    """Certified coefficient-positivity radius smaller than required."""


class ROutOfRangeError(EulerCIError):
    """A stress matrix left the certified positivity ball around Id."""


class IOFormatError(EulerCIError):
    """Snapshot directory or manifest does not match the on-disk format."""


class CFLWindowExceededError(EulerCIError):
    """Requested integration window exceeds the local-solvability surrogate."""


class BlowupSuspectedError(EulerCIError):
    """Gradient norm grew past the runaway threshold during a solve."""


class OutOfWindowError(EulerCIError):
    """Flow-map time outside the interval the trajectory supports."""


class MissingOverlapError(EulerCIError):
    """Consecutive interval solves do not share the required overlap band."""


class PhaseDegenerateError(EulerCIError):
    """A phase map's gradient left the prescribed conditioning bracket."""


class PropertyViolatedError(EulerCIError):
    """A cutoff family failed one of its named build-time properties."""

    def __init__(self, prop: str, detail: str = ""):
        self.prop = prop
        msg = f"cutoff property ({prop}) violated"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class RtildeOutOfBallError(EulerCIError):
    """Conjugated stress left the ball the tube coefficients are defined on."""


class MeanDriftError(EulerCIError):
    """A stress argument's mean drifted past the subtraction tolerance."""
