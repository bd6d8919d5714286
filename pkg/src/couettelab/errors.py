"""Exception hierarchy shared by all couettelab modules."""


class CouetteLabError(Exception):
    """Base class for every error raised by the package."""


class ShapeError(CouetteLabError, ValueError):
    pass


class SymmetryError(CouetteLabError, ValueError):
    """Spectral coefficients do not describe a real field."""


class MeanError(CouetteLabError, ValueError):
    """A Poisson source has a nonzero mean."""


class CFLError(CouetteLabError):
    """Time step violates the advective stability bound."""

    def __init__(self, message, suggested_dt):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class RemapPhaseError(CouetteLabError):
    """Remap requested at a shear offset that is not a lattice shift."""


class SplitDriftError(CouetteLabError):
    """The zero-mode split no longer sums to the streamwise zero mode."""


class SingularFrameError(CouetteLabError):
    """1 + d_y u10_hat fell below the configured floor."""


class ClockError(CouetteLabError):
    pass


class GeneratorError(CouetteLabError, ValueError):
    pass


class DomainError(CouetteLabError, ValueError):
    pass


class PreconditionError(CouetteLabError, ValueError):
    pass


class ParameterError(CouetteLabError, ValueError):
    pass


class AccuracyError(CouetteLabError):
    pass


class BracketError(CouetteLabError, ValueError):
    pass


class ConfigError(CouetteLabError, ValueError):
    pass


class FormatError(CouetteLabError, ValueError):
    pass
