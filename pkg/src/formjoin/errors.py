"""Exception hierarchy shared by all modules."""


class FormationError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(FormationError, ValueError):
    pass


class InvalidRotation(FormationError, ValueError):
    pass


class UnknownAgent(FormationError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class UnknownAnchor(UnknownAgent):
    pass


class DuplicateAgent(FormationError, ValueError):
    pass


class SingularWeight(FormationError):
    """W_kk of a triplet is (numerically) singular: the anchor pair is not generic."""

    def __init__(self, message: str, sigma_min: float = 0.0):
        super().__init__(message)
        self.sigma_min = sigma_min


class SingularFollowerBlock(FormationError):
    pass


class NoCandidates(FormationError):
    pass


class NoGenericPair(FormationError):
    pass


class InconsistentBlocks(FormationError):
    pass


class MissingNeighbor(FormationError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class SpectralViolation(FormationError):
    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class NumericalInstability(FormationError):
    pass


class ConfigError(FormationError, ValueError):
    pass
