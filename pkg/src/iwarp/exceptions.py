"""Exception hierarchy.

Every error raised deliberately by the package derives from :class:`IWarpError`
so callers (and the CLI) can map failures to exit codes.
"""


class IWarpError(Exception):
    """Base class for all package errors."""


class InputError(IWarpError, ValueError):
    """Malformed or out-of-contract input."""


class EmptyCloud(InputError):
    pass


class InsufficientPoints(InputError):
    pass


class PairCountMismatch(InputError):
    pass


class DegenerateBasis(InputError):
    pass


class DegenerateConfiguration(IWarpError):
    pass


class DegenerateMesh(InputError):
    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"{message} (object {index})")
        self.index = index


class LatentDimTooLarge(InputError):
    pass


class LatentDimMismatch(InputError):
    pass


class NumericalCollapse(IWarpError):
    def __init__(self, message, iteration):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


class RegistrationError(IWarpError):
    """A CPD failure tagged with the (source, target) pair that produced it."""

    def __init__(self, pair, cause):
        super().__init__(f"CPD failed for pair {pair}: {cause}")
        self.pair = pair
        self.cause = cause


class NonFiniteGradient(IWarpError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


class InferenceFailed(IWarpError):
    def __init__(self, losses):
        super().__init__(f"all restarts diverged; per-restart losses: {list(losses)}")
        self.losses = list(losses)


class ExtractionError(IWarpError):
    """Base for demonstration extraction failures."""


class NoContacts(ExtractionError):
    def __init__(self, message, min_distance=None):
        super().__init__(message)
        self.min_distance = min_distance


class InsufficientContacts(ExtractionError):
    pass


class NoNearbyPoints(ExtractionError):
    def __init__(self, message, max_pairs=0, min_distance=None):
        super().__init__(message)
        self.max_pairs = max_pairs
        self.min_distance = min_distance


class FormatError(InputError):
    """A file did not parse or failed a consistency check."""
