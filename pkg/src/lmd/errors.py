"""Exception types raised across the package."""


class LMDError(Exception):
    """Base class for every error raised by ``lmd``."""


class EmptyLog(LMDError):
    pass


class DegenerateMap(LMDError):
    pass


class EmptyDescriptor(LMDError):
    pass


class NoStructure(LMDError):
    pass


class NoFreeSpace(LMDError):
    pass


class NoWalls(LMDError):
    pass


class DuplicateMap(LMDError):
    pass


class EmptyIndex(LMDError):
    pass


class TruthNotRanked(LMDError):
    pass


class InsufficientDistractors(LMDError):
    pass


class FormatError(LMDError):
    """A file did not match the expected on-disk layout."""
