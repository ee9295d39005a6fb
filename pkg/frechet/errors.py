from typing import List, Optional, Tuple


class FrechetError(Exception):
    """Base class for every error raised by the toolkit."""


class DimensionError(FrechetError):
    """Vectors, operators or bodies belong to incompatible models."""


class LevelOutOfRangeError(FrechetError):
    def __init__(self, level: int, n_max: int, what: str = 'level'):
        self.level = level
        self.n_max = n_max
        super().__init__(f"{what} {level} outside 0..{n_max}")


class CertificationError(FrechetError):
    def __init__(self, message: str, level: Optional[int] = None):
        self.level = level
        super().__init__(message if level is None else f"{message} (level {level})")


class NonMonotoneTowerError(FrechetError):
    """A basis shift needs seminorm towers that increase with the level."""


class UncertifiedOperatorError(FrechetError):
    """An operator was used in a tame context without a matching certificate."""


class NoWitnessError(FrechetError):
    """A witness search has nothing to work with (zero operator, non-strict source)."""


class InfeasibleExtensionError(FrechetError):
    def __init__(self, message: str, slack: Optional[float] = None):
        self.slack = slack
        super().__init__(message)


class SupportOverlapError(FrechetError):
    def __init__(self, pair: Tuple[int, int], message: str = ''):
        self.pair = pair
        super().__init__(message or f"bump supports {pair[0]} and {pair[1]} overlap")


class TruncationError(FrechetError):
    """The truncated model is too small for the requested construction."""


class ScanError(FrechetError):
    def __init__(self, truncation: int, cause: Exception):
        self.truncation = truncation
        super().__init__(f"operator builder failed at truncation {truncation}: {cause}")


class UnknownPaletteError(FrechetError):
    pass


class UnsupportedBodyError(FrechetError):
    pass


class ChainOrderError(FrechetError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"chain element {index + 1} is not contained in element {index + 2}")


class ConfigError(FrechetError):
    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ModelChecksumError(FrechetError):
    def __init__(self, model_id: str, which: str):
        self.model_id = model_id
        self.which = which
        super().__init__(f"stored {which} checksum of model '{model_id}' does not match the rebuilt model")
