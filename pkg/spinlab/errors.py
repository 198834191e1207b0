from typing import Optional


class SpinLabError(ValueError):
    """Base class for every error raised by the lab."""


class InvalidOperatorError(SpinLabError):
    pass


class DimensionMismatchError(SpinLabError):
    pass


class InvalidNetworkError(SpinLabError):
    pass


class InvalidStateError(SpinLabError):
    pass


class InvalidScheduleError(SpinLabError):
    pass


class PermutationError(SpinLabError):
    pass


class CapExceededError(SpinLabError):
    def __init__(self, n: int, cap: int, what: str = "Lie closure"):
        super().__init__(f"{what} limited to n <= {cap} spins (got n={n})")
        self.n = n
        self.cap = cap


class CanonicalizationError(SpinLabError):
    pass


class IdentificationError(SpinLabError):
    pass


class ParseError(SpinLabError):
    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class ConfigError(SpinLabError):
    pass


class PartnerMismatchError(SpinLabError):
    pass
