"""
Exception hierarchy shared by the domain services, the CLI and the HTTP layer.

Each error carries the process exit code the CLI maps it to:
0 success, 2 validation error, 3 invariant violation, 4 guard exceeded,
5 iteration budget exhausted (partial outputs are still written).
"""
from typing import Any, Optional


class NKMeansError(Exception):
    exit_code: int = 1


class InvalidParam(NKMeansError):
    exit_code = 2


class ConfigError(InvalidParam):
    pass


class NotConnected(InvalidParam):
    pass


class IndexOutOfRange(InvalidParam):
    pass


class EmptyData(InvalidParam):
    pass


class DimensionMismatch(InvalidParam):
    pass


class NoNeighbors(InvalidParam):
    pass


class SingularCluster(InvalidParam):
    def __init__(self, k: int):
        super().__init__(f"cluster {k} is empty at every agent; the center system is singular")
        self.k = k


class InvariantViolation(NKMeansError):
    exit_code = 3


class TooLarge(NKMeansError):
    exit_code = 4

    def __init__(self, size: int, limit: int):
        super().__init__(f"enumeration size K^N = {size} exceeds the guard {limit}")
        self.size = size
        self.limit = limit


class MaxItersExceeded(NKMeansError):
    exit_code = 5

    def __init__(self, iters: int):
        super().__init__(f"Lloyd iteration did not reach a fixed point in {iters} iterations")
        self.iters = iters


class MaxRoundsExceeded(NKMeansError):
    exit_code = 5

    def __init__(self, rounds: int, result: Optional[Any] = None):
        super().__init__(f"NK-means stop rule not met within {rounds} rounds")
        self.rounds = rounds
        # partial RunResult (trace included) so callers can still persist it
        self.result = result
