# Error hierarchy
# bci_hand/core/errors.py
from typing import Optional


class BciHandError(Exception):
    """Base class for every pipeline failure; carries the CLI exit code"""
    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigError(BciHandError):
    exit_code = 2

    def __init__(self, detail: str, key_path: Optional[str] = None):
        if key_path:
            detail = f"{key_path}: {detail}"
        super().__init__(detail)
        self.key_path = key_path


class MissingDependency(BciHandError):
    exit_code = 3

    def __init__(self, stage: str, detail: Optional[str] = None):
        super().__init__(detail or f"upstream stage '{stage}' has not been run")
        self.stage = stage


class NumericalFailure(BciHandError):
    exit_code = 4


class EmptyReport(BciHandError):
    exit_code = 5


# Configuration-level failures
class InvalidFilterSpec(ConfigError):
    pass


class InvalidSynthConfig(ConfigError):
    pass


# signal-core
class SignalTooShort(NumericalFailure):
    pass


class EpochOutOfBounds(NumericalFailure):
    pass


class AllTrialsRejected(NumericalFailure):
    def __init__(self, detail: str, report: list):
        super().__init__(detail)
        self.report = report


# ica
class RankDeficient(NumericalFailure):
    def __init__(self, detail: str, rank: int):
        super().__init__(detail)
        self.rank = rank


class IcaDiverged(NumericalFailure):
    pass


class DimensionMismatch(NumericalFailure):
    pass


class SingularMatrix(NumericalFailure):
    pass


# erders
class InsufficientTrials(NumericalFailure):
    pass


class ZeroReference(NumericalFailure):
    pass


class TooFewComponents(NumericalFailure):
    pass


# features
class WindowOutOfBounds(NumericalFailure):
    pass


class MissingClass(NumericalFailure):
    pass


# classify
class SingularCovariance(NumericalFailure):
    pass


class TrainingDiverged(NumericalFailure):
    def __init__(self, detail: str, epoch: int):
        super().__init__(detail)
        self.epoch = epoch


class EmptyClass(NumericalFailure):
    pass
