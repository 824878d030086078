"""Exception hierarchy. Every error raised by the toolkit derives from BiaslensError."""

from __future__ import annotations


class BiaslensError(Exception):
    """Base class for analysis errors (CLI exit code 1)."""


# ingest
class ParseError(BiaslensError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaMismatch(BiaslensError, ValueError):
    pass


class DuplicateId(BiaslensError, ValueError):
    pass


class DimensionMismatch(BiaslensError, ValueError):
    pass


# metrics
class NonPositiveTruth(BiaslensError, ValueError):
    pass


class EmptyGroup(BiaslensError, ValueError):
    pass


class OrderViolation(BiaslensError, ValueError):
    pass


class NonPositiveBaseline(BiaslensError, ValueError):
    pass


# pca / gmm
class DegenerateData(BiaslensError, ValueError):
    pass


class InsufficientRows(BiaslensError, ValueError):
    pass


class TooFewPoints(BiaslensError, ValueError):
    pass


class SingularComponent(BiaslensError, ArithmeticError):
    pass


class SingleCluster(BiaslensError, ValueError):
    pass


# slice discovery
class NoEmbeddings(BiaslensError, ValueError):
    pass


class UnknownSlice(BiaslensError, KeyError):
    pass


class UnknownFactor(BiaslensError, KeyError):
    pass


class BinningMismatch(BiaslensError, ValueError):
    pass


# stratify / intersect
class TooFewValues(BiaslensError, ValueError):
    pass


class UnknownModel(BiaslensError, KeyError):
    pass


class EmptySample(BiaslensError, ValueError):
    pass


class InsufficientSupport(BiaslensError, ValueError):
    pass


class UnknownBin(BiaslensError, KeyError):
    pass


class TooFewStrata(BiaslensError, ValueError):
    pass


# clinical
class OutOfRange(BiaslensError, ValueError):
    pass


class GaOutOfRange(BiaslensError, ValueError):
    pass


class GaOrderViolation(BiaslensError, ValueError):
    pass


# synth
class InvalidConfig(BiaslensError, ValueError):
    pass


class MismatchedProvenance(BiaslensError, ValueError):
    pass


# report
class EmptyAxes(BiaslensError, ValueError):
    pass


class EmptyGrid(BiaslensError, ValueError):
    pass
