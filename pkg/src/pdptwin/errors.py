"""Exception types shared across the toolkit.

Every operational failure raises a subclass of PdpError so callers can
distinguish toolkit errors from programming errors. Validation-style
operations return diagnostics instead of raising.
"""


class PdpError(Exception):
    """Base class for all toolkit errors."""


# model construction / composition
class UnmatchedInput(PdpError):
    """An input action has no matching output action in the network."""


class NoControllerAutomaton(PdpError):
    pass


# simulation semantics
class EventNotEnabled(PdpError):
    pass


class AmbiguousWithoutRng(PdpError):
    pass


class StuckLocation(PdpError):
    pass


class NumericOverflow(PdpError):
    pass


class InvalidHorizon(PdpError):
    pass


# parsing
class ParseError(PdpError):
    """Model/config text could not be parsed; carries line and column."""

    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, col {column}: {message}")
        self.line = line
        self.column = column


# signals and labeling
class TooFewSamples(PdpError):
    pass


class EmptySignal(PdpError):
    pass


class MissingSignal(PdpError):
    pass


class OutOfSpan(PdpError):
    pass


# learning
class NoSegments(PdpError):
    pass


class DegenerateFit(PdpError):
    pass


class TraceRejected(PdpError):
    pass


# statistical model checking
class BadBound(PdpError):
    pass


class HorizonTooShort(PdpError):
    pass


class MissingEstimate(PdpError):
    pass


# exploration
class BadFactor(PdpError):
    pass


class NothingToRemove(PdpError):
    pass


class BudgetZero(PdpError):
    pass


class RaggedInput(PdpError):
    pass


class BadPopulation(PdpError):
    pass


# triage
class SchemaMismatch(PdpError):
    pass


class BadMatrix(PdpError):
    pass


class SingleCluster(PdpError):
    pass


class TooFewFailures(PdpError):
    pass


# strategy synthesis
class EmptyGoal(PdpError):
    pass


# physiology simulator
class UnknownKind(PdpError):
    pass


# runtime sessions
class StrategyModelMismatch(PdpError):
    pass


class NotControllable(PdpError):
    pass


class SessionClosed(PdpError):
    pass


# statistics
class ZeroTruth(PdpError):
    pass


class LengthMismatch(PdpError):
    pass
