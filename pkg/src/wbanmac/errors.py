"""Exception types raised across the simulator.

Every error that names a configuration field carries it as ``.field`` so the
CLI can report it without parsing the message.
"""


class WbanError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ScenarioError(WbanError, ValueError):
    exit_code = 2

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class MissingField(ScenarioError):
    pass


class NonPositiveDuration(ScenarioError):
    pass


class ChannelCountTooSmall(ScenarioError):
    pass


class NoCoordinator(ScenarioError):
    pass


class InvalidValue(ScenarioError):
    pass


class ParseError(ScenarioError):
    """Config text could not be turned into a raw mapping."""

    def __init__(self, field, message, line=None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(field, message + where)
        self.line = line


class DistanceBelowReference(WbanError, ValueError):
    pass


class NonStochasticInput(WbanError, ValueError):
    pass


class NegativeMu(WbanError, ValueError):
    pass


class NoStableChannel(WbanError, RuntimeError):
    pass


class SchedulingInPast(WbanError, RuntimeError):
    pass


class EnergyExhausted(WbanError, RuntimeError):
    def __init__(self, node):
        super().__init__(f"node {node} has no energy left")
        self.node = node


class DegenerateScenario(WbanError, ValueError):
    pass


class OutputExists(WbanError, FileExistsError):
    exit_code = 4
