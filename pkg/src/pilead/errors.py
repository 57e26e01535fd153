"""Exception hierarchy shared by all modules."""


class PiLeadError(Exception):
    """Base class for every error raised by this package."""


# lti
class DelayNotClosable(PiLeadError):
    pass


class PoleOnAxis(PiLeadError):
    pass


class DegreeZero(PiLeadError):
    pass


class IllConditioned(PiLeadError):
    pass


# simulation
class ImproperTf(PiLeadError):
    pass


class InvalidPlant(PiLeadError):
    pass


class UnknownPlant(PiLeadError):
    pass


# analysis
class OutOfRange(PiLeadError):
    pass


class TooShort(PiLeadError):
    pass


# tuner
class TunerError(PiLeadError):
    """Raised by a tuning stage; ``log`` carries the experiments done so far."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log if log is not None else []


class Unresponsive(TunerError):
    pass


class UnstablePlant(TunerError):
    pass


class NoOscillationFound(TunerError):
    pass


class NoOscillation(TunerError):
    pass


class BudgetExhausted(TunerError):
    pass


# transport
class TransportError(PiLeadError):
    pass


class ProtocolError(TransportError):
    pass
