"""Exception hierarchy shared by every layer of the simulator."""


class GalsError(Exception):
    """Base class; ``code`` is the stable name used in CLI diagnostics."""

    @property
    def code(self) -> str:
        return type(self).__name__


class ProtocolViolation(GalsError):
    """Both ends of a link report the token, or the parity disagrees with the tracker."""


class TokenNotHeld(GalsError):
    pass


class TransitionInFlight(GalsError):
    pass


class MalformedNetwork(GalsError):
    pass


class StallDecision(GalsError):
    """The flow-control logic kept every token: the GPRM can never fire again."""

    def __init__(self, message: str, gprm: str = "", time: int = 0):
        super().__init__(message)
        self.gprm = gprm
        self.time = time


class UnknownChannel(GalsError):
    pass


class ZeroState(GalsError):
    pass


class UnknownSink(GalsError):
    pass


class InsufficientLength(GalsError):
    pass


class BandOutOfRange(GalsError):
    pass


class MismatchedSpectra(GalsError):
    pass


class UnsupportedShape(GalsError):
    pass


class ConfigError(GalsError):
    """Config parse/semantic failure, addressed by line and field path."""

    def __init__(self, message: str, path: str = "", line: int | None = None, source: str = ""):
        self.path = path
        self.line = line
        self.source = source
        parts = [source + (f":{line}" if line is not None else "")] if source else []
        if path:
            parts.append(path)
        super().__init__(": ".join(parts + [message]))
