"""Exception hierarchy shared by every fedcod module."""


class FedCodError(Exception):
    pass


class InvalidParameter(FedCodError, ValueError):
    pass


class NotDecodable(FedCodError):
    pass


class IncompatibleBlocks(FedCodError, ValueError):
    pass


class FrameError(FedCodError, ValueError):
    pass


class InvalidFrame(FrameError):
    """A frame object violates a layout invariant and cannot be encoded."""


class UnsupportedFrame(FrameError):
    """Bad magic, version or message type."""


class IncompleteFrame(FrameError):
    """Fewer bytes than the header or the declared lengths require."""


class MalformedFrame(FrameError):
    """Declared lengths disagree with the bytes present."""


class ProtocolViolation(FedCodError):
    pass


class InvalidConfig(FedCodError, ValueError):
    pass


class ConfigError(FedCodError, ValueError):
    """Config file rejected; ``path`` names the offending key."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class StalledRound(FedCodError):
    """A round exceeded its simulated-time cap."""

    def __init__(self, message, round_index=None, client=None, link=None):
        super().__init__(message)
        self.round_index = round_index
        self.client = client
        self.link = link


class ComparisonError(FedCodError, ValueError):
    pass
