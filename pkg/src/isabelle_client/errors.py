"""Exception hierarchy for the Isabelle server client."""

from __future__ import annotations

from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:
    from .protocol import Transcript


class IsabelleError(Exception):
    """Base class for every error raised by this package."""


# -- wire level -------------------------------------------------------------


class WireError(IsabelleError):
    pass


class EmbeddedNewline(WireError, ValueError):
    pass


class AmbiguousShortMessage(WireError, ValueError):
    """A digits-only message cannot be sent in short format."""


class TruncatedMessage(WireError):
    pass


class InvalidUtf8(WireError):
    pass


class OversizeMessage(WireError):
    pass


# -- protocol model ---------------------------------------------------------


class UnknownKind(IsabelleError, ValueError):
    pass


class MalformedInfoLine(IsabelleError, ValueError):
    pass


class InvalidArgs(IsabelleError, ValueError):
    pass


# -- client -----------------------------------------------------------------


class ConnectionFailed(IsabelleError):
    """Transport-level failure while establishing a connection."""


class ConnectRefused(ConnectionFailed):
    pass


class ConnectTimeout(ConnectionFailed, TimeoutError):
    pass


class AuthFailed(ConnectionFailed):
    pass


class NotConnected(IsabelleError):
    pass


class CommandInFlight(IsabelleError):
    pass


class TranscriptError(IsabelleError):
    """An error that carries the replies collected before it happened."""

    def __init__(self, message: str, transcript: Optional["Transcript"] = None):
        super().__init__(message)
        self.transcript = transcript


class ProtocolViolation(TranscriptError):
    pass


class WatchdogExpired(TranscriptError, TimeoutError):
    pass


class BuildFailed(TranscriptError):
    pass


class CommandError(TranscriptError):
    """The server answered a command with ERROR."""


# -- server process ---------------------------------------------------------


class ServerStartError(IsabelleError):
    pass


class UnsupportedPlatform(ServerStartError):
    pass


class ExecutableNotFound(ServerStartError, FileNotFoundError):
    pass


class ReadyTimeout(ServerStartError, TimeoutError):
    def __init__(self, message: str, stderr: bytes = b""):
        super().__init__(message)
        self.stderr = stderr


class ServerExited(ServerStartError):
    def __init__(self, message: str, returncode: Optional[int], stderr: bytes = b""):
        super().__init__(message)
        self.returncode = returncode
        self.stderr = stderr


# -- mock server ------------------------------------------------------------


class BindFailure(IsabelleError, OSError):
    pass


class ScenarioError(IsabelleError, ValueError):
    pass
