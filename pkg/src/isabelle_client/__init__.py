"""Client for the Isabelle server's TCP protocol."""

__version__ = "0.1.0"

from .client import Connection, ConnectionState, connect
from .errors import (
    AuthFailed,
    BuildFailed,
    CommandError,
    CommandInFlight,
    ConnectRefused,
    ConnectTimeout,
    IsabelleError,
    MalformedInfoLine,
    ProtocolViolation,
    WatchdogExpired,
)
from .protocol import (
    CancelArgs,
    DiagnosticMessage,
    IsabelleResponse,
    NodeResult,
    PurgeTheoriesArgs,
    ResponseKind,
    ServerInfo,
    SessionBuildArgs,
    SessionStartArgs,
    SessionStopArgs,
    TheoryProcessingResult,
    Transcript,
    UseTheoriesArgs,
    is_final,
    parse_response,
    parse_server_info,
    serialize_args,
)
from .server import ServerHandle, attach, start_server, stop_server

__all__ = [
    "AuthFailed",
    "BuildFailed",
    "CancelArgs",
    "CommandError",
    "CommandInFlight",
    "ConnectRefused",
    "ConnectTimeout",
    "Connection",
    "ConnectionState",
    "DiagnosticMessage",
    "IsabelleError",
    "IsabelleResponse",
    "MalformedInfoLine",
    "NodeResult",
    "ProtocolViolation",
    "PurgeTheoriesArgs",
    "ResponseKind",
    "ServerHandle",
    "ServerInfo",
    "SessionBuildArgs",
    "SessionStartArgs",
    "SessionStopArgs",
    "TheoryProcessingResult",
    "Transcript",
    "UseTheoriesArgs",
    "WatchdogExpired",
    "attach",
    "connect",
    "is_final",
    "parse_response",
    "parse_server_info",
    "serialize_args",
    "start_server",
    "stop_server",
]
