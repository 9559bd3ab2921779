"""Connections to an Isabelle server and the commands it understands."""

from __future__ import annotations

import enum
import logging
import socket
import threading
import time
from typing import Callable, List, Optional, Tuple

from .errors import (
    AuthFailed,
    BuildFailed,
    CommandError,
    CommandInFlight,
    ConnectRefused,
    ConnectTimeout,
    ConnectionFailed,
    NotConnected,
    ProtocolViolation,
    UnknownKind,
    WatchdogExpired,
    WireError,
)
from .protocol import (
    CancelArgs,
    IsabelleResponse,
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
    parse_theory_result,
)
from .wire import DEFAULT_MAX_MESSAGE_SIZE, MessageReader, encode_client_message

log = logging.getLogger(__name__)

ResponseCallback = Callable[[IsabelleResponse], None]


class ConnectionState(enum.Enum):
    NEW = "new"
    AUTHENTICATED = "authenticated"
    CLOSED = "closed"


class Connection:
    """One authenticated TCP session with an Isabelle server.

    A connection runs at most one command at a time. It may be handed to
    another thread but must not be used from two threads at once.
    """

    def __init__(self, info: ServerInfo, max_message_size: int = DEFAULT_MAX_MESSAGE_SIZE):
        self.peer = info
        self.state = ConnectionState.NEW
        self.session_id: Optional[str] = None
        self._max_message_size = max_message_size
        self._sock: Optional[socket.socket] = None
        self._reader: Optional[MessageReader] = None
        self._flight = threading.Lock()
        # acknowledgments still owed for commands abandoned by a watchdog
        self._stale_acks = 0
        self.server_greeting: Optional[IsabelleResponse] = None

    def __repr__(self) -> str:
        return f"<Connection {self.peer.name} {self.peer.host}:{self.peer.port} {self.state.value}>"

    def __enter__(self) -> "Connection":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- lifecycle -------------------------------------------------------

    def open(self, timeout: Optional[float] = 10.0) -> None:
        if self.state is not ConnectionState.NEW:
            raise NotConnected(f"connection is {self.state.value}, cannot reopen")
        info = self.peer
        if not info.is_local:
            log.warning("connecting to non-local host %s; the server only binds localhost", info.host)
        try:
            sock = socket.create_connection((info.host, info.port), timeout=timeout)
        except ConnectionRefusedError as exc:
            self.state = ConnectionState.CLOSED
            raise ConnectRefused(f"connection to {info.host}:{info.port} refused") from exc
        except socket.timeout as exc:
            self.state = ConnectionState.CLOSED
            raise ConnectTimeout(f"timed out connecting to {info.host}:{info.port}") from exc
        except OSError as exc:
            self.state = ConnectionState.CLOSED
            raise ConnectionFailed(f"cannot connect to {info.host}:{info.port}: {exc.strerror or exc}") from exc
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        self._reader = MessageReader(sock, self._max_message_size)
        deadline = None if timeout is None else time.monotonic() + timeout
        try:
            sock.sendall(encode_client_message(info.password))
            raw = self._reader.read_message(deadline)
        except socket.timeout as exc:
            self.close()
            raise ConnectTimeout("timed out waiting for the server greeting") from exc
        except (OSError, WireError) as exc:
            self.close()
            raise AuthFailed(f"connection lost during authentication: {type(exc).__name__}") from exc
        if raw is None:
            self.close()
            raise AuthFailed("server closed the connection after the password was sent")
        try:
            resp = parse_response(raw)
        except UnknownKind as exc:
            self.close()
            raise AuthFailed("server sent an unrecognised greeting") from exc
        if resp.kind is not ResponseKind.OK:
            self.close()
            raise AuthFailed(f"server rejected authentication ({resp.kind.value})")
        self.server_greeting = resp
        self.state = ConnectionState.AUTHENTICATED
        log.debug("authenticated with server %r at %s:%s", info.name, info.host, info.port)

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None
        self.state = ConnectionState.CLOSED

    # -- command execution -----------------------------------------------

    def execute(
        self,
        name: str,
        argument: str = "",
        synchronous: bool = True,
        watchdog: Optional[float] = None,
        on_response: Optional[ResponseCallback] = None,
    ) -> Transcript:
        """Send one command and collect every reply up to the final one.

        For asynchronous commands the task id comes from the OK
        acknowledgment; messages for other tasks are kept in the transcript
        but never end the wait. ``watchdog`` bounds the whole wait in seconds.
        """
        if self.state is not ConnectionState.AUTHENTICATED:
            raise NotConnected(f"connection is {self.state.value}")
        if not self._flight.acquire(blocking=False):
            raise CommandInFlight(f"cannot send {name!r}: another command is in flight")
        try:
            return self._execute(name, argument, synchronous, watchdog, on_response)
        finally:
            self._flight.release()

    def _execute(self, name, argument, synchronous, watchdog, on_response) -> Transcript:
        line = f"{name} {argument}" if argument else name
        data = encode_client_message(line)
        log.debug("sending command %s (%d bytes)", name, len(data))
        deadline = None if watchdog is None else time.monotonic() + watchdog
        entries: List[IsabelleResponse] = []
        try:
            self._sock.settimeout(None)
            self._sock.sendall(data)
        except OSError as exc:
            self.close()
            raise ProtocolViolation(f"failed to send {name!r}: {exc}", Transcript(entries)) from exc

        task: Optional[str] = None
        acked = False
        while True:
            try:
                raw = self._reader.read_message(deadline)
            except socket.timeout:
                if not acked:
                    self._stale_acks += 1
                raise WatchdogExpired(
                    f"no final reply to {name!r} within {watchdog}s", Transcript(entries, task)
                ) from None
            except (OSError, WireError) as exc:
                self.close()
                raise ProtocolViolation(
                    f"stream broken while waiting for {name!r}: {exc}", Transcript(entries, task)
                ) from exc
            if raw is None:
                self.close()
                raise ProtocolViolation(
                    f"server closed the connection before the final reply to {name!r}",
                    Transcript(entries, task),
                )
            try:
                resp = parse_response(raw)
            except UnknownKind as exc:
                self.close()
                raise ProtocolViolation(str(exc), Transcript(entries, task)) from exc
            entries.append(resp)
            if on_response is not None:
                on_response(resp)
            if not acked:
                if resp.kind in (ResponseKind.OK, ResponseKind.ERROR):
                    if self._stale_acks:
                        # the reply owed to an earlier, abandoned command
                        self._stale_acks -= 1
                        continue
                    acked = True
                    if synchronous or resp.kind is ResponseKind.ERROR:
                        break
                    task = resp.task
                # anything else before our acknowledgment belongs to older tasks
                continue
            if is_final(resp, task, synchronous):
                break
        transcript = Transcript(entries, task)
        if name == "shutdown" and transcript.final.kind is ResponseKind.OK:
            self.close()
        return transcript

    # -- typed commands --------------------------------------------------

    def echo(self, value: str) -> Transcript:
        return self.execute("echo", value)

    def help(self) -> Transcript:
        return self.execute("help")

    def shutdown(self) -> Transcript:
        return self.execute("shutdown")

    def cancel(self, task: str) -> Transcript:
        return self.execute("cancel", CancelArgs(task).to_json())

    def purge_theories(self, args: PurgeTheoriesArgs) -> Transcript:
        return self.execute("purge_theories", args.to_json())

    def session_build(
        self,
        args: SessionBuildArgs,
        watchdog: Optional[float] = None,
        on_response: Optional[ResponseCallback] = None,
    ) -> Transcript:
        """Build a session. A FAILED final reply is returned, not raised."""
        return self.execute("session_build", args.to_json(), False, watchdog, on_response)

    def session_start(
        self,
        args: Optional[SessionStartArgs] = None,
        watchdog: Optional[float] = None,
        on_response: Optional[ResponseCallback] = None,
    ) -> Tuple[Transcript, str]:
        args = args or SessionStartArgs()
        transcript = self.execute("session_start", args.to_json(), False, watchdog, on_response)
        payload = _require_success(transcript, "session_start")
        session_id = payload.get("session_id") if isinstance(payload, dict) else None
        if not isinstance(session_id, str):
            raise ProtocolViolation("session_start finished without a session_id", transcript)
        return transcript, session_id

    def session_stop(
        self,
        args: SessionStopArgs,
        watchdog: Optional[float] = None,
        on_response: Optional[ResponseCallback] = None,
    ) -> Transcript:
        transcript = self.execute("session_stop", args.to_json(), False, watchdog, on_response)
        if self.session_id == args.session_id and transcript.final.kind is ResponseKind.FINISHED:
            self.session_id = None
        return transcript

    def use_theories(
        self,
        args: UseTheoriesArgs,
        watchdog: Optional[float] = None,
        on_response: Optional[ResponseCallback] = None,
    ) -> Tuple[Transcript, TheoryProcessingResult]:
        """Process theories, starting a default session first if none is given.

        The implicitly started session is remembered on the connection and
        reused by later calls.
        """
        args.validate()
        if args.session_id is None:
            if self.session_id is None:
                _, self.session_id = self.session_start(watchdog=watchdog)
            args = UseTheoriesArgs(args.theories, self.session_id, args.master_dir)
        transcript = self.execute("use_theories", args.to_json(), False, watchdog, on_response)
        payload = _require_success(transcript, "use_theories")
        return transcript, parse_theory_result(payload)


def _require_success(transcript: Transcript, name: str):
    final = transcript.final
    if final.kind is ResponseKind.FAILED:
        raise BuildFailed(f"{name} failed: {final.body[:200]}", transcript)
    if final.kind is ResponseKind.ERROR:
        raise CommandError(f"server rejected {name}: {final.body[:200]}", transcript)
    return final.payload


def connect(info: ServerInfo, timeout: Optional[float] = 10.0) -> Connection:
    """Open and authenticate a connection to the server described by ``info``."""
    conn = Connection(info)
    conn.open(timeout)
    return conn
