"""A scripted stand-in for the Isabelle server, speaking the real wire format."""

from __future__ import annotations

import json
import logging
import random
import socket
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from ..errors import BindFailure, WireError
from ..protocol import ResponseKind, ServerInfo, render_response
from ..wire import MessageReader, encode_server_message
from .scenario import Scenario

log = logging.getLogger(__name__)

GREETING = {"isabelle_id": "mock", "isabelle_name": "Isabelle2021-1"}
_POLL = 0.05


@dataclass
class ConnectionLog:
    """Raw bytes exchanged over one accepted connection."""

    received: bytearray = field(default_factory=bytearray)
    sent: bytearray = field(default_factory=bytearray)
    commands: List[str] = field(default_factory=list)
    authenticated: bool = False


class _Closed(Exception):
    pass


class TaskIds:
    """Deterministic uuid4-shaped ids from a seeded generator."""

    def __init__(self, seed: int):
        self._rng = random.Random(seed)

    def next(self) -> str:
        return str(uuid.UUID(int=self._rng.getrandbits(128), version=4))


class MockServer:
    """Serves one connection at a time on 127.0.0.1 until stopped.

    ``stop()`` may be called from any thread and returns promptly even while
    a reply script is sleeping.
    """

    def __init__(self, scenario: Scenario, port: int = 0, name: str = "mock"):
        self.scenario = scenario
        self.connections: List[ConnectionLog] = []
        self._stop = threading.Event()
        self._lock = threading.Lock()
        self._client: Optional[socket.socket] = None
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        try:
            listener.bind(("127.0.0.1", port))
            listener.listen(8)
        except OSError as exc:
            listener.close()
            raise BindFailure(f"cannot bind mock server to 127.0.0.1:{port}: {exc.strerror or exc}") from exc
        listener.settimeout(_POLL)
        self._listener = listener
        self.info = ServerInfo(name, "127.0.0.1", listener.getsockname()[1], scenario.password)
        self._thread = threading.Thread(target=self._serve, name=f"mock-{name}", daemon=True)
        self._thread.start()

    def __enter__(self) -> "MockServer":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    @property
    def running(self) -> bool:
        return self._thread.is_alive()

    def stop(self, timeout: float = 5.0) -> None:
        self._stop.set()
        with self._lock:
            if self._client is not None:
                try:
                    self._client.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
        if threading.current_thread() is not self._thread:
            self._thread.join(timeout)
        try:
            self._listener.close()
        except OSError:
            pass

    def wait(self, timeout: Optional[float] = None) -> bool:
        """Block until the service loop ends (e.g. after ``shutdown``)."""
        self._thread.join(timeout)
        return not self._thread.is_alive()

    # -- service loop ---------------------------------------------------

    def _serve(self) -> None:
        try:
            while not self._stop.is_set():
                try:
                    client, _ = self._listener.accept()
                except socket.timeout:
                    continue
                except OSError:
                    break
                with self._lock:
                    self._client = client
                record = ConnectionLog()
                self.connections.append(record)
                try:
                    self._handle(client, record)
                except (_Closed, OSError, WireError) as exc:
                    log.debug("mock connection ended: %s", type(exc).__name__)
                finally:
                    with self._lock:
                        self._client = None
                    client.close()
        finally:
            self._listener.close()

    def _read_line(self, reader: MessageReader) -> str:
        while True:
            if self._stop.is_set():
                raise _Closed()
            try:
                line = reader.read_line(time.monotonic() + _POLL)
            except socket.timeout:
                continue
            if line is None:
                raise _Closed()
            return line

    def _send(self, client: socket.socket, record: ConnectionLog, data: bytes) -> None:
        record.sent += data
        client.sendall(data)

    def _sleep(self, seconds: float) -> None:
        if seconds > 0 and self._stop.wait(seconds):
            raise _Closed()

    def _handle(self, client: socket.socket, record: ConnectionLog) -> None:
        scenario = self.scenario
        reader = _RecordingReader(client, record)
        threshold = scenario.long_format_threshold

        password = self._read_line(reader)
        if scenario.faults.reject_password or password != scenario.password:
            self._send(client, record, encode_server_message(
                render_response(ResponseKind.ERROR, json.dumps("Bad password")), threshold))
            return
        record.authenticated = True
        self._send(client, record, encode_server_message(
            render_response(ResponseKind.OK, json.dumps(GREETING, separators=(",", ":"))), threshold))

        ids = TaskIds(scenario.seed)
        while True:
            line = self._read_line(reader)
            name, _, argument = line.partition(" ")
            record.commands.append(name)
            script = scenario.handlers.get(name)
            if script is None:
                self._send(client, record, encode_server_message(
                    render_response(ResponseKind.ERROR, json.dumps(f'Bad command "{name}"')), threshold))
                continue
            lookup = _Context(ids, argument)
            last = len(script.entries) - 1
            for i, entry in enumerate(script.entries):
                self._sleep(entry.delay)
                if script.is_async and i == last:
                    self._sleep(scenario.faults.stall)
                data = encode_server_message(render_response(entry.kind, entry.render(lookup)), threshold)
                truncate = entry.truncate or (
                    scenario.faults.close_mid_message and script.is_async and i == last
                )
                if truncate:
                    self._send(client, record, data[: max(1, len(data) // 2)])
                    return
                self._send(client, record, data)
            if name == "shutdown":
                self._stop.set()
                return


class _RecordingReader(MessageReader):
    """MessageReader that logs every byte it pulls off the socket."""

    def __init__(self, sock: socket.socket, record: ConnectionLog):
        super().__init__(sock)
        self._record = record

    def _fill(self, deadline):
        before = len(self._buf)
        super()._fill(deadline)
        self._record.received += self._buf[before:]


class _Context:
    """Placeholder values for one command invocation; ids are drawn lazily."""

    def __init__(self, ids: TaskIds, argument: str):
        self._ids = ids
        self._values: Dict[str, Any] = {"argument": argument}
        self._values["task"] = ids.next()
        try:
            self._arg = json.loads(argument) if argument else None
        except json.JSONDecodeError:
            self._arg = None

    def __call__(self, key: str) -> Any:
        if key in self._values:
            return self._values[key]
        if key in ("other_task", "new_id"):
            self._values[key] = self._ids.next()
            return self._values[key]
        if key.startswith("arg."):
            value: Any = self._arg
            for part in key.split(".")[1:]:
                value = value.get(part) if isinstance(value, dict) else None
            return value
        return None


def start_mock(scenario: Scenario, port: int = 0, name: str = "mock") -> Tuple[ServerInfo, MockServer]:
    """Start serving ``scenario`` on 127.0.0.1 in a background thread."""
    server = MockServer(scenario, port, name)
    return server.info, server


def stop_mock(server: MockServer) -> None:
    server.stop()
