"""Starting and stopping a local ``isabelle server`` process."""

from __future__ import annotations

import collections
import logging
import os
import queue
import shutil
import signal
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Deque, List, Optional, Union

from .client import connect
from .errors import (
    ExecutableNotFound,
    IsabelleError,
    MalformedInfoLine,
    ReadyTimeout,
    ServerExited,
    UnsupportedPlatform,
)
from .protocol import ServerInfo, parse_server_info

log = logging.getLogger(__name__)

# overridden in tests to exercise the Windows refusal
PLATFORM = sys.platform

WINDOWS_MESSAGE = (
    "starting the Isabelle server is not supported on native Windows, where it runs "
    "under Cygwin; launch the Isabelle server manually and attach with its info line"
)

_STDERR_TAIL = 64 * 1024


def attach(info_line: str) -> ServerInfo:
    """Server info for a server started by hand, from the line it printed."""
    return parse_server_info(info_line)


def default_command() -> str:
    return os.environ.get("ISABELLE_COMMAND") or "isabelle"


@dataclass
class ServerHandle:
    info: ServerInfo
    process: subprocess.Popen
    info_line: str = ""
    log_path: Optional[Path] = None
    returncode: Optional[int] = None
    _threads: List[threading.Thread] = field(default_factory=list, repr=False)
    _log: Optional[BinaryIO] = field(default=None, repr=False)
    _stop_lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __enter__(self) -> "ServerHandle":
        return self

    def __exit__(self, *exc) -> None:
        stop_server(self)

    @property
    def alive(self) -> bool:
        return self.process.poll() is None

    def stop(self, grace: float = 5.0) -> int:
        return stop_server(self, grace)


class _Pumps:
    """Background readers that drain the child's pipes into the log."""

    def __init__(self, proc: subprocess.Popen, log_file: Optional[BinaryIO]):
        self.lines: "queue.Queue[Optional[bytes]]" = queue.Queue()
        self.ready = threading.Event()
        self.stderr_tail: Deque[bytes] = collections.deque()
        self._tail_size = 0
        self._log = log_file
        self._log_lock = threading.Lock()
        self.threads = [
            threading.Thread(target=self._stdout, args=(proc.stdout,), daemon=True),
            threading.Thread(target=self._stderr, args=(proc.stderr,), daemon=True),
        ]
        for t in self.threads:
            t.start()

    def _tee(self, data: bytes) -> None:
        if self._log is None:
            return
        with self._log_lock:
            try:
                self._log.write(data)
                self._log.flush()
            except ValueError:  # log closed after stop
                pass

    def _stdout(self, stream) -> None:
        for line in iter(stream.readline, b""):
            self._tee(line)
            if not self.ready.is_set():
                self.lines.put(line)
        self.lines.put(None)

    def _stderr(self, stream) -> None:
        for chunk in iter(lambda: stream.read1(4096), b""):
            self._tee(chunk)
            self.stderr_tail.append(chunk)
            self._tail_size += len(chunk)
            while self._tail_size > _STDERR_TAIL and len(self.stderr_tail) > 1:
                self._tail_size -= len(self.stderr_tail.popleft())

    def stderr(self) -> bytes:
        return b"".join(self.stderr_tail)


def start_server(
    name: str = "isabelle",
    port: Optional[int] = None,
    log_path: Union[str, Path, None] = None,
    isabelle_command: Optional[str] = None,
    ready_timeout: float = 60.0,
) -> ServerHandle:
    """Spawn ``isabelle server -n NAME [-p PORT]`` and wait for its info line.

    The server is ready once it prints a parseable info line; that line's
    port and password are authoritative. All child output is appended to
    ``log_path`` if given.
    """
    if PLATFORM == "win32":
        raise UnsupportedPlatform(WINDOWS_MESSAGE)
    command = isabelle_command or default_command()
    executable = shutil.which(command)
    if executable is None:
        raise ExecutableNotFound(f"Isabelle executable not found: {command!r}")
    argv = [executable, "server", "-n", name]
    if port:
        argv += ["-p", str(port)]

    log_file = open(log_path, "ab") if log_path is not None else None
    try:
        proc = subprocess.Popen(
            argv,
            stdin=subprocess.DEVNULL,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            start_new_session=True,
        )
    except OSError as exc:
        if log_file:
            log_file.close()
        raise ExecutableNotFound(f"cannot execute {command!r}: {exc.strerror or exc}") from exc
    log.debug("spawned %s (pid %d)", " ".join(argv), proc.pid)

    pumps = _Pumps(proc, log_file)
    deadline = time.monotonic() + ready_timeout
    last_line: Optional[bytes] = None
    info: Optional[ServerInfo] = None
    info_line = ""
    try:
        while info is None:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ReadyTimeout(
                    f"server did not report readiness within {ready_timeout}s", pumps.stderr()
                )
            try:
                line = pumps.lines.get(timeout=remaining)
            except queue.Empty:
                continue
            if line is None:
                proc.wait()
                if last_line is not None:
                    raise MalformedInfoLine(
                        f"server exited without a valid info line; last line: {last_line[:80]!r}"
                    )
                raise ServerExited(
                    f"server exited with status {proc.returncode} before reporting readiness",
                    proc.returncode,
                    pumps.stderr(),
                )
            last_line = line
            try:
                info_line = line.decode("utf-8", "replace").rstrip("\r\n")
                info = parse_server_info(info_line)
            except MalformedInfoLine:
                continue
        pumps.ready.set()
    except BaseException:
        pumps.ready.set()
        _kill(proc)
        for t in pumps.threads:
            t.join(2.0)
        proc.stdout.close()
        proc.stderr.close()
        if log_file:
            log_file.close()
        raise
    return ServerHandle(
        info, proc, info_line, Path(log_path) if log_path else None, None, pumps.threads, log_file
    )


def _signal(proc: subprocess.Popen, sig: int) -> None:
    try:
        os.killpg(proc.pid, sig)
    except (ProcessLookupError, PermissionError):
        pass


def _kill(proc: subprocess.Popen) -> None:
    if proc.poll() is None:
        _signal(proc, signal.SIGKILL)
    proc.wait()


def stop_server(handle: ServerHandle, grace: float = 5.0) -> int:
    """Stop the server and reap it; safe to call more than once.

    Sends ``shutdown`` over a client connection first and waits up to
    ``grace`` seconds. If that fails or times out the process group gets
    SIGTERM, then SIGKILL one second later.
    """
    with handle._stop_lock:
        if handle.returncode is not None:
            return handle.returncode
        proc = handle.process
        deadline = time.monotonic() + grace
        if proc.poll() is None:
            delivered = False
            try:
                with connect(handle.info, timeout=max(0.05, min(1.0, grace))) as conn:
                    conn.shutdown()
                delivered = True
            except (IsabelleError, OSError) as exc:
                log.debug("graceful shutdown failed: %s", type(exc).__name__)
            try:
                # no point waiting out the grace period if nobody was told to stop
                proc.wait(max(0.0, deadline - time.monotonic()) if delivered else 0.0)
            except subprocess.TimeoutExpired:
                log.debug("server still running, terminating")
                _signal(proc, signal.SIGTERM)
                try:
                    proc.wait(1.0)
                except subprocess.TimeoutExpired:
                    _kill(proc)
        returncode = proc.wait()
        # the server may have left children in its process group
        _signal(proc, signal.SIGKILL)
        for t in handle._threads:
            t.join(2.0)
        for stream in (proc.stdout, proc.stderr):
            if stream is not None:
                stream.close()
        if handle._log is not None:
            handle._log.close()
        handle.returncode = returncode
        return returncode
