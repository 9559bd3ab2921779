"""Byte-level framing of Isabelle server messages.

Two frame formats share one TCP stream:

* short: the UTF-8 message followed by ``\\n``;
* long: an ASCII decimal byte count on its own line, then exactly that many
  bytes. The count includes the body's trailing ``\\n``, which is how the
  Isabelle server writes it.

A line made only of digits is always a length header. Clients only ever send
short frames.
"""

from __future__ import annotations

import socket
import time
from typing import BinaryIO, Optional, Tuple, Union

from .errors import (
    AmbiguousShortMessage,
    EmbeddedNewline,
    InvalidUtf8,
    OversizeMessage,
    TruncatedMessage,
)

DEFAULT_MAX_MESSAGE_SIZE = 256 * 1024 * 1024
DEFAULT_LONG_THRESHOLD = 100

Buffer = Union[bytes, bytearray, memoryview]


def _check_single_line(text: str) -> None:
    if "\n" in text or "\r" in text:
        raise EmbeddedNewline(f"message must be a single line: {text[:60]!r}")


def _is_length_header(line: Buffer) -> bool:
    return len(line) > 0 and bytes(line).isdigit()


def encode_client_message(text: str) -> bytes:
    """Frame one client command (always short format)."""
    _check_single_line(text)
    return text.encode("utf-8") + b"\n"


def encode_short(text: str) -> bytes:
    _check_single_line(text)
    data = text.encode("utf-8")
    if _is_length_header(data):
        raise AmbiguousShortMessage(f"digits-only message {text!r} would read as a length header")
    return data + b"\n"


def encode_long(text: str) -> bytes:
    body = text.encode("utf-8") + b"\n"
    return str(len(body)).encode("ascii") + b"\n" + body


def encode_server_message(text: str, threshold: int = DEFAULT_LONG_THRESHOLD) -> bytes:
    """Frame a server reply, choosing long format above ``threshold`` bytes.

    Messages that cannot travel short (embedded line breaks, digits only) are
    sent long regardless of the threshold.
    """
    data = text.encode("utf-8")
    if len(data) > threshold or b"\n" in data or b"\r" in data or _is_length_header(data):
        return str(len(data) + 1).encode("ascii") + b"\n" + data + b"\n"
    return data + b"\n"


def _strip_terminator(data: Buffer) -> bytes:
    data = bytes(data)
    if data.endswith(b"\n"):
        data = data[:-1]
        if data.endswith(b"\r"):
            data = data[:-1]
    return data


def _decode_utf8(data: bytes) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InvalidUtf8(str(exc)) from None


def _header_size(line: bytes, max_size: int) -> int:
    n = int(line)
    if n > max_size:
        raise OversizeMessage(f"announced message size {n} exceeds limit {max_size}")
    return n


def split_message(
    buf: Buffer, max_size: int = DEFAULT_MAX_MESSAGE_SIZE
) -> Optional[Tuple[str, int]]:
    """Parse one complete message from the front of ``buf``.

    Returns ``(text, consumed)`` or ``None`` when ``buf`` holds only part of a
    message. Nothing beyond the first message is looked at.
    """
    view = bytes(buf) if not isinstance(buf, (bytes, bytearray)) else buf
    nl = view.find(b"\n", 0, max_size + 2)
    if nl < 0:
        if len(view) > max_size + 1:
            raise OversizeMessage(f"line exceeds limit {max_size} without terminator")
        return None
    line = _strip_terminator(view[: nl + 1])
    if not _is_length_header(line):
        return _decode_utf8(line), nl + 1
    n = _header_size(line, max_size)
    end = nl + 1 + n
    if len(view) < end:
        return None
    return _decode_utf8(_strip_terminator(view[nl + 1 : end])), end


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def decode_server_message(
    stream: BinaryIO, max_size: int = DEFAULT_MAX_MESSAGE_SIZE
) -> Optional[str]:
    """Read one message from a binary file-like object.

    Returns ``None`` if the stream ends cleanly at a message boundary.
    """
    line = stream.readline(max_size + 2)
    if not line:
        return None
    if not line.endswith(b"\n"):
        if len(line) > max_size + 1:
            raise OversizeMessage(f"line exceeds limit {max_size} without terminator")
        raise TruncatedMessage(f"stream closed after {len(line)} bytes of a message line")
    line = _strip_terminator(line)
    if not _is_length_header(line):
        return _decode_utf8(line)
    n = _header_size(line, max_size)
    body = _read_exact(stream, n)
    if len(body) < n:
        raise TruncatedMessage(f"stream closed after {len(body)} of {n} announced bytes")
    return _decode_utf8(_strip_terminator(body))


class MessageReader:
    """Buffered message source over a connected socket.

    Unlike ``socket.makefile``, a timeout leaves the buffer intact, so the
    caller may keep reading after a watchdog fires.
    """

    def __init__(
        self,
        sock: socket.socket,
        max_size: int = DEFAULT_MAX_MESSAGE_SIZE,
        chunk_size: int = 65536,
    ):
        self._sock = sock
        self._buf = bytearray()
        self._eof = False
        self.max_size = max_size
        self.chunk_size = chunk_size

    def _fill(self, deadline: Optional[float]) -> None:
        if deadline is None:
            self._sock.settimeout(None)
        else:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise socket.timeout("deadline passed")
            self._sock.settimeout(remaining)
        chunk = self._sock.recv(self.chunk_size)
        if chunk:
            self._buf += chunk
        else:
            self._eof = True

    def _read(self, parse, deadline: Optional[float]):
        while True:
            parsed = parse(self._buf)
            if parsed is not None:
                value, consumed = parsed
                del self._buf[:consumed]
                return value
            if self._eof:
                if self._buf:
                    raise TruncatedMessage(
                        f"connection closed with {len(self._buf)} bytes of an unfinished message"
                    )
                return None
            self._fill(deadline)

    def read_message(self, deadline: Optional[float] = None) -> Optional[str]:
        """Next server message, or ``None`` at end of stream.

        ``deadline`` is a ``time.monotonic()`` value; ``socket.timeout`` is
        raised when it passes with no complete message buffered.
        """
        return self._read(lambda b: split_message(b, self.max_size), deadline)

    def read_line(self, deadline: Optional[float] = None) -> Optional[str]:
        """Next short-format line, without length-header interpretation."""

        def parse(buf: bytearray):
            nl = buf.find(b"\n")
            if nl < 0:
                if len(buf) > self.max_size + 1:
                    raise OversizeMessage(f"line exceeds limit {self.max_size}")
                return None
            return _decode_utf8(_strip_terminator(buf[: nl + 1])), nl + 1

        return self._read(parse, deadline)
