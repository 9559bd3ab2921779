"""Typed view of Isabelle server replies, info lines and command arguments."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field, fields
from typing import Any, Iterator, Optional, Sequence, Tuple, Union

from .errors import InvalidArgs, MalformedInfoLine, UnknownKind


class ResponseKind(str, enum.Enum):
    OK = "OK"
    ERROR = "ERROR"
    NOTE = "NOTE"
    FINISHED = "FINISHED"
    FAILED = "FAILED"

    def __str__(self) -> str:
        return self.value


TASK_TERMINAL = frozenset({ResponseKind.FINISHED, ResponseKind.FAILED})


@dataclass(frozen=True)
class IsabelleResponse:
    kind: ResponseKind
    body: str = ""
    payload: Any = None
    task: Optional[str] = None
    # set when the body looked like JSON but did not parse
    malformed_payload: bool = False

    def render(self) -> str:
        return render_response(self.kind, self.body)


def render_response(kind: Union[ResponseKind, str], body: str = "") -> str:
    kind = ResponseKind(kind)
    return f"{kind.value} {body}" if body else kind.value


def parse_response(raw: str) -> IsabelleResponse:
    keyword, sep, body = raw.partition(" ")
    try:
        kind = ResponseKind(keyword)
    except ValueError:
        raise UnknownKind(f"unknown reply kind {keyword[:40]!r}") from None
    payload = None
    malformed = False
    if body[:1] in ("{", "["):
        try:
            payload = json.loads(body)
        except json.JSONDecodeError:
            malformed = True
    task = None
    if isinstance(payload, dict) and isinstance(payload.get("task"), str):
        task = payload["task"]
    return IsabelleResponse(kind, body, payload, task, malformed)


def is_final(resp: IsabelleResponse, task: Optional[str] = None, synchronous: bool = False) -> bool:
    """Whether ``resp`` ends the wait for the current command.

    In asynchronous mode, FINISHED/FAILED only count when they carry the
    awaited task id (or no id is being awaited).
    """
    if synchronous:
        return resp.kind in (ResponseKind.OK, ResponseKind.ERROR)
    if resp.kind is ResponseKind.ERROR:
        return True
    return resp.kind in TASK_TERMINAL and (task is None or resp.task == task)


@dataclass(frozen=True)
class Transcript:
    """Every reply observed for one command, in arrival order."""

    entries: Tuple[IsabelleResponse, ...]
    # id from the acknowledgment of an asynchronous command
    task: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    @property
    def final_index(self) -> int:
        return len(self.entries) - 1

    @property
    def final(self) -> IsabelleResponse:
        return self.entries[-1]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[IsabelleResponse]:
        return iter(self.entries)

    def __getitem__(self, index):
        return self.entries[index]


# -- server info -------------------------------------------------------------

_INFO_LINE = re.compile(
    r'server "(?P<name>[^"]+)" = (?P<host>[^\s:]+):(?P<port>\d+) \(password "(?P<password>[^"]*)"\)'
)


@dataclass(frozen=True)
class ServerInfo:
    name: str
    host: str
    port: int
    password: str = field(repr=False)

    def __post_init__(self):
        if not 1 <= self.port <= 65535:
            raise ValueError(f"port out of range: {self.port}")
        if not self.password:
            raise ValueError("password must be non-empty")

    def info_line(self) -> str:
        return f'server "{self.name}" = {self.host}:{self.port} (password "{self.password}")'

    @property
    def is_local(self) -> bool:
        return self.host in ("127.0.0.1", "localhost")


def parse_server_info(line: str) -> ServerInfo:
    """Parse the line ``isabelle server`` prints once it is listening."""
    m = _INFO_LINE.fullmatch(line.strip())
    if m is None:
        raise MalformedInfoLine(f"not a server info line: {line.strip()[:80]!r}")
    if not m["password"]:
        raise MalformedInfoLine("server info line has an empty password")
    port = int(m["port"])
    if not 1 <= port <= 65535:
        raise MalformedInfoLine(f"server info line has port out of range: {port}")
    return ServerInfo(m["name"], m["host"], port, m["password"])


# -- command arguments -------------------------------------------------------


def _as_tuple(value) -> Tuple[str, ...]:
    if isinstance(value, str):
        return (value,)
    return tuple(value)


class _Args:
    """Shared serialization for the frozen argument dataclasses."""

    _list_fields: Tuple[str, ...] = ()

    def __post_init__(self):
        for name in self._list_fields:
            object.__setattr__(self, name, _as_tuple(getattr(self, name)))

    def validate(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            for item in value if isinstance(value, tuple) else (value,):
                if isinstance(item, str) and ("\n" in item or "\r" in item):
                    raise InvalidArgs(f"{f.name} contains a line break")

    def to_json(self) -> str:
        self.validate()
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None or value is False or value == ():
                continue
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return json.dumps(out, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class SessionBuildArgs(_Args):
    session: str
    dirs: Sequence[str] = ()
    options: Sequence[str] = ()
    verbose: bool = False
    include_sessions: Sequence[str] = ()

    _list_fields = ("dirs", "options", "include_sessions")


@dataclass(frozen=True)
class SessionStartArgs(_Args):
    session: str = "HOL"
    dirs: Sequence[str] = ()
    options: Sequence[str] = ()
    verbose: bool = False

    _list_fields = ("dirs", "options")


@dataclass(frozen=True)
class SessionStopArgs(_Args):
    session_id: str


@dataclass(frozen=True)
class UseTheoriesArgs(_Args):
    theories: Sequence[str]
    session_id: Optional[str] = None
    master_dir: Optional[str] = None

    _list_fields = ("theories",)

    def validate(self) -> None:
        if not self.theories:
            raise InvalidArgs("use_theories needs at least one theory")
        super().validate()

    def to_json(self) -> str:
        # session_id leads, matching the order the server documents
        self.validate()
        out = {}
        if self.session_id is not None:
            out["session_id"] = self.session_id
        out["theories"] = list(self.theories)
        if self.master_dir is not None:
            out["master_dir"] = self.master_dir
        return json.dumps(out, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class PurgeTheoriesArgs(_Args):
    session_id: str
    theories: Sequence[str] = ()
    master_dir: Optional[str] = None
    all: bool = False

    _list_fields = ("theories",)


@dataclass(frozen=True)
class CancelArgs(_Args):
    task: str


CommandArgs = Union[
    SessionBuildArgs, SessionStartArgs, SessionStopArgs, UseTheoriesArgs, PurgeTheoriesArgs, CancelArgs
]


def serialize_args(args: CommandArgs) -> str:
    """Single-line JSON for a command argument, in field order, unset fields omitted."""
    return args.to_json()


# -- use_theories results ----------------------------------------------------


@dataclass(frozen=True)
class DiagnosticMessage:
    kind: str
    message: str
    position: Any = None

    @classmethod
    def from_json(cls, obj: Any) -> "DiagnosticMessage":
        if not isinstance(obj, dict):
            return cls("unknown", str(obj))
        return cls(str(obj.get("kind", "")), str(obj.get("message", "")), obj.get("pos"))


@dataclass(frozen=True)
class NodeResult:
    node_name: str
    theory_name: str
    status: str
    messages: Tuple[DiagnosticMessage, ...] = ()


def _node_status(value: Any) -> str:
    # the server reports either a plain word or a status record
    if isinstance(value, str):
        return value
    if isinstance(value, dict):
        if value.get("failed"):
            return "failed"
        if "ok" in value:
            return "ok" if value["ok"] else "failed"
        if value.get("consolidated") or value.get("finished"):
            return "finished"
        return "running"
    return "unknown"


@dataclass(frozen=True)
class TheoryProcessingResult:
    ok: bool
    nodes: Tuple[NodeResult, ...]
    errors: Tuple[DiagnosticMessage, ...]
    raw: Any

    @property
    def diagnostics(self) -> Iterator[DiagnosticMessage]:
        yield from self.errors
        for node in self.nodes:
            yield from node.messages


def parse_theory_result(payload: Any) -> TheoryProcessingResult:
    """Typed view of a use_theories FINISHED payload.

    Missing or oddly shaped fields are tolerated; ``raw`` always keeps the
    payload as received.
    """
    if not isinstance(payload, dict):
        return TheoryProcessingResult(False, (), (), payload)
    nodes = []
    for node in payload.get("nodes") or ():
        if not isinstance(node, dict):
            continue
        messages = tuple(DiagnosticMessage.from_json(m) for m in node.get("messages") or ())
        nodes.append(
            NodeResult(
                str(node.get("node_name", "")),
                str(node.get("theory_name", "")),
                _node_status(node.get("status")),
                messages,
            )
        )
    errors = tuple(DiagnosticMessage.from_json(m) for m in payload.get("errors") or ())
    return TheoryProcessingResult(bool(payload.get("ok", False)), tuple(nodes), errors, payload)
