"""Declarative scenarios that script the mock server's replies.

A scenario file is YAML (JSON is accepted too), one scenario per file::

    version: 1
    name: example
    password: secret            # optional, defaults to "mock-password"
    long_format_threshold: 100  # replies longer than this go out long-format
    seed: 0                     # task id generator seed
    extends: listing1           # optional: start from a builtin scenario
    faults:
      reject_password: false
      close_mid_message: false
      stall: 0                  # seconds before each async final reply
    handlers:
      echo:
        - {kind: OK, body: "${argument}"}
      use_theories:
        - {kind: OK, payload: {task: "${task}"}}
        - {kind: NOTE, payload: {percentage: 50, task: "${task}"}, delay: 0.01}
        - {kind: FINISHED, payload: {ok: true, nodes: [], task: "${task}"}}

Inside ``payload`` and ``body`` the placeholders ``${task}``, ``${other_task}``
and ``${new_id}`` expand to ids from the seeded generator, ``${argument}`` to
the raw command argument, and ``${arg.FIELD}`` to a field of the JSON
argument. A string that is exactly one placeholder keeps the value's JSON
type. An entry may set ``truncate: true`` to send half its frame and drop
the connection.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Union

import yaml

from ..errors import ScenarioError
from ..protocol import TASK_TERMINAL, ResponseKind

FORMAT_VERSION = 1
DEFAULT_PASSWORD = "mock-password"

_PLACEHOLDER = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z0-9_]+)*)\}")


@dataclass(frozen=True)
class ReplyEntry:
    kind: ResponseKind
    payload: Any = None
    body: Optional[str] = None
    delay: float = 0.0
    truncate: bool = False

    def render(self, lookup: Callable[[str], Any]) -> str:
        if self.body is not None:
            return _render_text(self.body, lookup)
        if self.payload is not None:
            return json.dumps(_render_value(self.payload, lookup), separators=(",", ":"), ensure_ascii=False)
        return ""


@dataclass(frozen=True)
class ReplyScript:
    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    @property
    def is_async(self) -> bool:
        return len(self.entries) > 1


@dataclass(frozen=True)
class Faults:
    reject_password: bool = False
    close_mid_message: bool = False
    stall: float = 0.0


@dataclass(frozen=True)
class Scenario:
    name: str = "custom"
    password: str = DEFAULT_PASSWORD
    handlers: Mapping[str, ReplyScript] = field(default_factory=dict)
    long_format_threshold: int = 100
    faults: Faults = Faults()
    seed: int = 0

    def with_changes(self, **changes) -> "Scenario":
        return replace(self, **changes)


def _render_text(text: str, lookup: Callable[[str], Any]) -> str:
    def sub(m: re.Match) -> str:
        value = lookup(m[1])
        if value is None:
            return ""
        return value if isinstance(value, str) else json.dumps(value, separators=(",", ":"))

    return _PLACEHOLDER.sub(sub, text)


def _render_value(value: Any, lookup: Callable[[str], Any]) -> Any:
    if isinstance(value, str):
        m = _PLACEHOLDER.fullmatch(value)
        if m:
            return lookup(m[1])
        return _render_text(value, lookup)
    if isinstance(value, list):
        return [_render_value(v, lookup) for v in value]
    if isinstance(value, dict):
        return {k: _render_value(v, lookup) for k, v in value.items()}
    return value


# -- loading ------------------------------------------------------------------


def _entry_from_dict(data: Any, where: str) -> ReplyEntry:
    if not isinstance(data, dict):
        raise ScenarioError(f"{where}: entry must be a mapping")
    unknown = set(data) - {"kind", "payload", "body", "delay", "truncate"}
    if unknown:
        raise ScenarioError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        kind = ResponseKind(data.get("kind"))
    except ValueError:
        raise ScenarioError(f"{where}: bad kind {data.get('kind')!r}") from None
    if "payload" in data and "body" in data:
        raise ScenarioError(f"{where}: give either payload or body, not both")
    body = data.get("body")
    if body is not None:
        body = str(body)
        if "\n" in body or "\r" in body:
            raise ScenarioError(f"{where}: body must be a single line")
    return ReplyEntry(
        kind=kind,
        payload=data.get("payload"),
        body=body,
        delay=float(data.get("delay", 0.0)),
        truncate=bool(data.get("truncate", False)),
    )


def _check_async_script(name: str, script: ReplyScript) -> None:
    first, last = script.entries[0], script.entries[-1]
    if first.kind is not ResponseKind.OK or not _task_is_own(first.payload):
        raise ScenarioError(f"handler {name!r}: async script must open with OK {{task: ${{task}}}}")
    own_terminals = [
        e for e in script.entries if e.kind in TASK_TERMINAL and _task_is_own(e.payload)
    ]
    if len(own_terminals) != 1 or own_terminals[0] is not last:
        raise ScenarioError(
            f"handler {name!r}: async script must end with its single FINISHED/FAILED for ${{task}}"
        )


def _task_is_own(payload: Any) -> bool:
    return isinstance(payload, dict) and payload.get("task") == "${task}"


def scenario_from_dict(data: Mapping[str, Any], source: str = "<dict>") -> Scenario:
    if not isinstance(data, Mapping):
        raise ScenarioError(f"{source}: scenario must be a mapping")
    version = data.get("version")
    if version != FORMAT_VERSION:
        raise ScenarioError(f"{source}: unsupported scenario format version {version!r}")
    unknown = set(data) - {
        "version", "name", "password", "long_format_threshold", "seed", "extends", "faults", "handlers",
    }
    if unknown:
        raise ScenarioError(f"{source}: unknown keys {sorted(unknown)}")

    base = Scenario()
    if data.get("extends"):
        if data["extends"] not in _BUILTIN_ORDER:
            raise ScenarioError(f"{source}: unknown base scenario {data['extends']!r}")
        base = _load_builtin(data["extends"])

    handlers: Dict[str, ReplyScript] = dict(base.handlers)
    for cmd, entries in (data.get("handlers") or {}).items():
        if not isinstance(entries, list) or not entries:
            raise ScenarioError(f"{source}: handler {cmd!r} needs a non-empty list of entries")
        script = ReplyScript([_entry_from_dict(e, f"{source}: {cmd}[{i}]") for i, e in enumerate(entries)])
        if script.is_async:
            _check_async_script(cmd, script)
        handlers[cmd] = script

    faults_data = data.get("faults") or {}
    unknown = set(faults_data) - {"reject_password", "close_mid_message", "stall"}
    if unknown:
        raise ScenarioError(f"{source}: unknown faults {sorted(unknown)}")
    faults = replace(
        base.faults,
        **{k: (float(v) if k == "stall" else bool(v)) for k, v in faults_data.items()},
    )
    password = str(data.get("password", base.password))
    if not password or "\n" in password:
        raise ScenarioError(f"{source}: password must be a non-empty single line")
    return Scenario(
        name=str(data.get("name", base.name)),
        password=password,
        handlers=handlers,
        long_format_threshold=int(data.get("long_format_threshold", base.long_format_threshold)),
        faults=faults,
        seed=int(data.get("seed", base.seed)),
    )


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    return scenario_from_dict(data, str(path))


# -- builtins -----------------------------------------------------------------

_BUILTIN_ORDER = (
    "listing1",
    "failing_theory",
    "interleaved_tasks",
    "long_messages",
    "slow",
    "bad_password",
    "disconnect",
)
_builtin_cache: Dict[str, Scenario] = {}


def _load_builtin(name: str) -> Scenario:
    if name not in _builtin_cache:
        text = resources.files(__package__).joinpath("scenarios", f"{name}.yaml").read_text(encoding="utf-8")
        _builtin_cache[name] = scenario_from_dict(yaml.safe_load(text), f"builtin:{name}")
    return _builtin_cache[name]


def builtin_scenarios() -> Dict[str, Scenario]:
    """All scenarios shipped with the package, by name."""
    return {name: _load_builtin(name) for name in _BUILTIN_ORDER}


def resolve_scenario(ref: str) -> Scenario:
    """A builtin scenario by name, or a scenario file by path."""
    if ref in _BUILTIN_ORDER:
        return builtin_scenarios()[ref]
    path = Path(ref)
    if not path.exists():
        raise ScenarioError(f"no builtin scenario or file named {ref!r}")
    return load_scenario(path)


def notes_scenario(k: int, **kwargs) -> Scenario:
    """A use_theories script with ``k`` NOTE entries between ack and FINISHED."""
    entries: List[ReplyEntry] = [ReplyEntry(ResponseKind.OK, {"task": "${task}"})]
    entries += [
        ReplyEntry(ResponseKind.NOTE, {"seq": i, "percentage": (100 * (i + 1)) // k, "task": "${task}"})
        for i in range(k)
    ]
    entries.append(ReplyEntry(ResponseKind.FINISHED, {"ok": True, "errors": [], "nodes": [], "task": "${task}"}))
    base = builtin_scenarios()["listing1"]
    handlers = dict(base.handlers, use_theories=ReplyScript(entries))
    return base.with_changes(name=f"notes_{k}", handlers=handlers, **kwargs)
