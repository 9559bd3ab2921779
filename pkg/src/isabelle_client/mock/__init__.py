"""Scripted mock of the Isabelle server for hermetic tests."""

from .scenario import (
    FORMAT_VERSION,
    Faults,
    ReplyEntry,
    ReplyScript,
    Scenario,
    builtin_scenarios,
    load_scenario,
    notes_scenario,
    resolve_scenario,
    scenario_from_dict,
)
from .server import ConnectionLog, MockServer, start_mock, stop_mock

__all__ = [
    "FORMAT_VERSION",
    "ConnectionLog",
    "Faults",
    "MockServer",
    "ReplyEntry",
    "ReplyScript",
    "Scenario",
    "builtin_scenarios",
    "load_scenario",
    "notes_scenario",
    "resolve_scenario",
    "scenario_from_dict",
    "start_mock",
    "stop_mock",
]
