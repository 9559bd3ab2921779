from __future__ import annotations

import os
import stat
import sys
import textwrap
from pathlib import Path

import psutil
import pytest

from isabelle_client.mock import builtin_scenarios, start_mock

GOLDEN_PASSWORD = "5c1b9f0e-8d2a-4c3b-9e7f-1a2b3c4d5e6f"
GOLDEN_INFO_LINE = f'server "test" = 127.0.0.1:9999 (password "{GOLDEN_PASSWORD}")'

STUB_MARKER = "isabelle-stub-"

_STUBS = {
    # prints the golden line and idles until signalled
    "golden": """
        import time
        print({line!r}, flush=True)
        while True:
            time.sleep(1)
    """,
    # a banner before the info line, like a chatty wrapper script
    "banner": """
        import sys, time
        print("Isabelle2021-1 server starting", flush=True)
        print({line!r}, flush=True)
        print("this goes to the log only", flush=True)
        sys.stderr.write("stderr noise\\n"); sys.stderr.flush()
        while True:
            time.sleep(1)
    """,
    # ignores SIGTERM, so only SIGKILL stops it
    "stubborn": """
        import signal, time
        signal.signal(signal.SIGTERM, signal.SIG_IGN)
        print({line!r}, flush=True)
        while True:
            time.sleep(1)
    """,
    "silent": """
        import sys, time
        sys.stderr.write("warming up\\n"); sys.stderr.flush()
        while True:
            time.sleep(1)
    """,
    "garbage": """
        print("hello, I am not a server", flush=True)
    """,
    "crash": """
        import sys
        sys.stderr.write("boom\\n")
        sys.exit(7)
    """,
    # a real protocol endpoint: the mock server behind the isabelle command line
    "mock": """
        import sys
        from isabelle_client.mock import builtin_scenarios, start_mock
        args = sys.argv[1:]
        name = args[args.index("-n") + 1]
        port = int(args[args.index("-p") + 1]) if "-p" in args else 0
        info, server = start_mock(builtin_scenarios()["listing1"], port, name=name)
        print(info.info_line(), flush=True)
        server.wait()
    """,
}


def _write_stub(directory: Path, kind: str) -> Path:
    path = directory / f"{STUB_MARKER}{kind}"
    body = textwrap.dedent(_STUBS[kind]).format(line=GOLDEN_INFO_LINE)
    path.write_text(f"#!{sys.executable}\n{body}")
    path.chmod(path.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    return path


@pytest.fixture
def stub(tmp_path):
    """Factory returning the path of a stub ``isabelle`` executable."""
    return lambda kind: str(_write_stub(tmp_path, kind))


def _stub_processes():
    found = []
    for proc in psutil.Process(os.getpid()).children(recursive=True):
        try:
            if any(STUB_MARKER in part for part in proc.cmdline()):
                found.append(proc)
        except (psutil.NoSuchProcess, psutil.ZombieProcess):
            continue
    return found


@pytest.fixture(scope="session", autouse=True)
def no_orphaned_stubs():
    yield
    leftovers = _stub_processes()
    for proc in leftovers:
        proc.kill()
    assert not leftovers, f"stub processes left running: {[p.pid for p in leftovers]}"


@pytest.fixture
def mock_server():
    """Factory: start a mock for a scenario (or builtin name); stopped at teardown."""
    servers = []

    def start(scenario="listing1", port=0):
        if isinstance(scenario, str):
            scenario = builtin_scenarios()[scenario]
        info, server = start_mock(scenario, port)
        servers.append(server)
        return info, server

    yield start
    for server in servers:
        server.stop()


# -- acceptance reporting ----------------------------------------------------
#
# Tests marked ``criterion(number, title)`` get one summary line each. The
# verdict comes from the test outcome itself; a test may add a measurement
# with ``record_property("detail", ...)``.

ACCEPTANCE_RESULTS: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and not report.passed):
        if report.skipped:
            verdict = "SKIP"
        else:
            verdict = "PASS" if report.passed else "FAIL"
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        line = f"[{verdict}] criterion {number}: {title}"
        if detail:
            line += f" ({detail})"
        ACCEPTANCE_RESULTS[number] = line
        print("\n" + line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[key])
