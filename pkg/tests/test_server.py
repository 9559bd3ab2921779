import os
import signal
import threading
import time

import psutil
import pytest

from isabelle_client import connect, server
from isabelle_client.errors import (
    ExecutableNotFound,
    MalformedInfoLine,
    ReadyTimeout,
    ServerExited,
    UnsupportedPlatform,
)
from isabelle_client.server import attach, start_server, stop_server

from conftest import GOLDEN_INFO_LINE, GOLDEN_PASSWORD


def test_start_with_listing_values(stub, tmp_path):
    log = tmp_path / "server.log"
    handle = start_server(name="test", port=9999, log_path=log, isabelle_command=stub("golden"), ready_timeout=5)
    try:
        assert handle.info.port == 9999
        assert handle.info.name == "test"
        assert handle.info.password == GOLDEN_PASSWORD
        assert handle.info_line == GOLDEN_INFO_LINE
        assert handle.alive
    finally:
        stop_server(handle, grace=0.2)
    assert not handle.alive
    assert log.read_bytes() == GOLDEN_INFO_LINE.encode() + b"\n"


def test_child_invocation(stub):
    handle = start_server(name="n1", port=4711, isabelle_command=stub("golden"), ready_timeout=5)
    try:
        cmdline = psutil.Process(handle.process.pid).cmdline()
        assert cmdline[-5:] == ["server", "-n", "n1", "-p", "4711"]
    finally:
        stop_server(handle, grace=0.2)


def test_no_port_flag_when_unset(stub):
    handle = start_server(name="n2", isabelle_command=stub("golden"), ready_timeout=5)
    try:
        assert psutil.Process(handle.process.pid).cmdline()[-3:] == ["server", "-n", "n2"]
    finally:
        stop_server(handle, grace=0.2)


def test_handle_returned_before_child_exits(stub):
    start = time.monotonic()
    handle = start_server(isabelle_command=stub("golden"), ready_timeout=5)
    elapsed = time.monotonic() - start
    try:
        assert elapsed < 1.0
        assert handle.process.poll() is None
    finally:
        stop_server(handle, grace=0.2)


def test_banner_lines_are_skipped_and_logged(stub, tmp_path):
    log = tmp_path / "server.log"
    handle = start_server(isabelle_command=stub("banner"), log_path=log, ready_timeout=5)
    assert handle.info.password == GOLDEN_PASSWORD
    # output after the info line keeps flowing to the log while the server runs
    deadline = time.monotonic() + 5
    while b"stderr noise" not in log.read_bytes() and time.monotonic() < deadline:
        time.sleep(0.02)
    stop_server(handle, grace=0.2)
    data = log.read_bytes()
    assert b"Isabelle2021-1 server starting\n" in data
    assert GOLDEN_INFO_LINE.encode() in data
    assert b"this goes to the log only\n" in data
    assert b"stderr noise\n" in data


def test_executable_not_found():
    with pytest.raises(ExecutableNotFound):
        start_server(isabelle_command="/nonexistent")


def test_isabelle_command_env_override(stub, monkeypatch):
    monkeypatch.setenv("ISABELLE_COMMAND", "/nonexistent/isabelle")
    with pytest.raises(ExecutableNotFound, match="/nonexistent/isabelle"):
        start_server()
    monkeypatch.setenv("ISABELLE_COMMAND", stub("golden"))
    handle = start_server(ready_timeout=5)
    stop_server(handle, grace=0.2)


def test_ready_timeout_kills_child_and_attaches_stderr(stub):
    start = time.monotonic()
    with pytest.raises(ReadyTimeout) as exc:
        start_server(isabelle_command=stub("silent"), ready_timeout=0.5)
    assert time.monotonic() - start < 3
    assert b"warming up" in exc.value.stderr


def test_malformed_output_then_exit(stub):
    with pytest.raises(MalformedInfoLine):
        start_server(isabelle_command=stub("garbage"), ready_timeout=5)


def test_exit_without_output(stub):
    with pytest.raises(ServerExited) as exc:
        start_server(isabelle_command=stub("crash"), ready_timeout=5)
    assert exc.value.returncode == 7
    assert b"boom" in exc.value.stderr


def test_windows_native_is_unsupported(monkeypatch, stub):
    monkeypatch.setattr(server, "PLATFORM", "win32")
    with pytest.raises(UnsupportedPlatform, match="manually"):
        start_server(isabelle_command=stub("golden"))


def test_cygwin_is_not_refused(monkeypatch, stub):
    monkeypatch.setattr(server, "PLATFORM", "cygwin")
    stop_server(start_server(isabelle_command=stub("golden"), ready_timeout=5), grace=0.2)


# -- stop ----------------------------------------------------------------------------


def test_stop_terminates_and_reaps(stub):
    handle = start_server(isabelle_command=stub("golden"), ready_timeout=5)
    pid = handle.process.pid
    start = time.monotonic()
    status = stop_server(handle, grace=0.3)
    assert time.monotonic() - start < 2
    assert status == -signal.SIGTERM
    assert not psutil.pid_exists(pid) or psutil.Process(pid).status() != psutil.STATUS_ZOMBIE


def test_stop_twice_is_noop(stub):
    handle = start_server(isabelle_command=stub("golden"), ready_timeout=5)
    first = stop_server(handle, grace=0.2)
    start = time.monotonic()
    assert stop_server(handle, grace=0.2) == first
    assert time.monotonic() - start < 0.1


def test_stop_already_exited_child_returns_status(stub):
    handle = start_server(isabelle_command=stub("golden"), ready_timeout=5)
    os.killpg(handle.process.pid, signal.SIGKILL)
    handle.process.wait()
    assert stop_server(handle) == -signal.SIGKILL


def test_stubborn_child_is_killed_after_grace(stub):
    handle = start_server(isabelle_command=stub("stubborn"), ready_timeout=5)
    start = time.monotonic()
    status = stop_server(handle, grace=0.3)
    assert status == -signal.SIGKILL
    assert 0.3 <= time.monotonic() - start < 3


def test_graceful_shutdown_over_protocol(stub):
    handle = start_server(name="graceful", isabelle_command=stub("mock"), ready_timeout=10)
    with connect(handle.info) as conn:
        assert conn.echo("1").final.body == "1"
    start = time.monotonic()
    assert stop_server(handle, grace=5) == 0
    assert time.monotonic() - start < 2


def test_stop_from_another_thread(stub):
    handle = start_server(isabelle_command=stub("golden"), ready_timeout=5)
    result = []
    t = threading.Thread(target=lambda: result.append(stop_server(handle, grace=0.2)))
    t.start()
    t.join(5)
    assert result and not handle.alive


def test_context_manager_stops(stub):
    with start_server(isabelle_command=stub("golden"), ready_timeout=5) as handle:
        pass
    assert handle.returncode is not None


# -- attach --------------------------------------------------------------------------


def test_attach_golden_line():
    info = attach(GOLDEN_INFO_LINE)
    assert (info.name, info.port, info.password) == ("test", 9999, GOLDEN_PASSWORD)


def test_attach_rejects_garbage():
    with pytest.raises(MalformedInfoLine):
        attach("x")


def test_attach_first_line_of_log(stub, tmp_path):
    log = tmp_path / "server.log"
    stop_server(start_server(isabelle_command=stub("golden"), log_path=log, ready_timeout=5), grace=0.2)
    with open(log) as fh:
        assert attach(fh.readline()).password == GOLDEN_PASSWORD


def test_stop_does_not_wait_out_grace_when_shutdown_cannot_be_sent(stub):
    # the golden stub never listens, so the shutdown command cannot be delivered
    handle = start_server(isabelle_command=stub("golden"))
    start = time.monotonic()
    stop_server(handle, grace=5.0)
    assert time.monotonic() - start < 1.0
    assert handle.returncode == -signal.SIGTERM
