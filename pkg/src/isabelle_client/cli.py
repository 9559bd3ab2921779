"""Command-line interface.

Client subcommands print one JSON object per server reply on stdout;
diagnostics go to stderr. Exit codes: 0 final reply ok, 1 usage error,
2 command FAILED or ok=false, 3 transport or process error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import __version__
from .client import Connection, ConnectionState, connect
from .errors import (
    BindFailure,
    BuildFailed,
    CommandError,
    ConnectionFailed,
    IsabelleError,
    MalformedInfoLine,
    NotConnected,
    ProtocolViolation,
    ScenarioError,
    ServerStartError,
    WatchdogExpired,
)
from .mock import resolve_scenario, start_mock
from .protocol import (
    IsabelleResponse,
    ResponseKind,
    ServerInfo,
    SessionBuildArgs,
    SessionStartArgs,
    SessionStopArgs,
    Transcript,
    UseTheoriesArgs,
    parse_server_info,
)
from .server import start_server, stop_server

log = logging.getLogger("isabelle_client.cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILED = 2
EXIT_TRANSPORT = 3

INFO_ENV = "ISABELLE_SERVER_INFO"

CLEAN_MESSAGE = (
    "--clean is not available: the Isabelle server API has no counterpart of "
    "`isabelle build -c`; run `isabelle build -c` separately for a clean build"
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class RecordWriter:
    """Writes transcript entries as they arrive, numbering them from 0."""

    def __init__(self, stream=None, pretty: bool = False):
        self.stream = stream or sys.stdout
        self.pretty = pretty
        self.seq = 0

    def __call__(self, resp: IsabelleResponse) -> None:
        if self.pretty:
            line = _pretty(resp)
        else:
            record = {"kind": resp.kind.value, "body": resp.body}
            if resp.task is not None:
                record["task"] = resp.task
            record["seq"] = self.seq
            line = json.dumps(record, ensure_ascii=False)
        self.seq += 1
        self.stream.write(line + "\n")
        self.stream.flush()


def _pretty(resp: IsabelleResponse) -> str:
    payload = resp.payload if isinstance(resp.payload, dict) else {}
    if resp.kind is ResponseKind.NOTE:
        if "percentage" in payload:
            return f"[{payload['percentage']:>3}%] progress"
        if "message" in payload:
            return f"[{payload.get('kind', 'note')}] {payload['message']}"
    if resp.kind in (ResponseKind.FINISHED, ResponseKind.FAILED) and "ok" in payload:
        return f"{resp.kind.value}: ok={str(bool(payload['ok'])).lower()}"
    body = resp.body if len(resp.body) <= 200 else resp.body[:197] + "..."
    return f"{resp.kind.value} {body}".rstrip()


# -- info source -----------------------------------------------------------------


def resolve_info(args: argparse.Namespace) -> ServerInfo:
    """--info-line, then $ISABELLE_SERVER_INFO, then the first line of --info-file."""
    if args.info_line:
        line = args.info_line
    elif os.environ.get(INFO_ENV):
        line = os.environ[INFO_ENV]
    elif args.info_file:
        try:
            with open(args.info_file, encoding="utf-8") as fh:
                line = fh.readline()
        except OSError as exc:
            raise UsageError(f"cannot read info file: {exc}") from None
    else:
        raise UsageError(f"no server given: use --info-line, ${INFO_ENV} or --info-file")
    return parse_server_info(line)


def _final_ok(transcript: Transcript) -> bool:
    final = transcript.final
    if final.kind is ResponseKind.OK:
        return True
    if final.kind is ResponseKind.FINISHED:
        payload = final.payload if isinstance(final.payload, dict) else {}
        return payload.get("ok", True) is True
    return False


# -- subcommands -------------------------------------------------------------


def cmd_start(args: argparse.Namespace) -> int:
    handle = start_server(
        name=args.name,
        port=args.port,
        log_path=args.log,
        isabelle_command=args.isabelle,
        ready_timeout=args.ready_timeout,
    )
    try:
        print(handle.info_line, flush=True)
        handle.process.wait()
    except KeyboardInterrupt:
        pass
    finally:
        # a second signal must not cut the cleanup short
        signal.signal(signal.SIGTERM, signal.SIG_IGN)
        stop_server(handle)
    return EXIT_OK


def cmd_use_theories(args: argparse.Namespace) -> int:
    info = resolve_info(args)
    writer = RecordWriter(pretty=args.pretty)
    with connect(info, timeout=args.connect_timeout) as conn:
        session_id = args.session_id
        started = False
        if session_id is None:
            _, session_id = conn.session_start(SessionStartArgs(session=args.session), args.watchdog)
            started = True
        try:
            transcript, result = conn.use_theories(
                UseTheoriesArgs(args.theories, session_id, args.master_dir), args.watchdog, writer
            )
        finally:
            if started and conn.state is ConnectionState.AUTHENTICATED:
                try:
                    conn.session_stop(SessionStopArgs(session_id), args.watchdog)
                except IsabelleError as exc:
                    log.warning("could not stop session: %s", exc)
    for diag in result.diagnostics:
        if diag.kind == "error":
            print(f"error: {diag.message}", file=sys.stderr)
    return EXIT_OK if result.ok else EXIT_FAILED


def cmd_build(args: argparse.Namespace) -> int:
    if args.clean:
        raise UsageError(CLEAN_MESSAGE)
    info = resolve_info(args)
    build_args = SessionBuildArgs(
        session=args.session,
        dirs=args.dirs,
        options=args.options,
        verbose=args.verbose,
        include_sessions=args.include_sessions,
    )
    with connect(info, timeout=args.connect_timeout) as conn:
        transcript = conn.session_build(build_args, args.watchdog, RecordWriter(pretty=args.pretty))
    return EXIT_OK if _final_ok(transcript) else EXIT_FAILED


def _simple(
    command: Callable[[Connection, argparse.Namespace], Transcript],
) -> Callable[[argparse.Namespace], int]:
    def run(args: argparse.Namespace) -> int:
        info = resolve_info(args)
        writer = RecordWriter(pretty=args.pretty)
        with connect(info, timeout=args.connect_timeout) as conn:
            transcript = command(conn, args)
        for resp in transcript:
            writer(resp)
        return EXIT_OK if _final_ok(transcript) else EXIT_FAILED

    return run


cmd_echo = _simple(lambda conn, args: conn.echo(args.value))
cmd_shutdown = _simple(lambda conn, args: conn.shutdown())


def cmd_mock(args: argparse.Namespace) -> int:
    scenario = resolve_scenario(args.scenario)
    info, server = start_mock(scenario, args.port, name=args.name)
    try:
        print(info.info_line(), flush=True)
        server.wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def _add_client_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("server")
    g.add_argument("--info-line", help='server info line: server "NAME" = HOST:PORT (password "PW")')
    g.add_argument("--info-file", type=Path, help="file whose first line is the server info line")
    g.add_argument("--connect-timeout", type=float, default=10.0, metavar="SECONDS")
    p.add_argument("--pretty", action="store_true", help="human-readable output instead of JSON lines")


def _add_watchdog(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--watchdog", type=float, default=None, metavar="SECONDS",
        help="give up waiting for the final reply after this long",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="isabelle-client", description="Talk to an Isabelle server.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose-log", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("start", help="start an Isabelle server and print its info line")
    p.add_argument("--name", default="isabelle")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--log", type=Path, default=None, help="append server output here")
    p.add_argument("--isabelle", default=None, help="isabelle executable (default $ISABELLE_COMMAND or 'isabelle')")
    p.add_argument("--ready-timeout", type=float, default=60.0, metavar="SECONDS")
    p.set_defaults(func=cmd_start)

    p = sub.add_parser("use-theories", help="process theories in one use_theories command")
    p.add_argument("theories", nargs="+", metavar="THEORY")
    p.add_argument("--master-dir", default=None)
    p.add_argument("--session-id", default=None, help="use an existing session instead of starting one")
    p.add_argument("--session", default="HOL", help="logic for the implicitly started session")
    _add_client_options(p)
    _add_watchdog(p)
    p.set_defaults(func=cmd_use_theories)

    p = sub.add_parser("build", help="build a session")
    p.add_argument("--session", required=True)
    p.add_argument("--dir", dest="dirs", action="append", default=[])
    p.add_argument("--option", dest="options", action="append", default=[])
    p.add_argument("--include-session", dest="include_sessions", action="append", default=[])
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--clean", action="store_true", help=argparse.SUPPRESS)
    _add_client_options(p)
    _add_watchdog(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("echo", help="send echo and print the reply")
    p.add_argument("value")
    _add_client_options(p)
    p.set_defaults(func=cmd_echo)

    p = sub.add_parser("shutdown", help="shut the server down")
    _add_client_options(p)
    p.set_defaults(func=cmd_shutdown)

    p = sub.add_parser("mock", help="run the mock server in the foreground")
    p.add_argument("scenario", help="builtin scenario name or scenario file")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--name", default="mock")
    p.set_defaults(func=cmd_mock)
    return parser


def _on_sigterm(signum, frame):
    raise KeyboardInterrupt


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose_log else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command in ("start", "mock"):
        signal.signal(signal.SIGTERM, _on_sigterm)
    try:
        return args.func(args)
    except (UsageError, MalformedInfoLine, ScenarioError) as exc:
        print(f"isabelle-client: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BuildFailed, CommandError) as exc:
        print(f"isabelle-client: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except (
        ConnectionFailed, ProtocolViolation, WatchdogExpired, NotConnected, ServerStartError, BindFailure,
    ) as exc:
        print(f"isabelle-client: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except IsabelleError as exc:
        print(f"isabelle-client: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
