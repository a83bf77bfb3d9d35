"""Newline-delimited JSON wire protocol and TCP search server.

One message per line of UTF-8 JSON. encode is canonical (fixed field order,
no extra whitespace, full float round-trip precision); decode is total: any
byte sequence up to the line-length limit yields either a message or a
classified ProtocolError, never a crash. The server runs one controller per
connection and speaks only this protocol.
"""

from __future__ import annotations

import json
import logging
import math
import os
import socket
import threading
from enum import Enum

from .controller import Controller, OrderViolation, ScheduleRecord, SearchConfig
from .messages import (
    PROTOCOL_VERSION,
    LOSS_TRAIN,
    LOSS_VALIDATION,
    CommandDone,
    EvalConfig,
    Hello,
    LossReport,
    Message,
    RestoreCkpt,
    SaveCkpt,
    SetLr,
    Shutdown,
    Stop,
    Train,
    TrainerError,
)

__all__ = [
    "MAX_LINE_BYTES",
    "MALFORMED_LIMIT",
    "IDLE_TIMEOUT_SECONDS",
    "DEFAULT_HOST",
    "DEFAULT_PORT",
    "PORT_ENV_VAR",
    "default_port",
    "ErrorKind",
    "ProtocolError",
    "encode",
    "decode",
    "LineReader",
    "LrSearchServer",
]

logger = logging.getLogger(__name__)

MAX_LINE_BYTES = 1 << 20  # longer lines are malformed by definition
MALFORMED_LIMIT = 3  # consecutive bad lines before the server hangs up
IDLE_TIMEOUT_SECONDS = 600.0
DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 8765
PORT_ENV_VAR = "AUTOLRS_PORT"


def default_port() -> int:
    """DEFAULT_PORT unless the environment overrides it."""
    raw = os.environ.get(PORT_ENV_VAR)
    if raw is None:
        return DEFAULT_PORT
    try:
        port = int(raw)
    except ValueError:
        raise ValueError(f"{PORT_ENV_VAR} must be an integer, got {raw!r}") from None
    if not 0 <= port <= 65535:
        raise ValueError(f"{PORT_ENV_VAR} out of range: {port}")
    return port


class ErrorKind(Enum):
    MALFORMED = "malformed"
    UNKNOWN_TYPE = "unknown_type"
    MISSING_FIELD = "missing_field"
    INVALID_FIELD = "invalid_field"
    NON_FINITE = "non_finite"


class ProtocolError(ValueError):
    def __init__(self, kind: ErrorKind, detail: str):
        super().__init__(f"{kind.value}: {detail}")
        self.kind = kind
        self.detail = detail


# ---- encoding ----------------------------------------------------------------

_WIRE_FIELDS: dict[type, tuple[str, tuple[str, ...]]] = {
    SetLr: ("set_lr", ("lr",)),
    SaveCkpt: ("save_ckpt", ()),
    RestoreCkpt: ("restore_ckpt", ()),
    Train: ("train", ("steps", "loss_source", "report_every", "command_id")),
    EvalConfig: ("eval_config", ("val_minibatches", "val_every")),
    Shutdown: ("shutdown", ("reason",)),
    Hello: ("hello", ("protocol_version", "config_overrides")),
    LossReport: ("loss", ("step", "value", "source")),
    CommandDone: ("command_done", ("command_id",)),
    TrainerError: ("trainer_error", ("message",)),
    Stop: ("stop", ()),
}


def encode(message: Message) -> bytes:
    """One canonical JSON line, newline-terminated."""
    try:
        tag, attrs = _WIRE_FIELDS[type(message)]
    except KeyError:
        raise TypeError(f"not a protocol message: {type(message).__name__}") from None
    doc: dict = {"type": tag}
    for attr in attrs:
        value = getattr(message, attr)
        doc[attr] = dict(value) if attr == "config_overrides" else value
    return (json.dumps(doc, separators=(",", ":"), allow_nan=False) + "\n").encode("utf-8")


# ---- decoding ----------------------------------------------------------------


def _need(doc: dict, name: str):
    if name not in doc:
        raise ProtocolError(ErrorKind.MISSING_FIELD, f"missing field {name!r}")
    return doc[name]


def _as_str(name: str, value) -> str:
    if not isinstance(value, str):
        raise ProtocolError(ErrorKind.INVALID_FIELD, f"{name} must be a string")
    return value


def _as_int(name: str, value, minimum: int) -> int:
    # bool is an int subclass; the wire does not accept it as a number
    if isinstance(value, bool) or not isinstance(value, int):
        raise ProtocolError(ErrorKind.INVALID_FIELD, f"{name} must be an integer")
    if value < minimum:
        raise ProtocolError(ErrorKind.INVALID_FIELD, f"{name} must be >= {minimum}, got {value}")
    return value


def _as_float(name: str, value, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProtocolError(ErrorKind.INVALID_FIELD, f"{name} must be a number")
    number = float(value)
    if not math.isfinite(number):
        raise ProtocolError(ErrorKind.NON_FINITE, f"{name} is not a finite number")
    if positive and number <= 0:
        raise ProtocolError(ErrorKind.INVALID_FIELD, f"{name} must be > 0, got {number}")
    return number


def _as_source(name: str, value) -> str:
    if value not in (LOSS_TRAIN, LOSS_VALIDATION):
        raise ProtocolError(
            ErrorKind.INVALID_FIELD,
            f"{name} must be {LOSS_TRAIN!r} or {LOSS_VALIDATION!r}",
        )
    return value


def _decode_hello(doc: dict) -> Hello:
    version = _as_str("protocol_version", _need(doc, "protocol_version"))
    overrides = doc.get("config_overrides", {})
    if not isinstance(overrides, dict):
        raise ProtocolError(ErrorKind.INVALID_FIELD, "config_overrides must be an object")
    return Hello(version, overrides)


_DECODERS = {
    "set_lr": lambda doc: SetLr(_as_float("lr", _need(doc, "lr"), positive=True)),
    "save_ckpt": lambda doc: SaveCkpt(),
    "restore_ckpt": lambda doc: RestoreCkpt(),
    "train": lambda doc: Train(
        _as_int("steps", _need(doc, "steps"), 1),
        _as_source("loss_source", _need(doc, "loss_source")),
        _as_int("report_every", _need(doc, "report_every"), 1),
        _as_int("command_id", _need(doc, "command_id"), 0),
    ),
    "eval_config": lambda doc: EvalConfig(
        _as_int("val_minibatches", _need(doc, "val_minibatches"), 1),
        _as_int("val_every", _need(doc, "val_every"), 1),
    ),
    "shutdown": lambda doc: Shutdown(_as_str("reason", _need(doc, "reason"))),
    "hello": _decode_hello,
    "loss": lambda doc: LossReport(
        _as_int("step", _need(doc, "step"), 0),
        _as_float("value", _need(doc, "value")),
        _as_source("source", _need(doc, "source")),
    ),
    "command_done": lambda doc: CommandDone(_as_int("command_id", _need(doc, "command_id"), 0)),
    "trainer_error": lambda doc: TrainerError(_as_str("message", _need(doc, "message"))),
    "stop": lambda doc: Stop(),
}


class _NonFiniteLiteral(Exception):
    pass


def _reject_constant(token: str):
    raise _NonFiniteLiteral(token)


def decode(line: bytes | bytearray | str) -> Message:
    """Parse one wire line; raises ProtocolError (and nothing else) on any
    invalid input. Unknown JSON fields are ignored."""
    if isinstance(line, str):
        raw = line.encode("utf-8", errors="surrogatepass")
    else:
        raw = bytes(line)
    raw = raw.rstrip(b"\r\n")
    if len(raw) > MAX_LINE_BYTES:
        raise ProtocolError(ErrorKind.MALFORMED, f"line exceeds {MAX_LINE_BYTES} bytes")
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as err:
        raise ProtocolError(ErrorKind.MALFORMED, f"not UTF-8: {err}") from None
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except _NonFiniteLiteral as err:
        raise ProtocolError(ErrorKind.NON_FINITE, f"non-finite literal {err}") from None
    except (ValueError, RecursionError) as err:
        raise ProtocolError(ErrorKind.MALFORMED, f"invalid JSON: {err}") from None
    if not isinstance(doc, dict):
        raise ProtocolError(ErrorKind.MALFORMED, "top level must be a JSON object")
    tag = _as_str("type", _need(doc, "type"))
    decoder = _DECODERS.get(tag)
    if decoder is None:
        raise ProtocolError(ErrorKind.UNKNOWN_TYPE, f"unknown message type {tag!r}")
    return decoder(doc)


# ---- framing -------------------------------------------------------------------


class LineReader:
    """Splits a socket stream into newline-terminated lines.

    A line that outgrows the limit is returned as-is (decode classifies it as
    malformed) and the remainder of that line is discarded silently.
    """

    def __init__(self, sock: socket.socket, max_line: int = MAX_LINE_BYTES):
        self._sock = sock
        self._max = max_line
        self._buffer = bytearray()
        self._discarding = False

    def readline(self) -> bytes | None:
        """Next line including its newline, or None at EOF."""
        while True:
            newline = self._buffer.find(b"\n")
            if newline >= 0:
                line = bytes(self._buffer[: newline + 1])
                del self._buffer[: newline + 1]
                if self._discarding:
                    self._discarding = False
                    continue  # tail of an oversized line
                return line
            if not self._discarding and len(self._buffer) > self._max:
                line = bytes(self._buffer)
                self._buffer.clear()
                self._discarding = True
                return line
            if self._discarding:
                self._buffer.clear()
            chunk = self._sock.recv(65536)
            if not chunk:
                if self._buffer and not self._discarding:
                    line = bytes(self._buffer)
                    self._buffer.clear()
                    return line
                return None
            self._buffer.extend(chunk)


# ---- server --------------------------------------------------------------------


class LrSearchServer:
    """TCP server: one search controller per connection.

    start()/stop() run the accept loop on a background thread (also usable as
    a context manager); serve_forever() runs it in the foreground. Completed
    sessions leave their ScheduleRecord in completed_records.
    """

    def __init__(
        self,
        config: SearchConfig,
        host: str = DEFAULT_HOST,
        port: int | None = None,
        idle_timeout: float = IDLE_TIMEOUT_SECONDS,
    ):
        self.config = config
        self.idle_timeout = idle_timeout
        self._listener = socket.create_server((host, default_port() if port is None else port))
        # closing a socket does not wake a blocked accept(); poll instead so
        # stop() can take the accept loop down promptly
        self._listener.settimeout(0.25)
        self.host, self.port = self._listener.getsockname()[:2]
        self._lock = threading.Lock()
        self._connections: set[socket.socket] = set()
        self._session_threads: list[threading.Thread] = []
        self._accept_thread: threading.Thread | None = None
        self._stopping = threading.Event()
        self.completed_records: list[ScheduleRecord] = []

    @property
    def address(self) -> tuple[str, int]:
        return (self.host, self.port)

    def serve_forever(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, peer = self._listener.accept()
            except TimeoutError:
                continue
            except OSError:
                break  # listener closed by stop()
            thread = threading.Thread(
                target=self._session, args=(conn, peer), name=f"autolrs-session-{peer}", daemon=True
            )
            with self._lock:
                self._session_threads.append(thread)
            thread.start()

    def start(self) -> "LrSearchServer":
        self._accept_thread = threading.Thread(
            target=self.serve_forever, name="autolrs-accept", daemon=True
        )
        self._accept_thread.start()
        return self

    def stop(self, drain_timeout: float = 5.0) -> None:
        """Close the listener, tell live sessions to shut down, join threads."""
        self._stopping.set()
        try:
            self._listener.close()
        except OSError:
            pass
        with self._lock:
            connections = list(self._connections)
            threads = list(self._session_threads)
        for conn in connections:
            self._send(conn, Shutdown("server stopping"))
            try:
                # half-close: wakes the session reader with EOF while the
                # shutdown line still flushes to the client
                conn.shutdown(socket.SHUT_RD)
            except OSError:
                pass
        for thread in threads:
            thread.join(drain_timeout)
        if self._accept_thread is not None:
            self._accept_thread.join(drain_timeout)

    def __enter__(self) -> "LrSearchServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    @staticmethod
    def _send(conn: socket.socket, message: Message) -> bool:
        try:
            conn.sendall(encode(message))
            return True
        except OSError:
            return False

    def _session(self, conn: socket.socket, peer) -> None:
        controller: Controller | None = None
        bad_streak = 0
        try:
            conn.settimeout(self.idle_timeout)
            with self._lock:
                self._connections.add(conn)
            reader = LineReader(conn)
            while True:
                try:
                    line = reader.readline()
                except TimeoutError:
                    self._send(conn, Shutdown("idle timeout"))
                    break
                except OSError:
                    break
                if line is None:
                    break  # client disconnected
                try:
                    message = decode(line)
                except ProtocolError as err:
                    bad_streak += 1
                    logger.warning("session %s: %s", peer, err)
                    if bad_streak >= MALFORMED_LIMIT:
                        self._send(conn, Shutdown(f"protocol errors: {err}"))
                        break
                    continue
                bad_streak = 0
                if controller is None:
                    if not isinstance(message, Hello):
                        self._send(conn, Shutdown("expected hello"))
                        break
                    if message.protocol_version != PROTOCOL_VERSION:
                        self._send(conn, Shutdown("version mismatch"))
                        break
                    try:
                        session_config = self.config.merged(message.config_overrides)
                    except (TypeError, ValueError) as err:
                        self._send(conn, Shutdown(f"bad config override: {err}"))
                        break
                    controller = Controller(session_config)
                try:
                    commands = controller.handle_event(message)
                except OrderViolation as err:
                    self._send(conn, Shutdown(f"order violation: {err}"))
                    break
                finished = False
                sent = True
                for command in commands:
                    if not self._send(conn, command):
                        sent = False
                        break
                    if isinstance(command, Shutdown):
                        finished = True
                if finished:
                    with self._lock:
                        self.completed_records.append(controller.record)
                if finished or not sent:
                    break
        except Exception:
            logger.exception("session %s failed", peer)
        finally:
            with self._lock:
                self._connections.discard(conn)
            try:
                conn.close()
            except OSError:
                pass
