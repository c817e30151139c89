"""Per-module service node.

Each module runs one ServiceNode. Local applications open sessions against
it and drive it with a line-based text protocol (see docs/protocol.md for
the verbs); the node talks to its physical neighbors through typed
messages over the reliable link layer. The node owns the app registry,
file store, version/identity state and the code-diffusion machinery, and
hosts role engines started from transferred program files.

Commands execute one at a time per session; a command's single response
line (`OK ...` or `ERR <code> <text>`) may arrive after network round
trips, with asynchronous `MSG`/`EVENT` pushes interleaved.
"""

from __future__ import annotations

import base64
import binascii
import itertools
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from .dynarole import RoleSyntaxError, parse_program
from .engine import RoleEngine
from .link import TicketState
from .messages import (
    Kind, LinkReassembler, MessageTicket, ModuleId, ProtocolError, ROOT_ID,
    ServiceMessage, appdata_body, appdata_status_body, bcast_body, chunk_body,
    decode_message, id_assign_body, parse_appdata, parse_bcast, parse_chunk,
    parse_id_assign, parse_request, parse_state_rep, parse_state_req,
    parse_version, request_body, state_rep_body, state_req_body, version_body,
)
from .sim import Timer, US_PER_MS, US_PER_S

ANNOUNCE_PERIOD_US = US_PER_S  # re-announce once per simulated second
FILE_CHUNK_DATA = 512
IMAGE_SIZE = 600


def make_image(version: int) -> bytes:
    """Deterministic stand-in for the node's code image at a version."""
    head = f"svc-image v{version}\n".encode()
    return head + b"#" * max(0, IMAGE_SIZE - len(head))


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


class Session:
    """One application connection: commands in, response/push lines out."""

    def __init__(self, node: "ServiceNode"):
        self.node = node
        self.name: Optional[str] = None
        self.outbox: list[str] = []
        self.closed = False
        self._commands: deque[str] = deque()
        self._busy = False
        self._advancing = False

    def submit(self, line: str) -> None:
        if self.closed:
            return
        self._commands.append(line)
        self._advance()

    def push(self, line: str) -> None:
        """Asynchronous MSG/EVENT delivery."""
        self.outbox.append(line)

    def respond(self, line: str) -> None:
        self.outbox.append(line)
        self._busy = False
        self._advance()

    def take_lines(self) -> list[str]:
        lines, self.outbox = self.outbox, []
        return lines

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self.node._deregister(self)

    def _advance(self) -> None:
        if self._advancing:
            return  # a synchronous respond() re-entered; the loop below continues
        self._advancing = True
        try:
            while not self._busy and self._commands:
                self._busy = True
                self.node.execute(self, self._commands.popleft())
        finally:
            self._advancing = False


class EngineSession(Session):
    """Registry entry for a role engine; routes MSG payloads into it."""

    def __init__(self, node: "ServiceNode", engine: RoleEngine):
        super().__init__(node)
        self.engine = engine

    def push(self, line: str) -> None:
        parts = line.split()
        if len(parts) == 4 and parts[0] == "MSG":
            try:
                text = base64.b64decode(parts[3], validate=True).decode("utf-8")
            except (binascii.Error, UnicodeDecodeError):
                return
            words = text.split()
            if len(words) == 3 and words[0] == "INVOKE":
                self.engine.on_invoke(words[1], words[2])


class _ExecSession(Session):
    """Pre-authenticated one-shot session used for remote EXEC lines."""

    def __init__(self, node: "ServiceNode", on_response: Callable[[str], None]):
        super().__init__(node)
        self.name = "_exec"
        self._on_response = on_response
        self._answered = False

    def respond(self, line: str) -> None:
        self._busy = False
        if not self._answered:
            self._answered = True
            self._on_response(line)

    def push(self, line: str) -> None:
        pass


@dataclass
class _Pending:
    kind: str
    timer: Timer
    on_reply: Callable


@dataclass
class _Transfer:
    total: int
    label: str
    parts: list[bytes]


class _EngineHost:
    """Adapter giving a RoleEngine its view of the module."""

    def __init__(self, node: "ServiceNode", app_name: str):
        self._node = node
        self._app_name = app_name

    @property
    def scheduler(self):
        return self._node.host.scheduler

    def snapshot(self):
        return self._node.host.snapshot()

    def actuate(self, value: int) -> None:
        self._node.host.actuate(value)

    def log(self, kind: str, payload: str = "") -> None:
        self._node.host.log(kind, payload)

    def invoke_neighbors(self, role: str, command: str) -> None:
        self._node.invoke_neighbors(self._app_name, role, command)


class ServiceNode:
    """Middleware state machine for one module.

    The host duck type supplies the simulated world surface: `scheduler`,
    `log(kind, payload)`, `state_text()`, `snapshot()`, `actuate(value)`,
    `send_port(port, msg) -> MessageTicket`, `connected_ports()` and
    `link_config`.
    """

    def __init__(self, host):
        self.host = host
        self.module_id = ModuleId()
        self.version = 0
        self.neighbor_table: dict[int, tuple[ModuleId, int]] = {}
        self.apps: dict[str, Session] = {}
        self.file_store: dict[str, str] = {}
        self.code_image = b""
        self.engines: dict[str, RoleEngine] = {}
        self._reassemblers: dict[int, LinkReassembler] = {}
        self._file_transfers: dict[tuple[int, int], _Transfer] = {}
        self._code_transfers: dict[tuple[int, int], _Transfer] = {}
        self._code_ready: dict[int, tuple[int, bytes]] = {}
        self._pending: dict[int, _Pending] = {}
        self._req_counter = itertools.count(1)
        self._transfer_counter = itertools.count(1)
        self._push_inflight: set[int] = set()

    # bootstrap and periodic diffusion

    def bootstrap(self, root: bool) -> None:
        if root:
            self.module_id = ROOT_ID
            self.version = 1
            self.code_image = make_image(1)
        self.host.log("boot", f"id={self.module_id} v={self.version}")
        for port in self.host.connected_ports():
            self._send_hello(port)
        self._announce_all()
        self.host.scheduler.call_after(ANNOUNCE_PERIOD_US, self._tick)

    def _tick(self) -> None:
        self._announce_all()
        for port in self.host.connected_ports():
            self._maybe_push(port)
        self.host.scheduler.call_after(ANNOUNCE_PERIOD_US, self._tick)

    def _send_hello(self, port: int) -> None:
        self.host.send_port(port, ServiceMessage(
            Kind.HELLO, self.module_id, None, version_body(self.version)))

    def _announce_all(self) -> None:
        for port in self.host.connected_ports():
            self.host.send_port(port, ServiceMessage(
                Kind.VERSION_ANNOUNCE, self.module_id, None, version_body(self.version)))

    def on_link_up(self, port: int) -> None:
        self._send_hello(port)
        self.host.send_port(port, ServiceMessage(
            Kind.VERSION_ANNOUNCE, self.module_id, None, version_body(self.version)))

    def on_phys_change(self) -> None:
        for engine in self.engines.values():
            engine.on_phys_change()

    def on_sensor(self, sensor_id: int, value: int) -> None:
        for session in list(self.apps.values()):
            if not isinstance(session, EngineSession):
                session.push(f"EVENT sensor {sensor_id} {value}")
        if value != 0:
            for engine in self.engines.values():
                engine.on_event(sensor_id)

    # code diffusion

    def upgrade_local(self, version: int) -> None:
        """Direct upgrade injection (the out-of-band reflash of one module)."""
        if version <= self.version:
            self.host.log("upgrade-ignored", f"v={version} at v={self.version}")
            return
        self.version = version
        self.code_image = make_image(version)
        if self.module_id.unassigned:
            self.module_id = ROOT_ID
        self.host.log("version", str(self.version))
        for port in self.host.connected_ports():
            self._send_hello(port)
        self._announce_all()
        for port in self.host.connected_ports():
            self._maybe_push(port)

    def _learn_neighbor(self, port: int, module_id: ModuleId, version: int) -> None:
        self.neighbor_table[port] = (module_id, version)
        self._maybe_push(port)

    def _maybe_push(self, port: int) -> None:
        if self.version == 0 or port in self._push_inflight:
            return
        entry = self.neighbor_table.get(port)
        if entry is None or entry[1] >= self.version:
            return
        self._start_push(port)

    def _start_push(self, port: int) -> None:
        self._push_inflight.add(port)
        version = self.version
        blob = self.code_image
        transfer_id = next(self._transfer_counter)
        parts = [blob[i:i + FILE_CHUNK_DATA] for i in range(0, len(blob), FILE_CHUNK_DATA)] or [b""]
        child = self.module_id.child(port)
        msgs = [
            ServiceMessage(Kind.CODE_CHUNK, self.module_id, None,
                           chunk_body(transfer_id, i, len(parts), str(version), part))
            for i, part in enumerate(parts)
        ]
        msgs.append(ServiceMessage(Kind.ID_ASSIGN, self.module_id, None,
                                   id_assign_body(version, child)))
        self.host.log("push", f"v={version} port={port} id={child}")

        def done(ok: bool) -> None:
            self._push_inflight.discard(port)
            if not ok:
                self.host.log("push-fail", f"v={version} port={port}")

        self._run_job(port, msgs, done)

    def _run_job(self, port: int, msgs: list[ServiceMessage], done: Callable[[bool], None]) -> None:
        """Send messages one after another; abort the job on first failure."""

        def send_next(index: int) -> None:
            if index == len(msgs):
                done(True)
                return
            ticket = self.host.send_port(port, msgs[index])
            ticket.on_done(
                lambda t: send_next(index + 1) if t.state is TicketState.DELIVERED else done(False)
            )

        send_next(0)

    def _adopt(self, port: int, version: int, new_id: ModuleId, blob: bytes, src: ModuleId) -> None:
        self.version = version
        self.module_id = new_id
        self.code_image = blob
        self.host.log("version", str(version))
        self.host.log("push-accept", f"v={version} id={new_id} from={src}")
        self._file_transfers.clear()
        self._reset_sessions()
        for pending in self._pending.values():
            pending.timer.cancel()
        self._pending.clear()
        for p in self.host.connected_ports():
            self._send_hello(p)
        self._announce_all()
        for p in self.host.connected_ports():
            self._maybe_push(p)

    def _reset_sessions(self) -> None:
        """Sessions do not survive a version adoption; engines come back."""
        engine_files = []
        for name, session in list(self.apps.items()):
            if isinstance(session, EngineSession):
                session.engine.stop()
                engine_files.append(name)
            else:
                session.push(f"EVENT reset {self.version}")
                session.closed = True
            self.apps.pop(name, None)
            self.engines.pop(name, None)
        for name in engine_files:
            self.start_program(name)

    # inbound message path

    def on_link_payload(self, port: int, payload: bytes) -> None:
        reasm = self._reassemblers.setdefault(port, LinkReassembler())
        whole = reasm.feed(payload)
        if whole is None:
            return
        try:
            msg = decode_message(whole)
        except ProtocolError as exc:
            self.host.log("protocol-error", str(exc))
            return
        try:
            self._dispatch(port, msg)
        except ProtocolError as exc:
            self.host.log("protocol-error", f"{msg.kind.name}: {exc}")

    def _dispatch(self, port: int, msg: ServiceMessage) -> None:
        kind = msg.kind
        if kind is Kind.HELLO or kind is Kind.VERSION_ANNOUNCE:
            self._learn_neighbor(port, msg.src, parse_version(msg.body))
        elif kind is Kind.APPDATA:
            self._on_appdata(port, msg)
        elif kind is Kind.BCAST:
            self._on_bcast(port, msg)
        elif kind is Kind.STATE_REQ:
            req_id = parse_state_req(msg.body)
            self.host.send_port(port, ServiceMessage(
                Kind.STATE_REP, self.module_id, None,
                state_rep_body(req_id, self.host.state_text())))
        elif kind is Kind.STATE_REP:
            req_id, text = parse_state_rep(msg.body)
            self._resolve_pending(req_id, text)
        elif kind is Kind.CODE_CHUNK:
            self._on_code_chunk(port, msg)
        elif kind is Kind.FILE_CHUNK:
            self._on_file_chunk(port, msg)
        elif kind is Kind.ID_ASSIGN:
            self._on_id_assign(port, msg)
        elif kind is Kind.EXEC:
            self._on_exec(port, msg)
        elif kind is Kind.START:
            self._on_start(port, msg)
        else:
            self.host.log("drop", f"unhandled kind {kind.name}")

    def _on_appdata(self, port: int, msg: ServiceMessage) -> None:
        parsed = parse_appdata(msg.body)
        if parsed[0] == "status":
            _, req_id, ok = parsed
            self._resolve_pending(req_id, ok, quiet=True)
            return
        _, src_app, req_id, data = parsed
        session = self.apps.get(msg.dst_app or "")
        if session is None:
            self.host.log("drop", f"appdata for unknown app {msg.dst_app}")
            self.host.send_port(port, ServiceMessage(
                Kind.APPDATA, self.module_id, None, appdata_status_body(req_id, False)))
            return
        self.host.log("appmsg", f"{msg.src or '-'} {src_app} {_b64(data)}")
        session.push(f"MSG {msg.src or '-'} {src_app} {_b64(data)}")
        self.host.send_port(port, ServiceMessage(
            Kind.APPDATA, self.module_id, None, appdata_status_body(req_id, True)))

    def _on_bcast(self, port: int, msg: ServiceMessage) -> None:
        src_app, data = parse_bcast(msg.body)
        self.host.log("bcastmsg", f"{msg.src or '-'} {src_app} {_b64(data)}")
        for session in list(self.apps.values()):
            session.push(f"MSG {msg.src or '-'} {src_app} {_b64(data)}")

    def _accumulate(self, table: dict, port: int, msg: ServiceMessage) -> Optional[_Transfer]:
        """Shared in-order chunk collection; returns the completed transfer."""
        transfer_id, index, total, label, data = parse_chunk(msg.body)
        key = (port, transfer_id)
        if index == 0:
            table[key] = _Transfer(total=total, label=label, parts=[data])
        else:
            entry = table.get(key)
            if entry is None or index != len(entry.parts) or total != entry.total:
                table.pop(key, None)
                self.host.log("transfer-reset", f"port={port} id={transfer_id}")
                return None
            entry.parts.append(data)
        entry = table[key]
        if len(entry.parts) == entry.total:
            del table[key]
            return entry
        return None

    def _on_code_chunk(self, port: int, msg: ServiceMessage) -> None:
        entry = self._accumulate(self._code_transfers, port, msg)
        if entry is None:
            return
        try:
            version = int(entry.label)
        except ValueError:
            raise ProtocolError(f"bad code version label {entry.label!r}")
        self._code_ready[port] = (version, b"".join(entry.parts))

    def _on_id_assign(self, port: int, msg: ServiceMessage) -> None:
        version, new_id = parse_id_assign(msg.body)
        ready = self._code_ready.pop(port, None)
        if version > self.version and ready is not None and ready[0] == version:
            self._adopt(port, version, new_id, ready[1], msg.src)
        else:
            self.host.log("push-reject", f"v={version} from={msg.src}")

    def _on_file_chunk(self, port: int, msg: ServiceMessage) -> None:
        entry = self._accumulate(self._file_transfers, port, msg)
        if entry is None:
            return
        blob = b"".join(entry.parts)
        try:
            text = blob.decode("utf-8")
        except UnicodeDecodeError:
            self.host.log("drop", f"file {entry.label}: not utf-8 text")
            return
        self.file_store[entry.label] = text
        self.host.log("file", f"{entry.label} bytes={len(blob)}")

    def _on_exec(self, port: int, msg: ServiceMessage) -> None:
        is_reply, req_id, text = parse_request(msg.body)
        if is_reply:
            self._resolve_pending(req_id, text)
            return

        def answer(line: str) -> None:
            self.host.send_port(port, ServiceMessage(
                Kind.EXEC, self.module_id, None, request_body(req_id, line, reply=True)))

        _ExecSession(self, answer).submit(text)

    def _on_start(self, port: int, msg: ServiceMessage) -> None:
        is_reply, req_id, text = parse_request(msg.body)
        if is_reply:
            self._resolve_pending(req_id, text)
            return
        response = self.start_program(text)
        self.host.send_port(port, ServiceMessage(
            Kind.START, self.module_id, None, request_body(req_id, response, reply=True)))

    # pending request bookkeeping

    def _reply_timeout_us(self) -> int:
        cfg = self.host.link_config
        return 3 * cfg.ack_timeout_ms * US_PER_MS * max(1, cfg.max_retries)

    def _await_reply(self, kind: str, on_reply: Callable, on_timeout: Callable[[], None]) -> int:
        req_id = next(self._req_counter)

        def expire() -> None:
            if self._pending.pop(req_id, None) is not None:
                on_timeout()

        timer = self.host.scheduler.call_after(self._reply_timeout_us(), expire)
        self._pending[req_id] = _Pending(kind, timer, on_reply)
        return req_id

    def _resolve_pending(self, req_id: int, *args, quiet: bool = False) -> None:
        pending = self._pending.pop(req_id, None)
        if pending is None:
            if not quiet:
                self.host.log("drop", f"reply for unknown request {req_id}")
            return
        pending.timer.cancel()
        pending.on_reply(*args)

    def _cancel_pending(self, req_id: int) -> None:
        pending = self._pending.pop(req_id, None)
        if pending is not None:
            pending.timer.cancel()

    # engine support

    def invoke_neighbors(self, app_name: str, role: str, command: str) -> None:
        data = f"INVOKE {role} {command}".encode("utf-8")
        for port in self.host.connected_ports():
            req_id = next(self._req_counter)
            self.host.send_port(port, ServiceMessage(
                Kind.APPDATA, self.module_id, app_name,
                appdata_body(app_name, req_id, data)))

    def start_program(self, filename: str) -> str:
        text = self.file_store.get(filename)
        if text is None:
            return "ERR 404 no such file"
        try:
            program = parse_program(text)
        except RoleSyntaxError as exc:
            return f"ERR 422 {exc.diagnostics[0]}"
        old = self.apps.get(filename)
        if isinstance(old, EngineSession):
            old.engine.stop()
            self.apps.pop(filename, None)
            self.engines.pop(filename, None)
        elif old is not None:
            return "ERR 409 app name in use"
        engine = RoleEngine(_EngineHost(self, filename), program)
        session = EngineSession(self, engine)
        session.name = filename
        self.apps[filename] = session
        self.engines[filename] = engine
        self.host.log("start-program", filename)
        engine.start()
        return f"OK started {filename}"

    # command protocol

    def open_session(self) -> Session:
        return Session(self)

    def _deregister(self, session: Session) -> None:
        if session.name and self.apps.get(session.name) is session:
            self.apps.pop(session.name, None)
            engine = self.engines.pop(session.name, None)
            if engine is not None:
                engine.stop()
            self.host.log("deregister", session.name)

    def execute(self, session: Session, line: str) -> None:
        parts = line.split()
        if not parts:
            session.respond("ERR 400 empty command")
            return
        verb = parts[0]
        args = parts[1:]
        if verb != "REGISTER" and session.name is None:
            session.respond("ERR 401 register first")
            return
        handler = _COMMANDS.get(verb)
        if handler is None:
            session.respond(f"ERR 400 unknown command {verb}")
            return
        try:
            handler(self, session, args)
        except _BadArgs as exc:
            session.respond(f"ERR 400 {exc}")

    # individual commands; each responds exactly once

    def _cmd_register(self, session: Session, args: list[str]) -> None:
        if len(args) != 1:
            raise _BadArgs("usage: REGISTER <app>")
        name = args[0]
        if len(name) > 64 or not name.isprintable():
            raise _BadArgs("bad app name")
        if session.name is not None:
            session.respond("ERR 409 already registered")
            return
        if name in self.apps:
            session.respond("ERR 409 app name in use")
            return
        session.name = name
        self.apps[name] = session
        self.host.log("register", name)
        session.respond(f"OK registered {name}")

    def _cmd_state(self, session: Session, args: list[str]) -> None:
        if not args:
            session.respond(f"OK {self.host.state_text()}")
            return
        if len(args) != 1:
            raise _BadArgs("usage: STATE [<module>]")
        port = self._port_of(args[0])
        if port is None:
            session.respond("ERR 404 unknown module")
            return
        req_id = self._await_reply(
            "state",
            lambda text: session.respond(f"OK {text}"),
            lambda: session.respond("ERR 504 state timeout"),
        )
        ticket = self.host.send_port(port, ServiceMessage(
            Kind.STATE_REQ, self.module_id, None, state_req_body(req_id)))
        self._fail_fast(ticket, req_id, session, "ERR 504 state timeout")

    def _cmd_neighbors(self, session: Session, args: list[str]) -> None:
        entries = [
            f"{port}:{mid}:{version}"
            for port, (mid, version) in sorted(self.neighbor_table.items())
        ]
        if entries:
            session.respond("OK " + " ".join(entries))
        else:
            session.respond("OK")

    def _cmd_send(self, session: Session, args: list[str]) -> None:
        if len(args) != 3:
            raise _BadArgs("usage: SEND <module> <app> <b64>")
        data = _decode_b64(args[2])
        port = self._port_of(args[0])
        if port is None:
            session.respond("ERR 404 unknown module")
            return

        def on_status(ok: bool) -> None:
            session.respond("OK delivered" if ok else "ERR 404 unknown app")

        req_id = self._await_reply(
            "send", on_status, lambda: session.respond("ERR 504 send timeout"))
        ticket = self.host.send_port(port, ServiceMessage(
            Kind.APPDATA, self.module_id, args[1],
            appdata_body(session.name or "", req_id, data)))
        self._fail_fast(ticket, req_id, session, "ERR 409 delivery failed")

    def _cmd_bcast(self, session: Session, args: list[str]) -> None:
        if len(args) != 1:
            raise _BadArgs("usage: BCAST <b64>")
        data = _decode_b64(args[0])
        ports = self.host.connected_ports()
        if not ports:
            session.respond("OK delivered=0")
            return
        results: dict[int, TicketState] = {}

        def on_port(port: int, state: TicketState) -> None:
            results[port] = state
            if len(results) < len(ports):
                return
            delivered = sum(1 for s in results.values() if s is TicketState.DELIVERED)
            failed = [self._peer_label(p) for p in sorted(results)
                      if results[p] is not TicketState.DELIVERED]
            line = f"OK delivered={delivered}"
            if failed:
                line += " failed=" + ",".join(failed)
            session.respond(line)

        body = bcast_body(session.name or "", data)
        for port in ports:
            ticket = self.host.send_port(port, ServiceMessage(
                Kind.BCAST, self.module_id, None, body))
            ticket.on_done(lambda t, p=port: on_port(p, t.state))

    def _cmd_putfile(self, session: Session, args: list[str]) -> None:
        if len(args) != 3:
            raise _BadArgs("usage: PUTFILE <module> <name> <b64>")
        raw = _decode_b64(args[2])
        try:
            raw.decode("utf-8")
        except UnicodeDecodeError:
            raise _BadArgs("file content must be utf-8 text")
        port = self._port_of(args[0])
        if port is None:
            session.respond("ERR 404 unknown module")
            return
        name = args[1]
        transfer_id = next(self._transfer_counter)
        parts = [raw[i:i + FILE_CHUNK_DATA] for i in range(0, len(raw), FILE_CHUNK_DATA)] or [b""]
        msgs = [
            ServiceMessage(Kind.FILE_CHUNK, self.module_id, None,
                           chunk_body(transfer_id, i, len(parts), name, part))
            for i, part in enumerate(parts)
        ]
        self._run_job(port, msgs, lambda ok: session.respond(
            f"OK transferred {name}" if ok else "ERR 409 transfer failed"))

    def _cmd_exec(self, session: Session, args: list[str]) -> None:
        if len(args) != 2:
            raise _BadArgs("usage: EXEC <module> <b64-of-command-line>")
        try:
            command_line = _decode_b64(args[1]).decode("utf-8")
        except UnicodeDecodeError:
            raise _BadArgs("command line must be utf-8 text")
        port = self._port_of(args[0])
        if port is None:
            session.respond("ERR 404 unknown module")
            return
        req_id = self._await_reply(
            "exec", session.respond, lambda: session.respond("ERR 504 exec timeout"))
        ticket = self.host.send_port(port, ServiceMessage(
            Kind.EXEC, self.module_id, None, request_body(req_id, command_line)))
        self._fail_fast(ticket, req_id, session, "ERR 504 exec timeout")

    def _cmd_start(self, session: Session, args: list[str]) -> None:
        if len(args) != 2:
            raise _BadArgs("usage: START <module> <name>")
        port = self._port_of(args[0])
        if port is None:
            session.respond("ERR 404 unknown module")
            return
        req_id = self._await_reply(
            "start", session.respond, lambda: session.respond("ERR 504 start timeout"))
        ticket = self.host.send_port(port, ServiceMessage(
            Kind.START, self.module_id, None, request_body(req_id, args[1])))
        self._fail_fast(ticket, req_id, session, "ERR 504 start timeout")

    def _cmd_version(self, session: Session, args: list[str]) -> None:
        session.respond(f"OK version={self.version}")

    def _cmd_id(self, session: Session, args: list[str]) -> None:
        session.respond(f"OK id={self.module_id}")

    # helpers

    def _fail_fast(self, ticket: MessageTicket, req_id: int, session: Session, line: str) -> None:
        def on_ticket(t: MessageTicket) -> None:
            if t.state is TicketState.FAILED and req_id in self._pending:
                self._cancel_pending(req_id)
                session.respond(line)

        ticket.on_done(on_ticket)

    def _port_of(self, module_text: str) -> Optional[int]:
        for port, (mid, _version) in sorted(self.neighbor_table.items()):
            if str(mid) == module_text:
                return port
        return None

    def _peer_label(self, port: int) -> str:
        entry = self.neighbor_table.get(port)
        return str(entry[0]) if entry else f"port:{port}"


class _BadArgs(Exception):
    pass


def _decode_b64(text: str) -> bytes:
    try:
        return base64.b64decode(text, validate=True)
    except binascii.Error:
        raise _BadArgs("bad base64") from None


_COMMANDS: dict[str, Callable] = {
    "REGISTER": ServiceNode._cmd_register,
    "STATE": ServiceNode._cmd_state,
    "NEIGHBORS": ServiceNode._cmd_neighbors,
    "SEND": ServiceNode._cmd_send,
    "BCAST": ServiceNode._cmd_bcast,
    "PUTFILE": ServiceNode._cmd_putfile,
    "EXEC": ServiceNode._cmd_exec,
    "START": ServiceNode._cmd_start,
    "VERSION": ServiceNode._cmd_version,
    "ID": ServiceNode._cmd_id,
}
