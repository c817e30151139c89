"""Message codec, chunking, and reassembly."""

import random

import pytest
from hypothesis import given, strategies as st

from modbot import messages as m
from modbot.link import LinkConfig, MAX_PAYLOAD, PortProtocol, TicketState
from modbot.sim import Scheduler, US_PER_MS


def test_module_id_basics():
    assert str(m.ROOT_ID) == "0"
    assert m.ModuleId.parse("0.3.1").path == (0, 3, 1)
    assert str(m.ModuleId.parse("0").child(3)) == "0.3"
    assert str(m.ModuleId.parse("0.3").child(1)) == "0.3.1"
    assert m.ModuleId.parse("").unassigned
    with pytest.raises(m.ProtocolError):
        m.ModuleId.parse("0.x")


def _roundtrip(msg: m.ServiceMessage) -> m.ServiceMessage:
    return m.decode_message(m.encode_message(msg))


def test_message_roundtrip_every_kind():
    samples = [
        m.ServiceMessage(m.Kind.HELLO, m.ROOT_ID, None, m.version_body(3)),
        m.ServiceMessage(m.Kind.APPDATA, m.ModuleId.parse("0.1"), "ctl",
                         m.appdata_body("src", 7, b"\x00\x01payload")),
        m.ServiceMessage(m.Kind.APPDATA, m.ROOT_ID, None, m.appdata_status_body(7, False)),
        m.ServiceMessage(m.Kind.BCAST, m.ROOT_ID, None, m.bcast_body("app", b"data")),
        m.ServiceMessage(m.Kind.STATE_REQ, m.ROOT_ID, None, m.state_req_body(1)),
        m.ServiceMessage(m.Kind.STATE_REP, m.ROOT_ID, None, m.state_rep_body(1, "center=EAST_WEST")),
        m.ServiceMessage(m.Kind.VERSION_ANNOUNCE, m.ModuleId(()), None, m.version_body(0)),
        m.ServiceMessage(m.Kind.CODE_CHUNK, m.ROOT_ID, None, m.chunk_body(9, 0, 2, "2", b"blob")),
        m.ServiceMessage(m.Kind.FILE_CHUNK, m.ROOT_ID, None, m.chunk_body(9, 1, 2, "a.role", b"text")),
        m.ServiceMessage(m.Kind.EXEC, m.ROOT_ID, None, m.request_body(4, "STATE")),
        m.ServiceMessage(m.Kind.START, m.ROOT_ID, None, m.request_body(4, "OK started", reply=True)),
        m.ServiceMessage(m.Kind.ID_ASSIGN, m.ROOT_ID, None, m.id_assign_body(2, m.ModuleId.parse("0.3"))),
    ]
    for msg in samples:
        back = _roundtrip(msg)
        assert back == msg


def test_body_parsers():
    assert m.parse_version(m.version_body(9)) == 9
    assert m.parse_appdata(m.appdata_body("a", 3, b"xy")) == ("data", "a", 3, b"xy")
    assert m.parse_appdata(m.appdata_status_body(3, True)) == ("status", 3, True)
    assert m.parse_bcast(m.bcast_body("a", b"zz")) == ("a", b"zz")
    assert m.parse_state_rep(m.state_rep_body(5, "ok")) == (5, "ok")
    assert m.parse_chunk(m.chunk_body(1, 0, 3, "f", b"d")) == (1, 0, 3, "f", b"d")
    assert m.parse_request(m.request_body(2, "line")) == (False, 2, "line")
    assert m.parse_id_assign(m.id_assign_body(2, m.ModuleId.parse("0.1"))) == (2, m.ModuleId.parse("0.1"))


def test_decode_rejects_malformed():
    with pytest.raises(m.ProtocolError):
        m.decode_message(b"")
    with pytest.raises(m.ProtocolError):
        m.decode_message(bytes([99, 0, 0]))  # unknown kind
    with pytest.raises(m.ProtocolError):
        m.decode_message(bytes([1, 200]))  # truncated pstr
    with pytest.raises(m.ProtocolError):
        m.parse_chunk(m.chunk_body(1, 0, 3, "f", b"")[:6])


@given(st.binary(min_size=0, max_size=4096))
def test_split_concat_identity(data):
    parts = m.split_for_link(data)
    assert all(len(p) <= MAX_PAYLOAD for p in parts)
    reasm = m.LinkReassembler()
    whole = None
    for part in parts:
        whole = reasm.feed(part)
    assert whole == data


def test_small_appdata_fits_one_link_frame():
    msg = m.ServiceMessage(m.Kind.APPDATA, m.ModuleId.parse("0.1"), "ctl",
                           m.appdata_body("app", 1, b"x" * 100))
    assert len(m.split_for_link(m.encode_message(msg))) == 1


def test_600_byte_chunk_body_takes_three_link_frames():
    body = m.chunk_body(1, 0, 1, "big.role", b"t" * 583)
    assert len(body) == 600
    msg = m.ServiceMessage(m.Kind.FILE_CHUNK, m.ModuleId.parse("0"), None, body)
    parts = m.split_for_link(m.encode_message(msg))
    assert len(parts) == 3
    reasm = m.LinkReassembler()
    outcome = [reasm.feed(p) for p in parts]
    assert outcome[:2] == [None, None]
    assert m.decode_message(outcome[2]).body == body


def test_reassembler_resets_on_gap():
    parts = m.split_for_link(bytes(600))
    reasm = m.LinkReassembler()
    assert reasm.feed(parts[0]) is None
    assert reasm.feed(parts[2]) is None  # gap: chunk 1 missing
    assert reasm.resets == 1
    # A fresh message still reassembles after the reset.
    whole = None
    for part in m.split_for_link(b"recovered"):
        whole = reasm.feed(part)
    assert whole == b"recovered"


class _DeadPipe:
    def __init__(self):
        self.sent = 0

    def transmit(self, data: bytes) -> None:
        self.sent += 1


def test_message_ticket_fails_whole_message_and_cancels_siblings():
    scheduler = Scheduler()
    pipe = _DeadPipe()
    port = PortProtocol(scheduler, pipe.transmit, lambda data: None,
                        LinkConfig(ack_timeout_ms=10, max_retries=1))
    msg = m.ServiceMessage(m.Kind.FILE_CHUNK, m.ROOT_ID, None,
                           m.chunk_body(1, 0, 1, "f", bytes(1000)))
    ticket = m.send_message(port, msg)
    scheduler.run_until(10_000 * US_PER_MS)
    assert ticket.state is TicketState.FAILED
    # Only the first chunk was ever transmitted (initial + 1 retry);
    # the remaining chunks were withdrawn unsent.
    assert pipe.sent == 2


def test_message_ticket_delivers_over_pipe():
    scheduler = Scheduler()
    delivered = []

    class _Loop:
        def __init__(self):
            self.peer = None

        def transmit(self, data: bytes) -> None:
            scheduler.call_after(1000, lambda: self.peer.on_bytes(data))

    down, up = _Loop(), _Loop()
    port_a = PortProtocol(scheduler, down.transmit, lambda d: None)
    port_b = PortProtocol(scheduler, up.transmit, delivered.append)
    down.peer = port_b
    up.peer = port_a
    payload = random.Random(5).randbytes(5000)
    msg = m.ServiceMessage(m.Kind.FILE_CHUNK, m.ROOT_ID, None,
                           m.chunk_body(1, 0, 1, "f", payload))
    ticket = m.send_message(port_a, msg)
    scheduler.run_until(60_000 * US_PER_MS)
    assert ticket.state is TicketState.DELIVERED
    reasm = m.LinkReassembler()
    whole = None
    for part in delivered:
        whole = reasm.feed(part) or whole
    assert m.decode_message(whole).body == msg.body
