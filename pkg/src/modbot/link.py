"""Reliable point-to-point link: framing, CRC, and stop-and-wait ARQ.

Wire frame, bit exact:

    +------+------+-----+-------------+---------+--------+
    | 0x7E | type | seq | len (2, BE) | payload | crc    |
    | 1 B  | 1 B  | 1 B | 2 B         | 0-255 B | 2 B BE |
    +------+------+-----+-------------+---------+--------+

type: 0x01 = DATA, 0x02 = ACK. crc: CRC-16/CCITT-FALSE (poly 0x1021, init
0xFFFF, no reflection, no final xor) over type..payload. There is no byte
stuffing; a receiver resynchronizes by scanning for 0x7E and validating
length and CRC.

One PortProtocol instance runs per module port. The sender keeps at most
one unacknowledged DATA frame outstanding, retransmits it on timeout, and
gives up after max_retries, reporting the failure on the send ticket. The
receiver acknowledges every valid DATA frame and delivers a payload upward
only when its sequence number is the expected one, so duplicates caused by
lost ACKs are re-acknowledged but never re-delivered.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Optional

from .sim import Scheduler, Timer, US_PER_MS

START_BYTE = 0x7E
MAX_PAYLOAD = 255
_MIN_FRAME = 7  # start + type + seq + len16 + crc16


class LinkError(Exception):
    pass


class EncodingError(LinkError):
    pass


class FrameError(LinkError):
    """A byte buffer did not yield the frame it was asked for."""


class ChecksumError(FrameError):
    pass


class NeedMoreData(FrameError):
    pass


class FrameType(IntEnum):
    DATA = 0x01
    ACK = 0x02


def _build_crc_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) if crc & 0x8000 else (crc << 1)
            crc &= 0xFFFF
        table.append(crc)
    return table


_CRC_TABLE = _build_crc_table()


def crc16(data: bytes) -> int:
    """CRC-16/CCITT-FALSE (table driven); crc16(b"123456789") == 0x29B1."""
    crc = 0xFFFF
    for byte in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[(crc >> 8) ^ byte]
    return crc


@dataclass
class Frame:
    frame_type: FrameType
    seq: int
    payload: bytes = b""

    def __post_init__(self):
        if not 0 <= self.seq <= 0xFF:
            raise EncodingError(f"seq out of range: {self.seq}")
        if self.frame_type is FrameType.ACK and self.payload:
            raise EncodingError("ACK frames carry no payload")


def encode_frame(frame: Frame) -> bytes:
    if len(frame.payload) > MAX_PAYLOAD:
        raise EncodingError(f"payload too long: {len(frame.payload)} > {MAX_PAYLOAD}")
    body = bytes([frame.frame_type, frame.seq]) + len(frame.payload).to_bytes(2, "big") + frame.payload
    return bytes([START_BYTE]) + body + crc16(body).to_bytes(2, "big")


def _parse_at(data: bytes, pos: int):
    """Try to read one frame starting at data[pos] (which must be 0x7E).

    Returns ("frame", Frame, end) | ("need", None, pos) | ("bad", None, pos).
    """
    if len(data) - pos < _MIN_FRAME:
        return "need", None, pos
    length = int.from_bytes(data[pos + 3:pos + 5], "big")
    end = pos + _MIN_FRAME + length
    if length > MAX_PAYLOAD:
        return "bad", None, pos
    if len(data) < end:
        return "need", None, pos
    body = data[pos + 1:end - 2]
    stored = int.from_bytes(data[end - 2:end], "big")
    if crc16(body) != stored:
        return "bad", None, pos
    ftype = body[0]
    if ftype not in (FrameType.DATA, FrameType.ACK):
        return "bad", None, pos
    frame = Frame(FrameType(ftype), body[1], bytes(body[4:]))
    return "frame", frame, end


def decode_frame(data: bytes) -> Frame:
    """Decode the first valid frame found in data.

    Leading garbage is skipped by scanning for the start byte. Raises
    ChecksumError if a framed candidate failed its CRC (or was otherwise
    malformed) and no valid frame followed; NeedMoreData if the buffer
    holds no complete frame candidate at all.
    """
    pos = 0
    saw_bad = False
    while True:
        pos = data.find(START_BYTE, pos)
        if pos < 0:
            if saw_bad:
                raise ChecksumError("corrupt frame")
            raise NeedMoreData("no frame start found")
        status, frame, end = _parse_at(data, pos)
        if status == "frame":
            return frame
        if status == "need":
            if saw_bad:
                raise ChecksumError("corrupt frame")
            raise NeedMoreData("incomplete frame")
        saw_bad = True
        pos += 1


class FrameDecoder:
    """Streaming decoder with resynchronization; feeds the port handler."""

    def __init__(self):
        self._buf = bytearray()
        self.crc_errors = 0
        self.junk_bytes = 0

    def feed(self, data: bytes) -> list[Frame]:
        self._buf.extend(data)
        frames: list[Frame] = []
        pos = 0
        buf = self._buf
        while True:
            start = buf.find(START_BYTE, pos)
            if start < 0:
                self.junk_bytes += len(buf) - pos
                pos = len(buf)
                break
            self.junk_bytes += start - pos
            status, frame, end = _parse_at(buf, start)
            if status == "frame":
                frames.append(frame)
                pos = end
            elif status == "need":
                pos = start
                break
            else:
                # False or corrupt start: count once, rescan one byte later.
                self.crc_errors += 1
                pos = start + 1
        del buf[:pos]
        return frames


@dataclass
class LinkConfig:
    """Per-port protocol parameters (times in simulated units)."""

    ack_timeout_ms: int = 100
    max_retries: int = 5
    per_byte_delay_us: int = 300

    def __post_init__(self):
        if self.ack_timeout_ms <= 0:
            raise ValueError("ack_timeout_ms must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")
        if self.per_byte_delay_us < 0:
            raise ValueError("per_byte_delay_us must be non-negative")


class TicketState(IntEnum):
    PENDING = 0
    DELIVERED = 1
    FAILED = 2


class SendTicket:
    """Resolves once: DELIVERED when the frame was acknowledged, FAILED
    when retries ran out or the send was cancelled before transmission."""

    def __init__(self):
        self.state = TicketState.PENDING
        self.transmissions = 0
        self._callbacks: list[Callable[["SendTicket"], None]] = []

    @property
    def done(self) -> bool:
        return self.state is not TicketState.PENDING

    def on_done(self, fn: Callable[["SendTicket"], None]) -> None:
        if self.done:
            fn(self)
        else:
            self._callbacks.append(fn)

    def _resolve(self, state: TicketState) -> None:
        if self.done:
            return
        self.state = state
        callbacks, self._callbacks = self._callbacks, []
        for fn in callbacks:
            fn(self)


@dataclass
class LinkStats:
    tx_data: int = 0
    tx_acks: int = 0
    rx_delivered: int = 0
    rx_duplicates: int = 0
    stale_acks: int = 0
    give_ups: int = 0


@dataclass
class _TxEntry:
    payload: bytes
    ticket: SendTicket
    seq: int = 0
    retries_used: int = 0
    timer: Optional[Timer] = None


class PortProtocol:
    """Stop-and-wait protocol instance for one module port.

    Outgoing payloads queue FIFO behind the single outstanding frame;
    delivery order on a healthy link therefore matches submission order.
    """

    def __init__(
        self,
        scheduler: Scheduler,
        transmit: Callable[[bytes], None],
        deliver: Callable[[bytes], None],
        config: LinkConfig | None = None,
    ):
        self._scheduler = scheduler
        self._transmit = transmit
        self._deliver = deliver
        self.config = config or LinkConfig()
        self.stats = LinkStats()
        self._decoder = FrameDecoder()
        self._queue: deque[_TxEntry] = deque()
        self._outstanding: _TxEntry | None = None
        self._next_seq = 0
        self._expected_seq = 0

    @property
    def crc_errors(self) -> int:
        return self._decoder.crc_errors

    def send(self, payload: bytes) -> SendTicket:
        if len(payload) > MAX_PAYLOAD:
            raise EncodingError(f"payload too long: {len(payload)}")
        entry = _TxEntry(payload=bytes(payload), ticket=SendTicket())
        self._queue.append(entry)
        self._pump()
        return entry.ticket

    def cancel(self, ticket: SendTicket) -> bool:
        """Withdraw a still-queued send; fails its ticket without sending."""
        for entry in self._queue:
            if entry.ticket is ticket:
                self._queue.remove(entry)
                ticket._resolve(TicketState.FAILED)
                return True
        return False

    def on_bytes(self, data: bytes) -> None:
        for frame in self._decoder.feed(data):
            self._handle_frame(frame)

    # internal

    def _pump(self) -> None:
        if self._outstanding is not None or not self._queue:
            return
        entry = self._queue.popleft()
        entry.seq = self._next_seq
        self._next_seq = (self._next_seq + 1) & 0xFF
        self._outstanding = entry
        self._transmit_entry(entry)

    def _transmit_entry(self, entry: _TxEntry) -> None:
        self._transmit(encode_frame(Frame(FrameType.DATA, entry.seq, entry.payload)))
        entry.ticket.transmissions += 1
        self.stats.tx_data += 1
        entry.timer = self._scheduler.call_after(
            self.config.ack_timeout_ms * US_PER_MS, self._on_timeout
        )

    def _on_timeout(self) -> None:
        entry = self._outstanding
        if entry is None:
            return
        if entry.retries_used >= self.config.max_retries:
            self._outstanding = None
            self.stats.give_ups += 1
            entry.ticket._resolve(TicketState.FAILED)
            self._pump()
        else:
            entry.retries_used += 1
            self._transmit_entry(entry)

    def _handle_frame(self, frame: Frame) -> None:
        if frame.frame_type is FrameType.ACK:
            entry = self._outstanding
            if entry is not None and entry.seq == frame.seq:
                if entry.timer is not None:
                    entry.timer.cancel()
                self._outstanding = None
                entry.ticket._resolve(TicketState.DELIVERED)
                self._pump()
            else:
                self.stats.stale_acks += 1
            return
        # DATA: always acknowledge, deliver only the expected sequence.
        self._transmit(encode_frame(Frame(FrameType.ACK, frame.seq)))
        self.stats.tx_acks += 1
        if frame.seq == self._expected_seq:
            self._expected_seq = (frame.seq + 1) & 0xFF
            self.stats.rx_delivered += 1
            self._deliver(frame.payload)
        else:
            self.stats.rx_duplicates += 1
