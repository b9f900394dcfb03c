"""Byte-accounted TCP and QUIC transport models over the packet kernel."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from . import _kernel
from .simcore import DEFAULT_EVENT_BUDGET, US_PER_MS

ETHERNET_HEADER = 14
IP_HEADER = 20
TCP_HEADER = 32  # 20 fixed + 12 option bytes, on every segment
UDP_HEADER = 8
TCP_PATH_MTU = 1514
QUIC_PATH_MTU = 1242

INITIAL_CWND_SEGMENTS = 10
INITIAL_SSTHRESH = 64 * 1024
MIN_RTO_US = 200 * US_PER_MS
DUP_THRESHOLD = 3

TLS_RECORD_PAYLOAD = 16 * 1024
TLS_RECORD_OVERHEAD = 29
TLS_EXTRA_HANDSHAKE_RTTS = 2
# Handshake flight payloads (bytes). Server: ServerHello+Certificate+Done, then
# ChangeCipherSpec+Finished. Client: ClientHello, then KeyExchange+CCS+Finished.
TLS_SERVER_FLIGHTS = (3000, 51)
TLS_CLIENT_FLIGHTS = (200, 180)

QUIC_CONTROL_FRAME = 8
QUIC_CONTROL_INTERVAL_US = 80 * US_PER_MS


class StackKind(enum.Enum):
    HTTP2_TCP = "h2-tcp"
    HTTP2_SSL = "h2-ssl"
    HTTP1_QUIC = "h1-quic"
    SPDY_QUIC = "spdy-quic"

    @property
    def is_quic(self) -> bool:
        return self in (StackKind.HTTP1_QUIC, StackKind.SPDY_QUIC)

    @property
    def app_protocol(self) -> str:
        return {
            StackKind.HTTP2_TCP: "http2",
            StackKind.HTTP2_SSL: "http2",
            StackKind.HTTP1_QUIC: "http1",
            StackKind.SPDY_QUIC: "spdy",
        }[self]

    @property
    def label(self) -> str:
        return {
            StackKind.HTTP2_TCP: "HTTP/2.0 over TCP",
            StackKind.HTTP2_SSL: "HTTP/2.0 over SSL",
            StackKind.HTTP1_QUIC: "HTTP/1.1 over QUIC",
            StackKind.SPDY_QUIC: "SPDY over QUIC",
        }[self]

    @classmethod
    def parse(cls, name: str) -> StackKind:
        for kind in cls:
            if name in (kind.value, kind.name):
                return kind
        raise ValueError(f"unknown stack {name!r}; expected one of {[k.value for k in cls]}")


ALL_STACKS = tuple(StackKind)


@dataclass(frozen=True)
class QuicHeaderMode:
    """Which optional public-header fields a QUIC packet carries."""

    connection_id: int = 8
    version: bool = False
    sequence: int = 4
    private_flags: bool = True


QUIC_MINIMAL = QuicHeaderMode(connection_id=0, version=False, sequence=1, private_flags=False)
QUIC_MAXIMAL = QuicHeaderMode(connection_id=8, version=True, sequence=6, private_flags=False)
QUIC_DATA = QuicHeaderMode()

_CID_SIZES = (0, 1, 4, 8)
_SEQ_SIZES = (1, 2, 4, 6)


def quic_header_len(mode: QuicHeaderMode = QUIC_DATA, first_packet: bool = False) -> int:
    """Public-header length: 1 flags byte + connection id + version + sequence (+ private flags).

    ``first_packet`` adds the 4 version bytes that only the first packet of a
    connection carries.
    """
    if mode.connection_id not in _CID_SIZES:
        raise ValueError(f"connection id length must be one of {_CID_SIZES}")
    if mode.sequence not in _SEQ_SIZES:
        raise ValueError(f"sequence length must be one of {_SEQ_SIZES}")
    n = 1 + mode.connection_id + mode.sequence
    if mode.version or first_packet:
        n += 4
    if mode.private_flags:
        n += 1
    if not 2 <= n <= 19:
        raise ValueError(f"header mode gives {n} bytes, outside 2..19")
    return n


@dataclass(frozen=True)
class StackConfig:
    kind: StackKind
    ethernet: int = ETHERNET_HEADER
    ip: int = IP_HEADER
    transport_header: int = TCP_HEADER
    mtu: int = TCP_PATH_MTU
    handshake_rtts: int = 1
    quic_mode: QuicHeaderMode | None = None
    tls: bool = False
    quic_control_interval_us: int = 0

    @property
    def lower_header(self) -> int:
        """Ethernet + IP + TCP/UDP bytes per packet."""
        return self.ethernet + self.ip + self.transport_header

    @property
    def quic_header(self) -> int:
        return quic_header_len(self.quic_mode) if self.quic_mode else 0

    @property
    def first_packet_extra(self) -> int:
        if not self.quic_mode:
            return 0
        return quic_header_len(self.quic_mode, first_packet=True) - self.quic_header

    @property
    def data_header(self) -> int:
        return self.lower_header + self.quic_header

    @property
    def mss(self) -> int:
        """Largest payload of a data packet."""
        return self.mtu - self.data_header

    @property
    def ack_bytes(self) -> int:
        return self.data_header

    @property
    def control_bytes(self) -> int:
        return self.data_header + QUIC_CONTROL_FRAME if self.quic_mode else 0

    @property
    def min_packet(self) -> int:
        if self.quic_mode:
            return self.lower_header + quic_header_len(QUIC_MINIMAL)
        return self.lower_header


def stack_config(kind: StackKind | str) -> StackConfig:
    if isinstance(kind, str):
        kind = StackKind.parse(kind)
    if kind.is_quic:
        return StackConfig(
            kind,
            transport_header=UDP_HEADER,
            mtu=QUIC_PATH_MTU,
            handshake_rtts=0,
            quic_mode=QUIC_DATA,
            quic_control_interval_us=QUIC_CONTROL_INTERVAL_US,
        )
    if kind is StackKind.HTTP2_SSL:
        return StackConfig(kind, handshake_rtts=1 + TLS_EXTRA_HANDSHAKE_RTTS, tls=True)
    return StackConfig(kind)


def analytic_stack_overhead(stack: StackConfig) -> float:
    """Per-packet share of lower-layer headers at full MTU (framing layers excluded)."""
    return stack.lower_header / stack.mtu


def tls_wire_bytes(nbytes: int) -> int:
    """Application bytes after TLS record framing (29 B per record of <= 16 KiB)."""
    if nbytes <= 0:
        return 0
    return nbytes + TLS_RECORD_OVERHEAD * math.ceil(nbytes / TLS_RECORD_PAYLOAD)


def _flight_wire_bytes(payload: int, stack: StackConfig) -> int:
    packets = math.ceil(payload / stack.mss)
    return payload + packets * stack.data_header


def handshake_bytes(stack: StackConfig) -> tuple[int, int]:
    """Wire bytes received by (client, server) while the connection is set up."""
    if stack.quic_mode:
        return stack.min_packet, stack.min_packet
    client = server = stack.lower_header  # SYN-ACK / SYN
    if stack.tls:
        client += sum(_flight_wire_bytes(p, stack) for p in TLS_SERVER_FLIGHTS)
        server += sum(_flight_wire_bytes(p, stack) for p in TLS_CLIENT_FLIGHTS)
    return client, server


class PacketKind(enum.Enum):
    DATA = _kernel.PKT_DATA
    ACK = _kernel.PKT_ACK
    CONTROL = _kernel.PKT_CTRL


@dataclass(frozen=True)
class WirePacket:
    time_us: int
    sender: int  # 0 client, 1 server
    kind: PacketKind
    header_bytes: int
    payload_bytes: int
    stream_id: int | None
    seq: int | None
    offset: int | None
    arrival_us: int | None

    @property
    def total_bytes(self) -> int:
        return self.header_bytes + self.payload_bytes

    @property
    def direction(self) -> str:
        return "up" if self.sender == _kernel.CLIENT else "down"


@dataclass
class Connection:
    """One transport connection: kernel engine plus stream-id bookkeeping.

    TCP stacks carry a single byte stream (id 0). QUIC stacks open any number
    of independent streams.
    """

    stack: StackConfig
    engine: object
    state: str = "CLOSED"
    ready_at: int = 0
    _slots: dict[int, int] = field(default_factory=dict)
    _ids: list[int] = field(default_factory=list)
    _payloads: dict[tuple[int, int], bytearray] = field(default_factory=dict)
    _log_cursor: int = 0

    @property
    def is_quic(self) -> bool:
        return self.stack.quic_mode is not None

    @property
    def now(self) -> int:
        return self.engine.now

    def open_stream(self, stream_id: int) -> int:
        if stream_id in self._slots:
            return self._slots[stream_id]
        if not self.is_quic and stream_id != 0:
            raise KeyError(f"TCP carries only stream 0, got {stream_id}")
        slot = self.engine.add_stream()
        self._slots[stream_id] = slot
        self._ids.append(stream_id)
        return slot

    def slot(self, stream_id: int) -> int:
        try:
            return self._slots[stream_id]
        except KeyError:
            raise KeyError(f"unknown stream {stream_id}") from None

    def stream_id(self, slot: int) -> int:
        return self._ids[slot]

    def send_stream_data(self, stream_id: int, payload: bytes | int,
                         sender: int = _kernel.SERVER) -> list[WirePacket]:
        """Queue payload on a stream; return the packets the window let out immediately.

        The rest leave as acks open the window. ``payload`` may be real bytes
        (kept so delivery can be checked) or just a length.
        """
        if self.state != "OPEN":
            raise RuntimeError("connection is not open")
        slot = self.slot(stream_id)
        if isinstance(payload, int):
            n = payload
        else:
            n = len(payload)
            self._payloads.setdefault((sender, stream_id), bytearray()).extend(payload)
        self.engine.write(sender, slot, n)
        return self.new_packets()

    def new_packets(self) -> list[WirePacket]:
        log = self.engine.packet_log
        out = [self._wire(entry) for entry in log[self._log_cursor:]]
        self._log_cursor = len(log)
        return out

    def wire_packets(self) -> list[WirePacket]:
        return [self._wire(entry) for entry in self.engine.packet_log]

    def _wire(self, entry) -> WirePacket:
        t, sender, kind, hdr, payload, slot, pn, off, arr = entry
        if kind == _kernel.PKT_CTRL:
            # the kernel logs control packets as one lump; split off the frame
            payload = hdr - self.stack.data_header
            hdr = self.stack.data_header
        return WirePacket(
            t, sender, PacketKind(kind), hdr, payload,
            self.stream_id(slot) if slot >= 0 else None,
            pn if pn >= 0 else None,
            off if off >= 0 else None,
            arr if arr >= 0 else None,
        )

    def delivered_bytes(self, stream_id: int, receiver: int = _kernel.CLIENT) -> int:
        return self.engine.delivered(receiver, self.slot(stream_id))

    def received_payload(self, stream_id: int, receiver: int = _kernel.CLIENT) -> bytes:
        """Bytes handed to the receiving application, rebuilt from the in-order delivery log.

        Raises if the log shows a gap or reordering.
        """
        slot = self.slot(stream_id)
        sender = receiver ^ 1
        src = self._payloads.get((sender, stream_id), bytearray())
        out = bytearray()
        for _, r, s, start, end in self.engine.delivery_log:
            if r != receiver or s != slot:
                continue
            if start != len(out):
                raise AssertionError(f"delivery gap on stream {stream_id}: {start} != {len(out)}")
            out.extend(src[start:end])
        return bytes(out)

    # congestion control passthroughs
    def cwnd(self, side: int = _kernel.SERVER) -> int:
        return self.engine.stats(side)["cwnd"]

    def ssthresh(self, side: int = _kernel.SERVER) -> int:
        return self.engine.stats(side)["ssthresh"]

    def run_until_idle(self) -> int:
        return self.engine.run_until_idle()


def make_engine(stack: StackConfig, uplink, downlink, *, log_packets: bool = False,
                log_deliveries: bool = False, max_events: int = DEFAULT_EVENT_BUDGET,
                backend=None):
    impl = backend or _kernel
    rtt = uplink.delay + downlink.delay
    return impl.Engine(
        uplink, downlink,
        mss=stack.mss,
        data_header=stack.data_header,
        first_extra=stack.first_packet_extra,
        ack_bytes=stack.ack_bytes,
        ctrl_bytes=stack.control_bytes,
        ctrl_interval_us=stack.quic_control_interval_us,
        init_cwnd=INITIAL_CWND_SEGMENTS * stack.mss,
        init_ssthresh=INITIAL_SSTHRESH,
        min_rto_us=MIN_RTO_US,
        init_srtt_us=rtt,
        dupthresh=DUP_THRESHOLD,
        log_packets=log_packets,
        log_deliveries=log_deliveries,
        max_events=max_events,
    )


def open_connection(stack: StackConfig, uplink, downlink, now: int = 0, **engine_kw) -> tuple[Connection, int]:
    """Create the connection and return it with the time it can carry the first request.

    TCP costs one RTT, TLS two more, QUIC none. Handshake bytes are charged to
    the receive counters; their timing is folded into the ready time.
    """
    engine = make_engine(stack, uplink, downlink, **engine_kw)
    conn = Connection(stack, engine, state="HANDSHAKING")
    rtt = uplink.delay + downlink.delay
    ready = now + stack.handshake_rtts * rtt
    client_rx, server_rx = handshake_bytes(stack)
    engine.account_rx(_kernel.CLIENT, client_rx)
    engine.account_rx(_kernel.SERVER, server_rx)
    engine.advance_to(ready)
    conn.state = "OPEN"
    conn.ready_at = ready
    if not conn.is_quic:
        conn.open_stream(0)
    return conn, ready


def congestion_on_ack(conn: Connection, acked_bytes: int, side: int = _kernel.SERVER) -> None:
    conn.engine.cc_on_ack(side, acked_bytes)


def congestion_on_loss(conn: Connection, side: int = _kernel.SERVER) -> None:
    conn.engine.cc_on_loss(side)
