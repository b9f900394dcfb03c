"""Application framing for the four stacks: HTTP/1.1 text, HTTP/2 frames, SPDY over QUIC.

Header blocks have fixed modeled sizes. HTTP/1.1 messages are real text;
HTTP/2 and SPDY header blocks are opaque fixed-size blobs standing in for
compressed headers. Every encoder has a decoder so byte round trips can be
checked.
"""

from __future__ import annotations

import enum
import hashlib
import math
import struct
from dataclasses import dataclass, field

from .transport import StackKind

MAX_PATH_LEN = 2048
HTTP1_REQUEST_TEMPLATE = 160
HTTP1_RESPONSE_HEADER = 256
H2_FRAME_HEADER = 8
H2_MAX_FRAME_PAYLOAD = 16_384
REQUEST_HEADER_BLOCK = 48
RESPONSE_HEADER_BLOCK = 64
MAX_STREAM_ID = 2**31 - 1
MAX_PIPELINE_DEPTH = 8

_HOST = "media.dashsim.test"
_REQ_HEAD = "GET "
_REQ_TAIL_FMT = " HTTP/1.1\r\nHost: {host}\r\nUser-Agent: {ua}\r\nAccept: */*\r\nConnection: keep-alive\r\n\r\n"


def _request_tail() -> str:
    base = len(_REQ_HEAD) + len(_REQ_TAIL_FMT.format(host=_HOST, ua=""))
    ua_len = HTTP1_REQUEST_TEMPLATE - base
    ua = ("dashsim-player/1.0 " + "x" * ua_len)[:ua_len]
    return _REQ_TAIL_FMT.format(host=_HOST, ua=ua)


_REQ_TAIL = _request_tail()
assert len(_REQ_HEAD) + len(_REQ_TAIL) == HTTP1_REQUEST_TEMPLATE


class ProtocolError(ValueError):
    pass


def _check_path(path: str) -> bytes:
    if not path.startswith("/"):
        raise ProtocolError(f"path must start with '/', got {path!r}")
    raw = path.encode("ascii")
    if len(raw) > MAX_PATH_LEN:
        raise ProtocolError(f"path of {len(raw)} bytes exceeds {MAX_PATH_LEN}")
    return raw


# -- HTTP/1.1 -----------------------------------------------------------------

def http1_request(path: str) -> bytes:
    return _REQ_HEAD.encode() + _check_path(path) + _REQ_TAIL.encode()


def parse_http1_request(data: bytes) -> str:
    head = _REQ_HEAD.encode()
    tail = _REQ_TAIL.encode()
    if not data.startswith(head) or not data.endswith(tail):
        raise ProtocolError("not a canonical request")
    return data[len(head):len(data) - len(tail)].decode("ascii")


def http1_response_header(content_length: int, status: int = 200) -> bytes:
    """Status line plus headers, padded to exactly 256 bytes."""
    lines = (
        f"HTTP/1.1 {status} {'OK' if status == 200 else 'Error'}\r\n"
        f"Content-Type: video/mp4\r\n"
        f"Content-Length: {content_length}\r\n"
        f"Connection: keep-alive\r\n"
        f"X-Pad: "
    )
    pad = HTTP1_RESPONSE_HEADER - len(lines) - 4
    if pad < 0:
        raise ProtocolError("response header does not fit the fixed block")
    return (lines + "-" * pad + "\r\n\r\n").encode("ascii")


def parse_http1_response(data: bytes) -> tuple[ResponseMeta, bytes]:
    head, sep, body = data.partition(b"\r\n\r\n")
    if not sep:
        raise ProtocolError("incomplete response header")
    lines = head.decode("ascii").split("\r\n")
    status = int(lines[0].split()[1])
    length = None
    for line in lines[1:]:
        k, _, v = line.partition(":")
        if k.strip().lower() == "content-length":
            length = int(v)
    if length is None:
        raise ProtocolError("missing Content-Length")
    meta = ResponseMeta(status, length, len(head) + len(sep))
    if len(body) != length:
        raise ProtocolError(f"body is {len(body)} bytes, declared {length}")
    return meta, body


# -- modeled compressed header blocks -----------------------------------------

def request_header_block(path: str) -> bytes:
    """48-byte stand-in for a compressed request header block (method, path digest)."""
    raw = _check_path(path)
    digest = hashlib.sha256(raw).digest()
    block = b"GET\x00" + struct.pack(">H", len(raw)) + digest
    return block.ljust(REQUEST_HEADER_BLOCK, b"\x00")


def response_header_block(content_length: int, status: int = 200) -> bytes:
    block = struct.pack(">HQ", status, content_length)
    return block.ljust(RESPONSE_HEADER_BLOCK, b"\x00")


def parse_response_header_block(block: bytes) -> ResponseMeta:
    if len(block) != RESPONSE_HEADER_BLOCK:
        raise ProtocolError(f"header block must be {RESPONSE_HEADER_BLOCK} bytes")
    status, length = struct.unpack_from(">HQ", block)
    return ResponseMeta(status, length, RESPONSE_HEADER_BLOCK)


# -- HTTP/2 frames --------------------------------------------------------------

class FrameType(enum.IntEnum):
    DATA = 0x0
    HEADERS = 0x1


FLAG_END_STREAM = 0x1
FLAG_END_HEADERS = 0x4

_FRAME = struct.Struct(">HBBI")  # length, type, flags, stream id
assert _FRAME.size == H2_FRAME_HEADER


@dataclass(frozen=True)
class Http2Frame:
    type: FrameType
    flags: int
    stream_id: int
    payload: bytes = b""

    def __post_init__(self) -> None:
        if len(self.payload) > H2_MAX_FRAME_PAYLOAD:
            raise ProtocolError(f"frame payload {len(self.payload)} exceeds {H2_MAX_FRAME_PAYLOAD}")
        if not 0 <= self.stream_id <= MAX_STREAM_ID:
            raise ProtocolError(f"stream id {self.stream_id} out of range")

    @property
    def length(self) -> int:
        return len(self.payload)

    @property
    def wire_size(self) -> int:
        return H2_FRAME_HEADER + self.length

    def encode(self) -> bytes:
        return _FRAME.pack(self.length, self.type, self.flags, self.stream_id) + self.payload


def decode_frames(data: bytes) -> list[Http2Frame]:
    frames = []
    pos = 0
    while pos < len(data):
        if len(data) - pos < H2_FRAME_HEADER:
            raise ProtocolError("truncated frame header")
        length, ftype, flags, sid = _FRAME.unpack_from(data, pos)
        pos += H2_FRAME_HEADER
        if len(data) - pos < length:
            raise ProtocolError("truncated frame payload")
        frames.append(Http2Frame(FrameType(ftype), flags, sid, bytes(data[pos:pos + length])))
        pos += length
    return frames


def h2_data_frames(stream_id: int, body: bytes) -> list[Http2Frame]:
    """Split a body into DATA frames of at most 16 KiB; an empty body gives one empty frame."""
    if not body:
        return [Http2Frame(FrameType.DATA, FLAG_END_STREAM, stream_id)]
    n = math.ceil(len(body) / H2_MAX_FRAME_PAYLOAD)
    out = []
    for i in range(n):
        chunk = body[i * H2_MAX_FRAME_PAYLOAD:(i + 1) * H2_MAX_FRAME_PAYLOAD]
        out.append(Http2Frame(FrameType.DATA, FLAG_END_STREAM if i == n - 1 else 0, stream_id, chunk))
    return out


def h2_data_frame_count(body_len: int) -> int:
    return max(1, math.ceil(body_len / H2_MAX_FRAME_PAYLOAD))


# -- messages -------------------------------------------------------------------

@dataclass(frozen=True)
class ResponseMeta:
    status: int
    content_length: int
    header_bytes: int


@dataclass(frozen=True)
class SpdyQuicMessage:
    """SPDY header block followed directly by the body on one QUIC stream."""

    header_block: bytes
    body: bytes
    stream_id: int

    def encode(self) -> bytes:
        return self.header_block + self.body


def decode_spdy_response(data: bytes, stream_id: int) -> SpdyQuicMessage:
    block = data[:RESPONSE_HEADER_BLOCK]
    meta = parse_response_header_block(block)
    body = data[RESPONSE_HEADER_BLOCK:]
    if len(body) != meta.content_length:
        raise ProtocolError(f"body is {len(body)} bytes, declared {meta.content_length}")
    return SpdyQuicMessage(block, body, stream_id)


@dataclass(frozen=True)
class FramingPlan:
    """Byte accounting for one encoded message."""

    total_bytes: int
    header_bytes: int   # HTTP header text or header block
    framing_bytes: int  # per-frame headers (HTTP/2 only)
    body_bytes: int
    frame_count: int = 0

    def __post_init__(self) -> None:
        assert self.total_bytes == self.header_bytes + self.framing_bytes + self.body_bytes


def encode_request(kind: StackKind, url_path: str) -> FramingPlan:
    proto = kind.app_protocol
    if proto == "http1":
        n = len(http1_request(url_path))
        return FramingPlan(n, n, 0, 0)
    _check_path(url_path)
    if proto == "http2":
        return FramingPlan(H2_FRAME_HEADER + REQUEST_HEADER_BLOCK, REQUEST_HEADER_BLOCK, H2_FRAME_HEADER, 0, 1)
    return FramingPlan(REQUEST_HEADER_BLOCK, REQUEST_HEADER_BLOCK, 0, 0)


def encode_response_body(kind: StackKind, body_len: int) -> FramingPlan:
    if body_len < 0:
        raise ValueError("body length must be >= 0")
    proto = kind.app_protocol
    if proto == "http1":
        return FramingPlan(HTTP1_RESPONSE_HEADER + body_len, HTTP1_RESPONSE_HEADER, 0, body_len)
    if proto == "http2":
        frames = 1 + h2_data_frame_count(body_len)
        framing = H2_FRAME_HEADER * frames
        return FramingPlan(RESPONSE_HEADER_BLOCK + framing + body_len, RESPONSE_HEADER_BLOCK, framing, body_len, frames)
    return FramingPlan(RESPONSE_HEADER_BLOCK + body_len, RESPONSE_HEADER_BLOCK, 0, body_len)


def request_bytes(kind: StackKind, url_path: str, stream_id: int = 1) -> bytes:
    """Actual request bytes as put on the transport stream."""
    proto = kind.app_protocol
    if proto == "http1":
        return http1_request(url_path)
    block = request_header_block(url_path)
    if proto == "http2":
        return Http2Frame(FrameType.HEADERS, FLAG_END_HEADERS | FLAG_END_STREAM, stream_id, block).encode()
    return block


def response_bytes(kind: StackKind, body: bytes, stream_id: int = 1) -> bytes:
    proto = kind.app_protocol
    if proto == "http1":
        return http1_response_header(len(body)) + body
    if proto == "http2":
        hdr = Http2Frame(FrameType.HEADERS, FLAG_END_HEADERS, stream_id, response_header_block(len(body)))
        return hdr.encode() + b"".join(f.encode() for f in h2_data_frames(stream_id, body))
    return SpdyQuicMessage(response_header_block(len(body)), body, stream_id).encode()


def decode_response(kind: StackKind, data: bytes, stream_id: int = 1) -> tuple[ResponseMeta, bytes]:
    proto = kind.app_protocol
    if proto == "http1":
        return parse_http1_response(data)
    if proto == "http2":
        frames = decode_frames(data)
        if not frames or frames[0].type is not FrameType.HEADERS:
            raise ProtocolError("response must start with HEADERS")
        meta = parse_response_header_block(frames[0].payload)
        body = b"".join(f.payload for f in frames[1:] if f.type is FrameType.DATA)
        if len(body) != meta.content_length:
            raise ProtocolError(f"body is {len(body)} bytes, declared {meta.content_length}")
        return meta, body
    msg = decode_spdy_response(data, stream_id)
    return parse_response_header_block(msg.header_block), msg.body


# -- stream ids -------------------------------------------------------------------

@dataclass
class StreamAllocator:
    """Client-initiated stream ids: odd and increasing, or always 0 for HTTP/1.1 on a TCP byte stream."""

    app_protocol: str = "http2"
    over_quic: bool = False
    _next: int = field(default=1)

    @classmethod
    def for_stack(cls, kind: StackKind) -> StreamAllocator:
        return cls(kind.app_protocol, kind.is_quic)

    def next_stream_id(self) -> int:
        if self.app_protocol == "http1" and not self.over_quic:
            return 0
        sid = self._next
        if sid > MAX_STREAM_ID:
            raise ProtocolError("stream id space exhausted")
        self._next = sid + 2
        return sid


def next_stream_id(allocator: StreamAllocator) -> int:
    return allocator.next_stream_id()
