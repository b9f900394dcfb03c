import pytest
from hypothesis import given
from hypothesis import strategies as st

from dashsim import appproto
from dashsim.appproto import (
    FrameType,
    Http2Frame,
    ProtocolError,
    StreamAllocator,
    decode_frames,
    decode_response,
    encode_request,
    encode_response_body,
    next_stream_id,
    response_bytes,
)
from dashsim.transport import StackKind

paths = st.text(st.characters(min_codepoint=33, max_codepoint=126), max_size=300).map(lambda s: "/" + s)


def test_http1_request_sizes():
    assert encode_request(StackKind.HTTP1_QUIC, "/" + "a" * 39).total_bytes == 200
    assert encode_request(StackKind.HTTP1_QUIC, "/").total_bytes == 161
    with pytest.raises(ProtocolError):
        encode_request(StackKind.HTTP1_QUIC, "/" + "a" * 2048)


@given(paths)
def test_http1_request_round_trip(path):
    raw = appproto.http1_request(path)
    assert len(raw) == 160 + len(path)
    assert appproto.parse_http1_request(raw) == path


def test_h2_headers_frame_size():
    frame = Http2Frame(FrameType.HEADERS, 0, 1, bytes(120))
    assert frame.wire_size == len(frame.encode()) == 128
    plan = encode_request(StackKind.HTTP2_TCP, "/x")
    assert plan.total_bytes == 8 + 48 and plan.frame_count == 1


def test_h2_body_framing():
    plan = encode_response_body(StackKind.HTTP2_TCP, 32_768)
    assert plan.framing_bytes == 8 * 3  # HEADERS + 2 DATA
    assert plan.total_bytes == 32_768 + 16 + 8 + 64
    empty = encode_response_body(StackKind.HTTP2_SSL, 0)
    assert empty.frame_count == 2 and empty.framing_bytes == 16
    frames = appproto.h2_data_frames(1, b"")
    assert len(frames) == 1 and frames[0].wire_size == 8 and frames[0].flags & appproto.FLAG_END_STREAM


def test_spdy_no_chunk_framing():
    n, h = 123_456, appproto.RESPONSE_HEADER_BLOCK
    plan = encode_response_body(StackKind.SPDY_QUIC, n)
    assert plan.total_bytes == n + h and plan.framing_bytes == 0


def test_http1_response_header_fixed():
    for n in (0, 7, 1_125_000, 10**12):
        assert len(appproto.http1_response_header(n)) == 256
    assert encode_response_body(StackKind.HTTP1_QUIC, 1000).total_bytes == 1256


@pytest.mark.parametrize("kind", list(StackKind), ids=lambda k: k.value)
@given(body=st.binary(max_size=40_000))
def test_response_round_trip(kind, body):
    raw = response_bytes(kind, body, 5)
    assert len(raw) == encode_response_body(kind, len(body)).total_bytes
    meta, out = decode_response(kind, raw, 5)
    assert out == body and meta.content_length == len(body)


@given(st.binary(max_size=100_000))
def test_h2_framing_bytes_are_8_per_frame(body):
    raw = b"".join(f.encode() for f in appproto.h2_data_frames(3, body))
    frames = decode_frames(raw)
    assert len(raw) - len(body) == 8 * len(frames)
    assert all(f.length <= appproto.H2_MAX_FRAME_PAYLOAD for f in frames)


@given(st.integers(0, 5_000_000))
def test_spdy_framing_never_exceeds_h2(n):
    spdy = encode_response_body(StackKind.SPDY_QUIC, n)
    h2 = encode_response_body(StackKind.HTTP2_TCP, n)
    assert spdy.framing_bytes <= h2.framing_bytes


def test_request_bytes_match_plan():
    for kind in StackKind:
        raw = appproto.request_bytes(kind, "/bbb/100kbps/bunny_2s_00001.m4s")
        assert len(raw) == encode_request(kind, "/bbb/100kbps/bunny_2s_00001.m4s").total_bytes


def test_stream_ids():
    alloc = StreamAllocator.for_stack(StackKind.SPDY_QUIC)
    assert [next_stream_id(alloc) for _ in range(3)] == [1, 3, 5]
    tcp_h1 = StreamAllocator("http1", over_quic=False)
    assert {next_stream_id(tcp_h1) for _ in range(5)} == {0}
    full = StreamAllocator("http2", _next=appproto.MAX_STREAM_ID)
    assert next_stream_id(full) == appproto.MAX_STREAM_ID
    with pytest.raises(ProtocolError, match="exhausted"):
        next_stream_id(full)


def test_truncated_frames_rejected():
    raw = Http2Frame(FrameType.DATA, 0, 1, b"abc").encode()
    with pytest.raises(ProtocolError):
        decode_frames(raw[:-1])
    with pytest.raises(ProtocolError):
        decode_frames(raw[:5])


def test_oversized_frame_rejected():
    with pytest.raises(ProtocolError):
        Http2Frame(FrameType.DATA, 0, 1, bytes(16_385))
