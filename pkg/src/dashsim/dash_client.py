"""Adaptive client: sequential segment downloads, throughput estimator, level selection."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from . import appproto, netem, transport
from ._kernel import CLIENT, SERVER
from .media_catalog import MediaCatalog, Representation
from .simcore import DEFAULT_EVENT_BUDGET, SeededRng, SimulationError

DEFAULT_W1 = 0.7
DEFAULT_W2 = 1.3
DEFAULT_SAFETY_FACTOR = 1.0
# Server think time: 1 ms +- 1 ms, the only seeded quantity in a run.
JITTER_MAX_US = 2_000


@dataclass
class EstimatorState:
    b_prev: float = 0.0  # kbps
    w1: float = DEFAULT_W1
    w2: float = DEFAULT_W2

    def __post_init__(self) -> None:
        if not (self.w1 > 0 and self.w2 > 0):
            raise ValueError("weights must be > 0")
        if self.b_prev < 0:
            raise ValueError("b_prev must be >= 0")


def estimate_bandwidth(state: EstimatorState, b_m: float) -> float:
    """Weighted blend of the previous estimate and the last measurement; updates ``state``."""
    if b_m < 0:
        raise ValueError("b_m must be >= 0")
    b_n = (state.w1 * state.b_prev + state.w2 * b_m) / (state.w1 + state.w2)
    state.b_prev = b_n
    return b_n


def select_representation(catalog: MediaCatalog, b_n: float,
                          safety_factor: float = DEFAULT_SAFETY_FACTOR) -> Representation:
    """Highest bitrate not above ``safety_factor * b_n``; the lowest level if none fits."""
    budget = safety_factor * b_n
    chosen = catalog.representations[0]
    for rep in catalog.representations:
        if rep.bitrate_kbps <= budget:
            chosen = rep
        else:
            break
    return chosen


@dataclass(frozen=True)
class SegmentDownloadRecord:
    index: int
    level: int
    bitrate_kbps: int
    request_us: int
    first_byte_us: int
    complete_us: int
    media_bytes: int
    wire_bytes: int      # both directions, during the fetch
    wire_rx_bytes: int   # received by the client, during the fetch
    b_m_kbps: float
    b_n_kbps: float
    available_kbps: int  # link rate when the request went out

    def __post_init__(self) -> None:
        if not self.request_us <= self.first_byte_us <= self.complete_us:
            raise ValueError("record times out of order")


TRACE_COLUMNS = (
    "index", "level", "bitrate_kbps", "request_us", "complete_us",
    "media_bytes", "wire_bytes", "b_m_kbps", "b_n_kbps", "available_kbps",
)


@dataclass
class ClientSession:
    catalog: MediaCatalog
    stack: transport.StackConfig
    estimator: EstimatorState = field(default_factory=EstimatorState)
    records: list[SegmentDownloadRecord] = field(default_factory=list)
    start_level: int = 0
    scenario_id: str = ""
    seed: int = 0
    rtt_ms: float = 0
    start_us: int = 0
    ready_us: int = 0
    end_us: int = 0
    client_rx_bytes: int = 0
    client_tx_bytes: int = 0
    connection_count: int = 1
    transport_stats: dict = field(default_factory=dict)
    packets: list = field(default_factory=list)

    @property
    def media_bytes(self) -> int:
        return sum(r.media_bytes for r in self.records)

    @property
    def duration_us(self) -> int:
        return self.end_us - self.start_us


def trace_rows(session: ClientSession) -> list[tuple]:
    return [
        (r.index, r.level, r.bitrate_kbps, r.request_us, r.complete_us, r.media_bytes,
         r.wire_bytes, f"{r.b_m_kbps:.6f}", f"{r.b_n_kbps:.6f}", r.available_kbps)
        for r in session.records
    ]


def dumps_trace(session: ClientSession) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    w.writerows(trace_rows(session))
    return buf.getvalue()


def _kbps(nbytes: int, us: int) -> float:
    return nbytes * 8000 / us if us > 0 else 0.0


def run_session(
    catalog: MediaCatalog,
    stack: transport.StackConfig | transport.StackKind | str,
    trajectory: netem.BandwidthTrajectory | int,
    rtt_ms: float = 0,
    seed: int = 1,
    *,
    fixed_level: int | None = None,
    start_level: int = 0,
    segment_count: int | None = None,
    w1: float = DEFAULT_W1,
    w2: float = DEFAULT_W2,
    safety_factor: float = DEFAULT_SAFETY_FACTOR,
    measure: str = "media",
    pipeline_depth: int = 1,
    drop_period: int = 0,
    log_packets: bool = False,
    max_events: int = DEFAULT_EVENT_BUDGET,
    backend=None,
    scenario_id: str = "",
) -> ClientSession:
    """Stream ``segment_count`` segments over one connection and record every fetch.

    Both directions are shaped by ``trajectory`` with independent buckets. With
    ``fixed_level`` set the estimator still runs but never drives selection.
    ``measure`` picks whether b_m counts media bytes or received wire bytes.
    """
    if not isinstance(stack, transport.StackConfig):
        stack = transport.stack_config(stack)
    if measure not in ("media", "wire"):
        raise ValueError("measure must be 'media' or 'wire'")
    if not 1 <= pipeline_depth <= appproto.MAX_PIPELINE_DEPTH:
        raise ValueError(f"pipeline depth must be 1..{appproto.MAX_PIPELINE_DEPTH}")
    if isinstance(trajectory, int):
        trajectory = netem.BandwidthTrajectory.constant(trajectory)
    n_segments = catalog.segment_count if segment_count is None else segment_count
    if not 1 <= n_segments <= catalog.segment_count:
        raise ValueError(f"segment_count must be 1..{catalog.segment_count}")
    for lvl in (start_level, fixed_level):
        if lvl is not None:
            catalog.representation(lvl)

    rng = SeededRng(seed)
    uplink = netem.make_link(trajectory, rtt_ms, backend=backend)
    downlink = netem.make_link(trajectory, rtt_ms, drop_period=drop_period, backend=backend)
    conn, ready = transport.open_connection(
        stack, uplink, downlink, 0, log_packets=log_packets, max_events=max_events, backend=backend)
    engine = conn.engine
    alloc = appproto.StreamAllocator.for_stack(stack.kind)
    session = ClientSession(
        catalog, stack, EstimatorState(0.0, w1, w2), start_level=start_level,
        scenario_id=scenario_id, seed=seed, rtt_ms=rtt_ms, ready_us=ready,
    )

    def wire_app(n: int) -> int:
        return transport.tls_wire_bytes(n) if stack.tls else n

    level = start_level if fixed_level is None else fixed_level
    b_n = 0.0
    pending: list[tuple[int, int, int, int, int]] = []  # (handle, index, level, tx0, rx0)
    issued = 0
    for i in range(n_segments):
        while issued < n_segments and len(pending) < pipeline_depth:
            seg_level = level
            url = catalog.segment(seg_level, issued).url_path
            sid = alloc.next_stream_id()
            slot = conn.open_stream(sid if conn.is_quic else 0)
            media = catalog.segment(seg_level, issued).media_bytes
            req = wire_app(appproto.encode_request(stack.kind, url).total_bytes)
            resp = wire_app(appproto.encode_response_body(stack.kind, media).total_bytes)
            st = engine.stats(CLIENT)
            h = engine.issue(slot, req, resp, rng.randint(0, JITTER_MAX_US))
            pending.append((h, issued, seg_level, st["tx_bytes"], st["rx_bytes"]))
            issued += 1
        h, idx, seg_level, tx0, rx0 = pending.pop(0)
        try:
            engine.run_until_done(h)
        except SimulationError as exc:
            raise SimulationError(f"{scenario_id or stack.kind.value} seed {seed} segment {idx}: {exc}") from exc
        t_req, t_first, t_done = engine.handle_times(h)
        st = engine.stats(CLIENT)
        rx = st["rx_bytes"] - rx0
        wire = rx + st["tx_bytes"] - tx0
        media = catalog.segment(seg_level, idx).media_bytes
        b_m = _kbps(media if measure == "media" else rx, t_done - t_req)
        if i == 0:
            session.estimator.b_prev = b_m
            b_n = b_m
        else:
            b_n = estimate_bandwidth(session.estimator, b_m)
        session.records.append(SegmentDownloadRecord(
            idx, seg_level, catalog.representation(seg_level).bitrate_kbps,
            t_req, t_first, t_done, media, wire, rx, b_m, b_n,
            netem.rate_at(trajectory, t_req),
        ))
        if fixed_level is None:
            level = select_representation(catalog, b_n, safety_factor).level

    cst = engine.stats(CLIENT)
    session.end_us = session.records[-1].complete_us
    session.client_rx_bytes = cst["rx_bytes"]
    session.client_tx_bytes = cst["tx_bytes"]
    session.transport_stats = {"client": cst, "server": engine.stats(SERVER),
                               "events": engine.events_processed}
    if log_packets:
        session.packets = conn.wire_packets()
    return session
