"""Overhead, link utilization and media throughput from session traces, plus run aggregation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

from .dash_client import ClientSession


class MetricsError(ValueError):
    pass


def _require_records(trace: ClientSession) -> None:
    if not trace.records:
        raise MetricsError("trace has no segment records")


def protocol_overhead(trace: ClientSession) -> float:
    """``1 - media / wire`` over bytes received by the client.

    The wire total includes headers, framing, handshake, acks, control
    packets and retransmissions.
    """
    _require_records(trace)
    if trace.client_rx_bytes <= 0:
        raise MetricsError("client received no bytes")
    return 1 - trace.media_bytes / trace.client_rx_bytes


def link_utilization(trace: ClientSession, available_kbps: float, *,
                     basis: str = "media", include_handshake: bool = True) -> float:
    """Effective throughput over the active session, divided by the link rate.

    ``basis="media"`` counts segment payload only (goodput); ``"wire"`` counts
    every byte the client received. The active period starts at session start
    when ``include_handshake`` is set, else at the first request.
    """
    if available_kbps <= 0:
        raise MetricsError("available_kbps must be > 0")
    if basis not in ("media", "wire"):
        raise MetricsError("basis must be 'media' or 'wire'")
    if trace.records:
        start = trace.start_us if include_handshake else trace.records[0].request_us
    else:
        start = trace.start_us
    duration = trace.end_us - start
    if duration <= 0:
        raise MetricsError("trace has zero duration")
    nbytes = trace.media_bytes if basis == "media" else trace.client_rx_bytes
    return nbytes * 8000 / duration / available_kbps


def avg_media_throughput(trace: ClientSession) -> float:
    """Media kbps over the whole session."""
    _require_records(trace)
    if trace.duration_us <= 0:
        raise MetricsError("trace has zero duration")
    return trace.media_bytes * 8000 / trace.duration_us


@dataclass(frozen=True)
class RunMetrics:
    scenario_id: str
    seed: int
    overhead: float
    utilization: float | None
    avg_throughput_kbps: float


def run_metrics(trace: ClientSession, available_kbps: float | None = None, **util_kw) -> RunMetrics:
    util = link_utilization(trace, available_kbps, **util_kw) if available_kbps else None
    return RunMetrics(trace.scenario_id, trace.seed, protocol_overhead(trace), util,
                      avg_media_throughput(trace))


def mean(values: list[float]) -> float:
    # fsum is exactly rounded, so the mean does not depend on run order
    return math.fsum(values) / len(values)


@dataclass(frozen=True)
class MetricsSummary:
    scenario_id: str
    overhead_fraction: float
    utilization_fraction: float | None
    avg_media_throughput_kbps: float
    run_count: int
    runs: tuple[RunMetrics, ...] = field(default=())


def aggregate(runs: list[RunMetrics]) -> MetricsSummary:
    if not runs:
        raise MetricsError("no runs to aggregate")
    ids = {r.scenario_id for r in runs}
    if len(ids) > 1:
        raise MetricsError(f"runs from different scenarios: {sorted(ids)}")
    utils = [r.utilization for r in runs]
    if any(u is None for u in utils) and not all(u is None for u in utils):
        raise MetricsError("utilization present for some runs only")
    return MetricsSummary(
        runs[0].scenario_id,
        mean([r.overhead for r in runs]),
        None if utils[0] is None else mean(utils),
        mean([r.avg_throughput_kbps for r in runs]),
        len(runs),
        tuple(sorted(runs, key=lambda r: r.seed)),
    )


SUMMARY_COLUMNS = ("scenario", "stack", "rtt_ms", "rate_kbps", "overhead", "utilization",
                   "avg_throughput_kbps", "runs")


def summary_row(summary: MetricsSummary, stack: str, rtt_ms: float, rate_kbps: float | str) -> tuple:
    util = "" if summary.utilization_fraction is None else f"{summary.utilization_fraction:.6f}"
    return (summary.scenario_id, stack, f"{rtt_ms:g}", rate_kbps, f"{summary.overhead_fraction:.6f}",
            util, f"{summary.avg_media_throughput_kbps:.3f}", summary.run_count)


def dumps_summary(rows: list[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    w.writerows(rows)
    return buf.getvalue()
