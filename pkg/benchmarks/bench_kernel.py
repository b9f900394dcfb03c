"""Time the compiled and pure-Python packet kernels on the same sessions.

    python3 benchmarks/bench_kernel.py --segments 30 --repeat 3
"""

from __future__ import annotations

import argparse
import time

from dashsim import _kernel
from dashsim.dash_client import run_session
from dashsim.media_catalog import build_default_catalog
from dashsim.netem import default_trajectory

CASES = (
    # (label, stack, rtt_ms, fixed level or None for adaptive)
    ("h2-tcp L13 rtt50", "h2-tcp", 50, 13),
    ("spdy-quic L13 rtt150", "spdy-quic", 150, 13),
    ("h1-quic adaptive rtt0", "h1-quic", 0, None),
)


def bench_case(backend, stack, rtt, level, segments, repeat):
    catalog = build_default_catalog()
    best = float("inf")
    session = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        if level is None:
            session = run_session(catalog, stack, default_trajectory(), rtt, 1,
                                  segment_count=segments, backend=backend)
        else:
            rate = catalog.representation(level).bitrate_kbps
            session = run_session(catalog, stack, rate, rtt, 1, fixed_level=level,
                                  segment_count=segments, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, session.transport_stats["events"], session.client_rx_bytes


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--segments", type=int, default=30)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    backends = _kernel.backends()
    print(f"backends: {', '.join(b.BACKEND for b in backends)}")
    print(f"{'case':24} {'backend':8} {'events':>9} {'seconds':>9} {'Mev/s':>7} {'speedup':>8}")
    for label, stack, rtt, level in CASES:
        base = None
        ref = None
        for b in backends:
            secs, events, rx = bench_case(b, stack, rtt, level, args.segments, args.repeat)
            if ref is None:
                ref = (events, rx)
            elif (events, rx) != ref:
                print(f"  MISMATCH between backends: {ref} vs {(events, rx)}")
            base = base or secs
            print(f"{label:24} {b.BACKEND:8} {events:9d} {secs:9.3f} {events / secs / 1e6:7.2f} {base / secs:7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
