"""Acceptance criteria 1-8, each reported as one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the lines are also
repeated in the terminal summary of a normal ``pytest`` run.
"""

from __future__ import annotations

import csv
import hashlib
import io
import random
import time
from fractions import Fraction

import pytest

from dashsim import netem
from dashsim._kernel import CLIENT, SERVER
from dashsim.cli import main as cli_main
from dashsim.dash_client import EstimatorState, estimate_bandwidth
from dashsim.media_catalog import build_default_catalog
from dashsim.metrics import mean
from dashsim.netem import BandwidthTrajectory, default_trajectory, link_transmit, make_link
from dashsim.scenario_runner import Experiment, ScenarioSpec, run, table2
from dashsim.simcore import US_PER_S
from dashsim.transport import ALL_STACKS, QuicHeaderMode, open_connection, quic_header_len, stack_config

CAT = build_default_catalog()
QUIC_STACKS = ("h1-quic", "spdy-quic")

# Table 1 reference cells in percent, per stack at RTT 0 / 50 / 150 ms
TABLE1_REF = {
    "h2-tcp": (95.3, 92.9, 88.4),
    "h2-ssl": (95.1, 92.6, 88.0),
    "h1-quic": (94.0, 91.8, 87.2),
    "spdy-quic": (93.9, 91.7, 87.2),
}


class Timed:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


def _verdict(report, label, failures, seconds, budget):
    if seconds > budget:
        failures.append(f"runtime {seconds:.1f}s over {budget:g}s budget")
    detail = f"({seconds:.2f}s)" if not failures else f"({seconds:.2f}s) " + "; ".join(failures[:6])
    ok = report(label, not failures, detail)
    assert ok, "; ".join(failures)


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def _digest(files: dict[str, str]) -> str:
    h = hashlib.sha256()
    for name, text in sorted(files.items()):
        h.update(name.encode() + b"\0" + text.encode() + b"\0")
    return h.hexdigest()


# experiment results are shared with the determinism check
@pytest.fixture(scope="module")
def overhead_run():
    with Timed() as t:
        res = run(ScenarioSpec(Experiment.OVERHEAD))
    return res, t.seconds


@pytest.fixture(scope="module")
def utilization_run():
    with Timed() as t:
        res = run(ScenarioSpec(Experiment.UTILIZATION))
    return res, t.seconds


@pytest.fixture(scope="module")
def adaptation_run():
    with Timed() as t:
        res = run(ScenarioSpec(Experiment.ADAPTATION))
    return res, t.seconds


def test_criterion_1_header_table(acceptance_report):
    failures = []
    with Timed() as t:
        rows = {r[0]: r for r in table2().rows}
        for stack, want in (("h2-tcp", 4.36), ("h2-ssl", 4.36), ("h1-quic", 3.38), ("spdy-quic", 3.38)):
            got = float(rows[stack][7])
            if abs(got - want) > 0.005:
                failures.append(f"{stack} {got} != {want}")
        if (rows["h2-tcp"][5], rows["h2-tcp"][6]) != (66, 1514):
            failures.append("tcp path is not 66/1514")
        if (rows["spdy-quic"][5], rows["spdy-quic"][6]) != (42, 1242):
            failures.append("quic path is not 42/1242")
    _verdict(acceptance_report, "criterion 1 header overhead table", failures, t.seconds, 1)


def test_criterion_2_estimator_oracle(acceptance_report):
    failures = []
    rng = random.Random(20240611)
    with Timed() as t:
        for _ in range(10_000):
            b_prev = rng.uniform(0, 20_000)
            b_m = rng.uniform(0, 20_000)
            w1 = rng.uniform(0.01, 5)
            w2 = rng.uniform(0.01, 5)
            got = estimate_bandwidth(EstimatorState(b_prev, w1, w2), b_m)
            if got != (w1 * b_prev + w2 * b_m) / (w1 + w2):
                failures.append(f"weights ({w1}, {w2}) at ({b_prev}, {b_m})")
            d = estimate_bandwidth(EstimatorState(b_prev), b_m)
            exact = Fraction(35, 100) * Fraction(b_prev) + Fraction(65, 100) * Fraction(b_m)
            if abs(Fraction(d) - exact) > abs(exact) * Fraction(1, 2**50):
                failures.append(f"defaults at ({b_prev}, {b_m}): {d} vs {float(exact)}")
        state = EstimatorState(1000.0)
        if estimate_bandwidth(state, 2000.0) != 0.35 * 1000 + 0.65 * 2000 or state.b_prev != 1650.0:
            failures.append("default weights are not 0.7 / 1.3")
    _verdict(acceptance_report, "criterion 2 estimator oracle", failures, t.seconds, 1)


def test_criterion_3_overhead_sweep(overhead_run, acceptance_report):
    res, seconds = overhead_run
    failures = []
    ov = {}
    for r in _rows(res.to_csv()):
        ov.setdefault(r["stack"], {})[int(r["level"])] = (int(r["bitrate_kbps"]), float(r["overhead"]))
    if sorted(ov) != sorted(k.value for k in ALL_STACKS) or any(len(v) != 14 for v in ov.values()):
        failures.append("sweep is not 4 stacks x 14 levels")
    for stack, lv in ov.items():
        vals = [lv[i][1] for i in sorted(lv)]
        bad = [i for i in range(13) if vals[i + 1] > vals[i]]
        if bad:
            failures.append(f"(a) {stack} overhead rises after levels {bad}")
        high = [i for i in lv if lv[i][0] >= 200 and lv[i][1] >= 0.10]
        if high:
            failures.append(f"(c) {stack} overhead >= 10% at levels {high}")
    for q in QUIC_STACKS:
        below = [i for i in range(14) if ov[q][i][1] <= ov["h2-tcp"][i][1]]
        if below:
            failures.append(f"(b) {q} not above h2-tcp at levels {below}")
    quic_mean = mean([ov[q][i][1] for q in QUIC_STACKS for i in range(14)])
    ssl_mean = mean([ov["h2-ssl"][i][1] for i in range(14)])
    gap_pp = 100 * (quic_mean - ssl_mean)
    if not 0.5 <= gap_pp <= 3.0:
        failures.append(f"(d) quic - ssl mean gap {gap_pp:.3f} pp outside [0.5, 3.0]")
    acceptance_report("  criterion 3 detail", 0.5 <= gap_pp <= 3.0, f"quic-ssl mean gap {gap_pp:.2f} pp")
    _verdict(acceptance_report, "criterion 3 overhead sweep", failures, seconds, 60)


def test_criterion_4_utilization_grid(utilization_run, acceptance_report):
    res, seconds = utilization_run
    failures = []
    t1 = {}
    for r in _rows(res.extra["table1"].to_csv()):
        t1.setdefault(r["stack"], {})[float(r["rtt_ms"])] = 100 * float(r["utilization"])
    soft = []
    for stack, ref in TABLE1_REF.items():
        u = [t1[stack][r] for r in (0, 50, 150)]
        if min(u) <= 80:
            failures.append(f"{stack} utilization {min(u):.1f}% <= 80%")
        if not u[0] > u[1] > u[2]:
            failures.append(f"{stack} not strictly decreasing in rtt: {[round(x, 2) for x in u]}")
        if u[2] < 85:
            failures.append(f"{stack} at 150 ms is {u[2]:.1f}% < 85%")
        for rtt, got, want in zip((0, 50, 150), u, ref):
            soft.append((stack, rtt, got, want, abs(got - want) <= 5))
    # soft target, reported but not gating
    for stack, rtt, got, want, ok in soft:
        acceptance_report(f"  criterion 4 soft {stack} rtt {rtt} ms", ok,
                          f"{got:.1f}% vs reference {want:.1f}% (diff {got - want:+.1f} pp)")
    _verdict(acceptance_report, "criterion 4 utilization grid", failures, seconds, 120)


def test_criterion_5_adaptation(adaptation_run, acceptance_report):
    res, seconds = adaptation_run
    failures = []
    traj = default_trajectory()
    rates = traj.rates_kbps
    if min(rates) != 1000 or max(rates) != 5000:
        failures.append(f"trajectory range {min(rates)}-{max(rates)} kbps")
    m = traj.mean_kbps(int(CAT.segment_count * CAT.segment_duration_s * US_PER_S))
    if abs(m - 2700) > 27:
        failures.append(f"trajectory mean {m:.1f} kbps")
    thr = {}
    for r in _rows(res.to_csv()):
        thr.setdefault(r["stack"], {})[float(r["rtt_ms"])] = float(r["avg_throughput_kbps"])
    for stack, by_rtt in thr.items():
        v = [by_rtt[r] for r in (0, 50, 150)]
        for rtt, x in zip((0, 50, 150), v):
            if not 2000 < x <= 2700:
                failures.append(f"{stack} rtt {rtt}: {x:.1f} kbps outside (2000, 2700]")
        if not v[0] > v[1] > v[2]:
            failures.append(f"{stack} throughput not decreasing in rtt: {[round(x) for x in v]}")
    lowest = CAT.bitrates_kbps[0]
    over = 0
    checked = 0
    for name, table in res.extra.items():
        if not name.startswith("traces/"):
            continue
        recs = _rows(table.to_csv())
        for prev, cur in zip(recs, recs[1:]):
            est = float(prev["b_n_kbps"])
            if est >= lowest:
                checked += 1
                if int(cur["bitrate_kbps"]) > est:
                    over += 1
    if over:
        failures.append(f"{over} of {checked} selections exceed the estimate")
    if checked == 0:
        failures.append("no traces to check")
    summary = ", ".join(f"{s} {'/'.join(str(round(thr[s][r])) for r in (0, 50, 150))}" for s in thr)
    acceptance_report("  criterion 5 detail", not failures, f"kbps at 0/50/150 ms: {summary}")
    _verdict(acceptance_report, "criterion 5 adaptation", failures, seconds, 120)


def _reliability_failures(stack_kind, drop_phase, failures):
    stack = stack_config(stack_kind)
    up = netem.make_link(3000, 40, drop_period=20, drop_phase=drop_phase)
    down = netem.make_link(3000, 40, drop_period=20, drop_phase=(drop_phase + 11) % 20)
    conn, _ = open_connection(stack, up, down, 0, log_packets=True, log_deliveries=True)
    streams = [1, 3, 5, 7] if conn.is_quic else [0]
    for s in streams:
        conn.open_stream(s)
    down_data = {s: bytes((i * 7 + s) % 256 for i in range(80_000 + 1_111 * s)) for s in streams}
    up_data = {s: bytes((i * 13 + s) % 256 for i in range(30_000 + 17 * s)) for s in streams}
    for s in streams:
        conn.send_stream_data(s, down_data[s], SERVER)
        conn.send_stream_data(s, up_data[s], CLIENT)
    conn.run_until_idle()
    name = f"{stack_kind.value} phase {drop_phase}"
    if not (conn.engine.links[0].forced_drops and conn.engine.links[1].forced_drops):
        failures.append(f"{name}: drop schedule did not fire")
    for s in streams:
        if conn.received_payload(s, CLIENT) != down_data[s] or conn.received_payload(s, SERVER) != up_data[s]:
            failures.append(f"{name}: stream {s} bytes differ")
    for p in conn.wire_packets():
        if p.total_bytes > stack.mtu:
            failures.append(f"{name}: {p.total_bytes} B packet over mtu {stack.mtu}")
            break
        if stack.quic_mode and not 2 <= p.header_bytes - stack.lower_header <= 19:
            failures.append(f"{name}: quic header {p.header_bytes - stack.lower_header} B")
            break
    if conn.is_quic:
        eng = conn.engine
        delivered = {(e[2], e[3]): e[0] for e in eng.delivery_log if e[1] == CLIENT}
        lost_slots = {e[5] for e in eng.packet_log if e[2] == 0 and e[1] == SERVER and e[8] < 0}
        first_loss = {}
        for e in eng.packet_log:
            if e[2] == 0 and e[1] == SERVER and e[8] < 0:
                first_loss.setdefault(e[5], e[0])
        # data arriving in order on its own stream is delivered on arrival,
        # whatever is missing on the other streams
        for e in eng.packet_log:
            if e[2] != 0 or e[1] != SERVER or e[8] < 0:
                continue
            slot, off = e[5], e[7]
            if slot in lost_slots and e[0] >= first_loss[slot]:
                continue
            if delivered.get((slot, off)) != e[8]:
                failures.append(f"{name}: stream slot {slot} offset {off} waited for another stream")
                break
        if len(lost_slots) < 2:
            failures.append(f"{name}: drops hit fewer than two streams")


def test_criterion_6_transport_invariants(acceptance_report):
    failures = []
    with Timed() as t:
        for kind in ALL_STACKS:
            for phase in (0, 7, 13):
                _reliability_failures(kind, phase, failures)
        for cid in (0, 1, 4, 8):
            for version in (False, True):
                for seq in (1, 2, 4, 6):
                    for private in (False, True):
                        for first in (False, True):
                            mode = QuicHeaderMode(cid, version, seq, private)
                            # modes that would need more than 19 bytes must be refused
                            try:
                                n = quic_header_len(mode, first_packet=first)
                            except ValueError:
                                n = None
                            raw = 1 + cid + seq + 4 * (version or first) + private
                            if n is None and raw <= 19 or n is not None and not (2 <= n <= 19 and n == raw):
                                failures.append(f"quic header mode {mode} first={first} -> {n}")
        for kind in ALL_STACKS:
            cfg = stack_config(kind)
            if cfg.data_header + cfg.mss > cfg.mtu:
                failures.append(f"{kind.value} full packet exceeds mtu")
    _verdict(acceptance_report, "criterion 6 transport invariants", failures, t.seconds, 30)


def test_criterion_7_determinism(overhead_run, utilization_run, adaptation_run, tmp_path, acceptance_report, capsys):
    failures = []
    firsts = {"overhead": overhead_run[0], "utilization": utilization_run[0], "adaptation": adaptation_run[0]}
    with Timed() as t:
        for cmd, first in firsts.items():
            out = tmp_path / cmd
            if cli_main([cmd, "--out", str(out)]) != 0:
                failures.append(f"{cmd} exited nonzero")
                continue
            stdout = capsys.readouterr().out
            again = {p.relative_to(out).as_posix(): p.read_text() for p in out.rglob("*.csv")}
            if _digest(again) != _digest(first.files()):
                failures.append(f"{cmd} rerun differs")
            if stdout != first.to_csv():
                failures.append(f"{cmd} stdout differs from main table")
        small = ["overhead", "--stack", "spdy-quic", "--seeds", "2,3", "--segments", "4", "--dump-packets"]
        digests = []
        for i in range(2):
            out = tmp_path / f"dump{i}"
            cli_main(small + ["--out", str(out)])
            digests.append(_digest({p.relative_to(out).as_posix(): p.read_text() for p in out.rglob("*.csv")}))
        capsys.readouterr()
        if digests[0] != digests[1]:
            failures.append("packet dumps differ between reruns")
    # the reruns above are half the work; the first runs happened in the fixtures
    _verdict(acceptance_report, "criterion 7 determinism", failures, t.seconds, 60)


def _audit(departures, burst, credit):
    for i in range(len(departures)):
        total = 0
        for j in range(i, len(departures)):
            total += departures[j][1]
            if total * 1_000_000 > burst * 1_000_000 + credit(departures[i][0], departures[j][0]):
                return False
    return True


def test_criterion_8_shaper_bound(acceptance_report):
    failures = []
    rng = random.Random(8)
    with Timed() as t:
        for case in range(300):
            burst = rng.randint(1514, 20_000)
            if case % 2:
                rate_kbps = rng.randint(50, 10_000)
                traj = BandwidthTrajectory.constant(rate_kbps)
            else:
                steps = sorted(rng.sample(range(1, 400_000), rng.randint(1, 4)))
                traj = BandwidthTrajectory(tuple(zip([0] + steps, (rng.randint(50, 8_000) for _ in range(len(steps) + 1)))))
            link = make_link(traj, burst=burst, queue_capacity=rng.choice([4_000, 65_536, 10**9]), one_way_delay=0)
            starts = [s for s, _ in traj.steps] + [10**15]
            rates = [netem.kbps_to_bytes_per_s(r) for _, r in traj.steps]

            def credit(a, b, starts=starts, rates=rates):
                return sum(r * max(0, min(b, e) - max(a, s)) for s, e, r in zip(starts, starts[1:], rates))

            now = 0
            deps = []
            for _ in range(rng.randint(1, 150)):
                now += rng.choice([0, 0, rng.randint(0, 500), rng.randint(0, 30_000)])
                size = rng.randint(40, min(1514, burst))
                arr = link_transmit(link, size, now, is_data=True)
                if arr is not None:
                    deps.append((arr, size))
            if not _audit(deps, burst, credit):
                failures.append(f"case {case}: window bound exceeded")
    _verdict(acceptance_report, "criterion 8 shaper bound", failures, t.seconds, 10)
