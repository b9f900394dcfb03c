"""End-to-end experiments: overhead sweep, utilization grid, adaptation runs, header table."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from pathlib import Path

from . import dash_client, metrics, netem, transport
from .media_catalog import MediaCatalog, build_default_catalog
from .simcore import SimulationError
from .transport import ALL_STACKS, StackKind

DEFAULT_SEEDS = (1, 2, 3, 4, 5)
FIXED_LEVEL_SEGMENTS = 30  # 60 s of content per fixed-level cell


class Experiment(enum.Enum):
    OVERHEAD = "overhead"
    UTILIZATION = "utilization"
    ADAPTATION = "adaptation"


_DEFAULT_RTTS = {
    Experiment.OVERHEAD: (0,),
    Experiment.UTILIZATION: netem.RTT_PRESETS_MS,
    Experiment.ADAPTATION: netem.RTT_PRESETS_MS,
}


class ScenarioError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    experiment: Experiment
    stacks: tuple[StackKind, ...] = ALL_STACKS
    rtts_ms: tuple[float, ...] | None = None
    levels: tuple[int, ...] | None = None
    trajectory: netem.BandwidthTrajectory | None = None
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    catalog: MediaCatalog = field(default_factory=build_default_catalog)
    segment_count: int | None = None
    dump_packets: bool = False
    backend: object = None

    def __post_init__(self) -> None:
        if self.rtts_ms is None:
            object.__setattr__(self, "rtts_ms", _DEFAULT_RTTS[self.experiment])
        if self.levels is None:
            object.__setattr__(self, "levels", tuple(range(len(self.catalog))))
        if self.trajectory is None and self.experiment is Experiment.ADAPTATION:
            object.__setattr__(self, "trajectory", netem.default_trajectory())
        if self.segment_count is None:
            n = (self.catalog.segment_count if self.experiment is Experiment.ADAPTATION
                 else min(FIXED_LEVEL_SEGMENTS, self.catalog.segment_count))
            object.__setattr__(self, "segment_count", n)
        for name in ("stacks", "rtts_ms", "seeds", "levels"):
            if not getattr(self, name):
                raise ScenarioError(f"{name} must not be empty")
        # canonical order, so output rows do not depend on how the spec was written
        object.__setattr__(self, "stacks", tuple(k for k in ALL_STACKS if k in self.stacks))
        for name in ("rtts_ms", "seeds", "levels"):
            object.__setattr__(self, name, tuple(sorted(set(getattr(self, name)))))
        if any(r < 0 for r in self.rtts_ms):
            raise ScenarioError("rtt must be >= 0")
        for lvl in self.levels:
            if not 0 <= lvl < len(self.catalog):
                raise ScenarioError(f"level {lvl} not in catalog")
        if not 1 <= self.segment_count <= self.catalog.segment_count:
            raise ScenarioError(f"segment_count must be 1..{self.catalog.segment_count}")


@dataclass
class ResultTable:
    name: str
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)
    extra: dict[str, ResultTable] = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        w.writerows(self.rows)
        return buf.getvalue()

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def files(self) -> dict[str, str]:
        """Every CSV this result produces, by file name."""
        out = {f"{self.name}.csv": self.to_csv()}
        for t in self.extra.values():
            out.update(t.files())
        return out


def write_tables(result: ResultTable, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    written = []
    for name, text in sorted(result.files().items()):
        path = out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        written.append(path)
    return written


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _rtt(x: float) -> str:
    return f"{x:g}"


PACKET_COLUMNS = ("time_us", "direction", "kind", "header_bytes", "payload_bytes", "stream_id", "seq", "arrival_us")


def packet_table(name: str, packets: list[transport.WirePacket]) -> ResultTable:
    rows = [
        (p.time_us, p.direction, p.kind.name.lower(), p.header_bytes, p.payload_bytes,
         "" if p.stream_id is None else p.stream_id, "" if p.seq is None else p.seq,
         "" if p.arrival_us is None else p.arrival_us)
        for p in packets
    ]
    return ResultTable(name, PACKET_COLUMNS, rows)


def _session(spec: ScenarioSpec, kind: StackKind, rtt: float, seed: int, traj, *,
             fixed_level: int | None, scenario_id: str) -> dash_client.ClientSession:
    try:
        return dash_client.run_session(
            spec.catalog, kind, traj, rtt, seed,
            fixed_level=fixed_level,
            segment_count=spec.segment_count,
            log_packets=spec.dump_packets,
            backend=spec.backend,
            scenario_id=scenario_id,
        )
    except (SimulationError, ValueError) as exc:
        where = f"{spec.experiment.value} stack={kind.value} rtt={_rtt(rtt)}ms"
        if fixed_level is not None:
            where += f" level={fixed_level}"
        raise ScenarioError(f"{where} seed={seed}: {exc}") from exc


def _fixed_level_runs(spec: ScenarioSpec, table_name: str):
    """Yield (kind, rtt, level, bitrate, summary, packet tables) for every fixed-level cell."""
    for kind in spec.stacks:
        for rtt in spec.rtts_ms:
            for lvl in spec.levels:
                rate = spec.catalog.representation(lvl).bitrate_kbps
                sid = f"{table_name}/{kind.value}/rtt{_rtt(rtt)}/L{lvl}"
                runs, dumps = [], []
                for seed in spec.seeds:
                    s = _session(spec, kind, rtt, seed, rate, fixed_level=lvl, scenario_id=sid)
                    runs.append(metrics.run_metrics(s, rate))
                    if spec.dump_packets:
                        name = f"packets/{table_name}_{kind.value}_rtt{_rtt(rtt)}_L{lvl}_seed{seed}"
                        dumps.append(packet_table(name, s.packets))
                yield kind, rtt, lvl, rate, metrics.aggregate(runs), dumps


def _per_seed_tables(name: str, columns: tuple[str, ...], rows_by_seed: dict[int, list]) -> dict[str, ResultTable]:
    return {f"{name}_seed{seed}": ResultTable(f"{name}_seed{seed}", columns, rows)
            for seed, rows in sorted(rows_by_seed.items())}


OVERHEAD_COLUMNS = ("stack", "rtt_ms", "level", "bitrate_kbps", "overhead", "runs")


def run_overhead_sweep(spec: ScenarioSpec) -> ResultTable:
    """Overhead of a fixed-level session at link rate = level bitrate, per stack and level."""
    table = ResultTable("overhead", OVERHEAD_COLUMNS)
    per_seed: dict[int, list] = {s: [] for s in spec.seeds}
    for kind, rtt, lvl, rate, summ, dumps in _fixed_level_runs(spec, "overhead"):
        table.rows.append((kind.value, _rtt(rtt), lvl, rate, _fmt(summ.overhead_fraction), summ.run_count))
        for r in summ.runs:
            per_seed[r.seed].append((kind.value, _rtt(rtt), lvl, rate, _fmt(r.overhead), 1))
        for d in dumps:
            table.extra[d.name] = d
    table.extra.update(_per_seed_tables("overhead", OVERHEAD_COLUMNS, per_seed))
    return table


UTILIZATION_COLUMNS = ("stack", "rtt_ms", "level", "bitrate_kbps", "utilization", "runs")
TABLE1_COLUMNS = ("stack", "rtt_ms", "utilization", "levels")


def run_utilization_grid(spec: ScenarioSpec) -> ResultTable:
    """Utilization per stack, RTT and level; ``table1`` averages each (stack, RTT) over levels."""
    table = ResultTable("utilization", UTILIZATION_COLUMNS)
    per_seed: dict[int, list] = {s: [] for s in spec.seeds}
    cells: dict[tuple[str, float], list[float]] = {}
    for kind, rtt, lvl, rate, summ, dumps in _fixed_level_runs(spec, "utilization"):
        u = summ.utilization_fraction
        table.rows.append((kind.value, _rtt(rtt), lvl, rate, _fmt(u), summ.run_count))
        cells.setdefault((kind.value, rtt), []).append(u)
        for r in summ.runs:
            per_seed[r.seed].append((kind.value, _rtt(rtt), lvl, rate, _fmt(r.utilization), 1))
        for d in dumps:
            table.extra[d.name] = d
    t1 = ResultTable("table1", TABLE1_COLUMNS)
    for (stack, rtt), us in cells.items():
        t1.rows.append((stack, _rtt(rtt), _fmt(metrics.mean(us)), len(us)))
    table.extra["table1"] = t1
    table.extra.update(_per_seed_tables("utilization", UTILIZATION_COLUMNS, per_seed))
    return table


ADAPTATION_COLUMNS = ("stack", "rtt_ms", "avg_throughput_kbps", "overhead", "segments", "runs")


def run_adaptation(spec: ScenarioSpec) -> ResultTable:
    """Adaptive sessions against the trajectory; per-run segment traces go in ``extra``."""
    table = ResultTable("adaptation", ADAPTATION_COLUMNS)
    per_seed: dict[int, list] = {s: [] for s in spec.seeds}
    for kind in spec.stacks:
        for rtt in spec.rtts_ms:
            sid = f"adaptation/{kind.value}/rtt{_rtt(rtt)}"
            runs = []
            for seed in spec.seeds:
                s = _session(spec, kind, rtt, seed, spec.trajectory, fixed_level=None, scenario_id=sid)
                m = metrics.run_metrics(s)
                runs.append(m)
                per_seed[seed].append((kind.value, _rtt(rtt), f"{m.avg_throughput_kbps:.3f}",
                                       _fmt(m.overhead), len(s.records), 1))
                name = f"traces/trace_{kind.value}_rtt{_rtt(rtt)}_seed{seed}"
                table.extra[name] = ResultTable(name, dash_client.TRACE_COLUMNS, dash_client.trace_rows(s))
                if spec.dump_packets:
                    pname = f"packets/adaptation_{kind.value}_rtt{_rtt(rtt)}_seed{seed}"
                    table.extra[pname] = packet_table(pname, s.packets)
            summ = metrics.aggregate(runs)
            table.rows.append((kind.value, _rtt(rtt), f"{summ.avg_media_throughput_kbps:.3f}",
                               _fmt(summ.overhead_fraction), spec.segment_count, summ.run_count))
    table.extra.update(_per_seed_tables("adaptation", ADAPTATION_COLUMNS, per_seed))
    return table


TABLE2_COLUMNS = ("stack", "path", "ethernet", "ip", "transport", "header_bytes", "mtu", "total_overhead_pct")


def table2(stacks: tuple[StackKind, ...] = ALL_STACKS) -> ResultTable:
    """Per-packet lower-layer header share at full MTU for each stack."""
    table = ResultTable("table2", TABLE2_COLUMNS)
    for kind in stacks:
        cfg = transport.stack_config(kind)
        pct = 100 * transport.analytic_stack_overhead(cfg)
        table.rows.append((kind.value, "quic" if kind.is_quic else "tcp", cfg.ethernet, cfg.ip,
                           cfg.transport_header, cfg.lower_header, cfg.mtu, f"{pct:.4f}"))
    return table


RUNNERS = {
    Experiment.OVERHEAD: run_overhead_sweep,
    Experiment.UTILIZATION: run_utilization_grid,
    Experiment.ADAPTATION: run_adaptation,
}


def run(spec: ScenarioSpec) -> ResultTable:
    return RUNNERS[spec.experiment](spec)
