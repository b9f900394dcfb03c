"""Emulated path: token-bucket shaping, drop-tail queue, fixed one-way delay, rate trajectories."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from . import _kernel
from .simcore import US_PER_MS, US_PER_S

DEFAULT_BURST_BYTES = 12_500
DEFAULT_QUEUE_BYTES = 64 * 1024
RTT_PRESETS_MS = (0, 50, 150)
MIN_ONE_WAY_DELAY_US = 1

TRAJECTORY_RESOURCE = "default_trajectory.txt"
TRAJECTORY_DURATION_S = 600

# One 100 s period, repeated six times: ascending steps so every prefix of the
# trajectory averages at most 2700 kbps and whole periods average exactly 2700.
_PERIOD_S = 100
_PERIOD_STEPS = (
    (0, 1000), (14, 1500), (26, 2000), (38, 2500),
    (52, 3000), (66, 3500), (80, 4000), (92, 5000),
)


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class BandwidthTrajectory:
    """Piecewise-constant rate; ``steps`` are ``(start_us, rate_kbps)``."""

    steps: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if not self.steps:
            raise TrajectoryError("trajectory has no steps")
        if self.steps[0][0] != 0:
            raise TrajectoryError("first step must start at t=0")
        for (a, _), (b, _) in zip(self.steps, self.steps[1:]):
            if b <= a:
                raise TrajectoryError("step start times must be strictly increasing")
        for _, rate in self.steps:
            if rate <= 0:
                raise TrajectoryError(f"rate must be > 0, got {rate}")

    @classmethod
    def constant(cls, rate_kbps: int) -> BandwidthTrajectory:
        return cls(((0, int(rate_kbps)),))

    @property
    def rates_kbps(self) -> list[int]:
        return [r for _, r in self.steps]

    def mean_kbps(self, duration_us: int) -> float:
        """Time-weighted mean rate over ``[0, duration_us)``."""
        total = 0
        for i, (start, rate) in enumerate(self.steps):
            if start >= duration_us:
                break
            end = self.steps[i + 1][0] if i + 1 < len(self.steps) else duration_us
            total += rate * (min(end, duration_us) - start)
        return total / duration_us


def rate_at(trajectory: BandwidthTrajectory, t: int) -> int:
    """Rate of the last step starting at or before ``t`` (kbps)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    rate = trajectory.steps[0][1]
    for start, r in trajectory.steps:
        if start > t:
            break
        rate = r
    return rate


def default_trajectory() -> BandwidthTrajectory:
    steps = []
    for k in range(TRAJECTORY_DURATION_S // _PERIOD_S):
        for offset, rate in _PERIOD_STEPS:
            steps.append(((k * _PERIOD_S + offset) * US_PER_S, rate))
    return BandwidthTrajectory(tuple(steps))


def dumps_trajectory(trajectory: BandwidthTrajectory, comment: str | None = None) -> str:
    lines = [f"# {comment}"] if comment else []
    lines.append("# start_seconds rate_kbps")
    for start, rate in trajectory.steps:
        lines.append(f"{start / US_PER_S:g} {rate}")
    return "\n".join(lines) + "\n"


def loads_trajectory(text: str, source: str = "<string>") -> BandwidthTrajectory:
    steps = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 2:
            raise TrajectoryError(f"{source}:{lineno}: expected 'start_seconds rate_kbps', got {raw!r}")
        try:
            start_s = float(fields[0])
            rate = float(fields[1])
        except ValueError:
            raise TrajectoryError(f"{source}:{lineno}: non-numeric field in {raw!r}") from None
        if rate != int(rate):
            raise TrajectoryError(f"{source}:{lineno}: rate must be whole kbps")
        steps.append((int(round(start_s * US_PER_S)), int(rate)))
    try:
        return BandwidthTrajectory(tuple(steps))
    except TrajectoryError as exc:
        raise TrajectoryError(f"{source}: {exc}") from None


def load_trajectory(path: str | Path) -> BandwidthTrajectory:
    p = Path(path)
    return loads_trajectory(p.read_text(), str(p))


def save_trajectory(trajectory: BandwidthTrajectory, path: str | Path) -> None:
    Path(path).write_text(dumps_trajectory(trajectory))


def bundled_trajectory_text() -> str:
    return resources.files("dashsim.data").joinpath(TRAJECTORY_RESOURCE).read_text()


def one_way_delay_us(rtt_ms: float) -> int:
    """Half the RTT, floored at 1 us so zero-RTT runs keep a strict event order."""
    d = int(round(rtt_ms * US_PER_MS)) // 2
    return d if d >= MIN_ONE_WAY_DELAY_US else MIN_ONE_WAY_DELAY_US


def kbps_to_bytes_per_s(kbps: int) -> int:
    return int(kbps) * 125


@dataclass(frozen=True)
class TokenBucket:
    """Snapshot of a link's shaper state (token credit in bytes)."""

    rate_bytes_per_s: int
    burst: int
    tokens: float
    last_refill: int


def make_link(
    trajectory: BandwidthTrajectory | int | None,
    rtt_ms: float = 0,
    *,
    burst: int = DEFAULT_BURST_BYTES,
    queue_capacity: int = DEFAULT_QUEUE_BYTES,
    one_way_delay: int | None = None,
    drop_period: int = 0,
    drop_phase: int = 0,
    backend=None,
):
    """Build one direction of the path.

    ``trajectory`` may be a :class:`BandwidthTrajectory`, a constant rate in
    kbps, or ``None`` for an unshaped link. ``drop_period`` > 0 forces loss of
    every data packet whose index is ``drop_phase`` modulo ``drop_period``.
    """
    if trajectory is None:
        starts, rates = [0], [0]
    else:
        if not isinstance(trajectory, BandwidthTrajectory):
            trajectory = BandwidthTrajectory.constant(trajectory)
        starts = [s for s, _ in trajectory.steps]
        rates = [kbps_to_bytes_per_s(r) for _, r in trajectory.steps]
    delay = one_way_delay_us(rtt_ms) if one_way_delay is None else one_way_delay
    impl = backend or _kernel
    return impl.Link(starts, rates, burst, queue_capacity, delay, drop_period, drop_phase)


def link_transmit(link, packet_bytes: int, now: int, is_data: bool = False) -> int | None:
    """Arrival time of a packet admitted at ``now``, or ``None`` if it was dropped."""
    arrival = link.transmit(packet_bytes, now, is_data)
    return None if arrival < 0 else arrival


def bucket_state(link) -> TokenBucket:
    return TokenBucket(link.rate_at(link.last_refill), link.burst, link.tokens, link.last_refill)
