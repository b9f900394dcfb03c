"""Representation ladder and constant-bitrate segment catalog (the MPD stand-in)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

DEFAULT_LADDER_KBPS = (100, 200, 350, 500, 700, 900, 1100, 1300, 1600, 1900, 2300, 2800, 3400, 4500)
DEFAULT_SEGMENT_DURATION_S = 2.0
DEFAULT_SEGMENT_COUNT = 300
DEFAULT_TITLE = "Big Buck Bunny"


class CatalogError(ValueError):
    """Malformed or invalid catalog file."""


@dataclass(frozen=True)
class Representation:
    level: int
    bitrate_kbps: int
    width: int = 640
    height: int = 360
    frame_rate: int = 30


@dataclass(frozen=True)
class SegmentDescriptor:
    level: int
    index: int
    media_bytes: int
    url_path: str


@dataclass(frozen=True)
class MediaCatalog:
    representations: tuple[Representation, ...]
    segment_duration_s: float = DEFAULT_SEGMENT_DURATION_S
    segment_count: int = DEFAULT_SEGMENT_COUNT
    title: str = DEFAULT_TITLE

    def __post_init__(self) -> None:
        validate(self)

    def __len__(self) -> int:
        return len(self.representations)

    @property
    def bitrates_kbps(self) -> list[int]:
        return [r.bitrate_kbps for r in self.representations]

    def representation(self, level: int) -> Representation:
        if not 0 <= level < len(self.representations):
            raise IndexError(f"level {level} out of range 0..{len(self.representations) - 1}")
        return self.representations[level]

    def segment(self, level: int, index: int) -> SegmentDescriptor:
        return SegmentDescriptor(level, index, segment_bytes(self, level, index), segment_url(self, level, index))

    def with_segment_count(self, segment_count: int) -> MediaCatalog:
        return MediaCatalog(self.representations, self.segment_duration_s, segment_count, self.title)


def validate(catalog: MediaCatalog) -> None:
    reps = catalog.representations
    if not reps:
        raise CatalogError("catalog has no representations")
    if not catalog.segment_duration_s > 0:
        raise CatalogError(f"segment_duration_s must be > 0, got {catalog.segment_duration_s}")
    if catalog.segment_count < 1:
        raise CatalogError(f"segment_count must be >= 1, got {catalog.segment_count}")
    for i, rep in enumerate(reps):
        if rep.level != i:
            raise CatalogError(f"representation {i} has level {rep.level}")
        if rep.bitrate_kbps <= 0:
            raise CatalogError(f"level {i}: bitrate must be > 0")
        if i and rep.bitrate_kbps <= reps[i - 1].bitrate_kbps:
            raise CatalogError(f"level {i}: ladder must be strictly increasing in bitrate")


def build_default_catalog(segment_count: int = DEFAULT_SEGMENT_COUNT) -> MediaCatalog:
    reps = tuple(Representation(i, b) for i, b in enumerate(DEFAULT_LADDER_KBPS))
    return MediaCatalog(reps, DEFAULT_SEGMENT_DURATION_S, segment_count, DEFAULT_TITLE)


def segment_bytes(catalog: MediaCatalog, level: int, segment: int) -> int:
    """CBR segment size: ``round(bitrate * 1000 * duration / 8)``; identical for every index."""
    rep = catalog.representation(level)
    if not 0 <= segment < catalog.segment_count:
        raise IndexError(f"segment {segment} out of range 0..{catalog.segment_count - 1}")
    return round(rep.bitrate_kbps * 1000 * catalog.segment_duration_s / 8)


def segment_url(catalog: MediaCatalog, level: int, segment: int) -> str:
    rep = catalog.representation(level)
    return f"/bbb/{rep.bitrate_kbps}kbps/bunny_2s_{segment + 1:05d}.m4s"


# Catalog text format:
#
#   # comment
#   title = Big Buck Bunny
#   segment_duration_s = 2
#   segment_count = 300
#   level bitrate_kbps width height fps
#   0 100 640 360 30
#   ...
#
# Key/value lines come first; the header row starts the table.

_TABLE_HEADER = ("level", "bitrate_kbps", "width", "height", "fps")


def dumps_catalog(catalog: MediaCatalog) -> str:
    lines = [
        "# dashsim media catalog",
        f"title = {catalog.title}",
        f"segment_duration_s = {catalog.segment_duration_s!r}",
        f"segment_count = {catalog.segment_count}",
        " ".join(_TABLE_HEADER),
    ]
    for r in catalog.representations:
        lines.append(f"{r.level} {r.bitrate_kbps} {r.width} {r.height} {r.frame_rate}")
    return "\n".join(lines) + "\n"


def loads_catalog(text: str, source: str = "<string>") -> MediaCatalog:
    meta: dict[str, str] = {}
    rows: list[Representation] = []
    in_table = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        where = f"{source}:{lineno}"
        if not in_table:
            if tuple(line.split()) == _TABLE_HEADER:
                in_table = True
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise CatalogError(f"{where}: expected 'key = value' or table header, got {raw!r}")
            meta[key.strip()] = value.strip()
            continue
        fields = line.split()
        if len(fields) != len(_TABLE_HEADER):
            raise CatalogError(f"{where}: expected {len(_TABLE_HEADER)} fields, got {len(fields)}")
        try:
            level, bitrate, width, height, fps = (int(f) for f in fields)
        except ValueError:
            raise CatalogError(f"{where}: non-integer field in {raw!r}") from None
        rows.append(Representation(level, bitrate, width, height, fps))

    for key in ("title", "segment_duration_s", "segment_count"):
        if key not in meta:
            raise CatalogError(f"{source}: missing field {key!r}")
    try:
        duration = float(meta["segment_duration_s"])
    except ValueError:
        raise CatalogError(f"{source}: field 'segment_duration_s' is not a number") from None
    try:
        count = int(meta["segment_count"])
    except ValueError:
        raise CatalogError(f"{source}: field 'segment_count' is not an integer") from None
    return MediaCatalog(tuple(rows), duration, count, meta["title"])


def save_catalog(catalog: MediaCatalog, path: str | Path) -> None:
    Path(path).write_text(dumps_catalog(catalog))


def load_catalog(path: str | Path) -> MediaCatalog:
    p = Path(path)
    return loads_catalog(p.read_text(), str(p))
