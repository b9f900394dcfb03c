import pytest
from hypothesis import given
from hypothesis import strategies as st

from dashsim.media_catalog import (
    DEFAULT_LADDER_KBPS,
    CatalogError,
    MediaCatalog,
    Representation,
    build_default_catalog,
    dumps_catalog,
    load_catalog,
    loads_catalog,
    save_catalog,
    segment_bytes,
)

LADDER = (100, 200, 350, 500, 700, 900, 1100, 1300, 1600, 1900, 2300, 2800, 3400, 4500)


def test_default_ladder():
    cat = build_default_catalog()
    assert DEFAULT_LADDER_KBPS == LADDER
    assert cat.bitrates_kbps == list(LADDER)
    assert cat.representation(0).bitrate_kbps == 100
    assert cat.representation(13).bitrate_kbps == 4500
    assert cat.representation(8).bitrate_kbps == 1600
    assert cat.segment_duration_s == 2.0 and cat.segment_count == 300
    assert all((r.width, r.height, r.frame_rate) == (640, 360, 30) for r in cat.representations)


def test_segment_bytes_examples():
    cat = build_default_catalog()
    assert segment_bytes(cat, 13, 0) == 1_125_000
    assert segment_bytes(cat, 0, 0) == 25_000
    with pytest.raises(IndexError):
        segment_bytes(cat, 14, 0)
    with pytest.raises(IndexError):
        segment_bytes(cat, 0, 300)


def test_cbr_and_increasing():
    cat = build_default_catalog()
    for lvl in range(len(cat)):
        sizes = {segment_bytes(cat, lvl, i) for i in (0, 1, 150, 299)}
        assert len(sizes) == 1
    per_level = [segment_bytes(cat, lvl, 0) for lvl in range(len(cat))]
    assert per_level == sorted(set(per_level))


def test_session_media_sum():
    cat = build_default_catalog(segment_count=7)
    for lvl in range(len(cat)):
        total = sum(cat.segment(lvl, i).media_bytes for i in range(cat.segment_count))
        assert total == cat.segment_count * segment_bytes(cat, lvl, 0)


def test_urls_unique():
    cat = build_default_catalog(segment_count=20)
    urls = {cat.segment(lvl, i).url_path for lvl in range(len(cat)) for i in range(20)}
    assert len(urls) == 14 * 20


def test_round_trip_file(tmp_path):
    cat = build_default_catalog()
    p = tmp_path / "cat.txt"
    save_catalog(cat, p)
    assert load_catalog(p) == cat
    # bit-exact text round trip
    assert dumps_catalog(load_catalog(p)) == p.read_text()


@given(
    st.lists(st.integers(1, 100_000), min_size=1, max_size=20, unique=True),
    st.floats(0.01, 30, allow_nan=False),
    st.integers(1, 10_000),
    st.text(st.characters(min_codepoint=33, max_codepoint=126), min_size=1, max_size=30),
)
def test_round_trip_property(rates, dur, count, title):
    reps = tuple(Representation(i, r) for i, r in enumerate(sorted(rates)))
    cat = MediaCatalog(reps, dur, count, title)
    assert loads_catalog(dumps_catalog(cat)) == cat


def test_descending_rejected():
    text = dumps_catalog(build_default_catalog()).replace("1 200 640", "1 50 640")
    with pytest.raises(CatalogError, match="increasing"):
        loads_catalog(text)


def test_zero_duration_rejected():
    text = dumps_catalog(build_default_catalog()).replace("segment_duration_s = 2.0", "segment_duration_s = 0")
    with pytest.raises(CatalogError, match="segment_duration_s"):
        loads_catalog(text)


def test_parse_error_has_line():
    text = dumps_catalog(build_default_catalog()) + "14 5000 640 360\n"
    with pytest.raises(CatalogError, match=r":\d+: expected 5 fields"):
        loads_catalog(text, "x.txt")


def test_missing_field():
    text = "\n".join(l for l in dumps_catalog(build_default_catalog()).splitlines() if not l.startswith("title"))
    with pytest.raises(CatalogError, match="title"):
        loads_catalog(text)


def test_bundled_catalog_file_matches_default():
    from importlib import resources
    text = resources.files("dashsim.data").joinpath("default_catalog.txt").read_text()
    assert loads_catalog(text) == build_default_catalog()
