import csv
import io
import shutil
import subprocess
import sys

import pytest

from dashsim import netem
from dashsim.cli import main
from dashsim.media_catalog import build_default_catalog, save_catalog


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_table2(capsys):
    assert main(["table2"]) == 0
    rows = _rows(capsys.readouterr().out)
    assert [r["stack"] for r in rows] == ["h2-tcp", "h2-ssl", "h1-quic", "spdy-quic"]
    assert rows[0]["total_overhead_pct"] == "4.3593"
    assert rows[3]["total_overhead_pct"] == "3.3816"


def test_table2_single_stack(capsys):
    assert main(["table2", "--stack", "h1-quic", "--format", "csv"]) == 0
    rows = _rows(capsys.readouterr().out)
    assert len(rows) == 1 and rows[0]["mtu"] == "1242"


def test_overhead_to_stdout_and_out_dir(capsys, tmp_path):
    rc = main(["overhead", "--stack", "h2-ssl", "--seeds", "1,2", "--segments", "3", "--out", str(tmp_path)])
    assert rc == 0
    cap = capsys.readouterr()
    rows = _rows(cap.out)
    assert len(rows) == 14 and {r["stack"] for r in rows} == {"h2-ssl"}
    assert "wrote 3 files" in cap.err
    assert (tmp_path / "overhead.csv").read_text() == cap.out
    assert (tmp_path / "overhead_seed2.csv").exists()


def test_utilization_rtt_flag(capsys, tmp_path):
    rc = main(["utilization", "--stack", "spdy-quic", "--rtt", "0,150", "--seeds", "3",
               "--segments", "2", "--out", str(tmp_path)])
    assert rc == 0
    rows = _rows(capsys.readouterr().out)
    assert {r["rtt_ms"] for r in rows} == {"0", "150"}
    t1 = _rows((tmp_path / "table1.csv").read_text())
    assert [(r["stack"], r["rtt_ms"]) for r in t1] == [("spdy-quic", "0"), ("spdy-quic", "150")]


def test_adaptation_custom_inputs(capsys, tmp_path):
    traj = tmp_path / "traj.txt"
    netem.save_trajectory(netem.BandwidthTrajectory(((0, 3000), (20_000_000, 1500))), traj)
    cat = tmp_path / "cat.txt"
    save_catalog(build_default_catalog(), cat)
    out = tmp_path / "out"
    rc = main(["adaptation", "--stack", "h2-tcp", "--rtt", "50", "--seeds", "1", "--segments", "15",
               "--trajectory", str(traj), "--catalog", str(cat), "--dump-packets", "--out", str(out)])
    assert rc == 0
    rows = _rows(capsys.readouterr().out)
    assert len(rows) == 1 and rows[0]["segments"] == "15"
    assert len(_rows((out / "traces" / "trace_h2-tcp_rtt50_seed1.csv").read_text())) == 15
    pk = _rows((out / "packets" / "adaptation_h2-tcp_rtt50_seed1.csv").read_text())
    assert pk and {r["direction"] for r in pk} == {"up", "down"}


@pytest.mark.parametrize("argv", [
    ["overhead", "--catalog", "/nonexistent/catalog.txt"],
    ["adaptation", "--trajectory", "/nonexistent/traj.txt"],
    ["overhead", "--segments", "0"],
])
def test_runtime_errors_exit_nonzero(argv, capsys):
    assert main(argv) == 1
    err = capsys.readouterr().err
    assert err.startswith("dashsim: error:")


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["overhead", "--stack", "tcp"],
    ["utilization", "--rtt", "-5"],
    ["overhead", "--seeds", "a,b"],
    ["table2", "--format", "json"],
])
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2


def test_bad_catalog_file(tmp_path, capsys):
    bad = tmp_path / "cat.txt"
    bad.write_text("this is not a catalog\n")
    assert main(["overhead", "--catalog", str(bad)]) == 1
    assert "dashsim: error:" in capsys.readouterr().err


def test_module_entry_point():
    exe = shutil.which("dashsim")
    cmd = [exe] if exe else [sys.executable, "-m", "dashsim.cli"]
    proc = subprocess.run(cmd + ["table2", "--stack", "h2-tcp"], capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[1].startswith("h2-tcp,tcp,14,20,32,66,1514,")
    proc = subprocess.run(cmd + ["overhead", "--catalog", "/nonexistent"], capture_output=True, text=True, check=False)
    assert proc.returncode != 0 and "error" in proc.stderr
