import json
import subprocess
import sys

import numpy as np
import pytest

from kvmatch.cli import main
from kvmatch.datafile import read_series, write_series
from kvmatch.kvindex import KVIndex, build


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--length", "20000", "--seed", "7", "--out", str(d / "x.bin")]) == 0
    assert main(["index", "--data", str(d / "x.bin"), "--w", "50", "--out", str(d / "i50.kvmi")]) == 0
    assert main(["index", "--data", str(d / "x.bin"), "--family", "--wu", "25", "--levels", "5",
                 "--out-dir", str(d / "fam")]) == 0
    x = read_series(d / "x.bin", mmap=False)
    write_series(d / "q.bin", x[4999:5299])
    write_series(d / "q2048.bin", x[9999:12047])
    return d


def family_arg(d):
    return ",".join(str(d / "fam" / f"index_w{w}.kvmi") for w in (25, 50, 100, 200, 400))


def test_gen_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    assert run(capsys, "gen", "--length", 1000, "--seed", 7, "--out", a)[0] == 0
    assert run(capsys, "gen", "--length", 1000, "--seed", 7, "--out", b)[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_gen_zero_length_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--length", "0", "--out", str(tmp_path / "z.bin")])
    assert exc.value.code == 2


def test_gen_file_size(tmp_path, capsys):
    path = tmp_path / "m.bin"
    assert run(capsys, "gen", "--length", 10**6, "--out", path)[0] == 0
    assert path.stat().st_size == 8 * 10**6


def test_index_defaults_and_conservation(workdir, capsys):
    code, out, _ = run(capsys, "index", "--data", workdir / "x.bin", "--w", 50,
                       "--out", workdir / "again.kvmi", "--json")
    assert code == 0
    info = json.loads(out)
    assert info["n_P"] == 20000 - 50 + 1
    x = read_series(workdir / "x.bin")
    assert KVIndex.open(workdir / "again.kvmi") == build(x, 50, 0.5, 0.8)


def test_family_files(workdir):
    names = sorted(p.name for p in (workdir / "fam").iterdir())
    assert names == sorted(f"index_w{w}.kvmi" for w in (25, 50, 100, 200, 400))
    for w in (25, 50, 100, 200, 400):
        assert KVIndex.open(workdir / "fam" / f"index_w{w}.kvmi").w == w


def test_query_planted(workdir, capsys):
    code, out, err = run(capsys, "query", "--data", workdir / "x.bin", "--index", workdir / "i50.kvmi",
                         "--query", workdir / "q.bin", "--type", "rsm-ed", "--epsilon", 0)
    assert code == 0
    assert out == "5000\t0.000000\n"
    assert "index_accesses" in err


def test_query_missing_alpha(workdir, capsys):
    code, out, err = run(capsys, "query", "--data", workdir / "x.bin", "--index", workdir / "i50.kvmi",
                         "--query", workdir / "q.bin", "--type", "cnsm-ed", "--epsilon", 1)
    assert code == 2 and out == ""


def test_query_rho_flags(workdir, capsys):
    base = ["query", "--data", workdir / "x.bin", "--index", workdir / "i50.kvmi",
            "--query", workdir / "q.bin", "--type", "rsm-dtw", "--epsilon", 1]
    assert run(capsys, *base)[0] == 2
    with pytest.raises(SystemExit) as exc:
        main([str(a) for a in base] + ["--rho", "3", "--rho-rel", "5"])
    assert exc.value.code == 2
    code, out_abs, _ = run(capsys, *base, "--rho", 15)
    code2, out_rel, _ = run(capsys, *base, "--rho-rel", 5)
    assert code == code2 == 0 and out_abs == out_rel


def test_multiple_indexes_need_dp(workdir, capsys):
    code, _, _ = run(capsys, "query", "--data", workdir / "x.bin", "--index", family_arg(workdir),
                     "--query", workdir / "q.bin", "--type", "rsm-ed", "--epsilon", 1)
    assert code == 2


@pytest.mark.parametrize("kind,extra", [
    ("rsm-ed", []),
    ("rsm-dtw", ["--rho-rel", "5"]),
    ("cnsm-ed", ["--alpha", "1.5", "--beta-rel", "5"]),
    ("cnsm-dtw", ["--alpha", "1.5", "--beta-rel", "5", "--rho-rel", "5"]),
])
def test_dp_family_matches_single_index(workdir, capsys, kind, extra):
    common = ["--data", workdir / "x.bin", "--query", workdir / "q2048.bin", "--type", kind,
              "--epsilon", 12 if kind.startswith("rsm") else 6, *extra, "--json"]
    code, single, _ = run(capsys, "query", "--index", workdir / "i50.kvmi", *common)
    assert code == 0
    code, dp, _ = run(capsys, "query", "--index", family_arg(workdir), "--dp", *common)
    assert code == 0
    a, b = json.loads(single), json.loads(dp)
    assert [m["offset"] for m in a["matches"]] == [m["offset"] for m in b["matches"]]
    assert len(a["matches"]) >= 1
    assert b["segmentation"] is not None


def test_json_and_plain_agree(workdir, capsys):
    common = ["query", "--data", workdir / "x.bin", "--index", workdir / "i50.kvmi",
              "--query", workdir / "q.bin", "--type", "rsm-ed", "--epsilon", 8]
    code, plain, err = run(capsys, *common)
    code2, plain2, _ = run(capsys, *common)
    code3, js, _ = run(capsys, *common, "--json")
    assert code == code2 == code3 == 0
    assert plain == plain2
    doc = json.loads(js)
    lines = [f"{m['offset']}\t{m['distance']:.6f}" for m in doc["matches"]]
    assert plain.splitlines() == lines and len(lines) > 1
    stats = dict(line.split(": ", 1) for line in err.splitlines() if ": " in line
                 and not line.startswith(("window", "segmentation")))
    for key in ("matches", "scans", "index_accesses", "cs_n_I", "cs_n_P", "candidates_verified"):
        assert int(stats[key]) == doc["stats"][key]


def test_io_errors(workdir, tmp_path, capsys):
    base = ["--query", workdir / "q.bin", "--type", "rsm-ed", "--epsilon", 1]
    assert run(capsys, "query", "--data", workdir / "x.bin", "--index", tmp_path / "none.kvmi", *base)[0] == 3
    bad = tmp_path / "bad.kvmi"
    bad.write_bytes((workdir / "i50.kvmi").read_bytes()[:-5])
    assert run(capsys, "query", "--data", workdir / "x.bin", "--index", bad, *base)[0] == 3
    odd = tmp_path / "odd.bin"
    odd.write_bytes(b"1234567")
    assert run(capsys, "query", "--data", odd, "--index", workdir / "i50.kvmi", *base)[0] == 3


def test_bench_empty_dir(workdir, tmp_path, capsys):
    empty = tmp_path / "none"
    empty.mkdir()
    code, out, _ = run(capsys, "bench", "--data", workdir / "x.bin", "--index", workdir / "i50.kvmi",
                       "--queries", empty, "--type", "rsm-ed", "--epsilon", 0, "--json")
    assert code == 0 and json.loads(out)["table"] == []


def test_bench_planted_batch(workdir, tmp_path, capsys):
    qdir = tmp_path / "qs"
    qdir.mkdir()
    x = read_series(workdir / "x.bin", mmap=False)
    rng = np.random.default_rng(0)
    for k, j in enumerate(rng.choice(19_000, 10, replace=False)):
        write_series(qdir / f"q{k:02d}.bin", x[j:j + 128 + 64 * (k % 2)])
    code, out, _ = run(capsys, "bench", "--data", workdir / "x.bin", "--index", workdir / "i50.kvmi",
                       "--queries", qdir, "--type", "rsm-ed", "--epsilon", 0, "--json")
    assert code == 0
    doc = json.loads(out)
    rows = [r for group in doc["queries"].values() for r in group]
    assert len(rows) == 10 and all(r["matches"] == 1 for r in rows)
    for r in rows:
        m = 128 if r["query"] in {f"q{k:02d}.bin" for k in range(0, 10, 2)} else 192
        total = 20000 - m + 1
        assert r["matches"] / total <= r["pruning"] <= 1
    assert [t["query_length"] for t in doc["table"]] == [128, 192]


def test_bench_selectivity_target(workdir, tmp_path, capsys):
    qdir = tmp_path / "sel"
    qdir.mkdir()
    x = read_series(workdir / "x.bin", mmap=False)
    write_series(qdir / "a.bin", x[3000:3200] + 0.05)
    code, out, _ = run(capsys, "bench", "--data", workdir / "x.bin", "--index", workdir / "i50.kvmi",
                       "--queries", qdir, "--type", "rsm-ed", "--selectivity-target", 1e-3, "--json")
    assert code == 0
    row = json.loads(out)["queries"]["200"][0]
    assert row["matches"] == round(1e-3 * (20000 - 200 + 1))


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "kvmatch", "gen", "--length", "0",
                           "--out", str(tmp_path / "z.bin")], capture_output=True, text=True)
    assert proc.returncode == 2
    proc = subprocess.run([sys.executable, "-m", "kvmatch", "gen", "--length", "10",
                           "--out", str(tmp_path / "t.bin")], capture_output=True, text=True)
    assert proc.returncode == 0 and "n=10" in proc.stdout
