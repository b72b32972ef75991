from types import SimpleNamespace

import pytest

from bench_cli import (
    ChecksumMismatchError,
    ConfigError,
    MissingBaselineError,
    build_report,
    check_checksums,
    load_runs,
    main,
    resolve_levels,
    write_report,
)
from config import REPORT_SCHEMA
from utils.report_writer import fmt_value, parse_float, read_csv, read_schema, write_csv, write_json


def _run(scenario, level, loads, misses=None, hist=None, events=(), timeline="warmup"):
    reps = []
    for i, x in enumerate(loads):
        reps.append({
            "counters": {"instructions": 1000.0, "l1d_loads": float(x), "l1d_misses": misses,
                         "wall_time": 1_000_000.0 + 10 * i},
            "checksum": 0,
            "passes": 1,
            "events": list(events),
            "histogram": hist or {"O0": 1, "O1": 0, "O2": 0},
            "reasons": {},
            "unprotect_count": 0,
            "analyze_calls": {},
            "timeline": timeline,
        })
    return {"scenario": scenario, "level": level, "short": False, "passes": 1, "partial": False,
            "unavailable": {}, "reps": reps}


def _write_runs(run_dir, *runs):
    for run in runs:
        write_json(run_dir / f"{run['scenario']}-O{run['level']}.json", run)
    return run_dir


@pytest.fixture
def bishape_runs(tmp_path):
    event = {"t_offset_ns": 120, "count": 1, "site_id": 1, "kind": "apply"}
    return _write_runs(
        tmp_path / "runs",
        _run("bishape", "0", [1000, 1002, 998, 1001, 999]),
        _run("bishape", "2", [900, 902, 898, 901, 899], hist={"O0": 0, "O1": 0, "O2": 1}, events=[event]),
    )


# ------------------------------------------------------------------
# level selection
# ------------------------------------------------------------------

def test_cli_level_wins():
    assert resolve_levels("1", {"IC_DBM_LEVEL": "2"}) == ["1"]


def test_env_level_is_one_character():
    assert resolve_levels(None, {"IC_DBM_LEVEL": "b"}) == ["b"]
    for bad in ("", "02", "3", " 1"):
        with pytest.raises(ConfigError):
            resolve_levels(None, {"IC_DBM_LEVEL": bad})


def test_default_levels():
    assert resolve_levels(None, {}) == ["0", "1", "2"]


# ------------------------------------------------------------------
# report
# ------------------------------------------------------------------

def test_report_tables(bishape_runs):
    tables = build_report(load_runs(bishape_runs))
    assert set(tables) == {"rq1_histogram", "rq2_instructions", "rq3_loads", "rq4_time", "l1d_misses", "timeline"}

    _, loads = tables["rq3_loads"]
    base, patched = loads
    assert (base["level"], base["note"]) == ("0", "baseline")
    assert patched["ratio_vs_O0"] == pytest.approx(0.9)
    assert patched["welch_t"] < 0 and patched["significant"] is True

    _, instructions = tables["rq2_instructions"]
    assert instructions[1]["note"] == "degenerate"
    assert instructions[1]["welch_p"] == 1.0

    _, misses = tables["l1d_misses"]
    assert all(row["note"] == "unavailable" for row in misses)

    _, hist = tables["rq1_histogram"]
    assert [(r["level"], r["O2"], r["total"]) for r in hist] == [("0", 0, 1), ("2", 1, 1)]

    _, timeline = tables["timeline"]
    assert len(timeline) == 5
    assert timeline[0]["kind"] == "apply" and timeline[0]["behaviour"] == "warmup"


def test_report_files_round_trip(bishape_runs, tmp_path):
    out = tmp_path / "reports"
    paths = write_report(bishape_runs, out)
    assert {p.name for p in paths} >= {"rq1_histogram.csv", "rq3_loads.csv", "rq4_time.csv"}
    for p in paths:
        assert read_schema(p) == REPORT_SCHEMA
    rows = read_csv(out / "rq3_loads.csv")
    assert rows[1]["level"] == "2"
    assert parse_float(rows[1]["ratio_vs_O0"]) == pytest.approx(0.9)
    assert rows[1]["significant"] == "true"
    assert rows[0]["welch_p"] == ""


def test_missing_baseline(tmp_path):
    run_dir = _write_runs(tmp_path / "runs", _run("kshape", "2", [1, 2, 3]))
    with pytest.raises(MissingBaselineError):
        build_report(load_runs(run_dir))
    assert main(["report", str(run_dir), "--out", str(tmp_path / "out")]) == 1


def test_single_rep_is_insufficient(tmp_path):
    run_dir = _write_runs(tmp_path / "runs", _run("monomorphic", "0", [10]), _run("monomorphic", "2", [9]))
    _, loads = build_report(load_runs(run_dir))["rq3_loads"]
    assert [r["note"] for r in loads] == ["insufficient-n", "insufficient-n"]
    assert loads[1]["ratio_vs_O0"] == pytest.approx(0.9)


def test_array_only_histogram_is_zero(tmp_path):
    zero = {"O0": 0, "O1": 0, "O2": 0}
    run_dir = _write_runs(tmp_path / "runs", _run("arrayonly", "0", [5, 6], hist=zero),
                          _run("arrayonly", "2", [5, 6], hist=zero))
    _, hist = build_report(load_runs(run_dir))["rq1_histogram"]
    assert all(r["total"] == 0 for r in hist)


def test_baseline_table_needs_level_b(tmp_path):
    run_dir = _write_runs(tmp_path / "runs", _run("residual", "0", [5, 6, 7]), _run("residual", "b", [5, 6, 7]))
    tables = build_report(load_runs(run_dir))
    _, rows = tables["rq0_baseline"]
    assert rows[0]["scenario"] == "residual"
    assert rows[0]["ratio_O0_vs_baseline"] == pytest.approx(1.0)


def test_duplicate_runs_are_rejected(tmp_path):
    run_dir = tmp_path / "runs"
    write_json(run_dir / "a.json", _run("bishape", "0", [1, 2]))
    write_json(run_dir / "b.json", _run("bishape", "0", [1, 2]))
    with pytest.raises(ValueError):
        load_runs(run_dir)


def test_csv_values(tmp_path):
    assert fmt_value(0.1) == "0.1"
    assert fmt_value(float("-inf")) == "-inf"
    assert fmt_value(False) == "false"
    assert fmt_value(None) == ""
    path = write_csv(tmp_path / "t.csv", ["a", "b"], [{"a": 1.5, "b": None}])
    assert read_csv(path) == [{"a": "1.5", "b": ""}]


# ------------------------------------------------------------------
# commands
# ------------------------------------------------------------------

def test_classify_shipped_corpus(corpus_dir, capsys):
    assert main(["classify", str(corpus_dir)]) == 0
    out = capsys.readouterr().out
    assert "hit_path" in out
    assert "❌" not in out


def test_classify_fails_on_disagreement(tmp_path, capsys):
    (tmp_path / "bad.hex").write_text("# name: wrong\n# expect: O1\n# ic: 0x401007\n"
                                      "48 8b 05 00 10 00 00\n48 8b 04 c7\n")
    assert main(["classify", str(tmp_path)]) == 1
    assert main(["classify", str(tmp_path), "--lenient"]) == 0
    assert "❌" in capsys.readouterr().out


def test_patch_demo_prints_both_sequences(corpus_dir, capsys):
    assert main(["patch-demo", str(corpus_dir / "hit_paths.hex"), "--name", "hit_path", "--repatch", "4"]) == 0
    out = capsys.readouterr().out
    assert "mov    0x101c(%rip),%rax" in out
    assert "48 8b 87 18 00 00 00" in out
    assert "mov    0x18(%rdi),%rax" in out
    assert "wrote 20 00 00 00" in out


def test_patch_demo_unknown_fixture(corpus_dir):
    assert main(["patch-demo", str(corpus_dir / "hit_paths.hex"), "--name", "nope"]) == 1


def test_patch_demo_ineligible(corpus_dir, capsys):
    assert main(["patch-demo", str(corpus_dir / "failures.hex"), "--name", "fail_call"]) == 0
    assert "BranchEncountered" in capsys.readouterr().out


def _bench(level, passes, *sums):
    reps = [SimpleNamespace(checksum=s) for s in sums]
    return SimpleNamespace(scenario="bishape", level=level, passes=passes, reps=reps)


def test_checksums_agree_across_reps_and_levels():
    check_checksums([_bench("0", 10, 7, 7, 7), _bench("2", 10, 7, 7), _bench("1", 20, 14)])


def test_checksum_mismatch_between_reps():
    with pytest.raises(ChecksumMismatchError, match="reps disagree"):
        check_checksums([_bench("2", 10, 7, 8)])


def test_checksum_mismatch_between_levels():
    with pytest.raises(ChecksumMismatchError, match="level 2"):
        check_checksums([_bench("0", 10, 7), _bench("2", 10, 9)])
