# bench_cli.py: command line: corpus classification, patch demo, benchmarks, reports
# -----------------------------------------------------------------------------
#   classify   <corpus-dir> [--lenient]
#   patch-demo <fixture> [--name N] [--slot S] [--repatch R]
#   bench      <scenario> [--level 0|1|2|b] [--reps N] [--short] [--no-counters]
#   report     <run-dir> [--out DIR] [--alpha A]
# Exit status 1 on any package error, 2 on usage errors.
# -----------------------------------------------------------------------------

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from config import (
    ALPHA,
    CORPUS_DIR,
    DBM_LEVEL_ENV,
    DBM_LEVELS,
    DEFAULT_REPS,
    REPORT_DIR,
    RUNS_DIR,
    SCENARIO_OBJECTS,
)
from corpus import CorpusParseError, classify_corpus, load_corpus, load_fixtures
from dbm_engine import Ineligible, PageGuard, PatchError, analyze_site, apply_patch, plan_site, repatch_offset
from exec_oracle import ExecError
from object_model import ObjectModelError
from significance import InsufficientSamplesError, SampleSet, relative, welch_t_test
from utils.logger import logger, set_verbose
from utils.report_writer import UNAVAILABLE, read_json, write_csv, write_json
from x86_codec import CodeBuffer, DecodeError, EncodeError, decode_all, format_insn


class ConfigError(ValueError):
    pass


class MissingBaselineError(ValueError):
    pass


class ChecksumMismatchError(RuntimeError):
    pass


LEVEL_ORDER = ("b", "0", "1", "2")
METRICS = {
    "rq2_instructions": "instructions",
    "rq3_loads": "l1d_loads",
    "rq4_time": "wall_time",
    "l1d_misses": "l1d_misses",
}
METRIC_HEADER = ["scenario", "level", "n", "mean", "stddev", "ratio_vs_O0",
                 "welch_t", "welch_df", "welch_p", "significant", "note"]
HISTOGRAM_HEADER = ["scenario", "level", "O0", "O1", "O2", "total", "reasons"]
TIMELINE_HEADER = ["scenario", "level", "rep", "t_offset_ns", "count", "site_id", "kind", "behaviour"]
BASELINE_HEADER = ["scenario", "n_baseline", "n_O0", "mean_baseline", "mean_O0", "ratio_O0_vs_baseline",
                   "welch_t", "welch_df", "welch_p", "significant", "note"]


# ------------------------------------------------------------------
# level selection
# ------------------------------------------------------------------

def resolve_levels(cli_level: Optional[str], environ: Mapping[str, str] = os.environ) -> List[str]:
    """--level wins; otherwise IC_DBM_LEVEL (exactly one character); otherwise 0, 1 and 2."""
    if cli_level is not None:
        return [cli_level]
    value = environ.get(DBM_LEVEL_ENV)
    if value is None:
        return ["0", "1", "2"]
    if len(value) != 1 or value not in DBM_LEVELS:
        raise ConfigError(f"{DBM_LEVEL_ENV} must be exactly one of {', '.join(DBM_LEVELS)}, got {value!r}")
    return [value]


# ------------------------------------------------------------------
# report
# ------------------------------------------------------------------

def load_runs(run_dir: Path) -> Dict[Tuple[str, str], dict]:
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory {run_dir} does not exist")
    runs: Dict[Tuple[str, str], dict] = {}
    for path in sorted(run_dir.glob("*.json")):
        run = read_json(path)
        key = (run["scenario"], str(run["level"]))
        if key in runs:
            raise ValueError(f"{path}: second run for {key[0]} at level {key[1]}")
        runs[key] = run
    return runs


def _samples(run: dict, metric: str) -> Optional[SampleSet]:
    values = [rep["counters"].get(metric) for rep in run["reps"]]
    if any(v is None for v in values):
        return None
    return SampleSet.of(f"{run['scenario']}-O{run['level']}", values)


def _welch_columns(a: SampleSet, b: SampleSet, alpha: float) -> Dict[str, object]:
    try:
        w = welch_t_test(a, b, alpha)
    except InsufficientSamplesError:
        return {"note": "insufficient-n"}
    return {"welch_t": w.t_statistic, "welch_df": w.degrees_of_freedom, "welch_p": w.p_value,
            "significant": w.significant, "note": "degenerate" if w.degenerate else ""}


def _metric_rows(runs: Dict[Tuple[str, str], dict], scenario: str, metric: str, alpha: float) -> List[dict]:
    base = _samples(runs[(scenario, "0")], metric)
    rows = []
    for level in LEVEL_ORDER:
        run = runs.get((scenario, level))
        if run is None:
            continue
        row = {"scenario": scenario, "level": level, "n": len(run["reps"])}
        s = _samples(run, metric)
        if s is None or base is None:
            row["note"] = UNAVAILABLE
            rows.append(row)
            continue
        row.update(mean=s.mean, stddev=s.stddev, ratio_vs_O0=relative(s.mean, base.mean))
        if level == "0":
            row["note"] = "baseline" if s.n >= 2 else "insufficient-n"
        else:
            row.update(_welch_columns(s, base, alpha))
        rows.append(row)
    return rows


def _histogram_row(scenario: str, level: str, run: dict) -> dict:
    first = run["reps"][0] if run["reps"] else {"histogram": {}, "reasons": {}}
    hist = {k: first["histogram"].get(k, 0) for k in ("O0", "O1", "O2")}
    reasons = ";".join(f"{k}={v}" for k, v in sorted(first.get("reasons", {}).items()))
    return {"scenario": scenario, "level": level, **hist, "total": sum(hist.values()), "reasons": reasons}


def build_report(runs: Dict[Tuple[str, str], dict], alpha: float = ALPHA) -> Dict[str, Tuple[List[str], List[dict]]]:
    scenarios = sorted({s for s, _ in runs})
    for scenario in scenarios:
        if (scenario, "0") not in runs:
            raise MissingBaselineError(f"scenario {scenario!r} has no level 0 run to compare against")

    tables: Dict[str, Tuple[List[str], List[dict]]] = {}
    hist_rows, timeline_rows, baseline_rows = [], [], []
    metric_rows: Dict[str, List[dict]] = {name: [] for name in METRICS}

    for scenario in scenarios:
        for name, metric in METRICS.items():
            metric_rows[name].extend(_metric_rows(runs, scenario, metric, alpha))
        for level in LEVEL_ORDER:
            run = runs.get((scenario, level))
            if run is None:
                continue
            hist_rows.append(_histogram_row(scenario, level, run))
            for i, rep in enumerate(run["reps"]):
                for ev in rep.get("events", []):
                    timeline_rows.append({"scenario": scenario, "level": level, "rep": i, **ev,
                                          "behaviour": rep.get("timeline", "")})
        if (scenario, "b") in runs:
            baseline_rows.append(_baseline_row(runs, scenario, alpha))

    tables["rq1_histogram"] = (HISTOGRAM_HEADER, hist_rows)
    for name in METRICS:
        tables[name] = (METRIC_HEADER, metric_rows[name])
    tables["timeline"] = (TIMELINE_HEADER, timeline_rows)
    if baseline_rows:
        tables["rq0_baseline"] = (BASELINE_HEADER, baseline_rows)
    return tables


def _baseline_row(runs, scenario: str, alpha: float) -> dict:
    b = _samples(runs[(scenario, "b")], "wall_time")
    o0 = _samples(runs[(scenario, "0")], "wall_time")
    if b is None or o0 is None:
        return {"scenario": scenario, "note": UNAVAILABLE}
    row = {"scenario": scenario, "n_baseline": b.n, "n_O0": o0.n, "mean_baseline": b.mean,
           "mean_O0": o0.mean, "ratio_O0_vs_baseline": relative(o0.mean, b.mean)}
    row.update(_welch_columns(o0, b, alpha))
    return row


def write_report(run_dir: Path, out_dir: Path, alpha: float = ALPHA) -> List[Path]:
    tables = build_report(load_runs(run_dir), alpha)
    return [write_csv(out_dir / f"{name}.csv", header, rows) for name, (header, rows) in tables.items()]


# ------------------------------------------------------------------
# commands
# ------------------------------------------------------------------

def cmd_classify(args) -> int:
    result = classify_corpus(load_corpus(args.corpus_dir))
    for site in result.sites:
        mark = "✅" if site.agrees else "❌"
        where = f" at {site.stopped_at:#x}" if site.stopped_at is not None else ""
        print(f"{mark} {site.fixture.name:<32} {site.outcome}{where}")
    hist = result.histogram
    print(f"\n📊 O0={hist['O0']} O1={hist['O1']} O2={hist['O2']} (total {sum(hist.values())})")
    for reason, count in sorted(result.reasons.items()):
        print(f"   {reason}: {count}")
    if result.disagreements:
        print(f"⚠️ {len(result.disagreements)} fixture(s) disagree with their annotation")
        return 0 if args.lenient else 1
    return 0


def _listing(buf: CodeBuffer) -> str:
    lines = []
    for i, insn in enumerate(decode_all(buf), start=1):
        lines.append(f"{i:>2} {insn.raw.hex(' '):<24} {format_insn(insn)}")
    return "\n".join(lines)


def cmd_patch_demo(args) -> int:
    fixtures = load_fixtures(args.fixture)
    if args.name:
        fixtures = [f for f in fixtures if f.name == args.name]
    if not fixtures:
        raise ConfigError(f"no fixture named {args.name!r} in {args.fixture}")
    fx = fixtures[0]
    slot = fx.slot if args.slot is None else args.slot
    buf = fx.buffer()

    print(f"🔍 {fx.name} (label {fx.label_addr:#x}, IC offset word {fx.ic_addr:#x})")
    print(_listing(buf))
    c = analyze_site(buf, fx.label_addr, fx.ic_addr, fx.hint, fx.word_size)
    if isinstance(c, Ineligible):
        print(f"\n⛔️ not modifiable: {c.reason.value} at {c.stopped_at:#x}")
        return 0
    plan = plan_site(c, slot, fx.word_size)
    guard = PageGuard()
    guard.ensure_writable(plan.span_addr, plan.span_len)
    apply_patch(buf, plan, guard)
    print(f"\n🛠 -{plan.level.name}: {plan.span_len}-byte span at {plan.span_addr:#x}")
    print(_listing(buf))
    if args.repatch is not None:
        repatch_offset(buf, plan, args.repatch)
        field = buf.read(plan.disp_field_addr, 4)
        print(f"\n🔁 repatch to {args.repatch}: wrote {field.hex(' ')} at {plan.disp_field_addr:#x}")
        print(_listing(buf))
    return 0


def check_checksums(runs) -> None:
    """Every rep of every level must agree once the pass counts are equal."""
    by_passes: Dict[int, Tuple[str, int]] = {}
    for run in runs:
        checks = {rep.checksum for rep in run.reps}
        if len(checks) != 1:
            sums = ", ".join(f"{c:#x}" for c in sorted(checks))
            raise ChecksumMismatchError(f"{run.scenario} at level {run.level}: reps disagree ({sums})")
        checksum = checks.pop()
        seen = by_passes.setdefault(run.passes, (run.level, checksum))
        if seen[1] != checksum:
            raise ChecksumMismatchError(
                f"{run.scenario}: level {run.level} sum {checksum:#x} != level {seen[0]} sum {seen[1]:#x}")


def cmd_bench(args) -> int:
    from native.runner import run_benchmark

    out_dir = Path(args.out)
    runs = []
    for level in resolve_levels(args.level):
        print(f"🚀 {args.scenario} at level {level} ({args.reps} reps{', short' if args.short else ''})")
        run = run_benchmark(args.scenario, level, args.reps, counters=not args.no_counters,
                            short=args.short, passes=args.passes, objects=args.objects)
        if run.partial:
            print(f"⚠️ counters unavailable: {', '.join(sorted(run.unavailable))}")
        path = write_json(out_dir / f"{args.scenario}-O{level}.json", run.as_dict())
        runs.append(run)
        check_checksums(runs)
        print(f"📌 {path}, checksum {run.reps[0].checksum:#018x}, timeline {run.reps[0].timeline}")
    return 0


def cmd_report(args) -> int:
    paths = write_report(Path(args.run_dir), Path(args.out), args.alpha)
    for p in paths:
        print(f"📄 {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench_cli", description="Inline caches and their in-place rewriting.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("classify", help="classify every fixture of a corpus directory")
    c.add_argument("corpus_dir", nargs="?", default=CORPUS_DIR)
    c.add_argument("--lenient", action="store_true", help="exit 0 even when a fixture disagrees with its annotation")
    c.set_defaults(func=cmd_classify)

    d = sub.add_parser("patch-demo", help="show a fixture before and after patching")
    d.add_argument("fixture")
    d.add_argument("--name", help="fixture name inside the file (default: first)")
    d.add_argument("--slot", type=lambda s: int(s, 0), help="word index to patch in")
    d.add_argument("--repatch", type=lambda s: int(s, 0), help="then repatch to this word index")
    d.set_defaults(func=cmd_patch_demo)

    b = sub.add_parser("bench", help="run a native scenario")
    b.add_argument("scenario")
    b.add_argument("--level", choices=DBM_LEVELS)
    b.add_argument("--reps", type=int, default=DEFAULT_REPS)
    b.add_argument("--passes", type=int, help="skip calibration")
    b.add_argument("--objects", type=int, default=SCENARIO_OBJECTS, help="objects walked per pass")
    b.add_argument("--short", action="store_true", help="calibrate to the short overhead run")
    b.add_argument("--no-counters", action="store_true")
    b.add_argument("--out", default=RUNS_DIR)
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("report", help="CSV tables from a run directory")
    r.add_argument("run_dir", nargs="?", default=RUNS_DIR)
    r.add_argument("--out", default=REPORT_DIR)
    r.add_argument("--alpha", type=float, default=ALPHA)
    r.set_defaults(func=cmd_report)
    return p


PACKAGE_ERRORS = (ConfigError, MissingBaselineError, CorpusParseError, PatchError, DecodeError, EncodeError,
                  ExecError, ObjectModelError, InsufficientSamplesError, FileNotFoundError, OSError,
                  RuntimeError, ValueError)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    set_verbose(args.verbose)
    try:
        return args.func(args)
    except PACKAGE_ERRORS as e:
        logger.error("%s", e)
        print(f"❌ {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
