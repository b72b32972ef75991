# native/runner.py: scenarios, calibration and repetitions on the host CPU

from __future__ import annotations

import ctypes
import math
import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

from config import (
    CALIBRATION_MAX_PASSES,
    CALIBRATION_TARGET_S,
    KSHAPE_BLOCK,
    KSHAPE_COUNT,
    RESIDUAL_FRACTION,
    RESIDUAL_TAIL,
    SCENARIO_OBJECTS,
    SHORT_TARGET_S,
    WARMUP_FRACTION,
)
from dbm_engine import DbmEngine, Failed, FailReason, PageGuard, Recognized, RewriteEvent
from ic_runtime import InlineCache, cache_miss
from object_model import HeapObject, ShapeRegistry, WORD_MASK, build_object, object_words, read_property
from utils.logger import logger

from native.emitter import (
    RC_DONE,
    Kernel,
    ShapeVariant,
    emit_array_kernel,
    emit_flush_barrier,
    emit_ic_kernel,
)
from native.perf import CounterGroup, PerfCounters
from native.region import ExecRegion, require_native

SCENARIOS = ("monomorphic", "bishape", "kshape", "arrayonly", "residual", "variants")
PROPERTY = "prop"


class ChecksumMismatchError(RuntimeError):
    pass


# ------------------------------------------------------------------
# scenario data
# ------------------------------------------------------------------

def _shape(k: int, value: int, shapes: ShapeRegistry) -> HeapObject:
    # k filler properties ahead of "prop": shape k puts prop in slot k
    props = [(f"f{j}", (value * 31 + j) & WORD_MASK) for j in range(k)]
    props.append((PROPERTY, value))
    return build_object(props, shapes=shapes)


def build_objects(scenario: str, n: int = SCENARIO_OBJECTS,
                  shapes: Optional[ShapeRegistry] = None) -> Tuple[List[HeapObject], List[HeapObject]]:
    """Objects walked every pass, plus the late tail (residual scenario only)."""
    shapes = shapes or ShapeRegistry()
    tail: List[HeapObject] = []
    if scenario in ("monomorphic", "variants", "residual"):
        objs = [_shape(1, i + 1, shapes) for i in range(n)]
        if scenario == "residual":
            tail = [_shape(2 + j, 10_000 + j, shapes) for j in range(RESIDUAL_TAIL)]
    elif scenario == "bishape":
        # {a, prop} then {b, c, prop}
        objs = [_shape(1 if i < n // 2 else 2, i + 1, shapes) for i in range(n)]
    elif scenario == "kshape":
        objs = [_shape(1 + (i // KSHAPE_BLOCK) % KSHAPE_COUNT, i + 1, shapes) for i in range(n)]
    elif scenario == "arrayonly":
        objs = []
    else:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
    return objs, tail


def _variants_for(scenario: str) -> Sequence[ShapeVariant]:
    if scenario == "arrayonly":
        return ()
    if scenario == "variants":
        return tuple(ShapeVariant)
    return (ShapeVariant.CANONICAL,)


class _NativeArray:
    """Object pointer table backed by ctypes word arrays."""

    def __init__(self, objs: Sequence[HeapObject]) -> None:
        self.objs = list(objs)
        self._words = [(ctypes.c_uint64 * len(w))(*w) for w in map(object_words, self.objs)]
        self.table = (ctypes.c_uint64 * max(1, len(self._words)))(
            *[ctypes.addressof(w) for w in self._words])
        self.n = len(self._words)

    @property
    def ptr(self) -> int:
        return ctypes.addressof(self.table)


@lru_cache(maxsize=4)
def _population(scenario: str, n: int) -> Tuple[_NativeArray, Optional[_NativeArray]]:
    # read-only for the kernels; shared by every rep at the same size
    objs, tail = build_objects(scenario, n)
    return _NativeArray(objs), (_NativeArray(tail) if tail else None)


# ------------------------------------------------------------------
# one repetition
# ------------------------------------------------------------------

@dataclass
class RepResult:
    counters: PerfCounters
    checksum: int
    passes: int
    events: List[RewriteEvent]
    histogram: Dict[str, int]
    reasons: Dict[str, int]
    unprotect_count: int
    analyze_calls: Dict[int, int]
    timeline: str

    def as_dict(self) -> dict:
        d = asdict(self)
        d["analyze_calls"] = {str(k): v for k, v in self.analyze_calls.items()}
        return d


class ScenarioRun:
    """Fresh code and ICs for one repetition over a shared population."""

    def __init__(self, scenario: str, level: str, objects: int = SCENARIO_OBJECTS) -> None:
        self.scenario = scenario
        self.level = level
        self.n_objects = objects
        self.region = ExecRegion()
        self.barrier = emit_flush_barrier(self.region)
        self.objects, self.tail = _population(scenario, objects)

        self.kernels: List[Kernel] = []
        for variant in _variants_for(scenario):
            self.kernels.append(emit_ic_kernel(self.region, InlineCache(PROPERTY), variant))
        if scenario == "arrayonly":
            self.values = (ctypes.c_uint64 * objects)(*range(1, objects + 1))
            self.kernels.append(emit_array_kernel(self.region))
        self.region.seal()

        self.guard = PageGuard(self.region.page_size, backend=self.region.make_writable)
        self.engine: Optional[DbmEngine] = None
        if level != "b":
            self.engine = DbmEngine(self.region.code, self.guard, max_level=int(level), barrier=self.barrier)

    def _drive(self, kernel: Kernel, arr: Optional[_NativeArray]) -> int:
        state = kernel.state
        state[0] = 0
        if kernel.ic is None:
            kernel.fn(ctypes.addressof(self.values), self.n_objects, 0, ctypes.addressof(state))
            return state[0]
        start = 0
        while True:
            rc = kernel.fn(arr.ptr, arr.n, start, ctypes.addressof(state))
            if rc == RC_DONE:
                return state[0]
            idx = state[1]
            value = cache_miss(kernel.ic, arr.objs[idx], kernel.ic.name, self.engine)
            state[0] = (state[0] + value) & WORD_MASK
            start = idx + 1

    def run_pass(self, arr: Optional[_NativeArray] = None) -> int:
        arr = arr or self.objects
        total = 0
        for kernel in self.kernels:
            total = (total + self._drive(kernel, arr)) & WORD_MASK
        return total

    def expected_pass(self, arr: Optional[_NativeArray] = None) -> int:
        arr = arr or self.objects
        if self.scenario == "arrayonly":
            return sum(range(1, self.n_objects + 1)) & WORD_MASK
        one = sum(read_property(o, PROPERTY) for o in arr.objs)
        return (one * len(self.kernels)) & WORD_MASK

    def histogram(self) -> Tuple[Dict[str, int], Dict[str, int]]:
        hist = {"O0": 0, "O1": 0, "O2": 0}
        reasons: Dict[str, int] = {}
        for k in self.kernels:
            if k.ic is None:
                continue
            memo = k.ic.memo
            if isinstance(memo, Recognized) and memo.applied:
                hist[memo.level.name] += 1
            else:
                hist["O0"] += 1
                reason = None
                if isinstance(memo, Failed):
                    reason = memo.reason.value
                elif isinstance(memo, Recognized) and memo.restored:
                    reason = FailReason.IMMEDIATE_TOO_WIDE.value
                if reason is not None:
                    reasons[reason] = reasons.get(reason, 0) + 1
        return hist, reasons

    def close(self) -> None:
        self.kernels.clear()
        self.region.close()


def classify_timeline(events: Sequence[RewriteEvent], total_ns: int) -> str:
    if not events:
        return "none"
    if total_ns <= 0:
        return "warmup"
    early = total_ns * WARMUP_FRACTION
    late = total_ns * RESIDUAL_FRACTION
    if all(e.t_offset_ns <= early for e in events):
        return "warmup"
    if all(e.t_offset_ns <= early or e.t_offset_ns >= late for e in events):
        return "warmup+residual"
    return "continuous"


def calibrate(scenario: str, level: str, short: bool = False, objects: int = SCENARIO_OBJECTS) -> int:
    """Passes needed for one rep to last the calibration target."""
    target = SHORT_TARGET_S if short else CALIBRATION_TARGET_S
    trial = ScenarioRun(scenario, level, objects)
    try:
        trial.run_pass()                      # warm: first misses and patches
        passes, elapsed = 0, 0.0
        t0 = time.perf_counter()
        while elapsed < min(target, 0.2) and passes < CALIBRATION_MAX_PASSES:
            trial.run_pass()
            passes += 1
            elapsed = time.perf_counter() - t0
        per_pass = elapsed / max(1, passes)
    finally:
        trial.close()
    return max(1, min(CALIBRATION_MAX_PASSES, math.ceil(target / max(per_pass, 1e-9))))


def run_rep(scenario: str, level: str, passes: int, counters: CounterGroup,
            objects: int = SCENARIO_OBJECTS) -> RepResult:
    run = ScenarioRun(scenario, level, objects)
    try:
        if run.engine is not None:
            run.engine.start_clock()
        counters.start()
        checksum = 0
        for _ in range(passes):
            checksum = (checksum + run.run_pass()) & WORD_MASK
        if run.tail is not None:
            checksum = (checksum + run.run_pass(run.tail)) & WORD_MASK
        measured = counters.stop()

        expected = (run.expected_pass() * passes) & WORD_MASK
        if run.tail is not None:
            expected = (expected + run.expected_pass(run.tail)) & WORD_MASK
        if checksum != expected:
            raise ChecksumMismatchError(
                f"{scenario} at level {level}: native sum {checksum:#x} != lookup sum {expected:#x}")

        events = list(run.engine.events) if run.engine else []
        hist, reasons = run.histogram()
        return RepResult(
            counters=measured,
            checksum=checksum,
            passes=passes,
            events=events,
            histogram=hist,
            reasons=reasons,
            unprotect_count=run.guard.unprotect_count,
            analyze_calls=dict(run.engine.analyze_calls) if run.engine else {},
            timeline=classify_timeline(events, measured.wall_time),
        )
    finally:
        run.close()


@dataclass
class BenchRun:
    scenario: str
    level: str
    short: bool
    passes: int
    reps: List[RepResult] = field(default_factory=list)
    unavailable: Dict[str, str] = field(default_factory=dict)

    @property
    def partial(self) -> bool:
        return bool(self.unavailable)

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "level": self.level,
            "short": self.short,
            "passes": self.passes,
            "partial": self.partial,
            "unavailable": self.unavailable,
            "reps": [r.as_dict() for r in self.reps],
        }


def run_benchmark(scenario: str, opt_level: str, reps: int, counters: bool = True,
                  short: bool = False, passes: Optional[int] = None,
                  objects: int = SCENARIO_OBJECTS) -> BenchRun:
    """Serialised reps of one scenario at one level ("0", "1", "2" or "b")."""
    require_native()
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
    if opt_level not in ("0", "1", "2", "b"):
        raise ValueError(f"level must be 0, 1, 2 or b, got {opt_level!r}")
    if reps < 1:
        raise ValueError("reps must be ≥ 1")
    if objects < 1:
        raise ValueError("objects must be ≥ 1")

    if passes is None:
        passes = calibrate(scenario, opt_level, short, objects)
    logger.info("%s -O%s: %d passes × %d reps", scenario, opt_level, passes, reps)

    with CounterGroup(enabled=counters) as group:
        result = BenchRun(scenario, opt_level, short, passes, unavailable=dict(group.unavailable))
        for i in range(reps):
            rep = run_rep(scenario, opt_level, passes, group, objects)
            result.reps.append(rep)
            logger.debug("rep %d: %.3f ms, %d rewrites", i, rep.counters.wall_time / 1e6, len(rep.events))
    return result
