# dbm_engine.py: recognise IC hit paths in machine code and rewrite them in place
# -----------------------------------------------------------------------------
# analyze_site scans a small window from an IC label for the offset load
# (a RIP-relative mov reading the IC structure) and, right after it, the
# indexed property load that consumes it. build_patch turns a match into a
# replacement that drops the offset load:
#   -O1  mov $index, %dest             (immediate load, property load kept)
#   -O2  mov disp32(%obj), %dest       (both loads fused into one)
# Later misses only rewrite the 4-byte immediate/displacement field.
# -----------------------------------------------------------------------------

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Union

from config import DEFAULT_PAGE_SIZE, WINDOW_MAX, WORD_SIZE
from utils.logger import debug_patch_log, logger
from x86_codec import (
    CodeBuffer,
    DecodeError,
    DecodedInsn,
    INT32_MAX,
    InsnKind,
    Reg,
    decode_one,
    decode_window,
    encode_mov_reg_base_disp,
    encode_mov_reg_imm32,
    encode_padding,
    fits_int32,
)


class PatchError(Exception):
    pass


class ImmediateTooWideError(PatchError):
    pass


class PaddingImpossibleError(PatchError):
    pass


class PageProtectionError(PatchError):
    pass


class OptLevel(Enum):
    O1 = 1
    O2 = 2

    def __str__(self) -> str:
        return self.name


class FailReason(Enum):
    UNRECOGNIZED_SEQUENCE = "UnrecognizedSequence"
    BRANCH_ENCOUNTERED = "BranchEncountered"
    NOT_RIP_RELATIVE = "NotRipRelative"
    NOT_MOV = "NotMov"
    DEST_NOT_REGISTER = "DestNotRegister"
    WRONG_IC_STRUCT = "WrongIcStruct"
    IMMEDIATE_TOO_WIDE = "ImmediateTooWide"
    WINDOW_EXHAUSTED = "WindowExhausted"

    @classmethod
    def parse(cls, text: str) -> "FailReason":
        for reason in cls:
            if reason.value == text:
                return reason
        raise ValueError(f"unknown failure reason {text!r}")


# ------------------------------------------------------------------
# classification
# ------------------------------------------------------------------

@dataclass(frozen=True)
class EligibleO2:
    offset_insn: DecodedInsn
    fused_insn: DecodedInsn

    level = OptLevel.O2


@dataclass(frozen=True)
class EligibleO1:
    offset_insn: DecodedInsn

    level = OptLevel.O1


@dataclass(frozen=True)
class Ineligible:
    reason: FailReason
    stopped_at: int


Classification = Union[EligibleO2, EligibleO1, Ineligible]

# instructions that may sit between the label and the offset load
_TRANSPARENT = frozenset({
    InsnKind.NOP, InsnKind.MOV_REG_IMM32, InsnKind.MOV_REG_REG, InsnKind.ADD_REG_IMM,
    InsnKind.ADD_REG_REG, InsnKind.CMP_REG_REG, InsnKind.PUSH, InsnKind.POP, InsnKind.CPUID,
})


def _fuses_with(first: DecodedInsn, second: DecodedInsn, word_size: int,
                obj_reg_hint: Optional[Reg]) -> bool:
    if second.kind is not InsnKind.MOV_REG_FROM_BASE_INDEX_SCALE_DISP:
        return False
    if second.index_reg != first.dest_reg or second.scale != word_size:
        return False
    # the fused load must land where the offset used to, and must not read it as a base
    if second.dest_reg != first.dest_reg or second.base_reg == first.dest_reg:
        return False
    return obj_reg_hint is None or second.base_reg == obj_reg_hint


def analyze_site(buf: CodeBuffer, label_addr: int, ic_struct_offset_addr: int,
                 obj_reg_hint: Optional[Reg] = None, word_size: int = WORD_SIZE,
                 window_max: int = WINDOW_MAX) -> Classification:
    if not buf.contains(label_addr):
        raise DecodeError(f"label {label_addr:#x} outside the code buffer")

    window = decode_window(buf, label_addr, window_max)
    for pos, insn in enumerate(window):
        if insn.is_branch:
            return Ineligible(FailReason.BRANCH_ENCOUNTERED, insn.addr)
        if insn.kind is InsnKind.UNKNOWN:
            return Ineligible(FailReason.UNRECOGNIZED_SEQUENCE, insn.addr)
        if insn.kind in _TRANSPARENT:
            continue
        if insn.kind is InsnKind.MOV_REG_TO_MEM:
            return Ineligible(FailReason.DEST_NOT_REGISTER, insn.addr)
        if insn.kind is InsnKind.ALU_REG_FROM_MEM:
            return Ineligible(FailReason.NOT_MOV, insn.addr)
        if insn.kind is not InsnKind.MOV_REG_FROM_RIP_MEM:
            return Ineligible(FailReason.NOT_RIP_RELATIVE, insn.addr)
        if insn.rip_target != ic_struct_offset_addr:
            return Ineligible(FailReason.WRONG_IC_STRUCT, insn.addr)

        # the fused load must directly follow, even past the window end
        if pos + 1 < len(window):
            nxt = window[pos + 1]
        elif buf.contains(insn.end):
            nxt = decode_one(buf, insn.end)
        else:
            nxt = None
        if nxt is not None and _fuses_with(insn, nxt, word_size, obj_reg_hint):
            return EligibleO2(insn, nxt)
        return EligibleO1(insn)

    stopped = window[-1].end if window else label_addr
    return Ineligible(FailReason.WINDOW_EXHAUSTED, stopped)


def downgrade(c: Classification) -> Classification:
    """Force an -O2 match down to -O1; the offset load alone always qualifies."""
    if isinstance(c, EligibleO2):
        return EligibleO1(c.offset_insn)
    return c


# ------------------------------------------------------------------
# patch plans
# ------------------------------------------------------------------

@dataclass(frozen=True)
class PatchPlan:
    span_addr: int
    span_len: int
    replacement: bytes
    level: OptLevel
    disp_field_addr: int
    word_size: int
    base_disp: int
    original: bytes
    dest_reg: Reg
    base_reg: Optional[Reg] = None

    @property
    def span_end(self) -> int:
        return self.span_addr + self.span_len

    def field_value(self, index: int) -> int:
        if self.level is OptLevel.O2:
            return index * self.word_size + self.base_disp
        return index


def _o1_value_ok(index: int) -> bool:
    # mov $imm, %r32 zero-extends, so only non-negative immediates keep their value
    return 0 <= index <= INT32_MAX


def _pad(first: bytes, span_addr: int, span_len: int, level: OptLevel, word_size: int,
         base_disp: int, original: bytes, dest: Reg, base: Optional[Reg]) -> PatchPlan:
    if len(first) > span_len:
        raise PaddingImpossibleError(
            f"{len(first)}-byte replacement does not fit the {span_len}-byte span at {span_addr:#x}")
    return PatchPlan(
        span_addr=span_addr,
        span_len=span_len,
        replacement=first + encode_padding(span_len - len(first)),
        level=level,
        disp_field_addr=span_addr + len(first) - 4,
        word_size=word_size,
        base_disp=base_disp,
        original=original,
        dest_reg=dest,
        base_reg=base,
    )


def _build_o1(offset_insn: DecodedInsn, index: int, word_size: int) -> PatchPlan:
    if not _o1_value_ok(index):
        raise ImmediateTooWideError(f"offset {index:#x} does not fit a 4-byte immediate")
    return _pad(encode_mov_reg_imm32(offset_insn.dest_reg, index), offset_insn.addr, offset_insn.length,
                OptLevel.O1, word_size, 0, offset_insn.raw, offset_insn.dest_reg, None)


def build_patch(c: Classification, slot_index: int, word_size: int = WORD_SIZE,
                base_disp: Optional[int] = None) -> PatchPlan:
    """`slot_index` is the word index the IC structure holds. For -O2 the
    displacement is slot_index * word_size + base_disp, where base_disp
    defaults to the fused instruction's own constant offset."""
    if isinstance(c, Ineligible):
        raise PatchError(f"cannot patch an ineligible site ({c.reason.value})")

    if isinstance(c, EligibleO2):
        first, second = c.offset_insn, c.fused_insn
        disp0 = second.disp if base_disp is None else base_disp
        disp = slot_index * word_size + disp0
        if not fits_int32(disp):
            raise ImmediateTooWideError(f"displacement {disp:#x} does not fit a 4-byte field")
        return _pad(encode_mov_reg_base_disp(first.dest_reg, second.base_reg, disp),
                    first.addr, first.length + second.length, OptLevel.O2, word_size, disp0,
                    first.raw + second.raw, first.dest_reg, second.base_reg)

    return _build_o1(c.offset_insn, slot_index, word_size)


def plan_site(c: Classification, slot_index: int, word_size: int = WORD_SIZE) -> PatchPlan:
    """build_patch, retried at -O1 when an -O2 displacement is too wide.
    -O1 is within every level cap."""
    try:
        return build_patch(c, slot_index, word_size)
    except ImmediateTooWideError:
        if not isinstance(c, EligibleO2):
            raise
        logger.debug("displacement too wide for -O2 at %#x, trying -O1", c.offset_insn.addr)
        return build_patch(downgrade(c), slot_index, word_size)


# ------------------------------------------------------------------
# page protection cache
# ------------------------------------------------------------------

class PageGuard:
    """Remembers which code pages were made writable; the backend (mprotect
    or a test double) is called once per page for the whole run."""

    def __init__(self, page_size: int = DEFAULT_PAGE_SIZE,
                 backend: Optional[Callable[[int, int], None]] = None) -> None:
        if page_size <= 0 or page_size & (page_size - 1):
            raise ValueError(f"page size must be a power of two, got {page_size}")
        self.page_size = page_size
        self.backend = backend
        self.unprotected: set = set()
        self.unprotect_count = 0

    def pages_for(self, span_addr: int, span_len: int) -> List[int]:
        if span_len <= 0:
            return []
        first = span_addr & ~(self.page_size - 1)
        last = (span_addr + span_len - 1) & ~(self.page_size - 1)
        return list(range(first, last + 1, self.page_size))

    def ensure_writable(self, span_addr: int, span_len: int) -> None:
        for page in self.pages_for(span_addr, span_len):
            if page in self.unprotected:
                continue
            if self.backend is not None:
                self.backend(page, self.page_size)
            self.unprotected.add(page)
            self.unprotect_count += 1
            logger.debug("page %#x unprotected (%d so far)", page, self.unprotect_count)

    def covers(self, span_addr: int, span_len: int) -> bool:
        return all(p in self.unprotected for p in self.pages_for(span_addr, span_len))


# ------------------------------------------------------------------
# writing code
# ------------------------------------------------------------------

def _write_two_step(buf: CodeBuffer, addr: int, payload: bytes) -> None:
    # tail first, then the first byte
    if len(payload) > 1:
        buf.write(addr + 1, payload[1:])
    buf.write(addr, payload[:1])


def apply_patch(buf: CodeBuffer, plan: PatchPlan, guard: PageGuard) -> None:
    if not guard.covers(plan.span_addr, plan.span_len):
        raise PageProtectionError(f"span {plan.span_addr:#x}+{plan.span_len} is not on writable pages")
    current = buf.read(plan.span_addr, plan.span_len)
    if current != plan.original:
        raise PatchError(f"bytes at {plan.span_addr:#x} changed since analysis: {current.hex(' ')}")
    _write_two_step(buf, plan.span_addr, plan.replacement)


def repatch_offset(buf: CodeBuffer, plan: PatchPlan, new_slot_index: int,
                   word_size: Optional[int] = None) -> None:
    if word_size is not None and word_size != plan.word_size:
        plan = replace(plan, word_size=word_size)
    value = plan.field_value(new_slot_index)
    ok = fits_int32(value) if plan.level is OptLevel.O2 else _o1_value_ok(value)
    if not ok:
        raise ImmediateTooWideError(f"offset field value {value:#x} does not fit 4 bytes")
    buf.write(plan.disp_field_addr, struct.pack("<i", value))


def restore_original(buf: CodeBuffer, plan: PatchPlan) -> None:
    _write_two_step(buf, plan.span_addr, plan.original)


# ------------------------------------------------------------------
# per-site memo and the engine driving it
# ------------------------------------------------------------------

@dataclass(frozen=True)
class Unanalyzed:
    pass


@dataclass(frozen=True)
class Recognized:
    """`restored` marks a site whose patch was undone after a later miss
    needed an offset the 4-byte field cannot hold; its code is original again."""

    level: OptLevel
    plan: PatchPlan
    applied: bool = False
    restored: bool = False


@dataclass(frozen=True)
class Failed:
    reason: FailReason


AnalysisMemo = Union[Unanalyzed, Recognized, Failed]
UNANALYZED = Unanalyzed()


@dataclass(frozen=True)
class RewriteEvent:
    t_offset_ns: int
    count: int
    site_id: int
    kind: str           # "apply" | "repatch" | "restore"


@dataclass
class DbmEngine:
    """Runs analysis and patching for one code buffer.

    max_level 0 analyses but never writes code, 1 caps patches at -O1 and
    2 allows fused loads."""

    buf: CodeBuffer
    guard: PageGuard = field(default_factory=PageGuard)
    max_level: int = 2
    word_size: int = WORD_SIZE
    barrier: Optional[Callable[[int, int], None]] = None
    clock: Callable[[], int] = time.perf_counter_ns
    analyze_calls: Dict[int, int] = field(default_factory=dict)
    events: List[RewriteEvent] = field(default_factory=list)
    t0_ns: int = 0

    def __post_init__(self) -> None:
        if self.max_level not in (0, 1, 2):
            raise ValueError(f"max_level must be 0, 1 or 2, got {self.max_level}")
        self.t0_ns = self.clock()

    def start_clock(self) -> None:
        self.t0_ns = self.clock()

    @property
    def modification_count(self) -> int:
        return len(self.events)

    def _record(self, site_id: int, kind: str) -> None:
        self.events.append(RewriteEvent(self.clock() - self.t0_ns, len(self.events) + 1, site_id, kind))

    def _sync(self, plan: PatchPlan) -> None:
        if self.barrier is not None:
            self.barrier(plan.span_addr, plan.span_len)

    def classify(self, label_addr: int, ic_offset_addr: int,
                 obj_reg_hint: Optional[Reg] = None) -> Classification:
        c = analyze_site(self.buf, label_addr, ic_offset_addr, obj_reg_hint, self.word_size)
        return downgrade(c) if self.max_level == 1 else c

    def first_miss(self, site_id: int, label_addr: int, ic_offset_addr: int, index: int,
                   obj_reg_hint: Optional[Reg] = None) -> AnalysisMemo:
        self.analyze_calls[site_id] = self.analyze_calls.get(site_id, 0) + 1
        c = self.classify(label_addr, ic_offset_addr, obj_reg_hint)
        if isinstance(c, Ineligible):
            logger.info("IC %s not modifiable: %s at %#x", site_id, c.reason.value, c.stopped_at)
            return Failed(c.reason)
        try:
            plan = plan_site(c, index, self.word_size)
        except ImmediateTooWideError:
            return Failed(FailReason.IMMEDIATE_TOO_WIDE)
        except PaddingImpossibleError as e:
            logger.warning("IC %s: %s", site_id, e)
            return Failed(FailReason.UNRECOGNIZED_SEQUENCE)

        if self.max_level == 0:
            return Recognized(plan.level, plan)
        self.guard.ensure_writable(plan.span_addr, plan.span_len)
        apply_patch(self.buf, plan, self.guard)
        self._sync(plan)
        self._record(site_id, "apply")
        debug_patch_log(site_id, plan.level.value, plan.original, plan.replacement)
        return Recognized(plan.level, plan, applied=True)

    def later_miss(self, site_id: int, memo: AnalysisMemo, index: int) -> AnalysisMemo:
        if not isinstance(memo, Recognized) or not memo.applied:
            return memo
        try:
            repatch_offset(self.buf, memo.plan, index)
        except ImmediateTooWideError:
            restore_original(self.buf, memo.plan)
            self._sync(memo.plan)
            self._record(site_id, "restore")
            logger.info("IC %s restored: offset %#x no longer fits", site_id, index)
            return replace(memo, applied=False, restored=True)
        self._sync(memo.plan)
        self._record(site_id, "repatch")
        return memo
