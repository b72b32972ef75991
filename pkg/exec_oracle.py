# exec_oracle.py: reference interpreter for the decoded x86_64 subset
# -----------------------------------------------------------------------------
# Word-granular machine: 64-bit registers, a sparse map of 8-byte memory
# words keyed by address (overlapping accesses are not modelled), ZF/CF.
# Counts executed instructions, data reads/writes and nops so a patched hit
# path can be compared with the original one.
# -----------------------------------------------------------------------------

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from config import WORD_SIZE
from x86_codec import (
    CC_A, CC_AE, CC_B, CC_BE, CC_E, CC_NE,
    CodeBuffer,
    DecodedInsn,
    InsnKind,
    Reg,
    decode_one,
)

MASK64 = (1 << 64) - 1


class ExecError(Exception):
    pass


class MemoryFault(ExecError):
    pass


class UnknownInstructionError(ExecError):
    pass


class EquivalenceError(ExecError):
    def __init__(self, message: str, witness: "MachineState") -> None:
        super().__init__(message)
        self.witness = witness


@dataclass
class MachineState:
    regs: Dict[Reg, int] = field(default_factory=dict)
    mem: Dict[int, int] = field(default_factory=dict)
    rip: int = 0
    zf: bool = False
    cf: bool = False

    def reg(self, r: Reg) -> int:
        return self.regs.get(r, 0)

    def set_reg(self, r: Reg, value: int) -> None:
        self.regs[r] = value & MASK64

    def load(self, addr: int) -> int:
        try:
            return self.mem[addr & MASK64]
        except KeyError:
            raise MemoryFault(f"read of unwritten memory at {addr:#x}") from None

    def store(self, addr: int, value: int) -> None:
        addr &= MASK64
        self.mem[addr] = value & MASK64

    def copy(self) -> "MachineState":
        return MachineState(dict(self.regs), dict(self.mem), self.rip, self.zf, self.cf)


@dataclass
class ExecTrace:
    insns_executed: int = 0
    data_reads: int = 0
    data_writes: int = 0
    nops_executed: int = 0


def _effective_addr(st: MachineState, insn: DecodedInsn) -> int:
    if insn.rip_target is not None:
        return insn.rip_target
    addr = st.reg(insn.base_reg) + insn.disp
    if insn.index_reg is not None:
        addr += st.reg(insn.index_reg) * insn.scale
    return addr & MASK64


def _imm64(imm: int) -> int:
    return imm & MASK64


def _cond_holds(st: MachineState, cond: int) -> bool:
    table = {
        CC_B: lambda: st.cf,
        CC_AE: lambda: not st.cf,
        CC_E: lambda: st.zf,
        CC_NE: lambda: not st.zf,
        CC_BE: lambda: st.cf or st.zf,
        CC_A: lambda: not st.cf and not st.zf,
    }
    if cond not in table:
        raise UnknownInstructionError(f"condition code {cond:#x} is not modelled")
    return table[cond]()


def _set_sub_flags(st: MachineState, a: int, b: int) -> None:
    st.zf = a == b
    st.cf = a < b


def _alu(st: MachineState, op: str, a: int, b: int) -> Optional[int]:
    if op == "cmp":
        _set_sub_flags(st, a, b)
        return None
    if op == "sub":
        _set_sub_flags(st, a, b)
        return (a - b) & MASK64
    if op == "add":
        r = a + b
        st.cf = r > MASK64
        st.zf = (r & MASK64) == 0
        return r & MASK64
    r = {"and": a & b, "or": a | b, "xor": a ^ b}[op]
    st.zf, st.cf = r == 0, False
    return r


def _step(st: MachineState, insn: DecodedInsn, trace: ExecTrace) -> bool:
    """Execute one instruction; False means the sequence ended (ret)."""
    k = insn.kind
    st.rip = insn.end
    trace.insns_executed += 1

    if k in (InsnKind.MOV_REG_FROM_RIP_MEM, InsnKind.MOV_REG_FROM_BASE_DISP,
             InsnKind.MOV_REG_FROM_BASE_INDEX_SCALE_DISP):
        st.set_reg(insn.dest_reg, st.load(_effective_addr(st, insn)))
        trace.data_reads += 1
    elif k is InsnKind.ALU_REG_FROM_MEM:
        value = st.load(_effective_addr(st, insn))
        trace.data_reads += 1
        r = _alu(st, insn.mnemonic, st.reg(insn.dest_reg), value)
        if r is not None:
            st.set_reg(insn.dest_reg, r)
    elif k is InsnKind.MOV_REG_TO_MEM:
        st.store(_effective_addr(st, insn), st.reg(insn.src_reg))
        trace.data_writes += 1
    elif k is InsnKind.MOV_REG_IMM32:
        # 32-bit destination zero-extends, REX.W c7 sign-extends
        st.set_reg(insn.dest_reg, insn.imm & 0xFFFF_FFFF if insn.width == 32 else _imm64(insn.imm))
    elif k is InsnKind.MOV_REG_REG:
        st.set_reg(insn.dest_reg, st.reg(insn.src_reg))
    elif k is InsnKind.ADD_REG_REG:
        st.set_reg(insn.dest_reg, _alu(st, "add", st.reg(insn.dest_reg), st.reg(insn.src_reg)))
    elif k is InsnKind.ADD_REG_IMM:
        st.set_reg(insn.dest_reg, _alu(st, "add", st.reg(insn.dest_reg), _imm64(insn.imm)))
    elif k is InsnKind.CMP_REG_REG:
        _set_sub_flags(st, st.reg(insn.dest_reg), st.reg(insn.src_reg))
    elif k is InsnKind.PUSH:
        st.set_reg(Reg.RSP, st.reg(Reg.RSP) - WORD_SIZE)
        st.store(st.reg(Reg.RSP), st.reg(insn.src_reg))
        trace.data_writes += 1
    elif k is InsnKind.POP:
        st.set_reg(insn.dest_reg, st.load(st.reg(Reg.RSP)))
        st.set_reg(Reg.RSP, st.reg(Reg.RSP) + WORD_SIZE)
        trace.data_reads += 1
    elif k is InsnKind.COND_JUMP:
        if _cond_holds(st, insn.cond):
            st.rip = insn.target
    elif k is InsnKind.JMP:
        st.rip = insn.target
    elif k is InsnKind.CALL:
        st.set_reg(Reg.RSP, st.reg(Reg.RSP) - WORD_SIZE)
        st.store(st.reg(Reg.RSP), insn.end)
        trace.data_writes += 1
        st.rip = insn.target
    elif k is InsnKind.RET:
        return False
    elif k is InsnKind.CPUID:
        for r in (Reg.RAX, Reg.RBX, Reg.RCX, Reg.RDX):
            st.set_reg(r, 0)
    elif k is InsnKind.NOP:
        trace.nops_executed += 1
    else:
        raise UnknownInstructionError(f"cannot execute {insn.raw.hex(' ')} at {insn.addr:#x}")
    return True


def run_sequence(buf: CodeBuffer, start: int, max_insns: int, state: MachineState,
                 stop_addr: Optional[int] = None) -> Tuple[MachineState, ExecTrace]:
    """Run from `start` until max_insns, a ret, `stop_addr`, or the end of the buffer."""
    st = state.copy()
    st.rip = start
    trace = ExecTrace()
    while trace.insns_executed < max_insns:
        if st.rip == stop_addr or not buf.contains(st.rip):
            break
        insn = decode_one(buf, st.rip)
        if insn.kind is InsnKind.UNKNOWN:
            raise UnknownInstructionError(f"unknown instruction {insn.raw.hex(' ')} at {insn.addr:#x}")
        if not _step(st, insn, trace):
            break
    return st, trace


# ------------------------------------------------------------------
# paired runs
# ------------------------------------------------------------------

@dataclass
class EquivalenceReport:
    samples: int = 0
    read_deltas: Counter = field(default_factory=Counter)
    insn_deltas: Counter = field(default_factory=Counter)
    nop_deltas: Counter = field(default_factory=Counter)


def _observable(st: MachineState, scratch: Sequence[Reg]) -> tuple:
    regs = {r: v for r, v in st.regs.items() if r not in scratch}
    return regs, st.mem, st.rip, st.zf, st.cf


def assert_equivalent(buf_before: CodeBuffer, buf_after: CodeBuffer, start: int,
                      state_family: Iterable[MachineState], stop_addr: Optional[int] = None,
                      scratch: Sequence[Reg] = (), max_insns: int = 64) -> EquivalenceReport:
    report = EquivalenceReport()
    for state in state_family:
        before, tb = run_sequence(buf_before, start, max_insns, state, stop_addr)
        after, ta = run_sequence(buf_after, start, max_insns, state, stop_addr)
        if _observable(before, scratch) != _observable(after, scratch):
            diff = {r: (before.reg(r), after.reg(r)) for r in set(before.regs) | set(after.regs)
                    if before.reg(r) != after.reg(r)}
            raise EquivalenceError(f"states diverge after {report.samples} samples: {diff}", state)
        report.samples += 1
        report.read_deltas[ta.data_reads - tb.data_reads] += 1
        report.insn_deltas[ta.insns_executed - tb.insns_executed] += 1
        report.nop_deltas[ta.nops_executed - tb.nops_executed] += 1
    return report


def hit_path_states(rng: np.random.Generator, samples: int, obj_reg: Reg, offset_addr: int,
                    field_index: int, n_fields: int = 16, class_addr: Optional[int] = None,
                    class_reg: Optional[Reg] = None) -> Iterable[MachineState]:
    """Random states on which an IC hit path with the given cached field index
    runs to completion: object at a random aligned address, random slot
    words, random values in the other registers."""
    for _ in range(samples):
        base = int(rng.integers(0x10_0000, 0x7fff_0000)) * WORD_SIZE
        words = rng.integers(0, 1 << 63, size=n_fields, dtype=np.uint64)
        st = MachineState()
        for r in Reg:
            if r is not Reg.RIP:
                st.set_reg(r, int(rng.integers(0, 1 << 63)))
        st.set_reg(obj_reg, base)
        for i, w in enumerate(words):
            st.store(base + i * WORD_SIZE, int(w))
        st.store(offset_addr, field_index)
        if class_addr is not None:
            class_id = int(words[1])
            st.store(class_addr, class_id)
            if class_reg is not None:
                st.set_reg(class_reg, class_id)
        yield st
