# native/emitter.py: machine code for the native benchmark kernels
# -----------------------------------------------------------------------------
# Each kernel walks an array of object pointers through one IC site and sums
# the property it reads. C signature:
#
#   uint64_t kernel(uint64_t **objs, uint64_t n, uint64_t start, uint64_t state[2])
#
# state[0] is the running sum on entry and exit, state[1] the index reached.
# Return 0: all objects done. Return 1: IC miss at objs[state[1]]; the host
# runs cache_miss, adds the value and calls again from state[1] + 1.
# Object layout: [header, class id, slot 0, slot 1, ...].
# -----------------------------------------------------------------------------

from __future__ import annotations

import ctypes
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

from config import WORD_SIZE
from ic_runtime import InlineCache
from x86_codec import (
    CC_AE,
    CC_NE,
    Reg,
    encode_add_reg_imm8,
    encode_add_reg_reg,
    encode_cmp_reg_reg,
    encode_cpuid,
    encode_jcc_rel32,
    encode_jmp_rel32,
    encode_load,
    encode_mov_reg_imm32,
    encode_mov_reg_reg,
    encode_mov_reg_rip_target,
    encode_pop,
    encode_push,
    encode_ret,
    encode_store,
)

from native.region import ExecRegion

KERNEL_FN = ctypes.CFUNCTYPE(ctypes.c_uint64, ctypes.c_void_p, ctypes.c_uint64,
                             ctypes.c_uint64, ctypes.c_void_p)
BARRIER_FN = ctypes.CFUNCTYPE(None)

RC_DONE = 0
RC_MISS = 1

# register roles inside a kernel
OBJS, COUNT, INDEX, STATE = Reg.R9, Reg.RSI, Reg.RDX, Reg.RCX
OBJ, ACC = Reg.RDI, Reg.R10


class ShapeVariant(Enum):
    CANONICAL = "canonical"          # offset load + fused-able indexed load
    SWAPPED_DEST = "swapped"         # indexed load writes another register: -O1 only
    NON_RIP = "non-rip"              # offset read through a pointer register: not modifiable
    SCHEDULED = "scheduled"          # extra register move inside the window


class Assembler:
    """Byte emitter with forward labels for rel32 branches."""

    def __init__(self, origin: int) -> None:
        self.origin = origin
        self.code = bytearray()
        self.labels: Dict[str, int] = {}
        self._fixups: List[Tuple[int, str, Callable[[int, int], bytes]]] = []

    @property
    def here(self) -> int:
        return self.origin + len(self.code)

    def emit(self, payload: bytes) -> int:
        addr = self.here
        self.code += payload
        return addr

    def label(self, name: str) -> int:
        if name in self.labels:
            raise ValueError(f"label {name!r} defined twice")
        self.labels[name] = self.here
        return self.here

    def jcc(self, cond: int, name: str) -> None:
        self._fixups.append((self.here, name, lambda at, to: encode_jcc_rel32(cond, at, to)))
        self.emit(bytes(6))

    def jmp(self, name: str) -> None:
        self._fixups.append((self.here, name, encode_jmp_rel32))
        self.emit(bytes(5))

    def finish(self) -> bytes:
        for at, name, enc in self._fixups:
            if name not in self.labels:
                raise ValueError(f"undefined label {name!r}")
            payload = enc(at, self.labels[name])
            off = at - self.origin
            self.code[off:off + len(payload)] = payload
        return bytes(self.code)


@dataclass
class SiteDescriptor:
    site_id: int
    variant: ShapeVariant
    label_addr: int
    ic_class_addr: int
    ic_offset_addr: int
    start: int = 0
    end: int = 0
    ic_ptr_addr: Optional[int] = None


@dataclass
class Kernel:
    entry: int
    fn: Callable
    site: Optional[SiteDescriptor] = None
    ic: Optional[InlineCache] = None
    length: int = 0
    state: ctypes.Array = field(default_factory=lambda: (ctypes.c_uint64 * 2)())


def emit_ic_site(asm: Assembler, region: ExecRegion, ic: InlineCache, shape_variant: ShapeVariant,
                 miss_label: str = "miss") -> SiteDescriptor:
    """Emit class load, object class load, cmp, jne, offset load and indexed
    property load (added into the accumulator). Allocates the IC structure
    [class id, field index] in the region's data pages and binds it to `ic`."""
    struct_addr = region.alloc_words(2)
    class_addr, offset_addr = struct_addr, struct_addr + WORD_SIZE
    start = asm.here
    ptr_addr = None

    if shape_variant is ShapeVariant.NON_RIP:
        ptr_addr = region.alloc_words(1)
        region.write_word(ptr_addr, struct_addr)
        asm.emit(encode_mov_reg_rip_target(Reg.R11, asm.here, ptr_addr))
        asm.emit(encode_load(Reg.RBX, Reg.R11))
    else:
        asm.emit(encode_mov_reg_rip_target(Reg.RBX, asm.here, class_addr))
    asm.emit(encode_load(Reg.RAX, OBJ, WORD_SIZE))
    asm.emit(encode_cmp_reg_reg(Reg.RAX, Reg.RBX))
    asm.jcc(CC_NE, miss_label)

    label = asm.here
    if shape_variant is ShapeVariant.NON_RIP:
        asm.emit(encode_load(Reg.RAX, Reg.R11, WORD_SIZE))
    else:
        if shape_variant is ShapeVariant.SCHEDULED:
            asm.emit(encode_mov_reg_reg(Reg.R8, OBJ))
        asm.emit(encode_mov_reg_rip_target(Reg.RAX, asm.here, offset_addr))

    dest = Reg.RBX if shape_variant is ShapeVariant.SWAPPED_DEST else Reg.RAX
    asm.emit(encode_load(dest, OBJ, 0, Reg.RAX, WORD_SIZE))
    asm.emit(encode_add_reg_reg(ACC, dest))

    ic.site_addr = label
    ic.offset_addr = offset_addr
    ic.obj_reg_hint = OBJ
    ic.store = region
    return SiteDescriptor(ic.site_id, shape_variant, label, class_addr, offset_addr,
                          start=start, end=asm.here, ic_ptr_addr=ptr_addr)


def _prologue(asm: Assembler) -> None:
    asm.emit(encode_push(Reg.RBX))
    asm.emit(encode_mov_reg_reg(OBJS, Reg.RDI))
    asm.emit(encode_load(ACC, STATE))
    asm.label("loop")
    asm.emit(encode_cmp_reg_reg(INDEX, COUNT))
    asm.jcc(CC_AE, "done")


def _epilogue(asm: Assembler, with_miss: bool) -> None:
    asm.emit(encode_add_reg_imm8(INDEX, 1))
    asm.jmp("loop")
    exits = [("done", RC_DONE)] + ([("miss", RC_MISS)] if with_miss else [])
    for name, rc in exits:
        asm.label(name)
        asm.emit(encode_store(STATE, 0, ACC))
        asm.emit(encode_store(STATE, WORD_SIZE, INDEX))
        asm.emit(encode_mov_reg_imm32(Reg.RAX, rc))
        asm.emit(encode_pop(Reg.RBX))
        asm.emit(encode_ret())


def emit_ic_kernel(region: ExecRegion, ic: InlineCache,
                   shape_variant: ShapeVariant = ShapeVariant.CANONICAL) -> Kernel:
    asm = Assembler(region.code_cursor)
    _prologue(asm)
    asm.emit(encode_load(OBJ, OBJS, 0, INDEX, WORD_SIZE))
    site = emit_ic_site(asm, region, ic, shape_variant)
    _epilogue(asm, with_miss=True)
    code = asm.finish()
    entry = region.emit_code(code)
    return Kernel(entry, KERNEL_FN(entry), site, ic, len(code))


def emit_array_kernel(region: ExecRegion) -> Kernel:
    """Sums plain words; no property access, so no IC."""
    asm = Assembler(region.code_cursor)
    _prologue(asm)
    asm.emit(encode_load(Reg.RAX, OBJS, 0, INDEX, WORD_SIZE))
    asm.emit(encode_add_reg_reg(ACC, Reg.RAX))
    _epilogue(asm, with_miss=False)
    code = asm.finish()
    entry = region.emit_code(code)
    return Kernel(entry, KERNEL_FN(entry), None, None, len(code))


def emit_flush_barrier(region: ExecRegion) -> Callable[[int, int], None]:
    """cpuid serialises the executing core after cross-modified bytes."""
    code = (encode_push(Reg.RBX) + encode_mov_reg_imm32(Reg.RAX, 0) + encode_cpuid()
            + encode_pop(Reg.RBX) + encode_ret())
    entry = region.emit_code(code)
    stub = BARRIER_FN(entry)

    def flush_icache_barrier(span_addr: int = 0, span_len: int = 0) -> None:
        stub()

    flush_icache_barrier.entry = entry
    return flush_icache_barrier
