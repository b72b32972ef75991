"""Emitted kernels run on the reference interpreter, with a dict-backed region."""

import pytest

from dbm_engine import DbmEngine, Failed, FailReason, OptLevel, PageGuard, Recognized, RewriteEvent
from exec_oracle import MachineState, run_sequence
from ic_runtime import InlineCache, cache_miss
from object_model import WORD_MASK, ShapeRegistry, object_words, read_property
from x86_codec import CodeBuffer, InsnKind, Reg, decode_all

from native.emitter import (
    RC_DONE,
    RC_MISS,
    Assembler,
    ShapeVariant,
    emit_array_kernel,
    emit_ic_kernel,
)
from native.runner import build_objects, classify_timeline

CODE_BASE = 0x10000
DATA_BASE = 0x20000
TABLE_BASE = 0x30000
OBJ_BASE = 0x40000
STATE_ADDR = 0x50000
STACK_TOP = 0x60000


class DictRegion:
    def __init__(self):
        self.code = CodeBuffer(CODE_BASE, bytearray(0x1000))
        self._cursor = CODE_BASE
        self._data = DATA_BASE
        self.words = {}

    @property
    def code_cursor(self):
        return self._cursor

    def emit_code(self, payload, align=16):
        addr = self._cursor
        self.code.write(addr, payload)
        self._cursor = (addr + len(payload) + align - 1) & ~(align - 1)
        return addr

    def alloc_words(self, n):
        addr = self._data
        self._data += 8 * n
        for i in range(n):
            self.words[addr + 8 * i] = 0
        return addr

    def write_word(self, addr, value):
        self.words[addr] = value


def _memory(region, objs, start, total):
    st = MachineState()
    st.mem.update(region.words)
    for i, obj in enumerate(objs):
        addr = OBJ_BASE + i * 0x100
        st.store(TABLE_BASE + 8 * i, addr)
        for j, w in enumerate(object_words(obj)):
            st.store(addr + 8 * j, w)
    st.store(STATE_ADDR, total)
    st.store(STATE_ADDR + 8, 0)
    for reg, value in ((Reg.RDI, TABLE_BASE), (Reg.RSI, len(objs)), (Reg.RDX, start),
                       (Reg.RCX, STATE_ADDR), (Reg.RSP, STACK_TOP)):
        st.set_reg(reg, value)
    return st


def _call(region, kernel, objs, start, total):
    out, _ = run_sequence(region.code, kernel.entry, 1_000_000, _memory(region, objs, start, total))
    return out.reg(Reg.RAX), out.mem[STATE_ADDR], out.mem[STATE_ADDR + 8]


def _drive(region, kernel, objs, engine):
    total, start, misses = 0, 0, 0
    while True:
        rc, total, idx = _call(region, kernel, objs, start, total)
        if rc == RC_DONE:
            return total, misses
        assert rc == RC_MISS
        misses += 1
        total = (total + cache_miss(kernel.ic, objs[idx], "prop", engine)) & WORD_MASK
        start = idx + 1


def _expected(objs):
    return sum(read_property(o, "prop") for o in objs) & WORD_MASK


def _setup(variant, level):
    region = DictRegion()
    ic = InlineCache("prop")
    kernel = emit_ic_kernel(region, ic, variant)
    engine = DbmEngine(region.code, PageGuard(), max_level=level) if level is not None else None
    return region, kernel, engine


def test_emitted_kernels_use_the_decoded_subset():
    region = DictRegion()
    kernels = [emit_ic_kernel(region, InlineCache("prop"), v) for v in ShapeVariant]
    kernels.append(emit_array_kernel(region))
    for k in kernels:
        body = CodeBuffer(k.entry, bytearray(region.code.read(k.entry, k.length)))
        assert all(i.kind is not InsnKind.UNKNOWN for i in decode_all(body))


def test_kernel_ic_structure_binding():
    region, kernel, _ = _setup(ShapeVariant.CANONICAL, None)
    ic = kernel.ic
    assert ic.site_addr == kernel.site.label_addr
    assert ic.offset_addr == kernel.site.ic_offset_addr == kernel.site.ic_class_addr + 8
    assert ic.obj_reg_hint is Reg.RDI
    assert ic.store is region


@pytest.mark.parametrize("level", [None, 0, 1, 2])
@pytest.mark.parametrize("scenario", ["monomorphic", "bishape", "kshape"])
def test_sums_match_lookup_at_every_level(scenario, level):
    objs, _ = build_objects(scenario, 96, ShapeRegistry())
    region, kernel, engine = _setup(ShapeVariant.CANONICAL, level)
    for _ in range(2):
        total, _misses = _drive(region, kernel, objs, engine)
        assert total == _expected(objs)


def test_monomorphic_patches_once_and_then_only_hits():
    objs, _ = build_objects("monomorphic", 64, ShapeRegistry())
    region, kernel, engine = _setup(ShapeVariant.CANONICAL, 2)
    _, first = _drive(region, kernel, objs, engine)
    _, second = _drive(region, kernel, objs, engine)
    assert (first, second) == (1, 0)
    assert [e.kind for e in engine.events] == ["apply"]
    assert isinstance(kernel.ic.memo, Recognized) and kernel.ic.memo.level is OptLevel.O2
    assert region.code.read(kernel.site.label_addr, 3) == bytes.fromhex("48 8b 87")


def test_bishape_repatches_on_every_shape_change():
    objs, _ = build_objects("bishape", 64, ShapeRegistry())
    region, kernel, engine = _setup(ShapeVariant.CANONICAL, 2)
    _drive(region, kernel, objs, engine)
    _drive(region, kernel, objs, engine)
    kinds = [e.kind for e in engine.events]
    assert kinds[0] == "apply" and set(kinds[1:]) == {"repatch"}
    assert engine.analyze_calls == {kernel.ic.site_id: 1}
    assert engine.guard.unprotect_count == 1


@pytest.mark.parametrize("variant,outcome", [
    (ShapeVariant.CANONICAL, OptLevel.O2),
    (ShapeVariant.SWAPPED_DEST, OptLevel.O1),
    (ShapeVariant.SCHEDULED, OptLevel.O2),
    (ShapeVariant.NON_RIP, FailReason.NOT_RIP_RELATIVE),
])
def test_variant_classification(variant, outcome):
    objs, _ = build_objects("variants", 32, ShapeRegistry())
    region, kernel, engine = _setup(variant, 2)
    before = region.code.read(kernel.entry, kernel.length)
    total, _ = _drive(region, kernel, objs, engine)
    assert total == _expected(objs)
    memo = kernel.ic.memo
    if isinstance(outcome, FailReason):
        assert memo == Failed(outcome)
        assert region.code.read(kernel.entry, kernel.length) == before
    else:
        assert memo.applied and memo.level is outcome


def test_level_zero_leaves_code_alone():
    objs, _ = build_objects("bishape", 32, ShapeRegistry())
    region, kernel, engine = _setup(ShapeVariant.CANONICAL, 0)
    before = region.code.read(CODE_BASE, region.code.length)
    _drive(region, kernel, objs, engine)
    assert region.code.read(CODE_BASE, region.code.length) == before
    assert engine.events == []


def test_array_kernel_sums_words():
    region = DictRegion()
    kernel = emit_array_kernel(region)
    st = MachineState()
    for i in range(10):
        st.store(TABLE_BASE + 8 * i, i + 1)
    st.store(STATE_ADDR, 0)
    st.store(STATE_ADDR + 8, 0)
    for reg, value in ((Reg.RDI, TABLE_BASE), (Reg.RSI, 10), (Reg.RDX, 0),
                       (Reg.RCX, STATE_ADDR), (Reg.RSP, STACK_TOP)):
        st.set_reg(reg, value)
    out, _ = run_sequence(region.code, kernel.entry, 10_000, st)
    assert out.reg(Reg.RAX) == RC_DONE
    assert out.mem[STATE_ADDR] == 55


def test_assembler_rejects_undefined_label():
    asm = Assembler(0x1000)
    asm.jmp("nowhere")
    with pytest.raises(ValueError):
        asm.finish()


def test_residual_tail_has_fresh_shapes():
    objs, tail = build_objects("residual", 16, ShapeRegistry())
    assert len({o.hclass.id for o in objs}) == 1
    assert len({o.hclass.id for o in tail}) == len(tail)
    assert not {o.hclass.id for o in tail} & {o.hclass.id for o in objs}


def test_unknown_scenario():
    with pytest.raises(ValueError):
        build_objects("nope", 4)


def _events(*offsets):
    return [RewriteEvent(t, i + 1, 1, "repatch") for i, t in enumerate(offsets)]


def test_timeline_behaviour():
    assert classify_timeline([], 1000) == "none"
    assert classify_timeline(_events(1, 5), 1000) == "warmup"
    assert classify_timeline(_events(1, 995), 1000) == "warmup+residual"
    assert classify_timeline(_events(1, 500), 1000) == "continuous"
