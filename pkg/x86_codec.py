# x86_codec.py: decoder and encoders for the x86_64 subset used by IC sites
# -----------------------------------------------------------------------------
# The grammar is small: 64-bit movs in the addressing modes a C
# compiler emits for an IC hit path, the loop scaffolding of the native
# kernels, branches, and the recommended multi-byte nops. Anything else
# decodes as UNKNOWN and ends a scan; its length is never guessed beyond the
# bytes actually consumed.
# -----------------------------------------------------------------------------

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import List, Optional, Tuple

from config import MAX_INSN_LENGTH


class DecodeError(ValueError):
    pass


class EncodeError(ValueError):
    pass


class Reg(IntEnum):
    RAX = 0
    RCX = 1
    RDX = 2
    RBX = 3
    RSP = 4
    RBP = 5
    RSI = 6
    RDI = 7
    R8 = 8
    R9 = 9
    R10 = 10
    R11 = 11
    R12 = 12
    R13 = 13
    R14 = 14
    R15 = 15
    RIP = 16

    @property
    def att(self) -> str:
        return "%" + self.name.lower()


class InsnKind(Enum):
    MOV_REG_FROM_RIP_MEM = "MovRegFromRipMem"
    MOV_REG_FROM_BASE_INDEX_SCALE_DISP = "MovRegFromBaseIndexScaleDisp"
    MOV_REG_FROM_BASE_DISP = "MovRegFromBaseDisp"
    MOV_REG_IMM32 = "MovRegImm32"
    MOV_REG_TO_MEM = "MovRegToMem"
    MOV_REG_REG = "MovRegReg"
    CMP_REG_REG = "CmpRegReg"
    ADD_REG_REG = "AddRegReg"
    ADD_REG_IMM = "AddRegImm"
    ALU_REG_FROM_MEM = "AluRegFromMem"
    PUSH = "Push"
    POP = "Pop"
    COND_JUMP = "CondJump"
    CALL = "Call"
    JMP = "Jmp"
    RET = "Ret"
    CPUID = "Cpuid"
    NOP = "Nop"
    UNKNOWN = "Unknown"


MEMORY_LOADS = frozenset({
    InsnKind.MOV_REG_FROM_RIP_MEM,
    InsnKind.MOV_REG_FROM_BASE_INDEX_SCALE_DISP,
    InsnKind.MOV_REG_FROM_BASE_DISP,
    InsnKind.ALU_REG_FROM_MEM,
})
MOV_LOADS = MEMORY_LOADS - {InsnKind.ALU_REG_FROM_MEM}
BRANCHES = frozenset({InsnKind.COND_JUMP, InsnKind.CALL, InsnKind.JMP, InsnKind.RET})

# condition codes (low nibble of 0f 8x / 7x)
CC_B = 0x2
CC_AE = 0x3
CC_E = 0x4
CC_NE = 0x5
CC_BE = 0x6
CC_A = 0x7
CC_NAMES = {0x0: "o", 0x1: "no", 0x2: "b", 0x3: "ae", 0x4: "e", 0x5: "ne", 0x6: "be", 0x7: "a",
            0x8: "s", 0x9: "ns", 0xa: "p", 0xb: "np", 0xc: "l", 0xd: "ge", 0xe: "le", 0xf: "g"}

_LEGACY_PREFIXES = frozenset({0x66, 0x67, 0x2e, 0x3e, 0x26, 0x36, 0x64, 0x65, 0xf0, 0xf2, 0xf3})
_ALU_MEM_OPS = {0x03: "add", 0x2b: "sub", 0x3b: "cmp", 0x23: "and", 0x0b: "or", 0x33: "xor"}


# ------------------------------------------------------------------
# code buffer
# ------------------------------------------------------------------

class CodeBuffer:
    """Bytes at a code address. `data` is a bytearray or a ctypes byte array
    mapped over live executable memory; both slice and assign the same way."""

    def __init__(self, base_addr: int, data) -> None:
        self.base_addr = base_addr
        self.data = data

    @property
    def length(self) -> int:
        return len(self.data)

    @property
    def end(self) -> int:
        return self.base_addr + len(self.data)

    def contains(self, addr: int, n: int = 1) -> bool:
        return self.base_addr <= addr and addr + n <= self.end and n >= 0

    def read(self, addr: int, n: int) -> bytes:
        if not self.contains(addr, n):
            raise DecodeError(f"read of {n} bytes at {addr:#x} outside [{self.base_addr:#x}, {self.end:#x})")
        off = addr - self.base_addr
        return bytes(self.data[off:off + n])

    def write(self, addr: int, payload: bytes) -> None:
        if not self.contains(addr, len(payload)):
            raise DecodeError(f"write of {len(payload)} bytes at {addr:#x} outside the buffer")
        off = addr - self.base_addr
        self.data[off:off + len(payload)] = payload

    def snapshot(self) -> "CodeBuffer":
        return CodeBuffer(self.base_addr, bytearray(self.read(self.base_addr, self.length)))

    @classmethod
    def from_hex(cls, text: str, base_addr: int = 0) -> "CodeBuffer":
        return cls(base_addr, bytearray(bytes.fromhex(" ".join(text.split()))))

    def hex(self) -> str:
        return self.read(self.base_addr, self.length).hex(" ")


# ------------------------------------------------------------------
# decoded instruction
# ------------------------------------------------------------------

@dataclass(frozen=True)
class DecodedInsn:
    kind: InsnKind
    addr: int
    length: int
    raw: bytes
    dest_reg: Optional[Reg] = None
    src_reg: Optional[Reg] = None
    base_reg: Optional[Reg] = None
    index_reg: Optional[Reg] = None
    scale: int = 1
    disp: int = 0
    imm: Optional[int] = None
    width: int = 64
    rip_target: Optional[int] = None
    target: Optional[int] = None
    cond: Optional[int] = None
    mnemonic: str = ""

    @property
    def end(self) -> int:
        return self.addr + self.length

    @property
    def reads_memory(self) -> bool:
        return self.kind in MEMORY_LOADS

    @property
    def is_branch(self) -> bool:
        return self.kind in BRANCHES

    @property
    def is_mov(self) -> bool:
        return self.kind in MOV_LOADS or self.kind in (
            InsnKind.MOV_REG_TO_MEM, InsnKind.MOV_REG_REG, InsnKind.MOV_REG_IMM32)


@dataclass
class _ModRM:
    mod: int
    reg: int
    rm: Optional[int] = None
    base: Optional[Reg] = None
    index: Optional[Reg] = None
    scale: int = 1
    disp: int = 0
    rip: bool = False
    no_base: bool = False


def _parse_modrm(w: bytes, pos: int, rex: int) -> Tuple[_ModRM, int]:
    modrm = w[pos]
    pos += 1
    mod = modrm >> 6
    reg = ((modrm >> 3) & 7) | (8 if rex & 4 else 0)
    rm_low = modrm & 7
    if mod == 3:
        return _ModRM(mod, reg, rm=rm_low | (8 if rex & 1 else 0)), pos

    m = _ModRM(mod, reg)
    if rm_low == 4:
        sib = w[pos]
        pos += 1
        m.scale = 1 << (sib >> 6)
        idx = ((sib >> 3) & 7) | (8 if rex & 2 else 0)
        m.index = None if idx == 4 else Reg(idx)
        b = sib & 7
        if b == 5 and mod == 0:
            m.no_base = True
            m.disp = struct.unpack_from("<i", w, pos)[0]
            pos += 4
        else:
            m.base = Reg(b | (8 if rex & 1 else 0))
    elif rm_low == 5 and mod == 0:
        m.rip = True
        m.base = Reg.RIP
        m.disp = struct.unpack_from("<i", w, pos)[0]
        pos += 4
    else:
        m.base = Reg(rm_low | (8 if rex & 1 else 0))

    if mod == 1:
        m.disp = struct.unpack_from("<b", w, pos)[0]
        pos += 1
    elif mod == 2:
        m.disp = struct.unpack_from("<i", w, pos)[0]
        pos += 4
    return m, pos


def _mem_fields(m: _ModRM, addr: int, length: int) -> dict:
    fields = {"base_reg": m.base, "index_reg": m.index, "scale": m.scale, "disp": m.disp}
    if m.rip:
        fields["rip_target"] = addr + length + m.disp
    return fields


def _decode(w: bytes, addr: int) -> DecodedInsn:
    pos = 0
    prefixes = []
    while pos < len(w) and w[pos] in _LEGACY_PREFIXES:
        prefixes.append(w[pos])
        pos += 1
    rex = 0
    if 0x40 <= w[pos] <= 0x4f:
        rex = w[pos]
        pos += 1
    op = w[pos]
    pos += 1
    rex_w = bool(rex & 8)
    plain = not prefixes

    def make(kind: InsnKind, length: int, **fields) -> DecodedInsn:
        return DecodedInsn(kind=kind, addr=addr, length=length, raw=bytes(w[:length]), **fields)

    def unknown(length: int) -> DecodedInsn:
        return make(InsnKind.UNKNOWN, max(1, length))

    # nops first: they are the only forms allowed to carry prefixes
    if op == 0x90 and not rex and set(prefixes) <= {0x66}:
        return make(InsnKind.NOP, pos, mnemonic="nop")
    if op == 0x0f:
        op2 = w[pos]
        pos += 1
        if op2 == 0x1f:
            m, pos = _parse_modrm(w, pos, rex)
            if m.mod != 3 and (m.reg & 7) == 0 and set(prefixes) <= {0x66, 0x2e}:
                return make(InsnKind.NOP, pos, mnemonic="nopw" if 0x66 in prefixes else "nopl")
            return unknown(pos)
        if not plain or rex:
            return unknown(pos)
        if 0x80 <= op2 <= 0x8f:
            rel = struct.unpack_from("<i", w, pos)[0]
            pos += 4
            return make(InsnKind.COND_JUMP, pos, cond=op2 & 0xf, target=addr + pos + rel,
                        mnemonic="j" + CC_NAMES[op2 & 0xf])
        if op2 == 0xa2:
            return make(InsnKind.CPUID, pos, mnemonic="cpuid")
        return unknown(pos)

    if not plain:
        return unknown(pos)

    if not rex:
        if 0x70 <= op <= 0x7f:
            rel = struct.unpack_from("<b", w, pos)[0]
            pos += 1
            return make(InsnKind.COND_JUMP, pos, cond=op & 0xf, target=addr + pos + rel,
                        mnemonic="j" + CC_NAMES[op & 0xf])
        if op in (0xe8, 0xe9):
            rel = struct.unpack_from("<i", w, pos)[0]
            pos += 4
            kind = InsnKind.CALL if op == 0xe8 else InsnKind.JMP
            return make(kind, pos, target=addr + pos + rel, mnemonic="call" if op == 0xe8 else "jmp")
        if op == 0xeb:
            rel = struct.unpack_from("<b", w, pos)[0]
            pos += 1
            return make(InsnKind.JMP, pos, target=addr + pos + rel, mnemonic="jmp")
        if op == 0xc3:
            return make(InsnKind.RET, pos, mnemonic="ret")

    if 0x50 <= op <= 0x5f and rex in (0, 0x41):
        reg = Reg((op & 7) | (8 if rex else 0))
        if op < 0x58:
            return make(InsnKind.PUSH, pos, src_reg=reg, mnemonic="push")
        return make(InsnKind.POP, pos, dest_reg=reg, mnemonic="pop")

    if not rex_w:
        # 32-bit immediate loads zero-extend into the full register
        if 0xb8 <= op <= 0xbf:
            imm = struct.unpack_from("<i", w, pos)[0]
            pos += 4
            return make(InsnKind.MOV_REG_IMM32, pos, dest_reg=Reg((op & 7) | (8 if rex & 1 else 0)),
                        imm=imm, width=32, mnemonic="mov")
        if op == 0xc7 and not rex & 0b110:
            m, pos = _parse_modrm(w, pos, rex)
            if m.mod == 3 and (m.reg & 7) == 0:
                imm = struct.unpack_from("<i", w, pos)[0]
                pos += 4
                return make(InsnKind.MOV_REG_IMM32, pos, dest_reg=Reg(m.rm), imm=imm, width=32, mnemonic="mov")
        return unknown(pos)

    if op in (0x8b, 0x89):
        m, pos = _parse_modrm(w, pos, rex)
        if m.mod == 3:
            dest, src = (m.reg, m.rm) if op == 0x8b else (m.rm, m.reg)
            return make(InsnKind.MOV_REG_REG, pos, dest_reg=Reg(dest), src_reg=Reg(src), mnemonic="mov")
        if m.no_base:
            return unknown(pos)
        if op == 0x89:
            return make(InsnKind.MOV_REG_TO_MEM, pos, src_reg=Reg(m.reg), mnemonic="mov",
                        **_mem_fields(m, addr, pos))
        if m.rip:
            kind = InsnKind.MOV_REG_FROM_RIP_MEM
        elif m.index is not None:
            kind = InsnKind.MOV_REG_FROM_BASE_INDEX_SCALE_DISP
        else:
            kind = InsnKind.MOV_REG_FROM_BASE_DISP
        return make(kind, pos, dest_reg=Reg(m.reg), mnemonic="mov", **_mem_fields(m, addr, pos))

    if op in (0x01, 0x03, 0x39, 0x3b) or op in _ALU_MEM_OPS:
        m, pos = _parse_modrm(w, pos, rex)
        if m.mod == 3:
            if op in (0x01, 0x03):
                dest, src = (m.rm, m.reg) if op == 0x01 else (m.reg, m.rm)
                return make(InsnKind.ADD_REG_REG, pos, dest_reg=Reg(dest), src_reg=Reg(src), mnemonic="add")
            if op in (0x39, 0x3b):
                left, right = (m.rm, m.reg) if op == 0x39 else (m.reg, m.rm)
                return make(InsnKind.CMP_REG_REG, pos, dest_reg=Reg(left), src_reg=Reg(right), mnemonic="cmp")
            return unknown(pos)
        if op in _ALU_MEM_OPS and not m.no_base:
            return make(InsnKind.ALU_REG_FROM_MEM, pos, dest_reg=Reg(m.reg), mnemonic=_ALU_MEM_OPS[op],
                        **_mem_fields(m, addr, pos))
        return unknown(pos)

    if op in (0x83, 0x81, 0xc7):
        m, pos = _parse_modrm(w, pos, rex)
        if m.mod != 3 or (m.reg & 7) != 0:
            return unknown(pos)
        if op == 0x83:
            imm = struct.unpack_from("<b", w, pos)[0]
            pos += 1
        else:
            imm = struct.unpack_from("<i", w, pos)[0]
            pos += 4
        if op == 0xc7:
            return make(InsnKind.MOV_REG_IMM32, pos, dest_reg=Reg(m.rm), imm=imm, width=64, mnemonic="mov")
        return make(InsnKind.ADD_REG_IMM, pos, dest_reg=Reg(m.rm), imm=imm, mnemonic="add")

    return unknown(pos)


def decode_one(buf: CodeBuffer, addr: int) -> DecodedInsn:
    if not buf.contains(addr):
        raise DecodeError(f"address {addr:#x} outside [{buf.base_addr:#x}, {buf.end:#x})")
    window = buf.read(addr, min(MAX_INSN_LENGTH, buf.end - addr))
    try:
        return _decode(window, addr)
    except (IndexError, struct.error):
        # encoding runs past the end of the buffer
        return DecodedInsn(kind=InsnKind.UNKNOWN, addr=addr, length=len(window), raw=window)


def decode_window(buf: CodeBuffer, addr: int, max_insns: int) -> List[DecodedInsn]:
    if addr != buf.end and not buf.contains(addr):
        raise DecodeError(f"address {addr:#x} outside the buffer")
    out: List[DecodedInsn] = []
    while len(out) < max_insns and addr < buf.end:
        insn = decode_one(buf, addr)
        out.append(insn)
        if insn.kind is InsnKind.UNKNOWN or insn.is_branch:
            break
        addr = insn.end
    return out


def decode_all(buf: CodeBuffer, start: Optional[int] = None) -> List[DecodedInsn]:
    """Linear sweep to the end of the buffer, through branches."""
    addr = buf.base_addr if start is None else start
    out: List[DecodedInsn] = []
    while addr < buf.end:
        insn = decode_one(buf, addr)
        out.append(insn)
        addr = insn.end
    return out


# ------------------------------------------------------------------
# encoders
# ------------------------------------------------------------------

INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1

# Intel's recommended nop sequences; longer ones stack 0x66 prefixes
_NOPS = {
    1: bytes.fromhex("90"),
    2: bytes.fromhex("66 90"),
    3: bytes.fromhex("0f 1f 00"),
    4: bytes.fromhex("0f 1f 40 00"),
    5: bytes.fromhex("0f 1f 44 00 00"),
    6: bytes.fromhex("66 0f 1f 44 00 00"),
    7: bytes.fromhex("0f 1f 80 00 00 00 00"),
    8: bytes.fromhex("0f 1f 84 00 00 00 00 00"),
    9: bytes.fromhex("66 0f 1f 84 00 00 00 00 00"),
    10: bytes.fromhex("66 2e 0f 1f 84 00 00 00 00 00"),
}


def fits_int32(value: int) -> bool:
    return INT32_MIN <= value <= INT32_MAX


def _check_int32(value: int, what: str) -> None:
    if not fits_int32(value):
        raise EncodeError(f"{what} {value:#x} does not fit a signed 32-bit field")


def _check_gpr(reg: Reg, what: str) -> None:
    if reg is Reg.RIP or not 0 <= reg <= 15:
        raise EncodeError(f"{what} must be a general purpose register, got {reg!r}")


def _rex(w: bool, r: int, x: int, b: int) -> int:
    return 0x40 | (8 if w else 0) | (4 if r >= 8 else 0) | (2 if x >= 8 else 0) | (1 if b >= 8 else 0)


def _mem_operand(reg: int, base: Reg, index: Optional[Reg] = None, scale: int = 1,
                 disp: int = 0, force_disp32: bool = False) -> Tuple[int, bytes]:
    """ModRM (+SIB, +disp) for reg, [base + index*scale + disp]; returns (rex, bytes)."""
    _check_int32(disp, "displacement")
    if base is Reg.RIP:
        if index is not None:
            raise EncodeError("RIP-relative operands take no index")
        return _rex(True, reg, 0, 0), bytes([((reg & 7) << 3) | 0x05]) + struct.pack("<i", disp)
    _check_gpr(base, "base")
    if scale not in (1, 2, 4, 8):
        raise EncodeError(f"scale must be 1, 2, 4 or 8, got {scale}")

    if force_disp32:
        mod, tail = 2, struct.pack("<i", disp)
    elif disp == 0 and (base & 7) != 5:
        mod, tail = 0, b""
    elif -128 <= disp <= 127:
        mod, tail = 1, struct.pack("<b", disp)
    else:
        mod, tail = 2, struct.pack("<i", disp)

    if index is not None:
        _check_gpr(index, "index")
        if index is Reg.RSP:
            raise EncodeError("%rsp cannot be an index register")
        sib = ({1: 0, 2: 1, 4: 2, 8: 3}[scale] << 6) | ((index & 7) << 3) | (base & 7)
        body = bytes([(mod << 6) | ((reg & 7) << 3) | 0x04, sib])
        return _rex(True, reg, index, base), body + tail
    body = bytes([(mod << 6) | ((reg & 7) << 3) | (base & 7)])
    if (base & 7) == 4:
        body += b"\x24"
    return _rex(True, reg, 0, base), body + tail


def encode_mov_reg_imm32(dest_reg: Reg, imm: int) -> bytes:
    """mov $imm, %r32 via c7 /0; the load zero-extends to 64 bits."""
    _check_gpr(dest_reg, "destination")
    _check_int32(imm, "immediate")
    prefix = b"\x41" if dest_reg >= 8 else b""
    return prefix + bytes([0xc7, 0xc0 | (dest_reg & 7)]) + struct.pack("<i", imm)


def encode_mov_reg_base_disp(dest_reg: Reg, base_reg: Reg, disp: int) -> bytes:
    """mov disp32(%base), %dest; the displacement always fills the last 4 bytes."""
    _check_gpr(dest_reg, "destination")
    if base_reg is Reg.RIP:
        raise EncodeError("use encode_mov_reg_rip for RIP-relative loads")
    rex, operand = _mem_operand(dest_reg, base_reg, disp=disp, force_disp32=True)
    return bytes([rex, 0x8b]) + operand


def encode_nop(length: int) -> bytes:
    if not 1 <= length <= MAX_INSN_LENGTH:
        raise EncodeError(f"nop length must be in 1..{MAX_INSN_LENGTH}, got {length}")
    if length <= 10:
        return _NOPS[length]
    return b"\x66" * (length - 10) + _NOPS[10]


def encode_padding(length: int) -> bytes:
    """Fewest nops covering `length` bytes (0 gives nothing)."""
    out = b""
    while length > 0:
        chunk = min(length, MAX_INSN_LENGTH)
        out += encode_nop(chunk)
        length -= chunk
    return out


def encode_load(dest_reg: Reg, base_reg: Reg, disp: int = 0, index_reg: Optional[Reg] = None,
                scale: int = 1) -> bytes:
    """mov disp(%base[,%index,scale]), %dest in its shortest form."""
    _check_gpr(dest_reg, "destination")
    rex, operand = _mem_operand(dest_reg, base_reg, index_reg, scale, disp)
    return bytes([rex, 0x8b]) + operand


def encode_mov_reg_rip(dest_reg: Reg, disp: int) -> bytes:
    _check_gpr(dest_reg, "destination")
    rex, operand = _mem_operand(dest_reg, Reg.RIP, disp=disp)
    return bytes([rex, 0x8b]) + operand


def encode_mov_reg_rip_target(dest_reg: Reg, addr: int, target: int) -> bytes:
    # 7 bytes: REX, 8b, ModRM, disp32
    return encode_mov_reg_rip(dest_reg, target - (addr + 7))


def encode_store(base_reg: Reg, disp: int, src_reg: Reg, index_reg: Optional[Reg] = None,
                 scale: int = 1) -> bytes:
    _check_gpr(src_reg, "source")
    rex, operand = _mem_operand(src_reg, base_reg, index_reg, scale, disp)
    return bytes([rex, 0x89]) + operand


def encode_mov_reg_reg(dest_reg: Reg, src_reg: Reg) -> bytes:
    _check_gpr(dest_reg, "destination")
    _check_gpr(src_reg, "source")
    return bytes([_rex(True, dest_reg, 0, src_reg), 0x8b, 0xc0 | ((dest_reg & 7) << 3) | (src_reg & 7)])


def encode_cmp_reg_reg(left: Reg, right: Reg) -> bytes:
    """cmp %right, %left (flags from left - right)."""
    _check_gpr(left, "left operand")
    _check_gpr(right, "right operand")
    return bytes([_rex(True, right, 0, left), 0x39, 0xc0 | ((right & 7) << 3) | (left & 7)])


def encode_add_reg_reg(dest_reg: Reg, src_reg: Reg) -> bytes:
    _check_gpr(dest_reg, "destination")
    _check_gpr(src_reg, "source")
    return bytes([_rex(True, src_reg, 0, dest_reg), 0x01, 0xc0 | ((src_reg & 7) << 3) | (dest_reg & 7)])


def encode_add_reg_imm8(dest_reg: Reg, imm: int) -> bytes:
    _check_gpr(dest_reg, "destination")
    if not -128 <= imm <= 127:
        raise EncodeError(f"immediate {imm} does not fit 8 bits")
    return bytes([_rex(True, 0, 0, dest_reg), 0x83, 0xc0 | (dest_reg & 7)]) + struct.pack("<b", imm)


def encode_jcc_rel32(cond: int, addr: int, target: int) -> bytes:
    rel = target - (addr + 6)
    _check_int32(rel, "branch offset")
    return bytes([0x0f, 0x80 | (cond & 0xf)]) + struct.pack("<i", rel)


def encode_jmp_rel32(addr: int, target: int) -> bytes:
    rel = target - (addr + 5)
    _check_int32(rel, "branch offset")
    return b"\xe9" + struct.pack("<i", rel)


def encode_call_rel32(addr: int, target: int) -> bytes:
    rel = target - (addr + 5)
    _check_int32(rel, "branch offset")
    return b"\xe8" + struct.pack("<i", rel)


def encode_push(reg: Reg) -> bytes:
    _check_gpr(reg, "register")
    return (b"\x41" if reg >= 8 else b"") + bytes([0x50 | (reg & 7)])


def encode_pop(reg: Reg) -> bytes:
    _check_gpr(reg, "register")
    return (b"\x41" if reg >= 8 else b"") + bytes([0x58 | (reg & 7)])


def encode_ret() -> bytes:
    return b"\xc3"


def encode_cpuid() -> bytes:
    return b"\x0f\xa2"


# ------------------------------------------------------------------
# AT&T rendering
# ------------------------------------------------------------------

def _hex(value: int) -> str:
    return f"-{-value:#x}" if value < 0 else f"{value:#x}"


def _fmt_mem(insn: DecodedInsn) -> str:
    disp = _hex(insn.disp) if insn.disp or insn.base_reg is Reg.RIP else ""
    if insn.index_reg is not None:
        return f"{disp}({insn.base_reg.att},{insn.index_reg.att},{insn.scale})"
    return f"{disp}({insn.base_reg.att})"


def format_insn(insn: DecodedInsn) -> str:
    k = insn.kind
    if k in MOV_LOADS or k is InsnKind.ALU_REG_FROM_MEM:
        return f"{insn.mnemonic:<6} {_fmt_mem(insn)},{insn.dest_reg.att}"
    if k is InsnKind.MOV_REG_TO_MEM:
        return f"mov    {insn.src_reg.att},{_fmt_mem(insn)}"
    if k is InsnKind.MOV_REG_IMM32:
        reg = insn.dest_reg.att if insn.width == 64 else "%" + _reg32(insn.dest_reg)
        return f"mov    ${_hex(insn.imm)},{reg}"
    if k in (InsnKind.MOV_REG_REG, InsnKind.ADD_REG_REG, InsnKind.CMP_REG_REG):
        return f"{insn.mnemonic:<6} {insn.src_reg.att},{insn.dest_reg.att}"
    if k is InsnKind.ADD_REG_IMM:
        return f"add    ${_hex(insn.imm)},{insn.dest_reg.att}"
    if k is InsnKind.PUSH:
        return f"push   {insn.src_reg.att}"
    if k is InsnKind.POP:
        return f"pop    {insn.dest_reg.att}"
    if k in (InsnKind.COND_JUMP, InsnKind.JMP, InsnKind.CALL):
        return f"{insn.mnemonic:<6} {insn.target:#x}"
    if k in (InsnKind.RET, InsnKind.CPUID, InsnKind.NOP):
        return insn.mnemonic
    return "(bad)"


def _reg32(reg: Reg) -> str:
    if reg >= 8:
        return reg.name.lower() + "d"
    return "e" + reg.name.lower()[1:]
