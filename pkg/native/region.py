# native/region.py: anonymous mmap with code and data pages; code is RX once sealed, RWX while patched

from __future__ import annotations

import ctypes
import mmap
import platform
import sys
from typing import Dict, Final, Optional

from config import REGION_CODE_PAGES, REGION_DATA_PAGES, WORD_SIZE
from utils.logger import logger
from x86_codec import CodeBuffer

# ------------------------------------------------------------------
PROT_READ: Final[int] = 0x1
PROT_WRITE: Final[int] = 0x2
PROT_EXEC: Final[int] = 0x4

RW: Final[int] = PROT_READ | PROT_WRITE
RX: Final[int] = PROT_READ | PROT_EXEC
RWX: Final[int] = PROT_READ | PROT_WRITE | PROT_EXEC


class NativeUnavailableError(RuntimeError):
    pass


class RegionExhaustedError(RuntimeError):
    pass


def native_supported() -> bool:
    return sys.platform.startswith("linux") and platform.machine() in ("x86_64", "AMD64")


def require_native() -> None:
    if not native_supported():
        raise NativeUnavailableError(
            f"native execution needs x86_64 Linux, this host is {sys.platform}/{platform.machine()}")


_libc: Optional[ctypes.CDLL] = None


def _mprotect(addr: int, length: int, prot: int) -> None:
    global _libc
    if _libc is None:
        _libc = ctypes.CDLL(None, use_errno=True)
        _libc.mprotect.restype = ctypes.c_int
        _libc.mprotect.argtypes = (ctypes.c_void_p, ctypes.c_size_t, ctypes.c_int)
    if _libc.mprotect(ctypes.c_void_p(addr), ctypes.c_size_t(length), ctypes.c_int(prot)) != 0:
        err = ctypes.get_errno()
        raise OSError(err, f"mprotect({addr:#x}, {length}, {prot}) failed")


class ExecRegion:
    """One anonymous mapping: code pages followed by data pages.

    Code is emitted while the pages are read+write, then sealed read+exec.
    The DBM page guard later flips individual code pages to
    read+write+exec, once each. Data pages (IC structures) stay read+write,
    within RIP-relative reach of every emitted instruction. Not thread-safe."""

    def __init__(self, code_pages: int = REGION_CODE_PAGES, data_pages: int = REGION_DATA_PAGES) -> None:
        require_native()
        self.page_size = mmap.PAGESIZE
        self.code_len = code_pages * self.page_size
        self.data_len = data_pages * self.page_size
        self.length = self.code_len + self.data_len

        self._map = mmap.mmap(-1, self.length, flags=mmap.MAP_PRIVATE | mmap.MAP_ANONYMOUS,
                              prot=mmap.PROT_READ | mmap.PROT_WRITE)
        self._anchor = ctypes.c_char.from_buffer(self._map)
        self.base = ctypes.addressof(self._anchor)
        self.data_base = self.base + self.code_len

        self._code_view = (ctypes.c_ubyte * self.code_len).from_address(self.base)
        self.code = CodeBuffer(self.base, self._code_view)
        self.protection: Dict[int, int] = {self.base + i: RW for i in range(0, self.length, self.page_size)}

        self._code_cursor = self.base
        self._data_cursor = self.data_base
        self.sealed = False

    # ---------------- code ----------------
    @property
    def code_cursor(self) -> int:
        return self._code_cursor

    def emit_code(self, payload: bytes, align: int = 16) -> int:
        if self.sealed:
            raise RuntimeError("region already sealed; emit before seal()")
        addr = self._code_cursor
        if addr + len(payload) > self.base + self.code_len:
            raise RegionExhaustedError(f"{len(payload)} more code bytes do not fit the region")
        self.code.write(addr, payload)
        self._code_cursor = min(self.base + self.code_len, (addr + len(payload) + align - 1) & ~(align - 1))
        return addr

    def seal(self) -> None:
        _mprotect(self.base, self.code_len, RX)
        for page in range(self.base, self.base + self.code_len, self.page_size):
            self.protection[page] = RX
        self.sealed = True

    def make_writable(self, page: int, page_size: int) -> None:
        """PageGuard backend: one mprotect per code page."""
        if not self.base <= page < self.base + self.code_len:
            raise ValueError(f"page {page:#x} is not a code page of this region")
        _mprotect(page, page_size, RWX)
        self.protection[page] = RWX
        logger.debug("mprotect %#x rwx", page)

    # ---------------- data ----------------
    def alloc_words(self, n: int) -> int:
        addr = self._data_cursor
        if addr + n * WORD_SIZE > self.data_base + self.data_len:
            raise RegionExhaustedError(f"{n} more data words do not fit the region")
        self._data_cursor += n * WORD_SIZE
        for i in range(n):
            self.write_word(addr + i * WORD_SIZE, 0)
        return addr

    def _check_data(self, addr: int) -> None:
        if addr % WORD_SIZE or not self.data_base <= addr < self.data_base + self.data_len:
            raise ValueError(f"{addr:#x} is not a data word of this region")

    def write_word(self, addr: int, value: int) -> None:
        self._check_data(addr)
        ctypes.c_uint64.from_address(addr).value = value

    def read_word(self, addr: int) -> int:
        self._check_data(addr)
        return ctypes.c_uint64.from_address(addr).value

    def close(self) -> None:
        # exported buffers must go before the mapping
        del self._code_view
        del self._anchor
        self.code = None
        self._map.close()
