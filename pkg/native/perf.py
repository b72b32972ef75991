# native/perf.py: hardware counters around a measured region, via perf_event_open(2)
# -----------------------------------------------------------------------------
# Counts user-space events of the calling thread only: retired instructions,
# L1 data-cache read accesses and L1 data-cache read misses. A counter the
# kernel refuses is reported as None instead of failing the run.
# -----------------------------------------------------------------------------

from __future__ import annotations

import ctypes
import os
import struct
import time
from dataclasses import asdict, dataclass
from typing import Dict, Final, Optional

from utils.logger import logger

# =========================
# syscall / perf constants
# =========================
NR_PERF_EVENT_OPEN: Final[int] = 298     # x86_64

PERF_TYPE_HARDWARE: Final[int] = 0
PERF_TYPE_HW_CACHE: Final[int] = 3
PERF_COUNT_HW_INSTRUCTIONS: Final[int] = 1

# config = cache id | (op << 8) | (result << 16)
PERF_COUNT_HW_CACHE_L1D: Final[int] = 0
PERF_COUNT_HW_CACHE_OP_READ: Final[int] = 0
PERF_COUNT_HW_CACHE_RESULT_ACCESS: Final[int] = 0
PERF_COUNT_HW_CACHE_RESULT_MISS: Final[int] = 1

L1D_READ_ACCESS: Final[int] = (PERF_COUNT_HW_CACHE_L1D | (PERF_COUNT_HW_CACHE_OP_READ << 8)
                               | (PERF_COUNT_HW_CACHE_RESULT_ACCESS << 16))
L1D_READ_MISS: Final[int] = (PERF_COUNT_HW_CACHE_L1D | (PERF_COUNT_HW_CACHE_OP_READ << 8)
                             | (PERF_COUNT_HW_CACHE_RESULT_MISS << 16))

PERF_EVENT_IOC_ENABLE: Final[int] = 0x2400
PERF_EVENT_IOC_DISABLE: Final[int] = 0x2401
PERF_EVENT_IOC_RESET: Final[int] = 0x2403

FLAG_DISABLED: Final[int] = 1 << 0
FLAG_EXCLUDE_KERNEL: Final[int] = 1 << 5
FLAG_EXCLUDE_HV: Final[int] = 1 << 6


class perf_event_attr(ctypes.Structure):
    # PERF_ATTR_SIZE_VER1 layout, enough for counting mode
    _fields_ = [
        ("type", ctypes.c_uint),
        ("size", ctypes.c_uint),
        ("config", ctypes.c_ulonglong),
        ("sample_period", ctypes.c_ulonglong),
        ("sample_type", ctypes.c_ulonglong),
        ("read_format", ctypes.c_ulonglong),
        ("flags", ctypes.c_ulonglong),
        ("wakeup_events", ctypes.c_uint),
        ("bp_type", ctypes.c_uint),
        ("config1", ctypes.c_ulonglong),
        ("config2", ctypes.c_ulonglong),
    ]


_libc: Optional[ctypes.CDLL] = None


def _lib() -> ctypes.CDLL:
    global _libc
    if _libc is None:
        _libc = ctypes.CDLL(None, use_errno=True)
    return _libc


def perf_event_open(type_: int, config: int, pid: int = 0, cpu: int = -1) -> int:
    attr = perf_event_attr()
    attr.type = type_
    attr.size = ctypes.sizeof(perf_event_attr)
    attr.config = config
    attr.flags = FLAG_DISABLED | FLAG_EXCLUDE_KERNEL | FLAG_EXCLUDE_HV
    fd = _lib().syscall(
        ctypes.c_long(NR_PERF_EVENT_OPEN),
        ctypes.byref(attr),
        ctypes.c_int(pid),
        ctypes.c_int(cpu),
        ctypes.c_int(-1),
        ctypes.c_ulong(0),
    )
    if fd < 0:
        err = ctypes.get_errno()
        raise OSError(err, os.strerror(err))
    return fd


def _ioctl(fd: int, req: int) -> None:
    if _lib().ioctl(fd, req, 0) != 0:
        err = ctypes.get_errno()
        raise OSError(err, os.strerror(err))


def _read_counter(fd: int) -> int:
    return struct.unpack("Q", os.read(fd, 8))[0]


@dataclass
class PerfCounters:
    instructions: Optional[int]
    l1d_loads: Optional[int]
    l1d_misses: Optional[int]
    wall_time: int                  # nanoseconds

    def as_dict(self) -> Dict[str, Optional[int]]:
        return asdict(self)


_EVENTS = {
    "instructions": (PERF_TYPE_HARDWARE, PERF_COUNT_HW_INSTRUCTIONS),
    "l1d_loads": (PERF_TYPE_HW_CACHE, L1D_READ_ACCESS),
    "l1d_misses": (PERF_TYPE_HW_CACHE, L1D_READ_MISS),
}


class CounterGroup:
    """Bracket a region with start()/stop(); wall time is always measured."""

    def __init__(self, enabled: bool = True) -> None:
        self.fds: Dict[str, Optional[int]] = {name: None for name in _EVENTS}
        self.unavailable: Dict[str, str] = {}
        self._t0 = 0
        if not enabled:
            self.unavailable = {name: "disabled" for name in _EVENTS}
            return
        for name, (type_, config) in _EVENTS.items():
            try:
                self.fds[name] = perf_event_open(type_, config)
            except (OSError, AttributeError) as e:
                self.unavailable[name] = str(e)
                logger.warning("⚠️ counter %s unavailable: %s", name, e)

    @property
    def partial(self) -> bool:
        return bool(self.unavailable)

    def start(self) -> None:
        for fd in self.fds.values():
            if fd is not None:
                _ioctl(fd, PERF_EVENT_IOC_RESET)
                _ioctl(fd, PERF_EVENT_IOC_ENABLE)
        self._t0 = time.perf_counter_ns()

    def stop(self) -> PerfCounters:
        wall = time.perf_counter_ns() - self._t0
        for fd in self.fds.values():
            if fd is not None:
                _ioctl(fd, PERF_EVENT_IOC_DISABLE)
        values = {name: (None if fd is None else _read_counter(fd)) for name, fd in self.fds.items()}
        return PerfCounters(wall_time=wall, **values)

    def close(self) -> None:
        for name, fd in self.fds.items():
            if fd is not None:
                os.close(fd)
                self.fds[name] = None

    def __enter__(self) -> "CounterGroup":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
