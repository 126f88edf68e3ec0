"""Linear memory with two interchangeable bounds-checking strategies.

SoftwareCheck widens the 32-bit address arithmetic and compares against the
current byte length before touching the buffer.  GuardPage performs the raw
access first and relies on the buffer fault to stop it, the way a reserved
address range plus protected guard region does natively; the fault handler
then converts any fault that lands inside the emulated 8 GiB reservation
into the out-of-bounds trap.  Both must be observationally identical, and a
faulting store must never leave a partial write behind.
"""

import struct

from .errors import TrapCode, TrapError
from .numerics import MASK32, canon_f32, canon_f64, fnv1a64
from .opcodes import PAGE_SIZE

GROW_FAIL = 0xFFFFFFFF
# 4 GiB of addressable space plus 4 GiB so that any u32 base + u32 offset
# still lands inside the reservation and faults convert to traps.
RESERVATION_BYTES = 8 << 30

# (op, ty) -> (byte width, struct letter, sign-extend mask or None)
_LOAD_FMT = {
    ("load", "i32"): (4, "<I", None), ("load", "i64"): (8, "<Q", None),
    ("load", "f32"): (4, "<f", None), ("load", "f64"): (8, "<d", None),
    ("load8_s", "i32"): (1, "<b", MASK32), ("load8_u", "i32"): (1, "<B", None),
    ("load16_s", "i32"): (2, "<h", MASK32), ("load16_u", "i32"): (2, "<H", None),
    ("load8_s", "i64"): (1, "<b", 0xFFFFFFFFFFFFFFFF),
    ("load8_u", "i64"): (1, "<B", None),
    ("load16_s", "i64"): (2, "<h", 0xFFFFFFFFFFFFFFFF),
    ("load16_u", "i64"): (2, "<H", None),
    ("load32_s", "i64"): (4, "<i", 0xFFFFFFFFFFFFFFFF),
    ("load32_u", "i64"): (4, "<I", None),
}
_STORE_FMT = {
    ("store", "i32"): (4, "<I", None), ("store", "i64"): (8, "<Q", None),
    ("store", "f32"): (4, "<f", None), ("store", "f64"): (8, "<d", None),
    ("store8", "i32"): (1, "<B", 0xFF), ("store16", "i32"): (2, "<H", 0xFFFF),
    ("store8", "i64"): (1, "<B", 0xFF), ("store16", "i64"): (2, "<H", 0xFFFF),
    ("store32", "i64"): (4, "<I", MASK32),
}


def _oob():
    raise TrapError(TrapCode.MemoryAccessOutOfBounds)


def guard_fault_to_trap(fault_addr: int):
    """Convert a guarded access fault into the architectural trap.

    Faults outside the reservation are not ours to swallow; those indicate
    an engine bug and must surface as a crash, never as a guest trap.
    """
    if 0 <= fault_addr < RESERVATION_BYTES:
        _oob()
    raise AssertionError(
        f"memory fault at {fault_addr:#x} outside the reservation")


class LinearMemory:
    """One guest linear memory; `mode` picks the checking strategy."""

    def __init__(self, min_pages: int, max_pages, mode: str):
        if mode not in ("software", "guard"):
            raise ValueError(f"unknown memory mode {mode!r}")
        self.mode = mode
        self.min_pages = min_pages
        self.max_pages = max_pages  # None means limited by config only
        self.data = bytearray(min_pages * PAGE_SIZE)
        self.accessors = {}
        build = self._build_software if mode == "software" else self._build_guard
        for key, (width, fmt, ext) in _LOAD_FMT.items():
            self.accessors[key] = build(width, fmt, ext, load=True)
        for key, (width, fmt, ext) in _STORE_FMT.items():
            self.accessors[key] = build(width, fmt, ext, load=False)

    # Accessor closures capture the bytearray itself; grow() extends it in
    # place, so they stay valid across growth.

    def _build_software(self, width, fmt, ext, load):
        data = self.data
        unpack = struct.Struct(fmt).unpack_from
        pack = struct.Struct(fmt).pack_into
        if load:
            if fmt == "<f":
                def access(addr, offset):
                    ea = addr + offset
                    if ea + width > len(data):
                        _oob()
                    return canon_f32(unpack(data, ea)[0])
            elif fmt == "<d":
                def access(addr, offset):
                    ea = addr + offset
                    if ea + width > len(data):
                        _oob()
                    return canon_f64(unpack(data, ea)[0])
            elif ext is not None:
                def access(addr, offset):
                    ea = addr + offset
                    if ea + width > len(data):
                        _oob()
                    return unpack(data, ea)[0] & ext
            else:
                def access(addr, offset):
                    ea = addr + offset
                    if ea + width > len(data):
                        _oob()
                    return unpack(data, ea)[0]
        else:
            if ext is not None:
                def access(addr, offset, value):
                    ea = addr + offset
                    if ea + width > len(data):
                        _oob()
                    pack(data, ea, value & ext)
            else:
                def access(addr, offset, value):
                    ea = addr + offset
                    if ea + width > len(data):
                        _oob()
                    pack(data, ea, value)
        return access

    def _build_guard(self, width, fmt, ext, load):
        data = self.data
        unpack = struct.Struct(fmt).unpack_from
        pack = struct.Struct(fmt).pack_into
        if load:
            if fmt == "<f":
                def access(addr, offset):
                    try:
                        return canon_f32(unpack(data, addr + offset)[0])
                    except struct.error:
                        guard_fault_to_trap(addr + offset)
            elif fmt == "<d":
                def access(addr, offset):
                    try:
                        return canon_f64(unpack(data, addr + offset)[0])
                    except struct.error:
                        guard_fault_to_trap(addr + offset)
            elif ext is not None:
                def access(addr, offset):
                    try:
                        return unpack(data, addr + offset)[0] & ext
                    except struct.error:
                        guard_fault_to_trap(addr + offset)
            else:
                def access(addr, offset):
                    try:
                        return unpack(data, addr + offset)[0]
                    except struct.error:
                        guard_fault_to_trap(addr + offset)
        else:
            if ext is not None:
                def access(addr, offset, value):
                    try:
                        pack(data, addr + offset, value & ext)
                    except struct.error:
                        guard_fault_to_trap(addr + offset)
            else:
                def access(addr, offset, value):
                    try:
                        pack(data, addr + offset, value)
                    except struct.error:
                        guard_fault_to_trap(addr + offset)
        return access

    # ------------------------------------------------------------ queries

    def size_pages(self) -> int:
        return len(self.data) // PAGE_SIZE

    def grow(self, delta_pages: int) -> int:
        old = self.size_pages()
        new = old + delta_pages
        limit = self.max_pages if self.max_pages is not None else MASK32
        if new > limit or new > MASK32:
            return GROW_FAIL
        self.data.extend(bytes(delta_pages * PAGE_SIZE))
        return old

    def init_segment(self, offset: int, payload: bytes) -> bool:
        """Instantiation-time data copy; returns False when out of range."""
        if offset + len(payload) > len(self.data):
            return False
        self.data[offset:offset + len(payload)] = payload
        return True

    def content_hash(self) -> int:
        return fnv1a64(self.data)
