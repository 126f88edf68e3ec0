"""Numeric semantics shared by the validator, interpreter, and compilers.

Integers are held in canonical unsigned form (i32 in [0, 2**32), i64 in
[0, 2**64)); signedness is an operator property.  f32 values are Python floats
that are exactly representable in binary32, re-rounded after every operation.
Any NaN produced by a float operation is replaced by the canonical quiet NaN
so results are bit-stable everywhere.
"""

import math
import struct

from .errors import TrapCode, TrapError

MASK32 = 0xFFFFFFFF
MASK64 = 0xFFFFFFFFFFFFFFFF
INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1
INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1

_PACK_F32 = struct.Struct("<f")
_PACK_F64 = struct.Struct("<d")
_PACK_U32 = struct.Struct("<I")
_PACK_U64 = struct.Struct("<Q")

CANON_NAN_BITS32 = 0x7FC00000
CANON_NAN_BITS64 = 0x7FF8000000000000
CANON_NAN32 = _PACK_F32.unpack(_PACK_U32.pack(CANON_NAN_BITS32))[0]
CANON_NAN64 = _PACK_F64.unpack(_PACK_U64.pack(CANON_NAN_BITS64))[0]


def to_i32(v: int) -> int:
    """Signed view of a canonical u32."""
    return v - 0x100000000 if v & 0x80000000 else v


def to_i64(v: int) -> int:
    return v - 0x10000000000000000 if v & 0x8000000000000000 else v


def to_u32(v: int) -> int:
    return v & MASK32


def to_u64(v: int) -> int:
    return v & MASK64


# ---------------------------------------------------------------- int ops

def idiv_u(a: int, b: int, mask: int) -> int:
    if b == 0:
        raise TrapError(TrapCode.IntegerDivideByZero)
    return a // b


def idiv_s(a: int, b: int, mask: int) -> int:
    if b == 0:
        raise TrapError(TrapCode.IntegerDivideByZero)
    half = (mask >> 1) + 1
    sa = a - (mask + 1) if a & half else a
    sb = b - (mask + 1) if b & half else b
    if sa == -half and sb == -1:
        raise TrapError(TrapCode.IntegerOverflow)
    q = abs(sa) // abs(sb)
    if (sa < 0) != (sb < 0):
        q = -q
    return q & mask


def irem_u(a: int, b: int, mask: int) -> int:
    if b == 0:
        raise TrapError(TrapCode.IntegerDivideByZero)
    return a % b


def irem_s(a: int, b: int, mask: int) -> int:
    # sign follows the dividend; INT_MIN rem -1 is 0, not a trap
    if b == 0:
        raise TrapError(TrapCode.IntegerDivideByZero)
    half = (mask + 1) >> 1
    sa = a - (mask + 1) if a & half else a
    sb = b - (mask + 1) if b & half else b
    r = abs(sa) % abs(sb)
    if sa < 0:
        r = -r
    return r & mask


def ishl(a: int, b: int, bits: int, mask: int) -> int:
    return (a << (b % bits)) & mask


def ishr_u(a: int, b: int, bits: int) -> int:
    return a >> (b % bits)


def ishr_s(a: int, b: int, bits: int, mask: int) -> int:
    half = (mask + 1) >> 1
    sa = a - (mask + 1) if a & half else a
    return (sa >> (b % bits)) & mask


def irotl(a: int, b: int, bits: int, mask: int) -> int:
    c = b % bits
    return ((a << c) | (a >> (bits - c))) & mask if c else a


def irotr(a: int, b: int, bits: int, mask: int) -> int:
    c = b % bits
    return ((a >> c) | (a << (bits - c))) & mask if c else a


def iclz(a: int, bits: int) -> int:
    return bits - a.bit_length()


def ictz(a: int, bits: int) -> int:
    if a == 0:
        return bits
    return (a & -a).bit_length() - 1


def ipopcnt(a: int) -> int:
    return a.bit_count()


# -------------------------------------------------------------- float env

def round_f32(x: float) -> float:
    """Round a double to the nearest binary32 value (ties to even)."""
    try:
        return _PACK_F32.unpack(_PACK_F32.pack(x))[0]
    except OverflowError:
        return math.copysign(math.inf, x)


def canon_f32(x: float) -> float:
    if x != x:
        return CANON_NAN32
    return round_f32(x)


def canon_f64(x: float) -> float:
    if x != x:
        return CANON_NAN64
    return x


def fdiv(a: float, b: float) -> float:
    """IEEE division without Python's ZeroDivisionError."""
    if b == 0.0:
        if a != a or a == 0.0:
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)
    return a / b


def fsqrt(x: float) -> float:
    if x != x or x < 0.0:
        return math.nan
    if x == 0.0:
        return x  # keeps the sign of -0.0
    return math.sqrt(x)


def fabs(x: float) -> float:
    return math.fabs(x)


def fneg(x: float) -> float:
    return -x if x == x else math.nan


def fmin(a: float, b: float) -> float:
    if a != a or b != b:
        return math.nan
    if a == 0.0 and b == 0.0:
        # -0 wins for min when the signs differ
        if math.copysign(1.0, a) < 0 or math.copysign(1.0, b) < 0:
            return -0.0
        return 0.0
    return a if a < b else b


def fmax(a: float, b: float) -> float:
    if a != a or b != b:
        return math.nan
    if a == 0.0 and b == 0.0:
        if math.copysign(1.0, a) > 0 or math.copysign(1.0, b) > 0:
            return 0.0
        return -0.0
    return a if a > b else b


def fcopysign(a: float, b: float) -> float:
    return math.copysign(a, b)


def _zero_signed(r: float, x: float) -> float:
    # floor/ceil/trunc/nearest return a zero carrying the sign of the input
    if r == 0.0 and math.copysign(1.0, x) < 0:
        return -0.0
    return r


def ffloor(x: float) -> float:
    if x != x:
        return math.nan
    if math.isinf(x) or x == 0.0:
        return x
    return _zero_signed(float(math.floor(x)), x)


def fceil(x: float) -> float:
    if x != x:
        return math.nan
    if math.isinf(x) or x == 0.0:
        return x
    return _zero_signed(float(math.ceil(x)), x)


def ftrunc(x: float) -> float:
    if x != x:
        return math.nan
    if math.isinf(x) or x == 0.0:
        return x
    return _zero_signed(float(math.trunc(x)), x)


def fnearest(x: float) -> float:
    """Round to nearest integer-valued float, ties to even."""
    if x != x:
        return math.nan
    if math.isinf(x) or x == 0.0:
        return x
    f = math.floor(x)
    d = x - f
    if d > 0.5:
        r = f + 1.0
    elif d < 0.5:
        r = float(f)
    else:
        r = float(f) if f % 2 == 0 else f + 1.0
    return _zero_signed(r, x)


# ------------------------------------------------------------ conversions

def trunc_checked(x: float, lo: int, hi: int) -> int:
    """Float to int with trapping on NaN and out-of-range values."""
    if x != x:
        raise TrapError(TrapCode.InvalidConversionToInteger)
    if math.isinf(x):
        raise TrapError(TrapCode.InvalidConversionToInteger)
    t = math.trunc(x)
    if t < lo or t > hi:
        raise TrapError(TrapCode.InvalidConversionToInteger)
    return t


def f32_bits(x: float) -> int:
    try:
        return _PACK_U32.unpack(_PACK_F32.pack(x))[0]
    except OverflowError:
        return 0x7F800000 if x > 0 else 0xFF800000


def f64_bits(x: float) -> int:
    return _PACK_U64.unpack(_PACK_F64.pack(x))[0]


def bits_f32(v: int) -> float:
    return _PACK_F32.unpack(_PACK_U32.pack(v))[0]


def bits_f64(v: int) -> float:
    return _PACK_F64.unpack(_PACK_U64.pack(v))[0]


# ------------------------------------------------------- checked arithmetic

_CHECKED_BOUNDS = {
    "i32": (INT32_MIN, INT32_MAX, MASK32, True),
    "u32": (0, MASK32, MASK32, False),
    "i64": (INT64_MIN, INT64_MAX, MASK64, True),
    "u64": (0, MASK64, MASK64, False),
}


def checked_apply(ctype: str, op: str, a: int, b: int) -> int:
    """Overflow-checked add/sub/mul on stored bits; traps instead of wrapping."""
    lo, hi, mask, signed = _CHECKED_BOUNDS[ctype]
    if signed:
        half = (mask + 1) >> 1
        if a & half:
            a -= mask + 1
        if b & half:
            b -= mask + 1
    if op == "add":
        r = a + b
    elif op == "sub":
        r = a - b
    else:
        r = a * b
    if r < lo or r > hi:
        raise TrapError(TrapCode.CheckedArithmeticOverflow, f"{ctype}_{op}")
    return r & mask


# ------------------------------------------------------------------ hash

def fnv1a64(data) -> int:
    """64-bit FNV-1a, used for the trace memory hash."""
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & MASK64
    return h
