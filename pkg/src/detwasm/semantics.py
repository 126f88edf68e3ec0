"""Single source of truth for scalar operator behavior.

The interpreter, the closure compiler, and the const folder all evaluate
operators through these tables, so a value computed at compile time is
bit-identical to the same value computed at run time.  Integers are kept in
unsigned canonical form; floats are Python floats with every producing
operator canonicalizing NaNs and rounding f32 results.
"""

from . import numerics as num
from .numerics import (MASK32, MASK64, INT32_MAX, INT32_MIN, INT64_MAX,
                       INT64_MIN, canon_f32, canon_f64, to_i32, to_i64)

# (op, ty) -> callable(a, b); compares yield i32 0/1
BINOPS = {}
# (op, ty) -> callable(a)
UNOPS = {}
# (op, result_ty) -> callable(a)
CONVERTS = {}


def _int_ops(ty, mask, bits, signed):
    BINOPS[("add", ty)] = lambda a, b: (a + b) & mask
    BINOPS[("sub", ty)] = lambda a, b: (a - b) & mask
    BINOPS[("mul", ty)] = lambda a, b: (a * b) & mask
    BINOPS[("div_u", ty)] = lambda a, b: num.idiv_u(a, b, mask)
    BINOPS[("div_s", ty)] = lambda a, b: num.idiv_s(a, b, mask)
    BINOPS[("rem_u", ty)] = lambda a, b: num.irem_u(a, b, mask)
    BINOPS[("rem_s", ty)] = lambda a, b: num.irem_s(a, b, mask)
    BINOPS[("and", ty)] = lambda a, b: a & b
    BINOPS[("or", ty)] = lambda a, b: a | b
    BINOPS[("xor", ty)] = lambda a, b: a ^ b
    BINOPS[("shl", ty)] = lambda a, b: num.ishl(a, b, bits, mask)
    BINOPS[("shr_u", ty)] = lambda a, b: num.ishr_u(a, b, bits)
    BINOPS[("shr_s", ty)] = lambda a, b: num.ishr_s(a, b, bits, mask)
    BINOPS[("rotl", ty)] = lambda a, b: num.irotl(a, b, bits, mask)
    BINOPS[("rotr", ty)] = lambda a, b: num.irotr(a, b, bits, mask)
    BINOPS[("eq", ty)] = lambda a, b: 1 if a == b else 0
    BINOPS[("ne", ty)] = lambda a, b: 1 if a != b else 0
    BINOPS[("lt_u", ty)] = lambda a, b: 1 if a < b else 0
    BINOPS[("gt_u", ty)] = lambda a, b: 1 if a > b else 0
    BINOPS[("le_u", ty)] = lambda a, b: 1 if a <= b else 0
    BINOPS[("ge_u", ty)] = lambda a, b: 1 if a >= b else 0
    BINOPS[("lt_s", ty)] = lambda a, b: 1 if signed(a) < signed(b) else 0
    BINOPS[("gt_s", ty)] = lambda a, b: 1 if signed(a) > signed(b) else 0
    BINOPS[("le_s", ty)] = lambda a, b: 1 if signed(a) <= signed(b) else 0
    BINOPS[("ge_s", ty)] = lambda a, b: 1 if signed(a) >= signed(b) else 0
    UNOPS[("eqz", ty)] = lambda a: 1 if a == 0 else 0
    UNOPS[("clz", ty)] = lambda a: num.iclz(a, bits)
    UNOPS[("ctz", ty)] = lambda a: num.ictz(a, bits)
    UNOPS[("popcnt", ty)] = lambda a: num.ipopcnt(a)


_int_ops("i32", MASK32, 32, to_i32)
_int_ops("i64", MASK64, 64, to_i64)


def _float_ops(ty, canon):
    BINOPS[("add", ty)] = lambda a, b: canon(a + b)
    BINOPS[("sub", ty)] = lambda a, b: canon(a - b)
    BINOPS[("mul", ty)] = lambda a, b: canon(a * b)
    BINOPS[("div", ty)] = lambda a, b: canon(num.fdiv(a, b))
    BINOPS[("min", ty)] = lambda a, b: canon(num.fmin(a, b))
    BINOPS[("max", ty)] = lambda a, b: canon(num.fmax(a, b))
    BINOPS[("copysign", ty)] = lambda a, b: canon(num.fcopysign(a, b))
    BINOPS[("eq", ty)] = lambda a, b: 1 if a == b else 0
    BINOPS[("ne", ty)] = lambda a, b: 1 if a != b else 0
    BINOPS[("lt", ty)] = lambda a, b: 1 if a < b else 0
    BINOPS[("gt", ty)] = lambda a, b: 1 if a > b else 0
    BINOPS[("le", ty)] = lambda a, b: 1 if a <= b else 0
    BINOPS[("ge", ty)] = lambda a, b: 1 if a >= b else 0
    UNOPS[("abs", ty)] = lambda a: canon(num.fabs(a))
    UNOPS[("neg", ty)] = lambda a: canon(num.fneg(a))
    UNOPS[("sqrt", ty)] = lambda a: canon(num.fsqrt(a))
    UNOPS[("ceil", ty)] = lambda a: canon(num.fceil(a))
    UNOPS[("floor", ty)] = lambda a: canon(num.ffloor(a))
    UNOPS[("trunc", ty)] = lambda a: canon(num.ftrunc(a))
    UNOPS[("nearest", ty)] = lambda a: canon(num.fnearest(a))


_float_ops("f32", canon_f32)
_float_ops("f64", canon_f64)

CONVERTS[("wrap_i64", "i32")] = lambda a: a & MASK32
CONVERTS[("extend_i32_s", "i64")] = lambda a: to_i32(a) & MASK64
CONVERTS[("extend_i32_u", "i64")] = lambda a: a
CONVERTS[("trunc_f32_s", "i32")] = \
    lambda a: num.trunc_checked(a, INT32_MIN, INT32_MAX) & MASK32
CONVERTS[("trunc_f32_u", "i32")] = lambda a: num.trunc_checked(a, 0, MASK32)
CONVERTS[("trunc_f64_s", "i32")] = \
    lambda a: num.trunc_checked(a, INT32_MIN, INT32_MAX) & MASK32
CONVERTS[("trunc_f64_u", "i32")] = lambda a: num.trunc_checked(a, 0, MASK32)
CONVERTS[("trunc_f32_s", "i64")] = \
    lambda a: num.trunc_checked(a, INT64_MIN, INT64_MAX) & MASK64
CONVERTS[("trunc_f32_u", "i64")] = lambda a: num.trunc_checked(a, 0, MASK64)
CONVERTS[("trunc_f64_s", "i64")] = \
    lambda a: num.trunc_checked(a, INT64_MIN, INT64_MAX) & MASK64
CONVERTS[("trunc_f64_u", "i64")] = lambda a: num.trunc_checked(a, 0, MASK64)
CONVERTS[("convert_i32_s", "f32")] = lambda a: canon_f32(float(to_i32(a)))
CONVERTS[("convert_i32_u", "f32")] = lambda a: canon_f32(float(a))
CONVERTS[("convert_i64_s", "f32")] = lambda a: canon_f32(float(to_i64(a)))
CONVERTS[("convert_i64_u", "f32")] = lambda a: canon_f32(float(a))
CONVERTS[("convert_i32_s", "f64")] = lambda a: float(to_i32(a))
CONVERTS[("convert_i32_u", "f64")] = lambda a: float(a)
CONVERTS[("convert_i64_s", "f64")] = lambda a: canon_f64(float(to_i64(a)))
CONVERTS[("convert_i64_u", "f64")] = lambda a: canon_f64(float(a))
CONVERTS[("demote_f64", "f32")] = lambda a: canon_f32(a)
CONVERTS[("promote_f32", "f64")] = lambda a: canon_f64(a)
CONVERTS[("reinterpret_f32", "i32")] = lambda a: num.f32_bits(a)
CONVERTS[("reinterpret_f64", "i64")] = lambda a: num.f64_bits(a)
CONVERTS[("reinterpret_i32", "f32")] = lambda a: canon_f32(num.bits_f32(a))
CONVERTS[("reinterpret_i64", "f64")] = lambda a: canon_f64(num.bits_f64(a))
