"""Wasm MVP opcode tables driving the decoder, validator, and encoder."""

# value type bytes
T_I32 = 0x7F
T_I64 = 0x7E
T_F32 = 0x7D
T_F64 = 0x7C
T_FUNCREF = 0x70
T_FUNC = 0x60
T_EMPTY = 0x40

VALTYPE_NAMES = {T_I32: "i32", T_I64: "i64", T_F32: "f32", T_F64: "f64"}
VALTYPE_BYTES = {v: k for k, v in VALTYPE_NAMES.items()}

# byte -> (name, immediate kind).  Immediate kinds:
#   none, blocktype, label, labelvec, func, typeidx_reserved, local, global,
#   memarg, reserved, i32, i64, f32, f64
OP_TABLE = {
    0x00: ("unreachable", "none"),
    0x01: ("nop", "none"),
    0x02: ("block", "blocktype"),
    0x03: ("loop", "blocktype"),
    0x04: ("if", "blocktype"),
    0x05: ("else", "none"),
    0x0B: ("end", "none"),
    0x0C: ("br", "label"),
    0x0D: ("br_if", "label"),
    0x0E: ("br_table", "labelvec"),
    0x0F: ("return", "none"),
    0x10: ("call", "func"),
    0x11: ("call_indirect", "typeidx_reserved"),
    0x1A: ("drop", "none"),
    0x1B: ("select", "none"),
    0x20: ("local.get", "local"),
    0x21: ("local.set", "local"),
    0x22: ("local.tee", "local"),
    0x23: ("global.get", "global"),
    0x24: ("global.set", "global"),
    0x28: ("i32.load", "memarg"),
    0x29: ("i64.load", "memarg"),
    0x2A: ("f32.load", "memarg"),
    0x2B: ("f64.load", "memarg"),
    0x2C: ("i32.load8_s", "memarg"),
    0x2D: ("i32.load8_u", "memarg"),
    0x2E: ("i32.load16_s", "memarg"),
    0x2F: ("i32.load16_u", "memarg"),
    0x30: ("i64.load8_s", "memarg"),
    0x31: ("i64.load8_u", "memarg"),
    0x32: ("i64.load16_s", "memarg"),
    0x33: ("i64.load16_u", "memarg"),
    0x34: ("i64.load32_s", "memarg"),
    0x35: ("i64.load32_u", "memarg"),
    0x36: ("i32.store", "memarg"),
    0x37: ("i64.store", "memarg"),
    0x38: ("f32.store", "memarg"),
    0x39: ("f64.store", "memarg"),
    0x3A: ("i32.store8", "memarg"),
    0x3B: ("i32.store16", "memarg"),
    0x3C: ("i64.store8", "memarg"),
    0x3D: ("i64.store16", "memarg"),
    0x3E: ("i64.store32", "memarg"),
    0x3F: ("memory.size", "reserved"),
    0x40: ("memory.grow", "reserved"),
    0x41: ("i32.const", "i32"),
    0x42: ("i64.const", "i64"),
    0x43: ("f32.const", "f32"),
    0x44: ("f64.const", "f64"),
    0x45: ("i32.eqz", "none"),
    0x46: ("i32.eq", "none"),
    0x47: ("i32.ne", "none"),
    0x48: ("i32.lt_s", "none"),
    0x49: ("i32.lt_u", "none"),
    0x4A: ("i32.gt_s", "none"),
    0x4B: ("i32.gt_u", "none"),
    0x4C: ("i32.le_s", "none"),
    0x4D: ("i32.le_u", "none"),
    0x4E: ("i32.ge_s", "none"),
    0x4F: ("i32.ge_u", "none"),
    0x50: ("i64.eqz", "none"),
    0x51: ("i64.eq", "none"),
    0x52: ("i64.ne", "none"),
    0x53: ("i64.lt_s", "none"),
    0x54: ("i64.lt_u", "none"),
    0x55: ("i64.gt_s", "none"),
    0x56: ("i64.gt_u", "none"),
    0x57: ("i64.le_s", "none"),
    0x58: ("i64.le_u", "none"),
    0x59: ("i64.ge_s", "none"),
    0x5A: ("i64.ge_u", "none"),
    0x5B: ("f32.eq", "none"),
    0x5C: ("f32.ne", "none"),
    0x5D: ("f32.lt", "none"),
    0x5E: ("f32.gt", "none"),
    0x5F: ("f32.le", "none"),
    0x60: ("f32.ge", "none"),
    0x61: ("f64.eq", "none"),
    0x62: ("f64.ne", "none"),
    0x63: ("f64.lt", "none"),
    0x64: ("f64.gt", "none"),
    0x65: ("f64.le", "none"),
    0x66: ("f64.ge", "none"),
    0x67: ("i32.clz", "none"),
    0x68: ("i32.ctz", "none"),
    0x69: ("i32.popcnt", "none"),
    0x6A: ("i32.add", "none"),
    0x6B: ("i32.sub", "none"),
    0x6C: ("i32.mul", "none"),
    0x6D: ("i32.div_s", "none"),
    0x6E: ("i32.div_u", "none"),
    0x6F: ("i32.rem_s", "none"),
    0x70: ("i32.rem_u", "none"),
    0x71: ("i32.and", "none"),
    0x72: ("i32.or", "none"),
    0x73: ("i32.xor", "none"),
    0x74: ("i32.shl", "none"),
    0x75: ("i32.shr_s", "none"),
    0x76: ("i32.shr_u", "none"),
    0x77: ("i32.rotl", "none"),
    0x78: ("i32.rotr", "none"),
    0x79: ("i64.clz", "none"),
    0x7A: ("i64.ctz", "none"),
    0x7B: ("i64.popcnt", "none"),
    0x7C: ("i64.add", "none"),
    0x7D: ("i64.sub", "none"),
    0x7E: ("i64.mul", "none"),
    0x7F: ("i64.div_s", "none"),
    0x80: ("i64.div_u", "none"),
    0x81: ("i64.rem_s", "none"),
    0x82: ("i64.rem_u", "none"),
    0x83: ("i64.and", "none"),
    0x84: ("i64.or", "none"),
    0x85: ("i64.xor", "none"),
    0x86: ("i64.shl", "none"),
    0x87: ("i64.shr_s", "none"),
    0x88: ("i64.shr_u", "none"),
    0x89: ("i64.rotl", "none"),
    0x8A: ("i64.rotr", "none"),
    0x8B: ("f32.abs", "none"),
    0x8C: ("f32.neg", "none"),
    0x8D: ("f32.ceil", "none"),
    0x8E: ("f32.floor", "none"),
    0x8F: ("f32.trunc", "none"),
    0x90: ("f32.nearest", "none"),
    0x91: ("f32.sqrt", "none"),
    0x92: ("f32.add", "none"),
    0x93: ("f32.sub", "none"),
    0x94: ("f32.mul", "none"),
    0x95: ("f32.div", "none"),
    0x96: ("f32.min", "none"),
    0x97: ("f32.max", "none"),
    0x98: ("f32.copysign", "none"),
    0x99: ("f64.abs", "none"),
    0x9A: ("f64.neg", "none"),
    0x9B: ("f64.ceil", "none"),
    0x9C: ("f64.floor", "none"),
    0x9D: ("f64.trunc", "none"),
    0x9E: ("f64.nearest", "none"),
    0x9F: ("f64.sqrt", "none"),
    0xA0: ("f64.add", "none"),
    0xA1: ("f64.sub", "none"),
    0xA2: ("f64.mul", "none"),
    0xA3: ("f64.div", "none"),
    0xA4: ("f64.min", "none"),
    0xA5: ("f64.max", "none"),
    0xA6: ("f64.copysign", "none"),
    0xA7: ("i32.wrap_i64", "none"),
    0xA8: ("i32.trunc_f32_s", "none"),
    0xA9: ("i32.trunc_f32_u", "none"),
    0xAA: ("i32.trunc_f64_s", "none"),
    0xAB: ("i32.trunc_f64_u", "none"),
    0xAC: ("i64.extend_i32_s", "none"),
    0xAD: ("i64.extend_i32_u", "none"),
    0xAE: ("i64.trunc_f32_s", "none"),
    0xAF: ("i64.trunc_f32_u", "none"),
    0xB0: ("i64.trunc_f64_s", "none"),
    0xB1: ("i64.trunc_f64_u", "none"),
    0xB2: ("f32.convert_i32_s", "none"),
    0xB3: ("f32.convert_i32_u", "none"),
    0xB4: ("f32.convert_i64_s", "none"),
    0xB5: ("f32.convert_i64_u", "none"),
    0xB6: ("f32.demote_f64", "none"),
    0xB7: ("f64.convert_i32_s", "none"),
    0xB8: ("f64.convert_i32_u", "none"),
    0xB9: ("f64.convert_i64_s", "none"),
    0xBA: ("f64.convert_i64_u", "none"),
    0xBB: ("f64.promote_f32", "none"),
    0xBC: ("i32.reinterpret_f32", "none"),
    0xBD: ("i64.reinterpret_f64", "none"),
    0xBE: ("f32.reinterpret_i32", "none"),
    0xBF: ("f64.reinterpret_i64", "none"),
}

# sign-extension operators decode fine but are not MVP; validation rejects them
POST_MVP_OPS = {
    0xC0: ("i32.extend8_s", "none"),
    0xC1: ("i32.extend16_s", "none"),
    0xC2: ("i64.extend8_s", "none"),
    0xC3: ("i64.extend16_s", "none"),
    0xC4: ("i64.extend32_s", "none"),
}

NAME_TO_BYTE = {name: b for b, (name, _) in OP_TABLE.items()}
NAME_TO_KIND = {name: kind for _, (name, kind) in OP_TABLE.items()}
for _b, (_n, _k) in POST_MVP_OPS.items():
    NAME_TO_BYTE[_n] = _b
    NAME_TO_KIND[_n] = _k

# natural access width in bytes for memory operators
ACCESS_WIDTH = {
    "i32.load": 4, "i64.load": 8, "f32.load": 4, "f64.load": 8,
    "i32.load8_s": 1, "i32.load8_u": 1, "i32.load16_s": 2, "i32.load16_u": 2,
    "i64.load8_s": 1, "i64.load8_u": 1, "i64.load16_s": 2, "i64.load16_u": 2,
    "i64.load32_s": 4, "i64.load32_u": 4,
    "i32.store": 4, "i64.store": 8, "f32.store": 4, "f64.store": 8,
    "i32.store8": 1, "i32.store16": 2,
    "i64.store8": 1, "i64.store16": 2, "i64.store32": 4,
}

PAGE_SIZE = 65536
