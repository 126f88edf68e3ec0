"""Binary decoder producing an offset-annotated module AST.

Decoding is purely structural: anything the grammar cannot parse raises
MalformedModule with the offset of the first offending byte.  Semantic rules
(types, limits, identifier encoding) are enforced later by the validator, so
e.g. names with invalid UTF-8 are carried through as raw bytes.
"""

from dataclasses import dataclass, field

from .errors import ValidationCode, ValidationError
from .opcodes import (OP_TABLE, POST_MVP_OPS, T_EMPTY, T_FUNC, T_FUNCREF,
                      VALTYPE_NAMES)

SECTION_IDS = {
    1: "type", 2: "import", 3: "function", 4: "table", 5: "memory",
    6: "global", 7: "export", 8: "start", 9: "element", 10: "code", 11: "data",
}


@dataclass(frozen=True)
class FuncType:
    params: tuple
    results: tuple


@dataclass(frozen=True)
class Limits:
    minimum: int
    maximum: object  # int or None


@dataclass(frozen=True)
class GlobalType:
    valtype: str
    mutable: bool


@dataclass
class Import:
    module: object   # str, or raw bytes when not valid UTF-8
    name: object
    kind: str        # func | table | memory | global
    desc: object     # type index for funcs, Limits/GlobalType otherwise
    offset: int
    module_offset: int
    name_offset: int


@dataclass
class Export:
    name: object
    kind: str
    index: int
    offset: int
    name_offset: int


@dataclass
class Global:
    gtype: GlobalType
    init: list
    offset: int


@dataclass
class Elem:
    table_index: int
    offset_expr: list
    func_indices: tuple
    offset: int


@dataclass
class Data:
    mem_index: int
    offset_expr: list
    payload: bytes
    offset: int


@dataclass
class Code:
    local_decls: list   # raw (count, valtype) pairs, order preserved
    body: list          # list of (byte_offset, opname, imm)
    offset: int


@dataclass
class Module:
    types: list = field(default_factory=list)
    imports: list = field(default_factory=list)
    funcs: list = field(default_factory=list)      # (type_index, offset) pairs
    tables: list = field(default_factory=list)     # Limits
    memories: list = field(default_factory=list)   # Limits
    globals: list = field(default_factory=list)
    exports: list = field(default_factory=list)
    start: object = None                           # (func_index, offset) or None
    elems: list = field(default_factory=list)
    datas: list = field(default_factory=list)
    codes: list = field(default_factory=list)
    table_offsets: list = field(default_factory=list)
    memory_offsets: list = field(default_factory=list)


def _malformed(offset, detail=""):
    raise ValidationError(ValidationCode.MalformedModule, offset, detail)


class Reader:
    def __init__(self, data: bytes, base: int = 0):
        self.data = data
        self.pos = 0
        self.base = base  # offset of data[0] within the whole module

    def off(self) -> int:
        return self.base + self.pos

    def eof(self) -> bool:
        return self.pos >= len(self.data)

    def u8(self) -> int:
        if self.pos >= len(self.data):
            _malformed(self.off(), "unexpected end")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            _malformed(self.off(), "unexpected end")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def leb_u(self, bits: int) -> int:
        start = self.off()
        result = 0
        shift = 0
        while True:
            b = self.u8()
            result |= (b & 0x7F) << shift
            shift += 7
            if not b & 0x80:
                break
            if shift >= bits + 7:
                _malformed(start, "integer representation too long")
        if shift > bits and (b >> (bits - (shift - 7))):
            _malformed(start, "integer too large")
        return result

    def leb_s(self, bits: int) -> int:
        start = self.off()
        result = 0
        shift = 0
        while True:
            b = self.u8()
            result |= (b & 0x7F) << shift
            shift += 7
            if not b & 0x80:
                break
            if shift >= bits + 7:
                _malformed(start, "integer representation too long")
        if b & 0x40:
            result -= 1 << shift
        if result < -(1 << (bits - 1)) or result >= (1 << (bits - 1)):
            _malformed(start, "integer too large")
        return result

    def u32(self) -> int:
        return self.leb_u(32)

    def name_raw(self):
        """Length-prefixed byte string: returns (decoded-or-raw, offset)."""
        n = self.u32()
        off = self.off()
        raw = self.raw(n)
        try:
            return raw.decode("utf-8"), off
        except UnicodeDecodeError:
            return raw, off

    def valtype(self) -> str:
        off = self.off()
        b = self.u8()
        name = VALTYPE_NAMES.get(b)
        if name is None:
            _malformed(off, f"bad value type 0x{b:02x}")
        return name

    def limits(self) -> Limits:
        off = self.off()
        flag = self.u8()
        if flag == 0x00:
            return Limits(self.u32(), None)
        if flag == 0x01:
            return Limits(self.u32(), self.u32())
        _malformed(off, f"bad limits flag 0x{flag:02x}")


def _decode_instrs(r: Reader):
    """Parse an expression up to and including its closing end at depth 0."""
    out = []
    depth = 0
    while True:
        off = r.off()
        b = r.u8()
        entry = OP_TABLE.get(b) or POST_MVP_OPS.get(b)
        if entry is None:
            _malformed(off, f"unknown opcode 0x{b:02x}")
        name, kind = entry
        if kind == "none":
            imm = None
        elif kind == "blocktype":
            bt_off = r.off()
            bt = r.u8()
            if bt == T_EMPTY:
                imm = None
            elif bt in VALTYPE_NAMES:
                imm = VALTYPE_NAMES[bt]
            else:
                _malformed(bt_off, f"bad block type 0x{bt:02x}")
        elif kind == "label":
            imm = r.u32()
        elif kind == "labelvec":
            n = r.u32()
            if n > len(r.data) - r.pos:
                _malformed(off, "label vector larger than section")
            targets = tuple(r.u32() for _ in range(n))
            imm = (targets, r.u32())
        elif kind == "func":
            imm = r.u32()
        elif kind == "typeidx_reserved":
            imm = r.u32()
            res_off = r.off()
            if r.u8() != 0x00:
                _malformed(res_off, "non-zero reserved byte after call_indirect")
        elif kind in ("local", "global"):
            imm = r.u32()
        elif kind == "memarg":
            imm = (r.u32(), r.u32())  # (align, offset)
        elif kind == "reserved":
            res_off = r.off()
            if r.u8() != 0x00:
                _malformed(res_off, "non-zero reserved byte")
            imm = None
        elif kind == "i32":
            imm = r.leb_s(32) & 0xFFFFFFFF
        elif kind == "i64":
            imm = r.leb_s(64) & 0xFFFFFFFFFFFFFFFF
        elif kind == "f32":
            imm = int.from_bytes(r.raw(4), "little")  # raw bits
        elif kind == "f64":
            imm = int.from_bytes(r.raw(8), "little")
        else:
            _malformed(off, f"bad immediate kind {kind}")
        out.append((off, name, imm))
        if name in ("block", "loop", "if"):
            depth += 1
        elif name == "end":
            if depth == 0:
                return out
            depth -= 1


def _check_vec_count(r: Reader, count: int, min_bytes: int = 1):
    if count * min_bytes > len(r.data) - r.pos:
        _malformed(r.off(), "vector count larger than section")


def decode_module(data: bytes) -> Module:
    if len(data) < 8:
        _malformed(0, "module shorter than header")
    if data[0:4] != b"\x00asm":
        _malformed(0, "bad magic")
    if int.from_bytes(data[4:8], "little") != 1:
        _malformed(4, "unsupported version")

    mod = Module()
    pos = 8
    last_section = 0
    func_section_count = 0
    while pos < len(data):
        sec_off = pos
        r = Reader(data[pos:], base=pos)
        sec_id = r.u8()
        size = r.u32()
        body_start = pos + r.pos
        if body_start + size > len(data):
            _malformed(sec_off, "section extends past end of module")
        if sec_id == 0:
            # custom section: name must parse, payload is opaque
            cr = Reader(data[body_start:body_start + size], base=body_start)
            cr.name_raw()
            pos = body_start + size
            continue
        if sec_id not in SECTION_IDS:
            _malformed(sec_off, f"unknown section id {sec_id}")
        if sec_id <= last_section:
            _malformed(sec_off, "section out of order or duplicated")
        last_section = sec_id
        r = Reader(data[body_start:body_start + size], base=body_start)

        if sec_id == 1:
            count = r.u32()
            _check_vec_count(r, count, 3)
            for _ in range(count):
                toff = r.off()
                if r.u8() != T_FUNC:
                    _malformed(toff, "expected func type")
                np = r.u32()
                _check_vec_count(r, np)
                params = tuple(r.valtype() for _ in range(np))
                nr = r.u32()
                _check_vec_count(r, nr)
                results = tuple(r.valtype() for _ in range(nr))
                mod.types.append((FuncType(params, results), toff))
        elif sec_id == 2:
            count = r.u32()
            _check_vec_count(r, count, 4)
            for _ in range(count):
                ioff = r.off()
                module, m_off = r.name_raw()
                name, n_off = r.name_raw()
                kind_off = r.off()
                kind = r.u8()
                if kind == 0x00:
                    desc = r.u32()
                    kname = "func"
                elif kind == 0x01:
                    et_off = r.off()
                    if r.u8() != T_FUNCREF:
                        _malformed(et_off, "bad table element type")
                    desc = r.limits()
                    kname = "table"
                elif kind == 0x02:
                    desc = r.limits()
                    kname = "memory"
                elif kind == 0x03:
                    vt = r.valtype()
                    mut_off = r.off()
                    mut = r.u8()
                    if mut > 1:
                        _malformed(mut_off, "bad mutability flag")
                    desc = GlobalType(vt, mut == 1)
                    kname = "global"
                else:
                    _malformed(kind_off, f"bad import kind 0x{kind:02x}")
                mod.imports.append(Import(module, name, kname, desc, ioff, m_off, n_off))
        elif sec_id == 3:
            count = r.u32()
            _check_vec_count(r, count)
            func_section_count = count
            for _ in range(count):
                foff = r.off()
                mod.funcs.append((r.u32(), foff))
        elif sec_id == 4:
            count = r.u32()
            _check_vec_count(r, count, 3)
            for _ in range(count):
                toff = r.off()
                et_off = r.off()
                if r.u8() != T_FUNCREF:
                    _malformed(et_off, "bad table element type")
                mod.tables.append(r.limits())
                mod.table_offsets.append(toff)
        elif sec_id == 5:
            count = r.u32()
            _check_vec_count(r, count, 2)
            for _ in range(count):
                moff = r.off()
                mod.memories.append(r.limits())
                mod.memory_offsets.append(moff)
        elif sec_id == 6:
            count = r.u32()
            _check_vec_count(r, count, 4)
            for _ in range(count):
                goff = r.off()
                vt = r.valtype()
                mut_off = r.off()
                mut = r.u8()
                if mut > 1:
                    _malformed(mut_off, "bad mutability flag")
                init = _decode_instrs(r)
                mod.globals.append(Global(GlobalType(vt, mut == 1), init, goff))
        elif sec_id == 7:
            count = r.u32()
            _check_vec_count(r, count, 3)
            kinds = {0x00: "func", 0x01: "table", 0x02: "memory", 0x03: "global"}
            for _ in range(count):
                eoff = r.off()
                name, n_off = r.name_raw()
                kind_off = r.off()
                kb = r.u8()
                if kb not in kinds:
                    _malformed(kind_off, f"bad export kind 0x{kb:02x}")
                mod.exports.append(Export(name, kinds[kb], r.u32(), eoff, n_off))
        elif sec_id == 8:
            soff = r.off()
            mod.start = (r.u32(), soff)
        elif sec_id == 9:
            count = r.u32()
            _check_vec_count(r, count, 3)
            for _ in range(count):
                eoff = r.off()
                tidx = r.u32()
                expr = _decode_instrs(r)
                n = r.u32()
                _check_vec_count(r, n)
                funcs = tuple(r.u32() for _ in range(n))
                mod.elems.append(Elem(tidx, expr, funcs, eoff))
        elif sec_id == 10:
            count = r.u32()
            _check_vec_count(r, count, 2)
            if count != func_section_count:
                _malformed(r.base, "function and code section counts disagree")
            for _ in range(count):
                coff = r.off()
                body_size = r.u32()
                entry_start = r.pos
                if entry_start + body_size > len(r.data):
                    _malformed(coff, "code entry extends past section")
                br = Reader(r.data[entry_start:entry_start + body_size],
                            base=r.base + entry_start)
                nlocals = br.u32()
                _check_vec_count(br, nlocals, 2)
                local_decls = []
                for _ in range(nlocals):
                    cnt = br.u32()
                    local_decls.append((cnt, br.valtype()))
                body = _decode_instrs(br)
                if not br.eof():
                    _malformed(br.off(), "trailing bytes in code entry")
                mod.codes.append(Code(local_decls, body, coff))
                r.pos = entry_start + body_size
        elif sec_id == 11:
            count = r.u32()
            _check_vec_count(r, count, 3)
            for _ in range(count):
                doff = r.off()
                midx = r.u32()
                expr = _decode_instrs(r)
                n = r.u32()
                payload = r.raw(n)
                mod.datas.append(Data(midx, expr, payload, doff))

        if r.pos != size:
            _malformed(body_start + r.pos, "section size mismatch")
        pos = body_start + size

    if func_section_count != len(mod.codes):
        _malformed(len(data), "function and code section counts disagree")
    return mod
