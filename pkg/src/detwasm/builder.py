"""Module encoder and a small builder API for synthesizing test modules.

encode_module serializes a decoded Module back to bytes; ModuleBuilder offers
a friendlier way to assemble modules from scratch.  Bodies are written as
(opname, imm) pairs, e.g. [("local.get", 0), ("i32.const", 5), ("i32.add",)].
Names may be raw bytes to deliberately produce invalid identifiers.
"""

import struct

from .decoder import (Code, Data, Elem, Export, FuncType, Global, GlobalType,
                      Import, Limits, Module)
from .numerics import to_i32, to_i64
from .opcodes import NAME_TO_BYTE, NAME_TO_KIND, T_FUNC, T_FUNCREF, VALTYPE_BYTES


def leb_u(value: int) -> bytes:
    out = bytearray()
    while True:
        b = value & 0x7F
        value >>= 7
        if value:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def leb_s(value: int) -> bytes:
    out = bytearray()
    while True:
        b = value & 0x7F
        value >>= 7
        if (value == 0 and not b & 0x40) or (value == -1 and b & 0x40):
            out.append(b)
            return bytes(out)
        out.append(b | 0x80)


def _name(value) -> bytes:
    raw = value.encode("utf-8") if isinstance(value, str) else bytes(value)
    return leb_u(len(raw)) + raw


def _limits(lim: Limits) -> bytes:
    if lim.maximum is None:
        return b"\x00" + leb_u(lim.minimum)
    return b"\x01" + leb_u(lim.minimum) + leb_u(lim.maximum)


def encode_instr(name: str, imm) -> bytes:
    op = NAME_TO_BYTE[name]
    kind = NAME_TO_KIND[name]
    out = bytes([op])
    if kind == "none":
        return out
    if kind == "blocktype":
        return out + (b"\x40" if imm is None else bytes([VALTYPE_BYTES[imm]]))
    if kind == "label":
        return out + leb_u(imm)
    if kind == "labelvec":
        targets, default = imm
        return out + leb_u(len(targets)) + b"".join(leb_u(t) for t in targets) + leb_u(default)
    if kind == "func":
        return out + leb_u(imm)
    if kind == "typeidx_reserved":
        return out + leb_u(imm) + b"\x00"
    if kind in ("local", "global"):
        return out + leb_u(imm)
    if kind == "memarg":
        align, offset = imm
        return out + leb_u(align) + leb_u(offset)
    if kind == "reserved":
        return out + b"\x00"
    if kind == "i32":
        return out + leb_s(to_i32(imm & 0xFFFFFFFF))
    if kind == "i64":
        return out + leb_s(to_i64(imm & 0xFFFFFFFFFFFFFFFF))
    if kind == "f32":
        return out + struct.pack("<I", imm)
    if kind == "f64":
        return out + struct.pack("<Q", imm)
    raise ValueError(f"unencodable instruction {name}")


def _expr(instrs) -> bytes:
    return b"".join(encode_instr(i[1], i[2]) for i in instrs)


def _section(sec_id: int, payload: bytes) -> bytes:
    return bytes([sec_id]) + leb_u(len(payload)) + payload


def encode_module(mod: Module) -> bytes:
    out = bytearray(b"\x00asm\x01\x00\x00\x00")

    if mod.types:
        p = leb_u(len(mod.types))
        for ft, _ in mod.types:
            p += bytes([T_FUNC]) + leb_u(len(ft.params))
            p += bytes(VALTYPE_BYTES[t] for t in ft.params)
            p += leb_u(len(ft.results)) + bytes(VALTYPE_BYTES[t] for t in ft.results)
        out += _section(1, p)
    if mod.imports:
        p = leb_u(len(mod.imports))
        for imp in mod.imports:
            p += _name(imp.module) + _name(imp.name)
            if imp.kind == "func":
                p += b"\x00" + leb_u(imp.desc)
            elif imp.kind == "table":
                p += b"\x01" + bytes([T_FUNCREF]) + _limits(imp.desc)
            elif imp.kind == "memory":
                p += b"\x02" + _limits(imp.desc)
            else:
                p += b"\x03" + bytes([VALTYPE_BYTES[imp.desc.valtype]])
                p += b"\x01" if imp.desc.mutable else b"\x00"
        out += _section(2, p)
    if mod.funcs:
        p = leb_u(len(mod.funcs)) + b"".join(leb_u(ti) for ti, _ in mod.funcs)
        out += _section(3, p)
    if mod.tables:
        p = leb_u(len(mod.tables))
        for lim in mod.tables:
            p += bytes([T_FUNCREF]) + _limits(lim)
        out += _section(4, p)
    if mod.memories:
        p = leb_u(len(mod.memories)) + b"".join(_limits(m) for m in mod.memories)
        out += _section(5, p)
    if mod.globals:
        p = leb_u(len(mod.globals))
        for g in mod.globals:
            p += bytes([VALTYPE_BYTES[g.gtype.valtype]])
            p += b"\x01" if g.gtype.mutable else b"\x00"
            p += _expr(g.init)
        out += _section(6, p)
    if mod.exports:
        p = leb_u(len(mod.exports))
        kinds = {"func": 0, "table": 1, "memory": 2, "global": 3}
        for e in mod.exports:
            p += _name(e.name) + bytes([kinds[e.kind]]) + leb_u(e.index)
        out += _section(7, p)
    if mod.start is not None:
        out += _section(8, leb_u(mod.start[0]))
    if mod.elems:
        p = leb_u(len(mod.elems))
        for el in mod.elems:
            p += leb_u(el.table_index) + _expr(el.offset_expr)
            p += leb_u(len(el.func_indices))
            p += b"".join(leb_u(f) for f in el.func_indices)
        out += _section(9, p)
    if mod.codes:
        p = leb_u(len(mod.codes))
        for code in mod.codes:
            entry = leb_u(len(code.local_decls))
            for cnt, vt in code.local_decls:
                entry += leb_u(cnt) + bytes([VALTYPE_BYTES[vt]])
            entry += _expr(code.body)
            p += leb_u(len(entry)) + entry
        out += _section(10, p)
    if mod.datas:
        p = leb_u(len(mod.datas))
        for d in mod.datas:
            p += leb_u(d.mem_index) + _expr(d.offset_expr)
            p += leb_u(len(d.payload)) + d.payload
        out += _section(11, p)
    return bytes(out)


def _norm_body(body):
    """Accept (op,), (op, imm), or bare string entries; return decoder triples."""
    out = []
    for entry in body:
        if isinstance(entry, str):
            out.append((0, entry, None))
        elif len(entry) == 1:
            out.append((0, entry[0], None))
        else:
            out.append((0, entry[0], entry[1]))
    return out


class ModuleBuilder:
    def __init__(self):
        self.mod = Module()
        self._type_cache = {}
        self._num_import_funcs = 0

    def functype(self, params, results) -> int:
        key = (tuple(params), tuple(results))
        idx = self._type_cache.get(key)
        if idx is None:
            idx = len(self.mod.types)
            self.mod.types.append((FuncType(key[0], key[1]), 0))
            self._type_cache[key] = idx
        return idx

    def import_func(self, module, name, params, results) -> int:
        """Returns the function index of the import."""
        ti = self.functype(params, results)
        self.mod.imports.append(Import(module, name, "func", ti, 0, 0, 0))
        idx = self._num_import_funcs
        self._num_import_funcs += 1
        return idx

    def func(self, params, results, local_decls=(), body=(), raw_body=False) -> int:
        """Add a defined function; local_decls is a list of (count, valtype).

        The function-closing end is appended automatically; inner block/if
        ends belong in `body`.  Pass raw_body=True to supply the complete
        expression verbatim (for deliberately malformed inputs).
        """
        ti = self.functype(params, results)
        self.mod.funcs.append((ti, 0))
        if not raw_body:
            body = list(body) + ["end"]
        self.mod.codes.append(Code(list(local_decls), _norm_body(body), 0))
        return self._num_import_funcs + len(self.mod.funcs) - 1

    def memory(self, minimum, maximum=None):
        self.mod.memories.append(Limits(minimum, maximum))
        self.mod.memory_offsets.append(0)

    def table(self, minimum, maximum=None):
        self.mod.tables.append(Limits(minimum, maximum))
        self.mod.table_offsets.append(0)

    def global_(self, valtype, mutable, init_value=0):
        const_op = {"i32": "i32.const", "i64": "i64.const",
                    "f32": "f32.const", "f64": "f64.const"}[valtype]
        init = [(0, const_op, init_value), (0, "end", None)]
        self.mod.globals.append(Global(GlobalType(valtype, mutable), init, 0))
        return len(self.mod.globals) - 1

    def export(self, name, index, kind="func"):
        self.mod.exports.append(Export(name, kind, index, 0, 0))

    def start(self, func_index):
        self.mod.start = (func_index, 0)

    def elem(self, offset, funcs, table_index=0):
        expr = [(0, "i32.const", offset & 0xFFFFFFFF), (0, "end", None)]
        self.mod.elems.append(Elem(table_index, expr, tuple(funcs), 0))

    def data(self, offset, payload, mem_index=0):
        expr = [(0, "i32.const", offset & 0xFFFFFFFF), (0, "end", None)]
        self.mod.datas.append(Data(mem_index, expr, bytes(payload), 0))

    def build(self) -> bytes:
        return encode_module(self.mod)
