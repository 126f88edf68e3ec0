"""Binary decoding: structure, immediates, offsets, and malformed input."""

import random

import pytest

from detwasm.builder import ModuleBuilder, leb_u
from detwasm.decoder import decode_module
from detwasm.errors import ValidationCode, ValidationError

HDR = b"\x00asm" + (1).to_bytes(4, "little")


def small_module():
    b = ModuleBuilder()
    b.func(["i32"], ["i32"], body=[
        ("local.get", 0), ("i32.const", 5), ("i32.add",)])
    b.export("main", 0)
    return b.build()


def decode_err(data):
    with pytest.raises(ValidationError) as exc:
        decode_module(data)
    return exc.value


def test_roundtrip_structure():
    m = decode_module(small_module())
    assert len(m.types) == 1
    ft = m.types[0][0]
    assert ft.params == ("i32",) and ft.results == ("i32",)
    assert m.funcs == [(0, 19)]
    assert [e.name for e in m.exports] == ["main"]
    names = [op for _, op, _ in m.codes[0].body]
    assert names == ["local.get", "i32.const", "i32.add", "end"]


def test_instruction_offsets_strictly_increase():
    m = decode_module(small_module())
    offs = [off for off, _, _ in m.codes[0].body]
    assert offs == sorted(offs) and len(set(offs)) == len(offs)
    assert offs[0] > m.codes[0].offset


def test_const_immediates_are_canonical_unsigned():
    b = ModuleBuilder()
    b.func([], ["i32"], body=[("i32.const", 0xFFFFFFFF)])
    b.func([], ["i64"], body=[("i64.const", 0x8000000000000000)])
    m = decode_module(b.build())
    assert m.codes[0].body[0][2] == 0xFFFFFFFF
    assert m.codes[1].body[0][2] == 0x8000000000000000


def test_br_table_and_memarg_immediates():
    b = ModuleBuilder()
    b.memory(1, 1)
    b.func(["i32"], ["i32"], body=[
        ("block", None), ("block", None),
        ("local.get", 0), ("br_table", ([1, 0], 1)),
        ("end",), ("end",),
        ("local.get", 0), ("i32.load", (2, 16))])
    m = decode_module(b.build())
    by_name = {op: imm for _, op, imm in m.codes[0].body}
    assert by_name["br_table"] == ((1, 0), 1)
    assert by_name["i32.load"] == (2, 16)


def test_float_immediates_kept_as_bits():
    b = ModuleBuilder()
    b.func([], ["f64"], body=[("f64.const", 0x7FF8000000000001)])
    m = decode_module(b.build())
    assert m.codes[0].body[0][2] == 0x7FF8000000000001


def test_start_globals_elem_data_sections():
    b = ModuleBuilder()
    b.memory(1, 2)
    b.table(3, 3)
    b.global_("i64", True, 9)
    b.func([], [], body=[("nop",)])
    b.elem(1, [0])
    b.data(4, b"\x01\x02")
    b.start(0)
    m = decode_module(b.build())
    assert m.start[0] == 0
    assert m.globals[0].gtype.valtype == "i64"
    assert m.globals[0].gtype.mutable is True
    assert list(m.elems[0].func_indices) == [0]
    assert bytes(m.datas[0].payload) == b"\x01\x02"
    assert m.memories[0].minimum == 1 and m.memories[0].maximum == 2


def test_custom_sections_are_skipped():
    name = b"\x04meta"
    payload = name + b"\xDE\xAD"
    custom = b"\x00" + leb_u(len(payload)) + payload
    data = small_module() + custom
    m = decode_module(data)
    assert [e.name for e in m.exports] == ["main"]


class TestMalformed:
    def test_short_header(self):
        err = decode_err(b"\x00asm")
        assert err.code is ValidationCode.MalformedModule
        assert err.byte_offset == 0

    def test_bad_magic(self):
        err = decode_err(b"\x00wat" + bytes(8))
        assert err.byte_offset == 0

    def test_bad_version(self):
        err = decode_err(b"\x00asm" + (2).to_bytes(4, "little"))
        assert err.byte_offset == 4
        assert err.serialize() == "EVALID MalformedModule offset=4"

    def test_unknown_section_id(self):
        err = decode_err(HDR + b"\x0D\x00")
        assert err.code is ValidationCode.MalformedModule
        assert err.byte_offset == 8

    def test_section_order_enforced(self):
        # function section (3) before type section (1)
        data = HDR + b"\x03\x02\x01\x00" + b"\x01\x04\x01\x60\x00\x00"
        err = decode_err(data)
        assert err.byte_offset == 12

    def test_duplicate_section(self):
        sec = b"\x01\x04\x01\x60\x00\x00"
        err = decode_err(HDR + sec + sec)
        assert err.code is ValidationCode.MalformedModule

    def test_section_overruns_module(self):
        err = decode_err(HDR + b"\x01\x7F\x00")
        assert err.byte_offset == 8

    def test_leb_too_long(self):
        err = decode_err(HDR + b"\x01" + b"\x80" * 6 + b"\x00")
        assert err.code is ValidationCode.MalformedModule

    def test_leb_value_overwide(self):
        # five bytes whose high bits spill past 32
        err = decode_err(HDR + b"\x01\xFF\xFF\xFF\xFF\x7F")
        assert err.code is ValidationCode.MalformedModule

    def test_unknown_opcode(self):
        b = ModuleBuilder()
        b.func([], [], body=[("nop",)])
        data = bytearray(b.build())
        idx = data.rindex(b"\x01\x0B") + 0  # nop end
        data[idx] = 0x06
        err = decode_err(bytes(data))
        assert err.code is ValidationCode.MalformedModule

    def test_call_indirect_reserved_byte(self):
        b = ModuleBuilder()
        b.table(1, 1)
        ti = b.functype([], [])
        b.func([], [], body=[("i32.const", 0), ("call_indirect", ti)])
        data = bytearray(b.build())
        idx = data.rindex(b"\x11")          # call_indirect opcode
        data[idx + 2] = 0x01                # reserved must be zero
        err = decode_err(bytes(data))
        assert err.code is ValidationCode.MalformedModule

    def test_vector_count_wildly_large(self):
        err = decode_err(HDR + b"\x01\x05\xFF\xFF\xFF\xFF\x0F")
        assert err.code is ValidationCode.MalformedModule

    def test_bad_valtype(self):
        data = HDR + b"\x01\x05\x01\x60\x01\x7B\x00"
        err = decode_err(data)
        assert err.code is ValidationCode.MalformedModule

    def test_bad_limits_flag(self):
        data = HDR + b"\x05\x03\x01\x02\x01"
        err = decode_err(data)
        assert err.code is ValidationCode.MalformedModule


def test_every_truncation_fails_cleanly_or_parses():
    """Prefixes ending at a section boundary are themselves valid modules;
    every other prefix must raise the taxonomy error, never IndexError."""
    data = small_module()
    raised = 0
    for i in range(len(data)):
        try:
            decode_module(data[:i])
        except ValidationError:
            raised += 1
    assert raised > len(data) // 2


def test_single_byte_corruption_never_crashes():
    data = small_module()
    rng = random.Random(21)
    for _ in range(400):
        buf = bytearray(data)
        buf[rng.randrange(len(buf))] = rng.randrange(256)
        try:
            decode_module(bytes(buf))
        except ValidationError:
            pass


def test_non_utf8_name_surfaces_as_bytes():
    b = ModuleBuilder()
    b.func([], [], body=[("nop",)])
    b.export("ok", 0)
    data = bytearray(b.build())
    i = data.index(b"\x02ok")
    data[i + 1:i + 3] = b"\xC0\xAF"         # overlong encoding
    m = decode_module(bytes(data))
    assert isinstance(m.exports[0].name, bytes)
