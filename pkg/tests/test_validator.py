"""Static checks: the five structural limits, type discipline, frame
weights, hook signatures, and the first-error-wins ordering guarantee.

Expected offsets are derived from the decoded module rather than pinned
as magic numbers, so the assertions survive builder layout changes while
still proving the error position is stable and meaningful.
"""

import pytest

from detwasm.builder import ModuleBuilder
from detwasm.decoder import decode_module
from detwasm.errors import ValidationCode, ValidationError
from detwasm.validator import DwasmLimits, validate_dwasm

LIM = DwasmLimits()


def vv(wasm, limits=None, allow_floats=True):
    return validate_dwasm(decode_module(wasm), limits, allow_floats)


def verr(wasm, **kw):
    with pytest.raises(ValidationError) as exc:
        vv(wasm, **kw)
    return exc.value


# ------------------------------------------------------- the five limits

def _params_module(n):
    b = ModuleBuilder()
    b.func(["i32"] * n, [], body=[("nop",)])
    return b.build()


def test_param_limit_boundary():
    assert LIM.max_params == 1024
    ok = vv(_params_module(1024))
    assert len(ok.func_types[0].params) == 1024

    bad = _params_module(1025)
    err = verr(bad)
    assert err.code is ValidationCode.ParamCountExceeded
    assert err.byte_offset == decode_module(bad).funcs[0][1]


def _locals_module(n):
    b = ModuleBuilder()
    b.func([], [], local_decls=[(n, "i32")], body=[("nop",)])
    return b.build()


def test_local_limit_boundary():
    assert LIM.max_locals == 10240
    vv(_locals_module(10240))

    bad = _locals_module(10241)
    err = verr(bad)
    assert err.code is ValidationCode.LocalCountExceeded
    assert err.byte_offset == decode_module(bad).codes[0].offset


def _weight_module(extra_i32_push):
    # base: 1024 i64 params (2048) + 10240 i64 locals (20480) = 22528
    # stack peak: 9216 i64 pushes = 18432, total exactly 40960
    body = []
    if extra_i32_push:
        body.append(("i32.const", 0))
    body += [("i64.const", 0)] * 9216
    body.append(("unreachable",))
    b = ModuleBuilder()
    b.func(["i64"] * 1024, [], local_decls=[(10240, "i64")], body=body)
    return b.build()


def test_frame_weight_boundary():
    assert LIM.max_frame_weight == 40960
    ok = vv(_weight_module(False))
    assert ok.frame_weights[0] == 40960

    bad = _weight_module(True)
    err = verr(bad)
    assert err.code is ValidationCode.FrameWeightExceeded
    assert err.byte_offset == decode_module(bad).codes[0].offset


def _instr_module(n_nops):
    b = ModuleBuilder()
    b.func([], [], body=[("nop",)] * n_nops)
    return b.build()


def test_instruction_limit_boundary():
    assert LIM.max_instructions == 10240
    vv(_instr_module(10239))        # plus the closing end = exactly 10240

    bad = _instr_module(10240)
    err = verr(bad)
    assert err.code is ValidationCode.InstructionCountExceeded
    # instruction 10241 is the closing end
    assert err.byte_offset == decode_module(bad).codes[0].body[10240][0]


def _nest_module(depth):
    body = [("block", None)] * depth + [("end",)] * depth
    b = ModuleBuilder()
    b.func([], [], body=body)
    return b.build()


def test_nesting_limit_boundary():
    assert LIM.max_nesting == 1024
    vv(_nest_module(1024))

    bad = _nest_module(1025)
    err = verr(bad)
    assert err.code is ValidationCode.NestingDepthExceeded
    assert err.byte_offset == decode_module(bad).codes[0].body[1024][0]


def test_limits_are_configurable():
    tiny = DwasmLimits(max_params=2)
    vv(_params_module(2), limits=tiny)
    err = verr(_params_module(3), limits=tiny)
    assert err.code is ValidationCode.ParamCountExceeded


# ------------------------------------------------------- frame weights

def _weight_of(params, decls, body):
    b = ModuleBuilder()
    b.func(params, ["i64"] if body and body[-1][0] != "nop" else [],
           local_decls=decls, body=body)
    return vv(b.build()).frame_weights[0]


def test_frame_weight_worked_example():
    # 2 i64 params + 1 i64 temp + operand peak of 2 i64 = 4+2+4
    w = _weight_of(["i64", "i64"], [(1, "i64")], [
        ("local.get", 0), ("local.get", 1), ("i64.add",),
        ("local.set", 2), ("local.get", 2)])
    assert w == 10


def test_frame_weight_local_monotonicity():
    base_body = [("local.get", 0), ("local.get", 1), ("i64.add",)]
    w0 = _weight_of(["i64", "i64"], [], base_body)
    assert w0 == 8
    assert _weight_of(["i64", "i64"], [(1, "i32")], base_body) == w0 + 1
    assert _weight_of(["i64", "i64"], [(1, "i64")], base_body) == w0 + 2
    assert _weight_of(["i64", "i64"], [(1, "f32")], base_body) == w0 + 1
    assert _weight_of(["i64", "i64"], [(1, "f64")], base_body) == w0 + 2


def test_frame_weight_tracks_peak_not_final():
    b = ModuleBuilder()
    b.func([], ["i32"], body=[
        ("i32.const", 1), ("i32.const", 2), ("i32.const", 3),
        ("i32.add",), ("i32.add",)])
    assert vv(b.build()).frame_weights[0] == 3


def test_imported_functions_have_zero_weight():
    b = ModuleBuilder()
    b.import_func("env", "add64", ["i64", "i64"], ["i64"])
    b.func([], [], body=[("nop",)])
    vmod = vv(b.build())
    assert vmod.frame_weights[0] == 0
    assert vmod.num_imported_funcs == 1


# --------------------------------------------------------- type system

def _body_err(body, params=(), results=(), decls=(), extra=None):
    b = ModuleBuilder()
    if extra:
        extra(b)
    b.func(list(params), list(results), local_decls=list(decls), body=body)
    return verr(b.build())


class TestTypeMismatch:
    def test_binop_underflow(self):
        err = _body_err([("i32.const", 1), ("i32.add",)], results=["i32"])
        assert err.code is ValidationCode.TypeMismatch

    def test_binop_wrong_type(self):
        err = _body_err([("i32.const", 1), ("i64.const", 2), ("i32.add",)],
                        results=["i32"])
        assert err.code is ValidationCode.TypeMismatch

    def test_value_left_on_stack(self):
        err = _body_err([("i32.const", 1), ("i32.const", 2)],
                        results=["i32"])
        assert err.code is ValidationCode.TypeMismatch

    def test_missing_result(self):
        err = _body_err([("nop",)], results=["i32"])
        assert err.code is ValidationCode.TypeMismatch

    def test_branch_depth_out_of_range(self):
        err = _body_err([("block", None), ("br", 2), ("end",)])
        assert err.code is ValidationCode.TypeMismatch

    def test_if_requires_i32_condition(self):
        err = _body_err([("i64.const", 1), ("if", None), ("end",)])
        assert err.code is ValidationCode.TypeMismatch

    def test_if_arms_must_agree(self):
        err = _body_err([
            ("i32.const", 1), ("if", "i32"),
            ("i32.const", 1),
            ("else",), ("i64.const", 2),
            ("end",), ("drop",)])
        assert err.code is ValidationCode.TypeMismatch

    def test_if_with_result_needs_else(self):
        err = _body_err([
            ("i32.const", 1), ("if", "i32"), ("i32.const", 1),
            ("end",), ("drop",)])
        assert err.code is ValidationCode.TypeMismatch

    def test_select_arm_types(self):
        err = _body_err([
            ("i32.const", 1), ("i64.const", 1), ("i32.const", 0),
            ("select",), ("drop",)])
        assert err.code is ValidationCode.TypeMismatch

    def test_local_index_out_of_range(self):
        err = _body_err([("local.get", 3), ("drop",)], params=["i32"])
        assert err.code is ValidationCode.TypeMismatch

    def test_local_set_type(self):
        err = _body_err([("i64.const", 0), ("local.set", 0)],
                        params=["i32"])
        assert err.code is ValidationCode.TypeMismatch

    def test_call_unknown_function(self):
        err = _body_err([("call", 7)])
        assert err.code is ValidationCode.TypeMismatch

    def test_load_requires_memory(self):
        err = _body_err([("i32.const", 0), ("i32.load", (2, 0)), ("drop",)])
        assert err.code is ValidationCode.TypeMismatch

    def test_call_indirect_requires_table(self):
        b = ModuleBuilder()
        ti = b.functype([], [])
        b.func([], [], body=[("i32.const", 0), ("call_indirect", ti)])
        assert verr(b.build()).code is ValidationCode.TypeMismatch

    def test_global_set_immutable(self):
        b = ModuleBuilder()
        b.global_("i32", False, 3)
        b.func([], [], body=[("i32.const", 1), ("global.set", 0)])
        assert verr(b.build()).code is ValidationCode.TypeMismatch

    def test_start_signature(self):
        b = ModuleBuilder()
        b.func(["i32"], [], body=[("nop",)])
        b.start(0)
        assert verr(b.build()).code is ValidationCode.TypeMismatch

    def test_duplicate_export_name(self):
        b = ModuleBuilder()
        b.func([], [], body=[("nop",)])
        b.export("x", 0)
        b.export("x", 0)
        assert verr(b.build()).code is ValidationCode.TypeMismatch

    def test_export_unknown_index(self):
        b = ModuleBuilder()
        b.func([], [], body=[("nop",)])
        b.export("x", 4)
        assert verr(b.build()).code is ValidationCode.TypeMismatch

    def test_elem_unknown_function(self):
        b = ModuleBuilder()
        b.table(2, 2)
        b.func([], [], body=[("nop",)])
        b.elem(0, [5])
        assert verr(b.build()).code is ValidationCode.TypeMismatch


class TestUnreachableTyping:
    """The stack is polymorphic after an unconditional transfer."""

    def test_code_after_unreachable_accepts_anything(self):
        b = ModuleBuilder()
        b.func([], ["i32"], body=[("unreachable",), ("i64.add",), ("drop",)])
        vv(b.build())

    def test_code_after_br_is_polymorphic(self):
        b = ModuleBuilder()
        b.func([], ["i32"], body=[
            ("block", None), ("br", 0), ("f64.add",), ("drop",), ("end",),
            ("i32.const", 1)])
        vv(b.build())

    def test_br_table_all_targets_checked(self):
        err = _body_err([
            ("block", None),
            ("i32.const", 0), ("br_table", ([0, 3], 0)),
            ("end",)])
        assert err.code is ValidationCode.TypeMismatch


class TestUnsupported:
    def test_post_mvp_opcode(self):
        err = _body_err([("i32.const", 1), ("i32.extend8_s",), ("drop",)])
        assert err.code is ValidationCode.UnsupportedFeature

    def test_multiple_results_type(self):
        b = ModuleBuilder()
        b.functype(["i32"], ["i32", "i32"])
        b.func([], [], body=[("nop",)])
        assert verr(b.build()).code is ValidationCode.UnsupportedFeature

    def test_floats_can_be_disabled(self):
        b = ModuleBuilder()
        b.func([], ["f64"], body=[("f64.const", 0)])
        vv(b.build())
        err = verr(b.build(), allow_floats=False)
        assert err.code is ValidationCode.UnsupportedFeature

    def test_mutable_global_export(self):
        b = ModuleBuilder()
        b.global_("i32", True, 0)
        b.func([], [], body=[("nop",)])
        b.export("g", 0)
        data = bytearray(b.build())
        # rewrite the export kind byte from func to global
        i = data.rindex(b"\x01g")
        data[i + 2] = 0x03
        assert verr(bytes(data)).code is ValidationCode.UnsupportedFeature

    def test_memory_too_large(self):
        b = ModuleBuilder()
        b.memory(65537)
        b.func([], [], body=[("nop",)])
        assert verr(b.build()).code is ValidationCode.UnsupportedFeature


class TestIdentifiers:
    def test_bad_export_name_offset(self):
        b = ModuleBuilder()
        b.func([], [], body=[("nop",)])
        b.export("ok", 0)
        data = bytearray(b.build())
        i = data.index(b"\x02ok")
        data[i + 1:i + 3] = b"\xFF\xFE"
        err = verr(bytes(data))
        assert err.code is ValidationCode.InvalidUtf8Identifier
        assert err.byte_offset == decode_module(bytes(data)).exports[0].name_offset

    def test_bad_import_name(self):
        b = ModuleBuilder()
        b.import_func("env", "ok", [], [])
        b.func([], [], body=[("nop",)])
        data = bytearray(b.build())
        i = data.index(b"\x02ok")
        data[i + 1:i + 3] = b"\xC1\x80"
        err = verr(bytes(data))
        assert err.code is ValidationCode.InvalidUtf8Identifier


class TestHooks:
    def test_well_formed_hook_is_recognized(self):
        b = ModuleBuilder()
        b.import_func("env", "checked_i32_add", ["i32", "i32"], ["i32"])
        b.import_func("env", "checked_u64_mul", ["i64", "i64"], ["i64"])
        b.func([], [], body=[("nop",)])
        vmod = vv(b.build())
        assert vmod.hook_funcs == {0: ("i32", "add"), 1: ("u64", "mul")}
        assert 0 not in vmod.host_imports

    def test_unsigned_32_uses_i32_storage(self):
        b = ModuleBuilder()
        b.import_func("env", "checked_u32_sub", ["i32", "i32"], ["i32"])
        b.func([], [], body=[("nop",)])
        assert vv(b.build()).hook_funcs[0] == ("u32", "sub")

    def test_wrong_signature_rejected(self):
        b = ModuleBuilder()
        b.import_func("env", "checked_i32_add", ["i64", "i64"], ["i64"])
        b.func([], [], body=[("nop",)])
        err = verr(b.build())
        assert err.code is ValidationCode.HookSignatureMismatch

    def test_wrong_arity_rejected(self):
        b = ModuleBuilder()
        b.import_func("env", "checked_i64_mul", ["i64"], ["i64"])
        b.func([], [], body=[("nop",)])
        assert verr(b.build()).code is ValidationCode.HookSignatureMismatch

    def test_near_miss_names_are_plain_imports(self):
        b = ModuleBuilder()
        b.import_func("env", "checked_i16_add", ["i32", "i32"], ["i32"])
        b.import_func("other", "checked_i32_add", ["i32", "i32"], ["i32"])
        b.func([], [], body=[("nop",)])
        vmod = vv(b.build())
        assert vmod.hook_funcs == {}
        assert set(vmod.host_imports) == {0, 1}


# ----------------------------------------------------------- ordering

def test_first_error_in_section_order_wins():
    # export section errors are reported before code section errors
    b = ModuleBuilder()
    b.func([], [], body=[("i32.add",)])     # type error in code
    b.export("f", 9)                        # index error in exports
    err = verr(b.build())
    bad_export_off = decode_module(b.build()).exports[0].offset
    assert err.byte_offset == bad_export_off


def test_earlier_function_error_wins():
    b = ModuleBuilder()
    b.func([], [], body=[("i64.add",)])
    b.func([], [], body=[("f32.add",)])
    data = b.build()
    err = verr(data)
    assert err.byte_offset == decode_module(data).codes[0].body[0][0]


def test_error_identity_is_stable_across_runs():
    bad = _weight_module(True)
    seen = {(verr(bad).code, verr(bad).byte_offset) for _ in range(5)}
    assert len(seen) == 1


def test_serialized_form():
    err = verr(_params_module(1025))
    off = decode_module(_params_module(1025)).funcs[0][1]
    assert err.serialize() == f"EVALID ParamCountExceeded offset={off}"


# ------------------------------------------------------------- outputs

def test_validated_module_surface():
    b = ModuleBuilder()
    b.memory(1, 2)
    b.table(2, 2)
    b.global_("i64", True, 123)
    h = b.import_func("env", "add64", ["i64", "i64"], ["i64"])
    b.func(["i32"], ["i32"], local_decls=[(2, "f64")],
           body=[("local.get", 0)])
    b.elem(0, [1])
    b.export("main", 1)
    b.export("mem", 0)
    data = bytearray(b.build())
    i = data.rindex(b"\x03mem")
    data[i + 4] = 0x02                      # export kind: memory
    vmod = vv(bytes(data))
    assert vmod.exports["main"] == ("func", 1)
    assert vmod.exports["mem"] == ("memory", 0)
    assert vmod.host_imports[h][0:2] == ("env", "add64")
    assert vmod.global_inits == [123]
    assert vmod.local_types[1] == ("i32", "f64", "f64")
    assert vmod.memory_limits.minimum == 1
    assert vmod.table_limits.maximum == 2
    assert vmod.start_index is None
