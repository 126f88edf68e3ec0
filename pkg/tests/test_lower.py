"""Stack-to-register lowering: CFG shape, register discipline, call forms."""

import pytest

from detwasm.builder import ModuleBuilder
from detwasm.decoder import decode_module
from detwasm.dmir import dump_function, verify_function
from detwasm.flas import clone_function
from detwasm.gas import CostModel, insert_metering
from detwasm.lower import lower_function, lower_module
from detwasm.passes import run_pipeline
from detwasm.validator import validate_dwasm


def lowered(b, fidx=None, metered=False):
    vmod = validate_dwasm(decode_module(b.build()))
    fidx = vmod.num_imported_funcs if fidx is None else fidx
    fn = lower_function(vmod, fidx)
    if metered:
        insert_metering(fn, CostModel())
    return fn


def test_add_function_optimized_shape():
    b = ModuleBuilder()
    b.func(["i64", "i64"], ["i64"], body=[
        ("local.get", 0), ("local.get", 1), ("i64.add",)])
    fn = run_pipeline(lowered(b, metered=True))
    assert dump_function(fn) == (
        "func 0 (i64, i64) -> i64\n"
        "block 0:\n"
        "  gas_charge 3\n"
        "  r2 = add.i64 r0, r1\n"
        "  ret r2\n")


def test_raw_lowering_uses_moves_for_local_get():
    b = ModuleBuilder()
    b.func(["i64", "i64"], ["i64"], body=[
        ("local.get", 0), ("local.get", 1), ("i64.add",)])
    fn = lowered(b)
    ops = [i.op for i in fn.blocks[0].instrs]
    assert ops == ["move", "move", "add"]
    # slot registers sit above the local file
    assert all(i.dest >= fn.nlocals for i in fn.blocks[0].instrs)


def _loop_builder():
    b = ModuleBuilder()
    b.func(["i32"], ["i32"], local_decls=[(1, "i32")], body=[
        ("block", None), ("loop", None),
        ("local.get", 1), ("local.get", 0), ("i32.ge_u",), ("br_if", 1),
        ("local.get", 1), ("i32.const", 1), ("i32.add",), ("local.set", 1),
        ("br", 0), ("end",), ("end",),
        ("local.get", 1)])
    return b


def test_loop_has_back_edge():
    fn = lowered(_loop_builder())
    back = [(bi, t) for bi, blk in enumerate(fn.blocks)
            for t in blk.term.targets if t <= bi]
    assert back, "loop must produce at least one backward branch"


def test_branch_terminator_forms():
    fn = lowered(_loop_builder())
    kinds = {blk.term.kind for blk in fn.blocks}
    assert "br_if" in kinds and "br" in kinds and "ret" in kinds
    for blk in fn.blocks:
        if blk.term.kind == "br_if":
            assert len(blk.term.targets) == 2
            assert len(blk.term.args) == 1


def test_br_table_becomes_switch():
    b = ModuleBuilder()
    b.func(["i32"], ["i32"], body=[
        ("block", None), ("block", None), ("block", None),
        ("local.get", 0), ("br_table", ([0, 1], 2)),
        ("end",), ("i32.const", 10), ("return",),
        ("end",), ("i32.const", 20), ("return",),
        ("end",), ("i32.const", 30)])
    fn = lowered(b)
    switches = [blk.term for blk in fn.blocks if blk.term.kind == "switch"]
    assert len(switches) == 1
    assert len(switches[0].targets) == 3    # two cases plus default
    assert len(switches[0].args) == 1


def test_call_forms_are_distinguished():
    b = ModuleBuilder()
    hook = b.import_func("env", "checked_i32_add", ["i32", "i32"], ["i32"])
    host = b.import_func("env", "add64", ["i64", "i64"], ["i64"])
    b.func(["i32"], ["i32"], body=[
        ("local.get", 0), ("local.get", 0), ("call", hook)])
    b.func(["i64"], ["i64"], body=[
        ("local.get", 0), ("local.get", 0), ("call", host)])
    b.func(["i32"], ["i32"], body=[
        ("local.get", 0), ("call", 2)])
    vmod = validate_dwasm(decode_module(b.build()))
    by_op = {}
    for fidx in (2, 3, 4):
        fn = lower_function(vmod, fidx)
        for blk in fn.blocks:
            for ins in blk.instrs:
                by_op.setdefault(ins.op, ins)
    assert by_op["checked"].imm == ("i32", "add")
    assert by_op["call_host"].imm == host
    assert by_op["call"].imm == 2


def test_unreachable_is_a_trap_terminator():
    b = ModuleBuilder()
    b.func([], ["i32"], body=[("unreachable",)])
    fn = lowered(b)
    assert fn.blocks[0].term.kind == "trap"
    assert fn.blocks[0].term.imm == "Unreachable"


def test_code_after_branch_is_not_lowered():
    b = ModuleBuilder()
    b.func([], ["i32"], body=[
        ("block", None), ("br", 0), ("f64.add",), ("drop",), ("end",),
        ("i32.const", 1)])
    fn = lowered(b)
    ops = {i.op for blk in fn.blocks for i in blk.instrs}
    assert "add" not in ops


def test_memarg_offset_survives_alignment_does_not():
    b = ModuleBuilder()
    b.memory(1, 1)
    b.func(["i32"], ["i32"], body=[
        ("local.get", 0), ("i32.load", (2, 16)),
        ("local.get", 0), ("local.get", 0), ("i64.load8_u", (0, 3)),
        ("i64.store", (3, 40)),
        ])
    fn = lowered(b)
    loads = [i for blk in fn.blocks for i in blk.instrs
             if i.op.startswith("load")]
    stores = [i for blk in fn.blocks for i in blk.instrs
              if i.op.startswith("store")]
    assert {i.imm for i in loads} == {16, 3}
    assert stores[0].imm == 40
    assert stores[0].ty == "i64"


def test_select_keeps_three_operands():
    b = ModuleBuilder()
    b.func(["i32", "i32", "i32"], ["i32"], body=[
        ("local.get", 0), ("local.get", 1), ("local.get", 2), ("select",)])
    fn = lowered(b)
    sel = [i for blk in fn.blocks for i in blk.instrs if i.op == "select"]
    assert len(sel) == 1 and len(sel[0].args) == 3


def test_frame_weight_carried_onto_function():
    b = ModuleBuilder()
    b.func(["i64", "i64"], ["i64"], body=[
        ("local.get", 0), ("local.get", 1), ("i64.add",)])
    vmod = validate_dwasm(decode_module(b.build()))
    fn = lower_function(vmod, 0)
    assert fn.frame_weight == vmod.frame_weights[0] == 8


def test_metering_prefixes_blocks_exactly_once():
    fn = lowered(_loop_builder(), metered=True)
    for blk in fn.blocks:
        charges = [k for k, i in enumerate(blk.instrs)
                   if i.op == "gas_charge"]
        assert charges in ([], [0])


def test_dump_is_deterministic():
    import wasmgen
    data = wasmgen.fib_module()
    outs = set()
    for _ in range(3):
        vmod = validate_dwasm(decode_module(data))
        fn = lower_function(vmod, 0)
        insert_metering(fn, CostModel())
        outs.add(dump_function(fn))
    assert len(outs) == 1


def test_structural_invariants_across_corpus_shapes():
    import wasmgen
    for data in (wasmgen.fib_module(), wasmgen.fib_iter_module(),
                 wasmgen.memory_probe_module(), wasmgen.indirect_module(),
                 wasmgen.checked_module(), wasmgen.start_module(),
                 *(wasmgen.random_case(s).wasm for s in range(300, 320))):
        vmod = validate_dwasm(decode_module(data))
        for fidx, fn in lower_module(vmod).items():
            verify_function(fn)
            insert_metering(fn, CostModel())
            verify_function(fn)
            verify_function(run_pipeline(clone_function(fn)))


def test_zero_result_function_ret_has_no_args():
    b = ModuleBuilder()
    b.global_("i32", True, 0)
    b.func([], [], body=[("i32.const", 3), ("global.set", 0)])
    fn = lowered(b)
    rets = [blk.term for blk in fn.blocks if blk.term.kind == "ret"]
    assert rets and all(t.args == () for t in rets)
