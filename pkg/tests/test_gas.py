"""Gas metering: the cost model, charge placement, and exact accounting.

The accounting tests replay the interpreter's block trace against the
static per-block charges, so the engine's meter is checked against an
analytic path sum instead of a copied number.
"""

import pytest

from detwasm.builder import ModuleBuilder
from detwasm.decoder import decode_module
from detwasm.dmir import Instr
from detwasm.engine import Engine, EngineConfig
from detwasm.errors import TrapCode, TrapError
from detwasm.gas import CostModel, block_cost, insert_metering
from detwasm.instance import InstanceConfig
from detwasm.lower import lower_function
from detwasm.validator import validate_dwasm

import wasmgen


def run_traced(data, entry, args, gas_limit=1 << 40):
    """Interp-mode run recording (func, block) entries; returns the
    instance, the trace, and the outcome (value or TrapError)."""
    engine = Engine(EngineConfig(mode="interp"))
    try:
        handle = engine.load_module(data)
        inst = engine.create_instance(handle, InstanceConfig(gas_limit=gas_limit))
        inst.block_trace = []
        try:
            value = inst.invoke(entry, list(args))
            return handle, inst, inst.block_trace, value, None
        except TrapError as t:
            return handle, inst, inst.block_trace, None, t
    finally:
        engine.shutdown()


def analytic_sum(handle, trace):
    total = 0
    for fidx, bi in trace:
        blk = handle.dmir[fidx].blocks[bi]
        total += sum(i.imm for i in blk.instrs if i.op == "gas_charge")
    return total


class TestCostModel:
    def test_defaults(self):
        m = CostModel()
        assert m.instr_cost(Instr("add", "i32", 2, (0, 1))) == 1
        assert m.instr_cost(Instr("gas_charge", imm=5)) == 0
        assert m.instr_cost(Instr("call", "i32", 2, (), 0)) == 3
        assert m.instr_cost(Instr("call_host", "", None, (), 0)) == 3
        assert m.instr_cost(Instr("call_indirect", "i32", 2, (0,), 0)) == 3

    def test_overrides(self):
        m = CostModel(overrides={"mul": 4})
        assert m.instr_cost(Instr("mul", "i32", 2, (0, 1))) == 4
        assert m.instr_cost(Instr("add", "i32", 2, (0, 1))) == 1

    def test_block_cost_counts_everything_but_the_charge(self):
        b = ModuleBuilder()
        b.func(["i64", "i64"], ["i64"], body=[
            ("local.get", 0), ("local.get", 1), ("i64.add",)])
        vmod = validate_dwasm(decode_module(b.build()))
        fn = lower_function(vmod, 0)
        model = CostModel()
        want = block_cost(fn.blocks[0], model)
        assert want == 3
        insert_metering(fn, model)
        assert fn.blocks[0].instrs[0].imm == want
        assert block_cost(fn.blocks[0], model) == want


def test_charges_sit_at_block_heads_only():
    fn_data = wasmgen.fib_iter_module()
    vmod = validate_dwasm(decode_module(fn_data))
    fn = lower_function(vmod, 0)
    insert_metering(fn, CostModel())
    for blk in fn.blocks:
        for k, ins in enumerate(blk.instrs):
            if ins.op == "gas_charge":
                assert k == 0


def test_zero_cost_blocks_carry_no_charge():
    b = ModuleBuilder()
    b.func(["i32"], ["i32"], body=[
        ("block", None), ("local.get", 0), ("br_if", 0), ("end",),
        ("local.get", 0)])
    vmod = validate_dwasm(decode_module(b.build()))
    fn = lower_function(vmod, 0)
    insert_metering(fn, CostModel())
    for blk in fn.blocks:
        if not any(i.op != "gas_charge" for i in blk.instrs):
            assert not blk.instrs or blk.instrs[0].op != "gas_charge" \
                or blk.instrs[0].imm > 0


class TestExactAccounting:
    def test_straight_line(self):
        handle, inst, trace, value, trap = run_traced(
            wasmgen.fib_module(), "main", [1])
        assert trap is None and value == 1
        assert inst.gas.consumed == analytic_sum(handle, trace)

    def test_recursive_path_sum(self):
        handle, inst, trace, value, trap = run_traced(
            wasmgen.fib_module(), "main", [10])
        assert value == 55
        assert inst.gas.consumed == analytic_sum(handle, trace)

    def test_loop_path_sum(self):
        handle, inst, trace, value, trap = run_traced(
            wasmgen.fib_iter_module(), "main", [20])
        assert value == 6765
        assert inst.gas.consumed == analytic_sum(handle, trace)

    def test_mid_block_trap_still_charges_whole_block(self):
        # the trap happens after the block head, so the full charge lands
        handle, inst, trace, value, trap = run_traced(
            wasmgen.trap_module("div0"), "main", [0])
        assert trap is not None
        assert trap.code is TrapCode.IntegerDivideByZero
        assert inst.gas.consumed == analytic_sum(handle, trace)
        assert inst.gas.consumed > 0

    def test_host_gas_rides_on_top(self):
        handle, inst, trace, value, trap = run_traced(
            wasmgen.host_module("add64"), "main", [7, 8])
        assert value == 15
        # registry price for add64 is 1 gas on top of the block charges
        assert inst.gas.consumed == analytic_sum(handle, trace) + 1

    def test_mem_sum_host_price(self):
        handle, inst, trace, value, trap = run_traced(
            wasmgen.host_module("memsum"), "main", [])
        assert trap is None
        # fixed price 2, plus 1 gas per byte for the 4-byte window
        assert inst.gas.consumed == analytic_sum(handle, trace) + 2 + 4


class TestExhaustion:
    def test_consumed_equals_limit_exactly(self):
        handle, inst, trace, value, trap = run_traced(
            wasmgen.spin_module(), "main", [], gas_limit=10_000)
        assert trap is not None and trap.code is TrapCode.GasExhausted
        assert inst.gas.consumed == 10_000
        assert inst.gas.remaining == 0

    def test_zero_limit_traps_before_any_work(self):
        handle, inst, trace, value, trap = run_traced(
            wasmgen.fib_module(), "main", [5], gas_limit=0)
        assert trap is not None and trap.code is TrapCode.GasExhausted
        assert inst.gas.consumed == 0

    def test_exhaustion_point_is_deterministic(self):
        outs = set()
        for _ in range(3):
            handle, inst, trace, value, trap = run_traced(
                wasmgen.spin_module(), "main", [], gas_limit=777)
            outs.add((trap.code, inst.gas.consumed, len(trace)))
        assert len(outs) == 1

    def test_exact_budget_succeeds(self):
        handle, inst, trace, value, trap = run_traced(
            wasmgen.fib_module(), "main", [10])
        need = inst.gas.consumed
        handle2, inst2, _, value2, trap2 = run_traced(
            wasmgen.fib_module(), "main", [10], gas_limit=need)
        assert trap2 is None and value2 == 55
        _, _, _, _, trap3 = run_traced(
            wasmgen.fib_module(), "main", [10], gas_limit=need - 1)
        assert trap3 is not None and trap3.code is TrapCode.GasExhausted


def test_gas_identical_across_modes():
    for case_name, data, args in [
            ("fib", wasmgen.fib_module(), [11]),
            ("iter", wasmgen.fib_iter_module(), [30]),
            ("mem", wasmgen.memory_probe_module(), None)]:
        entry = "main" if args is not None else "storeload"
        args = args if args is not None else [64, 99]
        seen = set()
        for mode in wasmgen.MODES:
            engine = Engine(EngineConfig(mode=mode))
            try:
                handle = engine.load_module(data)
                inst = engine.create_instance(handle, InstanceConfig())
                inst.invoke(entry, args)
                seen.add(inst.gas.consumed)
            finally:
                engine.shutdown()
        assert len(seen) == 1, case_name
