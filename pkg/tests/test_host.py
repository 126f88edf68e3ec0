"""Host registry, context plumbing, and instantiation-time import checks."""

import pytest

from detwasm.builder import ModuleBuilder
from detwasm.engine import Engine, EngineConfig
from detwasm.errors import (HostFailure, InstantiationError,
                            InstantiationErrorKind, TrapCode, TrapError)
from detwasm.host import HostRegistry, default_registry
from detwasm.instance import InstanceConfig

import wasmgen


@pytest.fixture
def engine():
    e = Engine(EngineConfig(mode="interp"))
    yield e
    e.shutdown()


def instantiate(engine, data, **cfg):
    handle = engine.load_module(data)
    return engine.create_instance(handle, InstanceConfig(**cfg))


class TestRegistry:
    def test_default_contents(self):
        reg = default_registry()
        expect = {
            "add64": (("i64", "i64"), ("i64",), 1),
            "gas_burn": (("i64",), (), 1),
            "fail_if": (("i32",), (), 1),
            "counter_next": ((), ("i64",), 1),
            "mem_sum": (("i32", "i32"), ("i64",), 2),
        }
        for name, (params, results, gas) in expect.items():
            hf = reg.lookup("env", name)
            assert hf is not None, name
            assert hf.params == params
            assert hf.results == results
            assert hf.gas_cost == gas

    def test_lookup_miss(self):
        assert default_registry().lookup("env", "nope") is None
        assert default_registry().lookup("sys", "add64") is None

    def test_duplicate_registration_rejected(self):
        reg = HostRegistry()
        reg.register("m", "f", (), (), lambda ctx: None)
        with pytest.raises(ValueError):
            reg.register("m", "f", ("i32",), (), lambda ctx, x: None)


class TestImportResolution:
    def test_unresolved_import(self, engine):
        b = ModuleBuilder()
        b.import_func("env", "missing_fn", [], [])
        b.func([], [], body=[("nop",)])
        b.export("main", 1)
        with pytest.raises(InstantiationError) as exc:
            instantiate(engine, b.build())
        assert exc.value.kind is InstantiationErrorKind.UnresolvedImport

    def test_signature_mismatch(self, engine):
        b = ModuleBuilder()
        b.import_func("env", "add64", ["i32", "i32"], ["i32"])
        b.func([], [], body=[("nop",)])
        b.export("main", 1)
        with pytest.raises(InstantiationError) as exc:
            instantiate(engine, b.build())
        assert exc.value.kind is InstantiationErrorKind.SignatureMismatch

    def test_hooks_do_not_need_registry_entries(self, engine):
        inst = instantiate(engine, wasmgen.checked_module())
        assert inst.invoke("add", [2, 3]) == 5


class TestHostSemantics:
    def test_add64_wraps(self, engine):
        inst = instantiate(engine, wasmgen.host_module("add64"))
        assert inst.invoke("main", [0xFFFFFFFFFFFFFFFF, 2]) == 1

    def test_failure_surfaces_as_host_error_trap(self, engine):
        inst = instantiate(engine, wasmgen.host_module("fail"))
        with pytest.raises(TrapError) as exc:
            inst.invoke("main", [1])
        assert exc.value.code is TrapCode.HostError

    def test_failure_is_conditional(self, engine):
        inst = instantiate(engine, wasmgen.host_module("fail"))
        assert inst.invoke("main", [0]) == 1

    def test_counter_is_per_instance(self, engine):
        handle = engine.load_module(wasmgen.host_module("counter"))
        a = engine.create_instance(handle, InstanceConfig())
        b = engine.create_instance(handle, InstanceConfig())
        assert a.invoke("main", []) == 3
        assert a.invoke("main", []) == 6       # state persists per instance
        assert b.invoke("main", []) == 3       # fresh context elsewhere

    def test_gas_burn_consumes_requested_amount(self, engine):
        b = ModuleBuilder()
        h = b.import_func("env", "gas_burn", ["i64"], [])
        b.func(["i64"], [], body=[("local.get", 0), ("call", h)])
        b.export("main", 1)
        handle = engine.load_module(b.build())
        base = engine.create_instance(handle, InstanceConfig())
        base.invoke("main", [0])
        floor = base.gas.consumed
        inst = engine.create_instance(handle, InstanceConfig())
        inst.invoke("main", [500])
        assert inst.gas.consumed == floor + 500

    def test_gas_burn_can_exhaust(self, engine):
        b = ModuleBuilder()
        h = b.import_func("env", "gas_burn", ["i64"], [])
        b.func([], [], body=[("i64.const", 1 << 30), ("call", h)])
        b.export("main", 1)
        inst = instantiate(engine, b.build(), gas_limit=100)
        with pytest.raises(TrapError) as exc:
            inst.invoke("main", [])
        assert exc.value.code is TrapCode.GasExhausted
        assert inst.gas.consumed == 100

    def test_mem_sum_reads_guest_memory(self, engine):
        inst = instantiate(engine, wasmgen.host_module("memsum"))
        # the module stores 0x0201 at address 8 and sums 4 bytes
        assert inst.invoke("main", []) == 3

    def test_mem_sum_out_of_range_is_host_error(self, engine):
        b = ModuleBuilder()
        h = b.import_func("env", "mem_sum", ["i32", "i32"], ["i64"])
        b.memory(1, 1)
        b.func([], ["i64"], body=[
            ("i32.const", 65530), ("i32.const", 100), ("call", h)])
        b.export("main", 1)
        inst = instantiate(engine, b.build())
        with pytest.raises(TrapError) as exc:
            inst.invoke("main", [])
        assert exc.value.code is TrapCode.HostError


class TestContextLifecycle:
    def test_destroy_hook_runs_on_close(self):
        log = []
        reg = HostRegistry(init_context=lambda: {"counter": 0, "tag": "x"},
                           destroy_context=lambda d: log.append(d["tag"]))
        reg.register("env", "counter_next", (), ("i64",),
                     lambda ctx: 1, gas_cost=1)
        e = Engine(EngineConfig(mode="interp"), registry=reg)
        try:
            handle = e.load_module(wasmgen.host_module("counter"))
            inst = e.create_instance(handle, InstanceConfig())
            inst.invoke("main", [])
            assert log == []
            inst.close()
            assert log == ["x"]
            inst.close()                       # idempotent
            assert log == ["x"]
        finally:
            e.shutdown()

    def test_custom_registry_overrides_default(self):
        reg = HostRegistry()
        reg.register("env", "add64", ("i64", "i64"), ("i64",),
                     lambda ctx, a, b: 42, gas_cost=1)
        e = Engine(EngineConfig(mode="interp"), registry=reg)
        try:
            handle = e.load_module(wasmgen.host_module("add64"))
            inst = e.create_instance(handle, InstanceConfig())
            assert inst.invoke("main", [1, 2]) == 42
        finally:
            e.shutdown()
