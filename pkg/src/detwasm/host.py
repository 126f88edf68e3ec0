"""Host function registry and the context handed to host calls.

Host functions are the only import kind.  Each carries a fixed gas cost
charged before entry; variable-cost hosts burn more through the context.
A HostFailure raised by the body surfaces in the guest as a HostError trap.
"""

from dataclasses import dataclass

from .errors import HostFailure


@dataclass(frozen=True)
class HostFunction:
    module: str
    name: str
    params: tuple
    results: tuple
    fn: object            # callable(ctx, *args)
    gas_cost: int = 0


class HostContext:
    """Per-instance view passed to every host call."""

    def __init__(self, instance, data):
        self._instance = instance
        self.data = data  # whatever init_context returned

    def consume_gas(self, amount: int):
        self._instance.gas.consume(amount)

    def read_memory(self, addr: int, length: int) -> bytes:
        mem = self._instance.memory
        if mem is None or addr + length > len(mem.data):
            raise HostFailure("host read out of range")
        return bytes(mem.data[addr:addr + length])

    def write_memory(self, addr: int, payload: bytes):
        mem = self._instance.memory
        if mem is None or addr + len(payload) > len(mem.data):
            raise HostFailure("host write out of range")
        mem.data[addr:addr + len(payload)] = payload


class HostRegistry:
    def __init__(self, init_context=None, destroy_context=None):
        self._funcs = {}
        self.init_context = init_context or (lambda: None)
        self.destroy_context = destroy_context or (lambda data: None)

    def register(self, module, name, params, results, fn, gas_cost=0):
        key = (module, name)
        if key in self._funcs:
            raise ValueError(f"duplicate host function {module}.{name}")
        self._funcs[key] = HostFunction(module, name, tuple(params),
                                        tuple(results), fn, gas_cost)

    def lookup(self, module, name):
        return self._funcs.get((module, name))


# --------------------------------------------------------------------------
# Built-in registry used by the CLI and the differential tests.  Everything
# here is deterministic: same inputs, same instance history, same outputs.

def _add64(ctx, a, b):
    return (a + b) & 0xFFFFFFFFFFFFFFFF


def _gas_burn(ctx, n):
    ctx.consume_gas(n)


def _fail_if(ctx, flag):
    if flag:
        raise HostFailure("host asked to fail")


def _counter_next(ctx):
    ctx.data["counter"] += 1
    return ctx.data["counter"] & 0xFFFFFFFFFFFFFFFF


def _mem_sum(ctx, addr, length):
    ctx.consume_gas(length)
    total = 0
    for b in ctx.read_memory(addr, length):
        total += b
    return total & 0xFFFFFFFFFFFFFFFF


def default_registry() -> HostRegistry:
    reg = HostRegistry(init_context=lambda: {"counter": 0})
    reg.register("env", "add64", ("i64", "i64"), ("i64",), _add64, gas_cost=1)
    reg.register("env", "gas_burn", ("i64",), (), _gas_burn, gas_cost=1)
    reg.register("env", "fail_if", ("i32",), (), _fail_if, gas_cost=1)
    reg.register("env", "counter_next", (), ("i64",), _counter_next,
                 gas_cost=1)
    reg.register("env", "mem_sum", ("i32", "i32"), ("i64",), _mem_sum,
                 gas_cost=2)
    return reg
