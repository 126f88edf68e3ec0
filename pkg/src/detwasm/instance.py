"""Per-instance runtime state: gas, call stack accounting, globals, table,
and the invocation boundary."""

import time
from dataclasses import dataclass

from .errors import ApiMisuseError, TrapCode, TrapError
from .numerics import MASK32, MASK64, canon_f32, canon_f64, fnv1a64


class GasState:
    __slots__ = ("limit", "remaining")

    def __init__(self, limit: int):
        self.limit = limit
        self.remaining = limit

    def consume(self, amount: int):
        r = self.remaining - amount
        if r < 0:
            self.remaining = 0
            raise TrapError(TrapCode.GasExhausted)
        self.remaining = r

    @property
    def consumed(self) -> int:
        return self.limit - self.remaining


class CallStackState:
    """Depth and frame-weight budgets; trap depth is analytic:
    min(max_depth, weight_budget // frame_weight) for uniform frames."""

    __slots__ = ("max_depth", "weight_budget", "depth", "weight_used")

    def __init__(self, max_depth: int, weight_budget: int):
        self.max_depth = max_depth
        self.weight_budget = weight_budget
        self.depth = 0
        self.weight_used = 0

    def enter(self, frame_weight: int):
        d = self.depth + 1
        w = self.weight_used + frame_weight
        if d > self.max_depth or w > self.weight_budget:
            raise TrapError(TrapCode.WasmCallStackExceed)
        self.depth = d
        self.weight_used = w

    def leave(self, frame_weight: int):
        self.depth -= 1
        self.weight_used -= frame_weight

    def reset(self):
        self.depth = 0
        self.weight_used = 0


@dataclass
class InstanceConfig:
    gas_limit: int = 1 << 40
    memory_mode: str = "software"   # software | guard
    max_call_depth: int = 1024
    call_weight_budget: int = 2_097_152
    max_memory_pages: int = 65536


_ARG_CONVERT = {
    "i32": lambda v: v & MASK32,
    "i64": lambda v: v & MASK64,
    "f32": canon_f32,
    "f64": canon_f64,
}


def convert_args(func_type, args):
    if len(args) != len(func_type.params):
        raise ApiMisuseError(
            f"expected {len(func_type.params)} arguments, got {len(args)}")
    out = []
    for ty, v in zip(func_type.params, args):
        if ty in ("i32", "i64"):
            if not isinstance(v, int) or isinstance(v, bool):
                raise ApiMisuseError(f"argument for {ty} must be an int")
        else:
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ApiMisuseError(f"argument for {ty} must be a number")
            v = float(v)
        out.append(_ARG_CONVERT[ty](v))
    return out


class Instance:
    """A live module instance.  `entries[i]` is the current callable for
    function i; the engine swaps slots in place when tiers change, and all
    in-progress code observes the swap on its next call through the list."""

    def __init__(self, engine, vmod, config: InstanceConfig, memory,
                 globals_, table, host_calls, host_ctx, host_ctx_data):
        self.engine = engine
        self.vmod = vmod
        self.config = config
        self.memory = memory
        self.globals = globals_
        self.table = table
        self.host_calls = host_calls
        self.host_ctx = host_ctx
        self._host_ctx_data = host_ctx_data
        self.gas = GasState(config.gas_limit)
        self.callstack = CallStackState(config.max_call_depth,
                                        config.call_weight_budget)
        self.entries = [None] * len(vmod.func_types)
        self.closed = False
        self.block_trace = None      # set to a list to record (func, block)
        self._busy = False
        self._types = [t[0] for t in vmod.module.types]

    # ------------------------------------------------------------ calls

    def resolve_indirect(self, type_index: int, idx: int):
        table = self.table
        if table is None or idx >= len(table):
            raise TrapError(TrapCode.UndefinedTableElement)
        callee = table[idx]
        if callee is None:
            raise TrapError(TrapCode.UndefinedTableElement)
        if self.vmod.func_types[callee] != self._types[type_index]:
            raise TrapError(TrapCode.IndirectCallTypeMismatch)
        return self.entries[callee]

    # ------------------------------------------------------------ boundary

    def _export_func_index(self, name: str) -> int:
        ent = self.vmod.exports.get(name)
        if ent is None or ent[0] != "func":
            raise ApiMisuseError(f"no exported function named {name!r}")
        return ent[1]

    def invoke(self, export_name: str, args=()):
        return self.invoke_index(self._export_func_index(export_name), args)

    def invoke_index(self, func_index: int, args=()):
        if self.closed:
            raise ApiMisuseError("instance is closed")
        if self.engine._shutdown:
            raise ApiMisuseError("engine is shut down")
        if self._busy:
            raise ApiMisuseError("re-entrant invoke on a busy instance")
        if not 0 <= func_index < len(self.entries):
            raise ApiMisuseError(f"no function with index {func_index}")
        cargs = convert_args(self.vmod.func_types[func_index], args)
        self._busy = True
        t0 = time.perf_counter_ns()
        try:
            return self.entries[func_index](*cargs)
        except TrapError:
            self.callstack.reset()
            raise
        finally:
            self._busy = False
            self.engine.note_invoke(self, time.perf_counter_ns() - t0)

    def memory_hash(self) -> int:
        if self.memory is None:
            return fnv1a64(b"")
        return self.memory.content_hash()

    def close(self):
        if self.closed:
            return
        self.closed = True
        self.engine.note_instance_closed(self)
        if self.host_ctx is not None:
            self.engine.registry.destroy_context(self._host_ctx_data)
