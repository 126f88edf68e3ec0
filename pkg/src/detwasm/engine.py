"""Engine: module loading, tiered compilation, instance lifecycle.

Execution modes:
  interp  reference interpreter only
  flat    compile every function to the quick tier at instantiation
  flas    compile every function to the optimizing tier at instantiation
  lazy    stubs everywhere; first call compiles the quick tier on the
          calling thread and queues the optimizing tier in the background,
          which is hot-switched in when ready

Publication always happens under the engine lock by replacing one slot of
an instance's entries list, so a running call observes the switch at its
next call through the list and never mid-frame.
"""

import json
import os
import sys
import threading
import time
from dataclasses import dataclass, field

from .decoder import decode_module
from .errors import (ApiMisuseError, HostFailure, InstantiationError,
                     InstantiationErrorKind, TrapCode, TrapError)
from .flas import clone_function, compile_flas
from .flat import compile_flat
from .gas import CostModel, insert_metering
from .host import HostContext, default_registry
from .instance import Instance, InstanceConfig
from .interp import make_interp_entry
from .lower import lower_module
from .numerics import MASK32, MASK64, canon_f32, canon_f64, checked_apply
from .opcodes import PAGE_SIZE
from .passes import run_pipeline
from .validator import DwasmLimits, validate_dwasm

MODES = ("interp", "flat", "flas", "lazy")

_RESULT_CANON = {
    "i32": lambda v: v & MASK32,
    "i64": lambda v: v & MASK64,
    "f32": canon_f32,
    "f64": canon_f64,
}


@dataclass
class EngineConfig:
    mode: str = "lazy"
    memory_mode: str = "software"
    workers: int | None = None          # None -> cpu count - 1, floor 1
    background_priority: str = "index_asc"   # or "size_desc"
    manual_scheduler: bool = False      # no threads; step_background() drives
    metrics_path: str | None = None
    limits: DwasmLimits = field(default_factory=DwasmLimits)
    cost_model: CostModel = field(default_factory=CostModel)


class ModuleHandle:
    def __init__(self, vmod, dmir):
        self.vmod = vmod
        self.dmir = dmir                 # func index -> metered IR
        self.flas_artifacts = {}         # func index -> FlasArtifact
        self.flas_fns = {}               # func index -> optimized IR


def _const_value(expr):
    # validated constant expressions are a single const plus end
    return expr[0][2]


class Engine:
    def __init__(self, config: EngineConfig | None = None, registry=None):
        self.config = config or EngineConfig()
        if self.config.mode not in MODES:
            raise ApiMisuseError(f"unknown mode {self.config.mode!r}")
        self.registry = registry if registry is not None else default_registry()
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._pending = []               # (handle, func_index, size_estimate)
        self._queued = set()
        self._workers = []
        self._stop = False
        self._shutdown = False
        self._live = {}                  # handle -> list of instances
        self.compile_log = []
        self.last_publish_ns = None
        self.stats = {"stubs_resolved": 0, "background_compiled": 0,
                      "switches": 0, "latency_first_invoke_us": None}
        if self.config.mode == "lazy" and not self.config.manual_scheduler:
            n = self.config.workers
            if n is None:
                n = max(1, (os.cpu_count() or 2) - 1)
            for i in range(n):
                t = threading.Thread(target=self._worker_loop,
                                     name=f"detwasm-bg-{i}", daemon=True)
                t.start()
                self._workers.append(t)

    # ------------------------------------------------------------ loading

    def _check_open(self):
        if self._shutdown:
            raise ApiMisuseError("engine is shut down")

    def load_module(self, wasm: bytes) -> ModuleHandle:
        self._check_open()
        mod = decode_module(wasm)
        vmod = validate_dwasm(mod, self.config.limits)
        dmir = lower_module(vmod)
        for fn in dmir.values():
            insert_metering(fn, self.config.cost_model)
        handle = ModuleHandle(vmod, dmir)
        with self._lock:
            self._live[handle] = []
        return handle

    # ------------------------------------------------------- compilation

    def _metric(self, func_index, tier, compile_us, code_size):
        rec = {"func_index": func_index, "tier": tier,
               "compile_us": compile_us, "code_size_bytes": code_size}
        self.compile_log.append(rec)
        path = self.config.metrics_path
        if path:
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec) + "\n")

    def _ensure_flas_artifact(self, handle, fidx):
        with self._lock:
            art = handle.flas_artifacts.get(fidx)
        if art is not None:
            return art
        t0 = time.perf_counter_ns()
        opt = handle.flas_fns.get(fidx)
        if opt is None:
            opt = run_pipeline(clone_function(handle.dmir[fidx]))
        art = compile_flas(opt)
        dt = (time.perf_counter_ns() - t0) // 1000
        with self._lock:
            prior = handle.flas_artifacts.get(fidx)
            if prior is not None:
                return prior
            handle.flas_artifacts[fidx] = art
            handle.flas_fns[fidx] = opt
        self._metric(fidx, "t2", dt, art.code_size)
        return art

    def _compile_flat_entry(self, inst, fidx):
        t0 = time.perf_counter_ns()
        entry, code_size = compile_flat(inst, inst.handle.dmir[fidx])
        dt = (time.perf_counter_ns() - t0) // 1000
        self._metric(fidx, "t1", dt, code_size)
        return entry

    # ------------------------------------------------------ lazy plumbing

    def _make_stub(self, inst, fidx):
        def stub(*args):
            entry = self._resolve_stub(inst, fidx)
            return entry(*args)
        stub._is_stub = True
        return stub

    def _resolve_stub(self, inst, fidx):
        entry = self._compile_flat_entry(inst, fidx)   # outside the lock
        with self._lock:
            cur = inst.entries[fidx]
            if not getattr(cur, "_is_stub", False):
                return cur               # someone else published first
            inst.entries[fidx] = entry
            self.stats["stubs_resolved"] += 1
            art = inst.handle.flas_artifacts.get(fidx)
            key = (id(inst.handle), fidx)
            need_enqueue = art is None and key not in self._queued
            if need_enqueue:
                self._queued.add(key)
                size = sum(len(b.instrs) for b in inst.handle.dmir[fidx].blocks)
                self._pending.append((inst.handle, fidx, size))
                self._cond.notify()
        if art is not None:
            self._publish_flas(inst.handle, fidx, art)
            with self._lock:
                return inst.entries[fidx]
        return entry

    def _pick_task_locked(self):
        if self.config.background_priority == "size_desc":
            best = max(range(len(self._pending)),
                       key=lambda i: (self._pending[i][2], -self._pending[i][1]))
        else:
            best = min(range(len(self._pending)),
                       key=lambda i: self._pending[i][1])
        return self._pending.pop(best)

    def _worker_loop(self):
        while True:
            with self._cond:
                while not self._pending and not self._stop:
                    self._cond.wait()
                if self._stop:
                    return
                handle, fidx, _ = self._pick_task_locked()
            art = self._ensure_flas_artifact(handle, fidx)
            with self._lock:
                self.stats["background_compiled"] += 1
            self._publish_flas(handle, fidx, art)

    def _publish_flas(self, handle, fidx, art):
        """Hot-switch every live instance of the module; idempotent."""
        with self._lock:
            for inst in self._live.get(handle, ()):
                if inst.closed or fidx in inst.flas_bound:
                    continue
                inst.entries[fidx] = art.bind(inst)
                inst.flas_bound.add(fidx)
                self.stats["switches"] += 1
                self.last_publish_ns = time.monotonic_ns()

    def step_background(self, max_items: int = 1) -> int:
        """Manual scheduler: run up to max_items queued compilations on the
        calling thread.  Returns how many were processed."""
        if not self.config.manual_scheduler:
            raise ApiMisuseError("step_background needs manual_scheduler")
        done = 0
        while done < max_items:
            with self._lock:
                if not self._pending or self._stop:
                    break
                handle, fidx, _ = self._pick_task_locked()
            art = self._ensure_flas_artifact(handle, fidx)
            with self._lock:
                self.stats["background_compiled"] += 1
            self._publish_flas(handle, fidx, art)
            done += 1
        return done

    def pending_background(self) -> int:
        with self._lock:
            return len(self._pending)

    # -------------------------------------------------------- instances

    def create_instance(self, handle: ModuleHandle,
                        iconfig: InstanceConfig | None = None) -> Instance:
        self._check_open()
        if iconfig is None:
            iconfig = InstanceConfig(memory_mode=self.config.memory_mode)
        needed = 2000 + 6 * iconfig.max_call_depth
        if sys.getrecursionlimit() < needed:
            sys.setrecursionlimit(needed)
        vmod = handle.vmod

        memory = None
        if vmod.memory_limits is not None:
            from .memory import LinearMemory
            lim = vmod.memory_limits
            cap = iconfig.max_memory_pages
            if lim.maximum is not None:
                cap = min(cap, lim.maximum)
            memory = LinearMemory(lim.minimum, cap, iconfig.memory_mode)

        globals_ = list(vmod.global_inits)

        table = None
        if vmod.table_limits is not None:
            table = [None] * vmod.table_limits.minimum

        host_calls = {}
        inst = Instance(self, vmod, iconfig, memory, globals_, table,
                        host_calls, None, None)
        inst.handle = handle
        inst.flas_bound = set()
        inst.first_invoke_us = None

        ctx_data = self.registry.init_context()
        ctx = HostContext(inst, ctx_data)
        inst.host_ctx = ctx
        inst._host_ctx_data = ctx_data

        for fidx, (module, name, ft) in vmod.host_imports.items():
            hf = self.registry.lookup(module, name)
            if hf is None:
                inst.closed = True
                raise InstantiationError(InstantiationErrorKind.UnresolvedImport,
                                         f"{module}.{name}")
            if hf.params != ft.params or hf.results != ft.results:
                inst.closed = True
                raise InstantiationError(InstantiationErrorKind.SignatureMismatch,
                                         f"{module}.{name}")
            host_calls[fidx] = self._make_host_call(inst, hf, ctx)

        # segments, in declaration order, before anything runs
        for seg in vmod.module.elems:
            offset = _const_value(seg.offset_expr)
            if table is None or offset + len(seg.func_indices) > len(table):
                inst.closed = True
                raise InstantiationError(InstantiationErrorKind.SegmentOutOfBounds,
                                         "element segment")
            for k, f in enumerate(seg.func_indices):
                table[offset + k] = f
        for seg in vmod.module.datas:
            offset = _const_value(seg.offset_expr)
            if memory is None or not memory.init_segment(offset, seg.payload):
                inst.closed = True
                raise InstantiationError(InstantiationErrorKind.SegmentOutOfBounds,
                                         "data segment")

        self._build_entries(inst, handle)
        with self._lock:
            self._live[handle].append(inst)

        if vmod.start_index is not None:
            try:
                inst.entries[vmod.start_index]()
            except TrapError as trap:
                inst.callstack.reset()
                inst.close()
                raise InstantiationError(InstantiationErrorKind.StartTrap,
                                         trap=trap) from trap
        return inst

    def _make_host_call(self, inst, hf, ctx):
        convert = _RESULT_CANON[hf.results[0]] if hf.results else None

        def call(*args):
            inst.gas.consume(hf.gas_cost)
            try:
                r = hf.fn(ctx, *args)
            except HostFailure as e:
                raise TrapError(TrapCode.HostError, str(e)) from e
            return convert(r) if convert is not None else None
        return call

    def _build_entries(self, inst, handle):
        vmod = handle.vmod
        mode = self.config.mode
        for fidx in range(len(vmod.func_types)):
            if fidx < vmod.num_imported_funcs:
                hook = vmod.hook_funcs.get(fidx)
                if hook is not None:
                    ctype, op = hook
                    inst.entries[fidx] = (
                        lambda a, b, _c=ctype, _o=op: checked_apply(_c, _o, a, b))
                else:
                    inst.entries[fidx] = inst.host_calls[fidx]
                continue
            if mode == "interp":
                inst.entries[fidx] = make_interp_entry(inst, handle.dmir[fidx])
            elif mode == "flat":
                inst.entries[fidx] = self._compile_flat_entry(inst, fidx)
            elif mode == "flas":
                art = self._ensure_flas_artifact(handle, fidx)
                inst.entries[fidx] = art.bind(inst)
                inst.flas_bound.add(fidx)
            else:
                inst.entries[fidx] = self._make_stub(inst, fidx)

    # ------------------------------------------------------------ hooks

    def note_invoke(self, inst, elapsed_ns):
        if inst.first_invoke_us is None:
            inst.first_invoke_us = elapsed_ns // 1000
            self.stats["latency_first_invoke_us"] = inst.first_invoke_us

    def note_instance_closed(self, inst):
        with self._lock:
            lst = self._live.get(inst.handle)
            if lst is not None and inst in lst:
                lst.remove(inst)

    # --------------------------------------------------------- lifecycle

    def shutdown(self):
        """Stop background compilation.  Queued work is discarded, running
        work finishes and publishes before this returns, and no publication
        happens afterwards."""
        if self._shutdown:
            return
        with self._cond:
            self._stop = True
            self._pending.clear()
            self._cond.notify_all()
        for t in self._workers:
            t.join()
        self._workers = []
        self._shutdown = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()
        return False
