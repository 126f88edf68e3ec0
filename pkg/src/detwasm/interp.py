"""Reference interpreter over the metered middle IR.

This tier favors being obviously correct over being fast: explicit Frame
objects, one handler method per operator family, and the shared semantics
tables consulted step by step with nothing cached per block.  The compiled
tiers are checked against it.
"""

from .dmir import LOAD_OPS, STORE_OPS, DmirFunction
from .errors import TrapCode, TrapError
from .numerics import checked_apply
from .semantics import BINOPS, CONVERTS, UNOPS


class Frame:
    __slots__ = ("fn", "regs", "block_index")

    def __init__(self, fn, regs):
        self.fn = fn
        self.regs = regs
        self.block_index = 0


class Interpreter:
    """One per instance; executes any of the instance's functions."""

    def __init__(self, inst):
        self.inst = inst
        h = {}
        for op in ("add", "sub", "mul", "div_s", "div_u", "rem_s", "rem_u",
                   "and", "or", "xor", "shl", "shr_s", "shr_u", "rotl",
                   "rotr", "div", "min", "max", "copysign", "eq", "ne",
                   "lt_s", "lt_u", "gt_s", "gt_u", "le_s", "le_u", "ge_s",
                   "ge_u", "lt", "gt", "le", "ge"):
            h[op] = self.op_binary
        for op in ("eqz", "clz", "ctz", "popcnt", "abs", "neg", "sqrt",
                   "ceil", "floor", "trunc", "nearest"):
            h[op] = self.op_unary
        for op in ("wrap_i64", "extend_i32_s", "extend_i32_u", "trunc_f32_s",
                   "trunc_f32_u", "trunc_f64_s", "trunc_f64_u",
                   "convert_i32_s", "convert_i32_u", "convert_i64_s",
                   "convert_i64_u", "demote_f64", "promote_f32",
                   "reinterpret_f32", "reinterpret_f64", "reinterpret_i32",
                   "reinterpret_i64"):
            h[op] = self.op_convert
        for op in LOAD_OPS:
            h[op] = self.op_load
        for op in STORE_OPS:
            h[op] = self.op_store
        h.update(gas_charge=self.op_gas, const=self.op_const,
                 move=self.op_move, select=self.op_select, call=self.op_call,
                 call_host=self.op_call_host,
                 call_indirect=self.op_call_indirect, checked=self.op_checked)
        h["global.get"] = self.op_global_get
        h["global.set"] = self.op_global_set
        h["memory.size"] = self.op_memory_size
        h["memory.grow"] = self.op_memory_grow
        self.handlers = h

    # ------------------------------------------------------------ driver

    def run(self, fn: DmirFunction, args):
        inst = self.inst
        inst.callstack.enter(fn.frame_weight)
        frame = Frame(fn, list(fn.reg_init))
        frame.regs[:len(args)] = args
        handlers = self.handlers
        while True:
            if inst.block_trace is not None:
                inst.block_trace.append((fn.func_index, frame.block_index))
            block = fn.blocks[frame.block_index]
            for ins in block.instrs:
                handlers[ins.op](frame, ins)
            t = block.term
            kind = t.kind
            if kind == "br":
                frame.block_index = t.targets[0]
            elif kind == "br_if":
                taken = frame.regs[t.args[0]]
                frame.block_index = t.targets[0] if taken else t.targets[1]
            elif kind == "switch":
                i = frame.regs[t.args[0]]
                table = t.targets
                frame.block_index = table[i] if i < len(table) - 1 else table[-1]
            elif kind == "ret":
                inst.callstack.leave(fn.frame_weight)
                return frame.regs[t.args[0]] if t.args else None
            else:
                raise TrapError(TrapCode[t.imm])

    # ---------------------------------------------------------- handlers

    def op_gas(self, frame, ins):
        self.inst.gas.consume(ins.imm)

    def op_const(self, frame, ins):
        frame.regs[ins.dest] = ins.imm

    def op_move(self, frame, ins):
        frame.regs[ins.dest] = frame.regs[ins.args[0]]

    def op_binary(self, frame, ins):
        regs = frame.regs
        a, b = ins.args
        regs[ins.dest] = BINOPS[(ins.op, ins.ty)](regs[a], regs[b])

    def op_unary(self, frame, ins):
        regs = frame.regs
        regs[ins.dest] = UNOPS[(ins.op, ins.ty)](regs[ins.args[0]])

    def op_convert(self, frame, ins):
        regs = frame.regs
        regs[ins.dest] = CONVERTS[(ins.op, ins.ty)](regs[ins.args[0]])

    def op_load(self, frame, ins):
        acc = self.inst.memory.accessors[(ins.op, ins.ty)]
        frame.regs[ins.dest] = acc(frame.regs[ins.args[0]], ins.imm)

    def op_store(self, frame, ins):
        acc = self.inst.memory.accessors[(ins.op, ins.ty)]
        acc(frame.regs[ins.args[0]], ins.imm, frame.regs[ins.args[1]])

    def op_select(self, frame, ins):
        regs = frame.regs
        v1, v2, c = ins.args
        regs[ins.dest] = regs[v1] if regs[c] else regs[v2]

    def op_call(self, frame, ins):
        regs = frame.regs
        r = self.inst.entries[ins.imm](*[regs[a] for a in ins.args])
        if ins.dest is not None:
            regs[ins.dest] = r

    def op_call_host(self, frame, ins):
        regs = frame.regs
        r = self.inst.host_calls[ins.imm](*[regs[a] for a in ins.args])
        if ins.dest is not None:
            regs[ins.dest] = r

    def op_call_indirect(self, frame, ins):
        regs = frame.regs
        entry = self.inst.resolve_indirect(ins.imm, regs[ins.args[0]])
        r = entry(*[regs[a] for a in ins.args[1:]])
        if ins.dest is not None:
            regs[ins.dest] = r

    def op_checked(self, frame, ins):
        regs = frame.regs
        ctype, cop = ins.imm
        a, b = ins.args
        regs[ins.dest] = checked_apply(ctype, cop, regs[a], regs[b])

    def op_global_get(self, frame, ins):
        frame.regs[ins.dest] = self.inst.globals[ins.imm]

    def op_global_set(self, frame, ins):
        self.inst.globals[ins.imm] = frame.regs[ins.args[0]]

    def op_memory_size(self, frame, ins):
        frame.regs[ins.dest] = self.inst.memory.size_pages()

    def op_memory_grow(self, frame, ins):
        frame.regs[ins.dest] = self.inst.memory.grow(frame.regs[ins.args[0]])


def make_interp_entry(inst, fn: DmirFunction):
    """Build the callable for one function bound to one instance.

    Frames leave the call stack accounting at the return site only; after a
    trap the invoke boundary resets the whole stack, mirroring the compiled
    tiers exactly.
    """
    machine = getattr(inst, "_interp_machine", None)
    if machine is None:
        machine = Interpreter(inst)
        inst._interp_machine = machine

    def entry(*args):
        return machine.run(fn, args)

    return entry
