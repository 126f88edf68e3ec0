"""Lowering from validated structured Wasm bodies to the middle IR CFG.

Registers are assigned by (operand stack depth, type), so any two control
flow paths that meet with equal stack types already agree on register
placement and no phi nodes are needed.  Branches that carry a value from a
deeper stack emit a move on the edge (through a fresh edge block when the
branch is conditional).
"""

from .dmir import Block, DmirFunction, Instr, Term
from .errors import ValidationCode, ValidationError
from .numerics import bits_f32, bits_f64, canon_f32, canon_f64
from .validator import HOOK_STORAGE, ValidatedModule

_CONST_CANON = {
    "i32": lambda v: v,
    "i64": lambda v: v,
    "f32": lambda v: canon_f32(bits_f32(v)),
    "f64": lambda v: canon_f64(bits_f64(v)),
}

_MEM_OPS = {
    "i32.load": ("load", "i32"), "i64.load": ("load", "i64"),
    "f32.load": ("load", "f32"), "f64.load": ("load", "f64"),
    "i32.load8_s": ("load8_s", "i32"), "i32.load8_u": ("load8_u", "i32"),
    "i32.load16_s": ("load16_s", "i32"), "i32.load16_u": ("load16_u", "i32"),
    "i64.load8_s": ("load8_s", "i64"), "i64.load8_u": ("load8_u", "i64"),
    "i64.load16_s": ("load16_s", "i64"), "i64.load16_u": ("load16_u", "i64"),
    "i64.load32_s": ("load32_s", "i64"), "i64.load32_u": ("load32_u", "i64"),
    "i32.store": ("store", "i32"), "i64.store": ("store", "i64"),
    "f32.store": ("store", "f32"), "f64.store": ("store", "f64"),
    "i32.store8": ("store8", "i32"), "i32.store16": ("store16", "i32"),
    "i64.store8": ("store8", "i64"), "i64.store16": ("store16", "i64"),
    "i64.store32": ("store32", "i64"),
}

_BINOPS = {"add", "sub", "mul", "div_s", "div_u", "rem_s", "rem_u", "and",
           "or", "xor", "shl", "shr_s", "shr_u", "rotl", "rotr", "div",
           "min", "max", "copysign"}
_UNOPS = {"clz", "ctz", "popcnt", "abs", "neg", "ceil", "floor", "trunc",
          "nearest", "sqrt"}
_RELOPS = {"eq", "ne", "lt_s", "lt_u", "gt_s", "gt_u", "le_s", "le_u",
           "ge_s", "ge_u", "lt", "gt", "le", "ge"}

_CONVERT_RESULT = {
    "wrap_i64": "i64", "extend_i32_s": "i32", "extend_i32_u": "i32",
    "trunc_f32_s": "f32", "trunc_f32_u": "f32",
    "trunc_f64_s": "f64", "trunc_f64_u": "f64",
    "convert_i32_s": "i32", "convert_i32_u": "i32",
    "convert_i64_s": "i64", "convert_i64_u": "i64",
    "demote_f64": "f64", "promote_f32": "f32",
    "reinterpret_f32": "f32", "reinterpret_f64": "f64",
    "reinterpret_i32": "i32", "reinterpret_i64": "i64",
}  # op -> source type


class _Frame:
    __slots__ = ("kind", "result", "base", "merge", "header", "else_block",
                 "entered_dead")

    def __init__(self, kind, result, base):
        self.kind = kind
        self.result = result
        self.base = base
        self.merge = None
        self.header = None
        self.else_block = None
        self.entered_dead = False


class _Lowerer:
    def __init__(self, vmod: ValidatedModule, func_index: int):
        self.vmod = vmod
        ft = vmod.func_types[func_index]
        locals_ = vmod.local_types[func_index]
        self.fn = DmirFunction(
            func_index=func_index, params=tuple(ft.params),
            results=tuple(ft.results), reg_types=list(locals_), blocks=[],
            nlocals=len(locals_),
            frame_weight=vmod.frame_weights[func_index])
        self.slot_regs = {}
        self.stack = []          # (reg, type) pairs
        self.frames = [_Frame("func", tuple(ft.results), 0)]
        self.cur = self.fn.new_block()

    # -------------------------------------------------- small primitives

    def slot_reg(self, depth, ty) -> int:
        key = (depth, ty)
        reg = self.slot_regs.get(key)
        if reg is None:
            reg = len(self.fn.reg_types)
            self.fn.reg_types.append(ty)
            self.slot_regs[key] = reg
        return reg

    def push(self, ty) -> int:
        reg = self.slot_reg(len(self.stack), ty)
        self.stack.append((reg, ty))
        return reg

    def pop(self):
        return self.stack.pop()

    def emit(self, **kw):
        self.fn.blocks[self.cur].instrs.append(Instr(**kw))

    def terminate(self, term: Term):
        self.fn.blocks[self.cur].term = term
        self.cur = None

    def live(self) -> bool:
        return self.cur is not None

    # -------------------------------------------------- branch plumbing

    def _branch_target(self, depth):
        """Resolve a label to (frame, is_backward)."""
        frame = self.frames[-1 - depth]
        return frame, frame.kind == "loop"

    def _ensure_merge(self, frame) -> int:
        if frame.merge is None:
            frame.merge = self.fn.new_block()
        return frame.merge

    def _branch_args(self, frame, backward):
        """Value-carrying labels: the result must land in the target's base
        slot.  Returns (move needed, src reg, dst reg, type)."""
        if backward or not frame.result:
            return None
        ty = frame.result[0]
        src = self.stack[-1][0]
        dst = self.slot_reg(frame.base, ty)
        if src == dst:
            return None
        return (src, dst, ty)

    def _emit_br(self, depth):
        frame, backward = self._branch_target(depth)
        if frame.kind == "func":
            n = len(frame.result)
            args = tuple(r for r, _ in self.stack[-n:]) if n else ()
            self.terminate(Term("ret", args=args))
            return
        mv = self._branch_args(frame, backward)
        if mv is not None:
            src, dst, ty = mv
            self.emit(op="move", ty=ty, dest=dst, args=(src,))
        target = frame.header if backward else self._ensure_merge(frame)
        self.terminate(Term("br", targets=(target,)))

    def _edge_block_for(self, depth) -> int:
        """Target for one arm of a conditional branch, inserting an edge
        block when a value move is needed on that edge."""
        frame, backward = self._branch_target(depth)
        if frame.kind == "func":
            n = len(frame.result)
            args = tuple(r for r, _ in self.stack[-n:]) if n else ()
            edge = self.fn.new_block()
            self.fn.blocks[edge].term = Term("ret", args=args)
            return edge
        mv = self._branch_args(frame, backward)
        target = frame.header if backward else self._ensure_merge(frame)
        if mv is None:
            return target
        src, dst, ty = mv
        edge = self.fn.new_block()
        self.fn.blocks[edge].instrs.append(Instr(op="move", ty=ty, dest=dst,
                                                 args=(src,)))
        self.fn.blocks[edge].term = Term("br", targets=(target,))
        return edge

    def _rebuild_stack(self, frame):
        del self.stack[frame.base:]
        for ty in frame.result:
            self.push(ty)

    # -------------------------------------------------- instruction walk

    def lower_body(self, body):
        for off, name, imm in body:
            if self.live():
                self._instr(name, imm)
            else:
                self._dead_instr(name, imm)
        return self.fn

    def _dead_instr(self, name, imm):
        """Track structure only; nothing is emitted in unreachable code."""
        if name in ("block", "loop", "if"):
            result = () if imm is None else (imm,)
            f = _Frame(name, result, len(self.stack))
            f.entered_dead = True
            self.frames.append(f)
        elif name == "else":
            frame = self.frames[-1]
            if not frame.entered_dead:
                del self.stack[frame.base:]
                self.cur = frame.else_block
                frame.else_block = None
        elif name == "end":
            frame = self.frames.pop()
            if frame.entered_dead:
                return
            if not self.frames:
                return
            if frame.kind == "if" and frame.else_block is not None:
                # the then arm never falls through; either forward the
                # untaken else edge to the merge or just resume in it
                if frame.merge is not None:
                    self.fn.blocks[frame.else_block].term = Term(
                        "br", targets=(frame.merge,))
                else:
                    self.cur = frame.else_block
                    self._rebuild_stack(frame)
                    return
            if frame.merge is not None:
                self.cur = frame.merge
            self._rebuild_stack(frame)

    def _instr(self, name, imm):
        fn = self.fn
        if name == "nop":
            return
        if name == "unreachable":
            self.terminate(Term("trap", imm="Unreachable"))
            del self.stack[self.frames[-1].base:]
            return
        if name in ("block", "loop"):
            result = () if imm is None else (imm,)
            frame = _Frame(name, result, len(self.stack))
            self.frames.append(frame)
            if name == "loop":
                header = fn.new_block()
                self.terminate(Term("br", targets=(header,)))
                self.cur = header
                frame.header = header
            return
        if name == "if":
            cond, _ = self.pop()
            result = () if imm is None else (imm,)
            frame = _Frame("if", result, len(self.stack))
            self.frames.append(frame)
            then_bb = fn.new_block()
            else_bb = fn.new_block()
            frame.else_block = else_bb
            self.terminate(Term("br_if", args=(cond,), targets=(then_bb, else_bb)))
            self.cur = then_bb
            return
        if name == "else":
            frame = self.frames[-1]
            if self.live():
                merge = self._ensure_merge(frame)
                self.terminate(Term("br", targets=(merge,)))
            del self.stack[frame.base:]
            self.cur = frame.else_block
            frame.else_block = None  # consumed; end() must not forward it
            return
        if name == "end":
            frame = self.frames.pop()
            if frame.kind == "func":
                n = len(frame.result)
                args = tuple(r for r, _ in self.stack[-n:]) if n else ()
                self.terminate(Term("ret", args=args))
                return
            if frame.kind == "if" and frame.else_block is not None:
                # if without else: route the false edge around the then arm
                merge = self._ensure_merge(frame)
                self.fn.blocks[frame.else_block].term = Term("br", targets=(merge,))
            if frame.merge is not None:
                self.terminate(Term("br", targets=(frame.merge,)))
                self.cur = frame.merge
            # otherwise this was the only exit; keep filling the block
            self._rebuild_stack(frame)
            return
        if name == "br":
            self._emit_br(imm)
            del self.stack[self.frames[-1].base:]
            return
        if name == "br_if":
            cond, _ = self.pop()
            taken = self._edge_block_for(imm)
            fall = fn.new_block()
            self.terminate(Term("br_if", args=(cond,), targets=(taken, fall)))
            self.cur = fall
            return
        if name == "br_table":
            targets, default = imm
            idx, _ = self.pop()
            edge_targets = tuple(self._edge_block_for(d) for d in targets)
            default_edge = self._edge_block_for(default)
            if not edge_targets:
                # empty label vector: the index is popped but cannot matter
                self.terminate(Term("br", targets=(default_edge,)))
            else:
                self.terminate(Term("switch", args=(idx,),
                                    targets=edge_targets + (default_edge,)))
            del self.stack[self.frames[-1].base:]
            return
        if name == "return":
            n = len(fn.results)
            args = tuple(r for r, _ in self.stack[-n:]) if n else ()
            self.terminate(Term("ret", args=args))
            del self.stack[self.frames[-1].base:]
            return
        if name == "call":
            self._call(imm)
            return
        if name == "call_indirect":
            ft = self.vmod.module.types[imm][0]
            idx, _ = self.pop()
            args = tuple(r for r, _ in self.stack[-len(ft.params):]) if ft.params else ()
            del self.stack[len(self.stack) - len(ft.params):]
            dest = self.push(ft.results[0]) if ft.results else None
            ty = ft.results[0] if ft.results else ""
            self.emit(op="call_indirect", ty=ty, dest=dest,
                      args=(idx,) + args, imm=imm)
            return
        if name == "drop":
            self.pop()
            return
        if name == "select":
            cond, _ = self.pop()
            v2, ty = self.pop()
            v1, _ = self.pop()
            dest = self.push(ty)
            self.emit(op="select", ty=ty, dest=dest, args=(v1, v2, cond))
            return
        if name == "local.get":
            ty = fn.reg_types[imm]
            dest = self.push(ty)
            self.emit(op="move", ty=ty, dest=dest, args=(imm,))
            return
        if name == "local.set":
            src, ty = self.pop()
            self.emit(op="move", ty=ty, dest=imm, args=(src,))
            return
        if name == "local.tee":
            src, ty = self.stack[-1]
            self.emit(op="move", ty=ty, dest=imm, args=(src,))
            return
        if name == "global.get":
            ty = self.vmod.global_types[imm].valtype
            dest = self.push(ty)
            self.emit(op="global.get", ty=ty, dest=dest, imm=imm)
            return
        if name == "global.set":
            src, ty = self.pop()
            self.emit(op="global.set", ty=ty, args=(src,), imm=imm)
            return
        if name in _MEM_OPS:
            mop, ty = _MEM_OPS[name]
            offset = imm[1]
            if mop.startswith("store"):
                val, _ = self.pop()
                addr, _ = self.pop()
                self.emit(op=mop, ty=ty, args=(addr, val), imm=offset)
            else:
                addr, _ = self.pop()
                dest = self.push(ty)
                self.emit(op=mop, ty=ty, dest=dest, args=(addr,), imm=offset)
            return
        if name == "memory.size":
            dest = self.push("i32")
            self.emit(op="memory.size", ty="i32", dest=dest)
            return
        if name == "memory.grow":
            delta, _ = self.pop()
            dest = self.push("i32")
            self.emit(op="memory.grow", ty="i32", dest=dest, args=(delta,))
            return

        ty, _, op = name.partition(".")
        if op == "const":
            dest = self.push(ty)
            self.emit(op="const", ty=ty, dest=dest, imm=_CONST_CANON[ty](imm))
            return
        if op == "eqz":
            a, _ = self.pop()
            dest = self.push("i32")
            self.emit(op="eqz", ty=ty, dest=dest, args=(a,))
            return
        if op in _RELOPS:
            b, _ = self.pop()
            a, _ = self.pop()
            dest = self.push("i32")
            self.emit(op=op, ty=ty, dest=dest, args=(a, b))
            return
        if op in _BINOPS:
            b, _ = self.pop()
            a, _ = self.pop()
            dest = self.push(ty)
            self.emit(op=op, ty=ty, dest=dest, args=(a, b))
            return
        if op in _UNOPS:
            a, _ = self.pop()
            dest = self.push(ty)
            self.emit(op=op, ty=ty, dest=dest, args=(a,))
            return
        if op in _CONVERT_RESULT:
            a, _ = self.pop()
            dest = self.push(ty)
            self.emit(op=op, ty=ty, dest=dest, args=(a,))
            return
        raise AssertionError(f"unlowered operator {name}")

    def _call(self, fidx):
        vmod = self.vmod
        ft = vmod.func_types[fidx]
        args = tuple(r for r, _ in self.stack[-len(ft.params):]) if ft.params else ()
        del self.stack[len(self.stack) - len(ft.params):]
        dest = self.push(ft.results[0]) if ft.results else None
        ty = ft.results[0] if ft.results else ""
        hook = vmod.hook_funcs.get(fidx)
        if hook is not None:
            self.emit(op="checked", ty=HOOK_STORAGE[hook[0]], dest=dest,
                      args=args, imm=hook)
            return
        if fidx in vmod.host_imports:
            self.emit(op="call_host", ty=ty, dest=dest, args=args, imm=fidx)
            return
        self.emit(op="call", ty=ty, dest=dest, args=args, imm=fidx)


def lower_function(vmod: ValidatedModule, func_index: int) -> DmirFunction:
    code = vmod.module.codes[func_index - vmod.num_imported_funcs]
    lw = _Lowerer(vmod, func_index)
    fn = lw.lower_body(code.body)
    fn.reg_init = [0.0 if t in ("f32", "f64") else 0 for t in fn.reg_types]
    return fn


def lower_module(vmod: ValidatedModule) -> dict:
    """Lower every defined function; returns {func_index: DmirFunction}."""
    out = {}
    for i in range(len(vmod.module.codes)):
        fidx = vmod.num_imported_funcs + i
        out[fidx] = lower_function(vmod, fidx)
    return out
