"""Deterministic validation with strictly ordered error reporting.

Checks run section by section in binary order, items in index order, and
instructions in body order; at each instruction the structural limits are
checked before type rules.  The first violation wins, so a given module
always rejects with the same (code, byte_offset) pair.
"""

from dataclasses import dataclass, field

from .decoder import FuncType, Module
from .errors import ValidationCode, ValidationError
from .numerics import bits_f32, bits_f64, canon_f32, canon_f64
from .opcodes import ACCESS_WIDTH

TYPE_WEIGHT = {"i32": 1, "f32": 1, "i64": 2, "f64": 2}

HOOK_TYPES = ("i32", "u32", "i64", "u64")
HOOK_OPS = ("add", "sub", "mul")
HOOK_STORAGE = {"i32": "i32", "u32": "i32", "i64": "i64", "u64": "i64"}

# full opname -> source value type for the conversion operators
CONVERT_SRC = {
    "i32.wrap_i64": "i64",
    "i64.extend_i32_s": "i32", "i64.extend_i32_u": "i32",
    "i32.trunc_f32_s": "f32", "i32.trunc_f32_u": "f32",
    "i32.trunc_f64_s": "f64", "i32.trunc_f64_u": "f64",
    "i64.trunc_f32_s": "f32", "i64.trunc_f32_u": "f32",
    "i64.trunc_f64_s": "f64", "i64.trunc_f64_u": "f64",
    "f32.convert_i32_s": "i32", "f32.convert_i32_u": "i32",
    "f32.convert_i64_s": "i64", "f32.convert_i64_u": "i64",
    "f64.convert_i32_s": "i32", "f64.convert_i32_u": "i32",
    "f64.convert_i64_s": "i64", "f64.convert_i64_u": "i64",
    "f32.demote_f64": "f64", "f64.promote_f32": "f32",
    "i32.reinterpret_f32": "f32", "i64.reinterpret_f64": "f64",
    "f32.reinterpret_i32": "i32", "f64.reinterpret_i64": "i64",
}


@dataclass
class DwasmLimits:
    max_params: int = 1024
    max_locals: int = 10240
    max_frame_weight: int = 40960
    max_instructions: int = 10240
    max_nesting: int = 1024
    max_memory_pages: int = 65536
    max_table_entries: int = 65536
    max_imports: int = 1024
    max_exports: int = 1024


@dataclass
class ValidatedModule:
    module: Module
    limits: DwasmLimits
    func_types: list            # FuncType per function index (imports first)
    num_imported_funcs: int
    host_imports: dict          # func index -> (module, name, FuncType)
    hook_funcs: dict            # func index -> (ctype, op)
    frame_weights: list         # per function index; 0 for imports
    local_types: dict           # defined func index -> tuple of local valtypes
    exports: dict               # name -> (kind, index)
    start_index: object
    global_types: list          # GlobalType per global
    global_inits: list          # runtime initial values
    memory_limits: object       # Limits or None
    table_limits: object        # Limits or None


def parse_hook_name(name) -> object:
    """Return (ctype, op) when name matches checked_{type}_{operation}."""
    if not isinstance(name, str) or not name.startswith("checked_"):
        return None
    parts = name.split("_")
    if len(parts) != 3:
        return None
    _, ctype, op = parts
    if ctype in HOOK_TYPES and op in HOOK_OPS:
        return (ctype, op)
    return None


def _err(code, offset, detail=""):
    raise ValidationError(code, offset, detail)


def _check_float(t, allow_floats, offset):
    if not allow_floats and t in ("f32", "f64"):
        _err(ValidationCode.UnsupportedFeature, offset, "float types disabled")


class _Ctrl:
    __slots__ = ("op", "start", "end", "height", "unreachable")

    def __init__(self, op, start, end, height):
        self.op = op
        self.start = start
        self.end = end
        self.height = height
        self.unreachable = False


class _BodyChecker:
    """Standard operand-stack type checker plus the weighted depth tracker."""

    def __init__(self, vmod, limits, func_index, locals_, results, code_off,
                 base_weight, allow_floats):
        self.vmod = vmod
        self.limits = limits
        self.func_index = func_index
        self.locals = locals_
        self.results = results
        self.code_off = code_off
        self.allow_floats = allow_floats
        self.vals = []
        self.wts = []
        self.ctrls = [_Ctrl("func", (), results, 0)]
        self.base_weight = base_weight
        self.stack_weight = 0
        self.max_weight = base_weight
        self.instr_count = 0

    # ---------------- stack primitives

    def push(self, t):
        self.vals.append(t)
        w = TYPE_WEIGHT[t] if t is not None else 0
        self.wts.append(w)
        self.stack_weight += w
        if not self.ctrls[-1].unreachable:
            total = self.base_weight + self.stack_weight
            if total > self.max_weight:
                self.max_weight = total
                if total > self.limits.max_frame_weight:
                    _err(ValidationCode.FrameWeightExceeded, self.code_off,
                         f"func {self.func_index} weight {total}")

    def pop(self, off, expect=None):
        f = self.ctrls[-1]
        if len(self.vals) == f.height:
            if f.unreachable:
                return expect
            _err(ValidationCode.TypeMismatch, off, "stack underflow")
        t = self.vals.pop()
        self.stack_weight -= self.wts.pop()
        if expect is not None and t is not None and t != expect:
            _err(ValidationCode.TypeMismatch, off, f"expected {expect}, got {t}")
        return t if t is not None else expect

    def set_unreachable(self):
        f = self.ctrls[-1]
        while len(self.vals) > f.height:
            self.vals.pop()
            self.stack_weight -= self.wts.pop()
        f.unreachable = True

    def push_ctrl(self, op, start, end):
        self.ctrls.append(_Ctrl(op, start, end, len(self.vals)))

    def pop_ctrl(self, off):
        f = self.ctrls[-1]
        for t in reversed(f.end):
            self.pop(off, t)
        if len(self.vals) != f.height:
            _err(ValidationCode.TypeMismatch, off, "values left on stack at end")
        self.ctrls.pop()
        return f

    def label_types(self, f):
        return f.start if f.op == "loop" else f.end

    # ---------------- instruction walk

    def check_body(self, body):
        lim = self.limits
        vmod = self.vmod
        for off, name, imm in body:
            self.instr_count += 1
            if self.instr_count > lim.max_instructions:
                _err(ValidationCode.InstructionCountExceeded, off,
                     f"func {self.func_index}")
            if name in ("block", "loop", "if"):
                if len(self.ctrls) > lim.max_nesting:
                    _err(ValidationCode.NestingDepthExceeded, off,
                         f"depth {len(self.ctrls)}")
            self._instr(off, name, imm)
            if not self.ctrls:
                # function frame popped by the final end
                return
        _err(ValidationCode.TypeMismatch, self.code_off, "body not terminated")

    def _blocktype(self, imm, off):
        if imm is None:
            return ()
        _check_float(imm, self.allow_floats, off)
        return (imm,)

    def _instr(self, off, name, imm):
        dot = name.find(".")
        ty = name[:dot] if dot > 0 else None
        op = name[dot + 1:] if dot > 0 else name
        if ty in ("f32", "f64") or (isinstance(imm, str) and imm in ("f32", "f64")):
            _check_float(ty if ty in ("f32", "f64") else imm, self.allow_floats, off)

        if name == "nop":
            return
        if name == "unreachable":
            self.set_unreachable()
            return
        if name in ("block", "loop"):
            self.push_ctrl(name, (), self._blocktype(imm, off))
            return
        if name == "if":
            self.pop(off, "i32")
            self.push_ctrl("if", (), self._blocktype(imm, off))
            return
        if name == "else":
            f = self.ctrls[-1]
            if f.op != "if":
                _err(ValidationCode.TypeMismatch, off, "else outside if")
            self.pop_ctrl(off)
            self.push_ctrl("else", f.start, f.end)
            return
        if name == "end":
            f = self.ctrls[-1]
            if f.op == "if" and f.end != f.start:
                _err(ValidationCode.TypeMismatch, off, "if with result lacks else")
            self.pop_ctrl(off)
            if self.ctrls:
                for t in f.end:
                    self.push(t)
            return
        if name == "br":
            f = self._label(imm, off)
            for t in reversed(self.label_types(f)):
                self.pop(off, t)
            self.set_unreachable()
            return
        if name == "br_if":
            self.pop(off, "i32")
            f = self._label(imm, off)
            lts = self.label_types(f)
            for t in reversed(lts):
                self.pop(off, t)
            for t in lts:
                self.push(t)
            return
        if name == "br_table":
            targets, default = imm
            self.pop(off, "i32")
            dts = self.label_types(self._label(default, off))
            for t in targets:
                lts = self.label_types(self._label(t, off))
                if lts != dts:
                    _err(ValidationCode.TypeMismatch, off,
                         "br_table label arity mismatch")
            for t in reversed(dts):
                self.pop(off, t)
            self.set_unreachable()
            return
        if name == "return":
            for t in reversed(self.results):
                self.pop(off, t)
            self.set_unreachable()
            return
        if name == "call":
            if imm >= len(self.vmod.func_types):
                _err(ValidationCode.TypeMismatch, off, f"unknown function {imm}")
            ft = self.vmod.func_types[imm]
            for t in ft.params:
                _check_float(t, self.allow_floats, off)
            for t in reversed(ft.params):
                self.pop(off, t)
            for t in ft.results:
                _check_float(t, self.allow_floats, off)
                self.push(t)
            return
        if name == "call_indirect":
            if self.vmod.table_limits is None:
                _err(ValidationCode.TypeMismatch, off, "no table")
            types = self.vmod.module.types
            if imm >= len(types):
                _err(ValidationCode.TypeMismatch, off, f"unknown type {imm}")
            ft = types[imm][0]
            self.pop(off, "i32")
            for t in reversed(ft.params):
                _check_float(t, self.allow_floats, off)
                self.pop(off, t)
            for t in ft.results:
                _check_float(t, self.allow_floats, off)
                self.push(t)
            return
        if name == "drop":
            self.pop(off)
            return
        if name == "select":
            self.pop(off, "i32")
            t1 = self.pop(off)
            t2 = self.pop(off, t1)
            self.push(t2 if t2 is not None else t1)
            return
        if name in ("local.get", "local.set", "local.tee"):
            if imm >= len(self.locals):
                _err(ValidationCode.TypeMismatch, off, f"unknown local {imm}")
            t = self.locals[imm]
            if name == "local.get":
                self.push(t)
            elif name == "local.set":
                self.pop(off, t)
            else:
                self.pop(off, t)
                self.push(t)
            return
        if name in ("global.get", "global.set"):
            if imm >= len(self.vmod.global_types):
                _err(ValidationCode.TypeMismatch, off, f"unknown global {imm}")
            g = self.vmod.global_types[imm]
            _check_float(g.valtype, self.allow_floats, off)
            if name == "global.get":
                self.push(g.valtype)
            else:
                if not g.mutable:
                    _err(ValidationCode.TypeMismatch, off, "global is immutable")
                self.pop(off, g.valtype)
            return
        if name in ACCESS_WIDTH:
            if self.vmod.memory_limits is None:
                _err(ValidationCode.TypeMismatch, off, "no memory")
            align, _ = imm
            width = ACCESS_WIDTH[name]
            if (1 << align) > width:
                _err(ValidationCode.TypeMismatch, off, "alignment too large")
            if op.startswith("load"):
                self.pop(off, "i32")
                self.push(ty)
            else:
                self.pop(off, ty)
                self.pop(off, "i32")
            return
        if name == "memory.size":
            if self.vmod.memory_limits is None:
                _err(ValidationCode.TypeMismatch, off, "no memory")
            self.push("i32")
            return
        if name == "memory.grow":
            if self.vmod.memory_limits is None:
                _err(ValidationCode.TypeMismatch, off, "no memory")
            self.pop(off, "i32")
            self.push("i32")
            return
        if op == "const":
            self.push(ty)
            return
        if op in ("eqz",):
            self.pop(off, ty)
            self.push("i32")
            return
        if op in ("eq", "ne", "lt_s", "lt_u", "gt_s", "gt_u", "le_s", "le_u",
                  "ge_s", "ge_u", "lt", "gt", "le", "ge"):
            self.pop(off, ty)
            self.pop(off, ty)
            self.push("i32")
            return
        if op in ("clz", "ctz", "popcnt", "abs", "neg", "ceil", "floor",
                  "trunc", "nearest", "sqrt"):
            self.pop(off, ty)
            self.push(ty)
            return
        if op in ("add", "sub", "mul", "div_s", "div_u", "rem_s", "rem_u",
                  "and", "or", "xor", "shl", "shr_s", "shr_u", "rotl", "rotr",
                  "div", "min", "max", "copysign"):
            self.pop(off, ty)
            self.pop(off, ty)
            self.push(ty)
            return
        src = CONVERT_SRC.get(name)
        if src is not None:
            _check_float(src, self.allow_floats, off)
            self.pop(off, src)
            self.push(ty)
            return
        _err(ValidationCode.UnsupportedFeature, off, f"operator {name}")

    def _label(self, depth, off):
        if depth >= len(self.ctrls):
            _err(ValidationCode.TypeMismatch, off, f"unknown label {depth}")
        return self.ctrls[-1 - depth]


def _const_expr(vmod, expr, expect, offset, allow_floats, what):
    """MVP init expressions: a single const of the right type, then end."""
    if len(expr) != 2 or expr[1][1] != "end":
        if len(expr) >= 1 and expr[0][1] == "global.get":
            _err(ValidationCode.UnsupportedFeature, expr[0][0],
                 f"{what}: imported-global init")
        _err(ValidationCode.TypeMismatch, offset, f"{what}: not a const expression")
    off, name, imm = expr[0]
    const_types = {"i32.const": "i32", "i64.const": "i64",
                   "f32.const": "f32", "f64.const": "f64"}
    t = const_types.get(name)
    if t is None:
        if name == "global.get":
            _err(ValidationCode.UnsupportedFeature, off, f"{what}: imported-global init")
        _err(ValidationCode.TypeMismatch, off, f"{what}: not a const expression")
    _check_float(t, allow_floats, off)
    if t != expect:
        _err(ValidationCode.TypeMismatch, off, f"{what}: expected {expect}")
    if t == "f32":
        return canon_f32(bits_f32(imm))
    if t == "f64":
        return canon_f64(bits_f64(imm))
    return imm


def validate_dwasm(mod: Module, limits: DwasmLimits | None = None,
                   allow_floats: bool = True) -> ValidatedModule:
    limits = limits or DwasmLimits()
    vmod = ValidatedModule(
        module=mod, limits=limits, func_types=[], num_imported_funcs=0,
        host_imports={}, hook_funcs={}, frame_weights=[], local_types={},
        exports={}, start_index=None, global_types=[], global_inits=[],
        memory_limits=None, table_limits=None)

    # type section: structural sanity; MVP allows at most one result
    for ft, toff in mod.types:
        for t in ft.params + ft.results:
            _check_float(t, allow_floats, toff)
        if len(ft.results) > 1:
            _err(ValidationCode.UnsupportedFeature, toff, "multiple results")

    # import section
    for i, imp in enumerate(mod.imports):
        if i >= limits.max_imports:
            _err(ValidationCode.UnsupportedFeature, imp.offset, "too many imports")
        if isinstance(imp.module, bytes):
            _err(ValidationCode.InvalidUtf8Identifier, imp.module_offset,
                 "import module name")
        if isinstance(imp.name, bytes):
            _err(ValidationCode.InvalidUtf8Identifier, imp.name_offset,
                 "import item name")
        if imp.kind != "func":
            _err(ValidationCode.UnsupportedFeature, imp.offset,
                 f"{imp.kind} import")
        if imp.desc >= len(mod.types):
            _err(ValidationCode.TypeMismatch, imp.offset, "unknown type index")
        ft = mod.types[imp.desc][0]
        if len(ft.params) > limits.max_params:
            _err(ValidationCode.ParamCountExceeded, imp.offset,
                 f"{len(ft.params)} params")
        fidx = len(vmod.func_types)
        hook = parse_hook_name(imp.name) if imp.module == "env" else None
        if hook is not None:
            ctype, hop = hook
            st = HOOK_STORAGE[ctype]
            if ft != FuncType((st, st), (st,)):
                _err(ValidationCode.HookSignatureMismatch, imp.offset,
                     f"checked_{ctype}_{hop} wants ({st},{st})->{st}")
            vmod.hook_funcs[fidx] = hook
        else:
            vmod.host_imports[fidx] = (imp.module, imp.name, ft)
        vmod.func_types.append(ft)
        vmod.frame_weights.append(0)
    vmod.num_imported_funcs = len(vmod.func_types)

    # function section: type indices must resolve
    for ti, foff in mod.funcs:
        if ti >= len(mod.types):
            _err(ValidationCode.TypeMismatch, foff, "unknown type index")
        vmod.func_types.append(mod.types[ti][0])
        vmod.frame_weights.append(0)

    # table / memory sections
    if len(mod.tables) > 1:
        _err(ValidationCode.UnsupportedFeature, mod.table_offsets[1],
             "multiple tables")
    if mod.tables:
        lim = mod.tables[0]
        toff = mod.table_offsets[0]
        if lim.maximum is not None and lim.maximum < lim.minimum:
            _err(ValidationCode.TypeMismatch, toff, "table max below min")
        if max(lim.minimum, lim.maximum or 0) > limits.max_table_entries:
            _err(ValidationCode.UnsupportedFeature, toff, "table too large")
        vmod.table_limits = lim
    if len(mod.memories) > 1:
        _err(ValidationCode.UnsupportedFeature, mod.memory_offsets[1],
             "multiple memories")
    if mod.memories:
        lim = mod.memories[0]
        moff = mod.memory_offsets[0]
        if lim.maximum is not None and lim.maximum < lim.minimum:
            _err(ValidationCode.TypeMismatch, moff, "memory max below min")
        if max(lim.minimum, lim.maximum or 0) > limits.max_memory_pages:
            _err(ValidationCode.UnsupportedFeature, moff, "memory too large")
        vmod.memory_limits = lim

    # global section
    for g in mod.globals:
        _check_float(g.gtype.valtype, allow_floats, g.offset)
        val = _const_expr(vmod, g.init, g.gtype.valtype, g.offset,
                          allow_floats, "global init")
        vmod.global_types.append(g.gtype)
        vmod.global_inits.append(val)

    # export section
    counts = {"func": len(vmod.func_types), "table": len(mod.tables),
              "memory": len(mod.memories), "global": len(mod.globals)}
    for i, exp in enumerate(mod.exports):
        if i >= limits.max_exports:
            _err(ValidationCode.UnsupportedFeature, exp.offset, "too many exports")
        if isinstance(exp.name, bytes):
            _err(ValidationCode.InvalidUtf8Identifier, exp.name_offset,
                 "export name")
        if exp.name in vmod.exports:
            _err(ValidationCode.TypeMismatch, exp.offset,
                 f"duplicate export {exp.name!r}")
        if exp.index >= counts[exp.kind]:
            _err(ValidationCode.TypeMismatch, exp.offset,
                 f"unknown {exp.kind} index {exp.index}")
        if exp.kind == "global" and vmod.global_types[exp.index].mutable:
            _err(ValidationCode.UnsupportedFeature, exp.offset,
                 "mutable global export")
        vmod.exports[exp.name] = (exp.kind, exp.index)

    # start section
    if mod.start is not None:
        sidx, soff = mod.start
        if sidx >= len(vmod.func_types):
            _err(ValidationCode.TypeMismatch, soff, "unknown start function")
        if vmod.func_types[sidx] != FuncType((), ()):
            _err(ValidationCode.TypeMismatch, soff, "start must be () -> ()")
        vmod.start_index = sidx

    # element section
    for el in mod.elems:
        if vmod.table_limits is None or el.table_index != 0:
            _err(ValidationCode.TypeMismatch, el.offset, "unknown table")
        _const_expr(vmod, el.offset_expr, "i32", el.offset, allow_floats,
                    "element offset")
        for f in el.func_indices:
            if f >= len(vmod.func_types):
                _err(ValidationCode.TypeMismatch, el.offset,
                     f"unknown function {f}")

    # code section: per function, params then locals then weight then body
    for i, code in enumerate(mod.codes):
        fidx = vmod.num_imported_funcs + i
        ft = vmod.func_types[fidx]
        type_use_off = mod.funcs[i][1]
        if len(ft.params) > limits.max_params:
            _err(ValidationCode.ParamCountExceeded, type_use_off,
                 f"{len(ft.params)} params")
        nlocals = sum(cnt for cnt, _ in code.local_decls)
        if nlocals > limits.max_locals:
            _err(ValidationCode.LocalCountExceeded, code.offset,
                 f"{nlocals} locals")
        for t in ft.params + ft.results:
            _check_float(t, allow_floats, code.offset)
        locals_ = list(ft.params)
        for cnt, vt in code.local_decls:
            _check_float(vt, allow_floats, code.offset)
            locals_.extend([vt] * cnt)
        base_weight = sum(TYPE_WEIGHT[t] for t in locals_)
        if base_weight > limits.max_frame_weight:
            _err(ValidationCode.FrameWeightExceeded, code.offset,
                 f"params+locals weight {base_weight}")
        checker = _BodyChecker(vmod, limits, fidx, locals_, ft.results,
                               code.offset, base_weight, allow_floats)
        checker.check_body(code.body)
        vmod.frame_weights[fidx] = checker.max_weight
        vmod.local_types[fidx] = tuple(locals_)

    # data section
    for d in mod.datas:
        if vmod.memory_limits is None or d.mem_index != 0:
            _err(ValidationCode.TypeMismatch, d.offset, "unknown memory")
        _const_expr(vmod, d.offset_expr, "i32", d.offset, allow_floats,
                    "data offset")

    return vmod
