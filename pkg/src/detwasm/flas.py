"""Optimizing tier: generates Python source per function, compiles it once
per engine, and binds it per instance.

The generated function keeps registers in locals, dispatches blocks through
an integer state variable, inlines the common integer operators, the gas
charge sequence, and the call-stack accounting, and substitutes known
constants into operand positions.  Anything with trap semantics or rounding
subtleties goes through prebound helpers from the shared semantics tables,
so this tier cannot drift from the interpreter on edge cases.
"""

import functools
import math
import os

from .dmir import LOAD_OPS, STORE_OPS, Block, DmirFunction
from .errors import ResourceLimitError, TrapCode, TrapError
from .numerics import CANON_NAN32, CANON_NAN64, checked_apply
from .passes import block_live_out
from .semantics import BINOPS, CONVERTS, UNOPS

MAX_ARTIFACT_BYTES = 16 << 20

_MASK = {"i32": 4294967295, "i64": 18446744073709551615}
_SIGN = {"i32": 2147483648, "i64": 9223372036854775808}
_SHIFT = {"i32": 31, "i64": 63}

# ops inlined as plain expressions; everything else calls a helper
_INLINE_MASKED = {"add": "+", "sub": "-", "mul": "*"}
_INLINE_BARE = {"and": "&", "or": "|", "xor": "^"}
_CMP_U = {"eq": "==", "ne": "!=", "lt_u": "<", "gt_u": ">",
          "le_u": "<=", "ge_u": ">="}
_CMP_S = {"lt_s": "<", "gt_s": ">", "le_s": "<=", "ge_s": ">="}
_CMP_F = {"eq": "==", "ne": "!=", "lt": "<", "gt": ">", "le": "<=", "ge": ">="}


def _build_env():
    env = {
        "TrapError": TrapError,
        "CN32": CANON_NAN32,
        "CN64": CANON_NAN64,
        "INF": math.inf,
        "NINF": -math.inf,
    }
    for code in TrapCode:
        env[f"T.{code.name}"] = code
    for (op, ty), fn in BINOPS.items():
        env[f"{op}.{ty}"] = fn
    for (op, ty), fn in UNOPS.items():
        env[f"{op}.{ty}"] = fn
    for (op, ty), fn in CONVERTS.items():
        env[f"cv.{op}.{ty}"] = fn
    for ctype in ("i32", "u32", "i64", "u64"):
        for op in ("add", "sub", "mul"):
            env[f"ck.{ctype}.{op}"] = functools.partial(checked_apply,
                                                        ctype, op)
    return env


ENV = _build_env()


def _mangle(key: str) -> str:
    return "_" + key.replace(".", "_")


class _Gen:
    def __init__(self, fn: DmirFunction, miscompile: bool):
        self.fn = fn
        self.miscompile = miscompile
        self.env_bound = {}
        self.inst_bound = {}
        self.consts = {}          # reg -> known constant, per block
        self.live_out = block_live_out(fn)
        self.bi = 0

    # ---------------------------------------------------------- bindings

    def env_ref(self, key: str) -> str:
        name = self.env_bound.get(key)
        if name is None:
            name = _mangle(key)
            self.env_bound[key] = name
        return name

    def inst_ref(self, name: str, expr: str) -> str:
        if name not in self.inst_bound:
            self.inst_bound[name] = expr
        return name

    def mem_ref(self, op: str, ty: str) -> str:
        self.inst_ref("_acc", "inst.memory.accessors")
        return self.inst_ref(f"_m_{op}_{ty}",
                             f'_acc[("{op}", "{ty}")]')

    # ---------------------------------------------------------- operands

    def _float_lit(self, v: float, ty: str) -> str:
        if v != v:
            return self.env_ref("CN32" if ty == "f32" else "CN64")
        if v == math.inf:
            return self.env_ref("INF")
        if v == -math.inf:
            return self.env_ref("NINF")
        return repr(v)

    def arg(self, a: int) -> str:
        """Operand expression: the register, or its known constant."""
        if a in self.consts:
            v = self.consts[a]
            if isinstance(v, float):
                return self._float_lit(v, self.fn.reg_types[a])
            return str(v)
        return f"r{a}"

    def arg_biased(self, a: int, sign: int) -> str:
        # signed comparison through the unsigned-bias trick
        if a in self.consts:
            return str(self.consts[a] ^ sign)
        return f"(r{a} ^ {sign})"

    def _set_dest(self, d):
        self.consts.pop(d, None)

    # ------------------------------------------------------------ pieces

    def gen_instr(self, ins, out):
        op = ins.op
        if op == "gas_charge":
            gs = self.inst_ref("gs", "inst.gas")
            te = self.env_ref("TrapError")
            tc = self.env_ref("T.GasExhausted")
            out.append(f"_g = {gs}.remaining - {ins.imm}")
            out.append("if _g < 0:")
            out.append(f"    {gs}.remaining = 0")
            out.append(f"    raise {te}({tc})")
            out.append(f"{gs}.remaining = _g")
            return
        d = ins.dest
        a = ins.args
        if op == "const":
            # later reads in this block use the literal; storing only
            # matters if another block reads the register
            self.consts[d] = ins.imm
            if d in self.live_out[self.bi]:
                if ins.ty in ("f32", "f64"):
                    out.append(f"r{d} = {self._float_lit(ins.imm, ins.ty)}")
                else:
                    out.append(f"r{d} = {ins.imm}")
            return
        if op == "move":
            if a[0] in self.consts:
                self.consts[d] = self.consts[a[0]]
                if d in self.live_out[self.bi]:
                    out.append(f"r{d} = {self.arg(a[0])}")
            else:
                self._set_dest(d)
                out.append(f"r{d} = r{a[0]}")
            return
        ty = ins.ty
        if ty in ("i32", "i64"):
            if op in _INLINE_MASKED:
                expr = (f"({self.arg(a[0])} {_INLINE_MASKED[op]} "
                        f"{self.arg(a[1])}) & {_MASK[ty]}")
                if op == "add" and ty == "i32" and self.miscompile:
                    expr = (f"({self.arg(a[0])} + {self.arg(a[1])} + 1)"
                            f" & {_MASK[ty]}")
                out.append(f"r{d} = {expr}")
                self._set_dest(d)
                return
            if op in _INLINE_BARE:
                out.append(f"r{d} = {self.arg(a[0])} {_INLINE_BARE[op]} "
                           f"{self.arg(a[1])}")
                self._set_dest(d)
                return
            if op in _CMP_U:
                out.append(f"r{d} = 1 if {self.arg(a[0])} {_CMP_U[op]} "
                           f"{self.arg(a[1])} else 0")
                self._set_dest(d)
                return
            if op in _CMP_S:
                s = _SIGN[ty]
                out.append(f"r{d} = 1 if {self.arg_biased(a[0], s)} "
                           f"{_CMP_S[op]} {self.arg_biased(a[1], s)} else 0")
                self._set_dest(d)
                return
            if op == "eqz":
                out.append(f"r{d} = 0 if {self.arg(a[0])} else 1")
                self._set_dest(d)
                return
            if op in ("shl", "shr_u", "shr_s"):
                if a[1] in self.consts:
                    amt = str(self.consts[a[1]] & _SHIFT[ty])
                else:
                    amt = f"(r{a[1]} & {_SHIFT[ty]})"
                if op == "shl":
                    out.append(f"r{d} = ({self.arg(a[0])} << {amt})"
                               f" & {_MASK[ty]}")
                elif op == "shr_u":
                    out.append(f"r{d} = {self.arg(a[0])} >> {amt}")
                else:
                    s = _SIGN[ty]
                    out.append(f"r{d} = (({self.arg_biased(a[0], s)} - {s})"
                               f" >> {amt}) & {_MASK[ty]}")
                self._set_dest(d)
                return
        if ty in ("f32", "f64") and op in _CMP_F:
            out.append(f"r{d} = 1 if {self.arg(a[0])} {_CMP_F[op]} "
                       f"{self.arg(a[1])} else 0")
            self._set_dest(d)
            return
        if ty == "f64" and op in ("add", "sub", "mul"):
            cn = self.env_ref("CN64")
            sym = {"add": "+", "sub": "-", "mul": "*"}[op]
            out.append(f"_t = {self.arg(a[0])} {sym} {self.arg(a[1])}")
            out.append(f"r{d} = _t if _t == _t else {cn}")
            self._set_dest(d)
            return
        if ty == "f64" and op in ("neg", "abs"):
            cn = self.env_ref("CN64")
            x = self.arg(a[0])
            expr = f"-{x}" if op == "neg" else f"abs({x})"
            out.append(f"_t = {expr}")
            out.append(f"r{d} = _t if _t == _t else {cn}")
            self._set_dest(d)
            return
        key = (op, ty)
        if key in BINOPS:
            h = self.env_ref(f"{op}.{ty}")
            out.append(f"r{d} = {h}({self.arg(a[0])}, {self.arg(a[1])})")
            self._set_dest(d)
            return
        if key in UNOPS:
            h = self.env_ref(f"{op}.{ty}")
            out.append(f"r{d} = {h}({self.arg(a[0])})")
            self._set_dest(d)
            return
        if key in CONVERTS:
            if op == "wrap_i64":
                out.append(f"r{d} = {self.arg(a[0])} & 4294967295")
            elif op == "extend_i32_u":
                out.append(f"r{d} = {self.arg(a[0])}")
            else:
                h = self.env_ref(f"cv.{op}.{ty}")
                out.append(f"r{d} = {h}({self.arg(a[0])})")
            self._set_dest(d)
            return
        if op in LOAD_OPS:
            acc = self.mem_ref(op, ty)
            out.append(f"r{d} = {acc}({self.arg(a[0])}, {ins.imm})")
            self._set_dest(d)
            return
        if op in STORE_OPS:
            acc = self.mem_ref(op, ty)
            out.append(f"{acc}({self.arg(a[0])}, {ins.imm}, {self.arg(a[1])})")
            return
        if op == "select":
            out.append(f"r{d} = {self.arg(a[0])} if {self.arg(a[2])} "
                       f"else {self.arg(a[1])}")
            self._set_dest(d)
            return
        if op == "call":
            entries = self.inst_ref("entries", "inst.entries")
            call = (f"{entries}[{ins.imm}](" +
                    ", ".join(self.arg(x) for x in a) + ")")
            out.append(call if d is None else f"r{d} = {call}")
            if d is not None:
                self._set_dest(d)
            return
        if op == "call_host":
            h = self.inst_ref(f"_h{ins.imm}", f"inst.host_calls[{ins.imm}]")
            call = f"{h}(" + ", ".join(self.arg(x) for x in a) + ")"
            out.append(call if d is None else f"r{d} = {call}")
            if d is not None:
                self._set_dest(d)
            return
        if op == "call_indirect":
            ri = self.inst_ref("_ri", "inst.resolve_indirect")
            call = (f"{ri}({ins.imm}, {self.arg(a[0])})(" +
                    ", ".join(self.arg(x) for x in a[1:]) + ")")
            out.append(call if d is None else f"r{d} = {call}")
            if d is not None:
                self._set_dest(d)
            return
        if op == "checked":
            ctype, cop = ins.imm
            h = self.env_ref(f"ck.{ctype}.{cop}")
            out.append(f"r{d} = {h}({self.arg(a[0])}, {self.arg(a[1])})")
            self._set_dest(d)
            return
        if op == "global.get":
            glb = self.inst_ref("glb", "inst.globals")
            out.append(f"r{d} = {glb}[{ins.imm}]")
            self._set_dest(d)
            return
        if op == "global.set":
            glb = self.inst_ref("glb", "inst.globals")
            out.append(f"{glb}[{ins.imm}] = {self.arg(a[0])}")
            return
        if op == "memory.size":
            m = self.inst_ref("_msize", "inst.memory.size_pages")
            out.append(f"r{d} = {m}()")
            self._set_dest(d)
            return
        if op == "memory.grow":
            m = self.inst_ref("_mgrow", "inst.memory.grow")
            out.append(f"r{d} = {m}({self.arg(a[0])})")
            self._set_dest(d)
            return
        raise AssertionError(f"no code template for {op}")

    def gen_term(self, t, out):
        if t.kind == "br":
            out.append(f"bb = {t.targets[0]}")
            return
        if t.kind == "br_if":
            out.append(f"bb = {t.targets[0]} if {self.arg(t.args[0])} "
                       f"else {t.targets[1]}")
            return
        if t.kind == "switch":
            n = len(t.targets) - 1
            if n == 0:
                out.append(f"bb = {t.targets[0]}")
                return
            table = ", ".join(str(x) for x in t.targets[:-1])
            out.append(f"_i = {self.arg(t.args[0])}")
            out.append(f"bb = ({table},)[_i] if _i < {n} else {t.targets[-1]}")
            return
        if t.kind == "ret":
            cs = self.inst_ref("cs", "inst.callstack")
            out.append(f"{cs}.depth -= 1")
            out.append(f"{cs}.weight_used -= {self.fn.frame_weight}")
            out.append(f"return {self.arg(t.args[0])}" if t.args else "return")
            return
        te = self.env_ref("TrapError")
        tc = self.env_ref(f"T.{t.imm}")
        out.append(f"raise {te}({tc})")

    # a compare feeding only the branch can become the branch condition

    def _fusible(self, ins) -> bool:
        if ins.ty in ("i32", "i64"):
            return (ins.op == "eqz" or ins.op in _CMP_U
                    or ins.op in _CMP_S)
        if ins.ty in ("f32", "f64"):
            return ins.op in _CMP_F
        return False

    def cond_expr(self, ins):
        """(python expr, swap targets) for a fusible compare."""
        op, a = ins.op, ins.args
        if op == "eqz":
            return self.arg(a[0]), True
        if ins.ty in ("f32", "f64"):
            return (f"{self.arg(a[0])} {_CMP_F[op]} {self.arg(a[1])}",
                    False)
        if op in _CMP_U:
            return (f"{self.arg(a[0])} {_CMP_U[op]} {self.arg(a[1])}",
                    False)
        s = _SIGN[ins.ty]
        return (f"{self.arg_biased(a[0], s)} {_CMP_S[op]} "
                f"{self.arg_biased(a[1], s)}", False)

    # ----------------------------------------------------- block layout

    _INLINE_DEPTH = 8

    def _can_consume(self, tgt: int, depth: int) -> bool:
        # single-predecessor target: emit it inside this arm and drop
        # its own dispatch arm
        return (depth < self._INLINE_DEPTH and tgt != 0
                and self.pred_count[tgt] == 1
                and tgt not in self.rendered
                and tgt not in self.consumed)

    def _is_tiny_ret(self, tgt: int) -> bool:
        blk = self.fn.blocks[tgt]
        return blk.term.kind == "ret" and len(blk.instrs) <= 2

    def _emit_jump(self, tgt: int, depth: int):
        if self._can_consume(tgt, depth):
            self.consumed.add(tgt)
            return self.render_block(tgt, depth + 1)
        if depth < self._INLINE_DEPTH and self._is_tiny_ret(tgt):
            # duplicating a return block is charge-safe: its gas charge
            # still runs exactly once per execution
            return self.render_block(tgt, depth + 1)
        self.bb_targets.add(tgt)
        return [f"bb = {tgt}"]

    def render_block(self, bi: int, depth: int):
        self.bi = bi
        self.rendered.add(bi)
        block = self.fn.blocks[bi]
        lines = []
        instrs = block.instrs
        t = block.term
        fuse = None
        if t.kind == "br_if" and instrs:
            last = instrs[-1]
            if (last.dest == t.args[0]
                    and last.dest not in self.live_out[bi]
                    and self._fusible(last)):
                fuse = last
                instrs = instrs[:-1]
        for ins in instrs:
            self.gen_instr(ins, lines)

        if t.kind == "br":
            lines.extend(self._emit_jump(t.targets[0], depth))
            return lines
        if t.kind == "br_if":
            if fuse is not None:
                expr, swap = self.cond_expr(fuse)
                t0, t1 = t.targets
                if swap:
                    t0, t1 = t1, t0
            else:
                expr = self.arg(t.args[0])
                t0, t1 = t.targets
            plain = (not self._can_consume(t0, depth)
                     and not self._can_consume(t1, depth)
                     and not self._is_tiny_ret(t0)
                     and not self._is_tiny_ret(t1))
            if plain:
                self.bb_targets.update((t0, t1))
                lines.append(f"bb = {t0} if {expr} else {t1}")
                return lines
            saved = dict(self.consts)
            lines.append(f"if {expr}:")
            lines.extend("    " + ln for ln in self._emit_jump(t0, depth))
            self.consts = dict(saved)
            self.bi = bi
            lines.append("else:")
            lines.extend("    " + ln for ln in self._emit_jump(t1, depth))
            self.consts = saved
            self.bi = bi
            return lines
        if t.kind == "switch":
            self.bb_targets.update(t.targets)
        self.gen_term(t, lines)
        return lines

    # ---------------------------------------------------------- assembly

    def generate(self) -> str:
        fn = self.fn
        self.pred_count = [0] * len(fn.blocks)
        self.pred_count[0] += 1
        for b in fn.blocks:
            for tgt in b.term.targets:
                self.pred_count[tgt] += 1
        self.consumed = set()
        self.rendered = set()
        self.bb_targets = set()
        arm_map = {}
        for bi in range(len(fn.blocks)):
            if bi in self.consumed:
                continue
            self.consts = {}
            arm_map[bi] = self.render_block(bi, 0)
        # arms never named by any bb assignment are unreachable now that
        # their predecessors inline or return directly
        arms = [(bi, lines) for bi, lines in sorted(arm_map.items())
                if bi == 0 or bi in self.bb_targets]

        cs = self.inst_ref("cs", "inst.callstack")
        maxd = self.inst_ref("_maxd", "inst.callstack.max_depth")
        maxw = self.inst_ref("_maxw", "inst.callstack.weight_budget")
        te = self.env_ref("TrapError")
        tstack = self.env_ref("T.WasmCallStackExceed")
        nparams = len(fn.params)
        params = ", ".join(f"r{i}" for i in range(nparams))
        body = [f"def f({params}):",
                f"    _d = {cs}.depth + 1",
                f"    _w = {cs}.weight_used + {fn.frame_weight}",
                f"    if _d > {maxd} or _w > {maxw}:",
                f"        raise {te}({tstack})",
                f"    {cs}.depth = _d",
                f"    {cs}.weight_used = _w"]
        # operand slot registers (>= nlocals) are written before read on
        # every path; only declared locals need a zero
        ints = [i for i in range(nparams, fn.nlocals)
                if fn.reg_types[i] in ("i32", "i64")]
        floats = [i for i in range(nparams, fn.nlocals)
                  if fn.reg_types[i] in ("f32", "f64")]
        for group, zero in ((ints, "0"), (floats, "0.0")):
            for start in range(0, len(group), 16):
                chain = " = ".join(f"r{i}" for i in group[start:start + 16])
                body.append(f"    {chain} = {zero}")

        if len(arms) == 1 and not self.bb_targets:
            # everything inlined into the entry arm and nothing jumps:
            # no dispatcher needed
            body.extend("    " + ln for ln in arms[0][1])
            body.append("    raise SystemError('fell through')")
        elif len(arms) <= 256:
            body.append("    bb = 0")
            body.append("    while True:")
            kw = "if"
            for bi, lines in arms:
                body.append(f"        {kw} bb == {bi}:")
                body.extend("            " + ln for ln in lines)
                kw = "elif"
            body.append("        else:")
            body.append("            raise SystemError(bb)")
        else:
            # two-level dispatch: deep elif chains blow up the compiler
            body.append("    bb = 0")
            body.append("    while True:")
            kw = "if"
            for gstart in range(0, len(arms), 256):
                group = arms[gstart:gstart + 256]
                body.append(f"        {kw} bb <= {group[-1][0]}:")
                kw2 = "if"
                for bi, lines in group:
                    body.append(f"            {kw2} bb == {bi}:")
                    body.extend("                " + ln for ln in lines)
                    kw2 = "elif"
                kw = "elif"
            body.append("        else:")
            body.append("            raise SystemError(bb)")

        src = ["def _make(inst, env):"]
        for key, name in self.env_bound.items():
            src.append(f"    {name} = env[{key!r}]")
        for name, expr in self.inst_bound.items():
            src.append(f"    {name} = {expr}")
        src.extend("    " + ln for ln in body)
        src.append("    return f")
        return "\n".join(src) + "\n"


def _find_code(outer, name):
    for c in outer.co_consts:
        if hasattr(c, "co_code"):
            if c.co_name == name:
                return c
            inner = _find_code(c, name)
            if inner is not None:
                return inner
    return None


class FlasArtifact:
    """Engine-level compiled form; bind() attaches it to one instance."""

    __slots__ = ("func_index", "source", "_code", "code_size")

    def __init__(self, func_index, source, code, code_size):
        self.func_index = func_index
        self.source = source
        self._code = code
        self.code_size = code_size

    def bind(self, inst):
        ns = {}
        exec(self._code, ns)
        return ns["_make"](inst, ENV)


def miscompile_requested() -> bool:
    return os.environ.get("DETWASM_TEST_MISCOMPILE") == "1"


def compile_flas(fn: DmirFunction) -> FlasArtifact:
    source = _Gen(fn, miscompile_requested()).generate()
    if len(source) > MAX_ARTIFACT_BYTES:
        raise ResourceLimitError(
            f"generated source for function {fn.func_index} exceeds "
            f"{MAX_ARTIFACT_BYTES} bytes")
    code = compile(source, f"<tier2 f{fn.func_index}>", "exec")
    inner = _find_code(code, "f")
    code_size = len(inner.co_code) + 8 * len(inner.co_consts)
    if code_size > MAX_ARTIFACT_BYTES:
        raise ResourceLimitError(
            f"compiled artifact for function {fn.func_index} exceeds "
            f"{MAX_ARTIFACT_BYTES} bytes")
    return FlasArtifact(fn.func_index, source, code, code_size)


def clone_function(fn: DmirFunction) -> DmirFunction:
    """Fresh blocks and instruction lists so passes cannot disturb the
    unoptimized form the other tiers execute."""
    blocks = [Block(list(b.instrs), b.term) for b in fn.blocks]
    return DmirFunction(fn.func_index, fn.params, fn.results,
                        list(fn.reg_types), blocks, fn.nlocals,
                        fn.frame_weight, list(fn.reg_init))
