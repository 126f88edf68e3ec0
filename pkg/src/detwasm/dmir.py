"""Middle IR: a control flow graph of typed instructions over virtual
registers.

Registers are not SSA; they are assigned from (operand stack slot, type)
pairs during lowering, so every register has a single static type and is
defined before use on every path.  Block 0 is the entry.  Each block carries
straight-line instructions and exactly one terminator.

Float-producing operations canonicalize NaN results (f32 0x7FC00000,
f64 0x7FF8000000000000) as part of their semantics, so values are bit-stable
across execution modes.
"""

from dataclasses import dataclass, field

# instruction opcodes that may transfer control or touch observable state;
# passes must not remove, duplicate, or reorder these
EFFECTFUL_OPS = {
    "call", "call_host", "call_indirect", "checked", "gas_charge",
    "store", "store8", "store16", "store32",
    "load", "load8_s", "load8_u", "load16_s", "load16_u", "load32_s",
    "load32_u", "memory.grow", "global.set",
}

# pure but trapping: never removable, foldable only when the fold succeeds
TRAPPING_PURE_OPS = {
    "div_s", "div_u", "rem_s", "rem_u",
    "trunc_f32_s", "trunc_f32_u", "trunc_f64_s", "trunc_f64_u",
}


@dataclass
class Instr:
    op: str
    ty: str = ""          # result type, or operand type for compares/stores
    dest: object = None   # register index or None
    args: tuple = ()      # operand registers
    imm: object = None    # constant, func index, memarg offset, hook pair, ...


@dataclass
class Term:
    kind: str             # br | br_if | switch | ret | trap
    args: tuple = ()      # condition or switch index register, return values
    targets: tuple = ()   # successor block indices (br_if: taken, fallthrough)
    imm: object = None    # trap code name for trap terminators


@dataclass
class Block:
    instrs: list = field(default_factory=list)
    term: object = None


@dataclass
class DmirFunction:
    func_index: int
    params: tuple
    results: tuple
    reg_types: list
    blocks: list
    nlocals: int = 0        # params + declared locals; registers [0, nlocals)
    frame_weight: int = 0
    reg_init: list = field(default_factory=list)  # typed zero per register

    def new_block(self) -> int:
        self.blocks.append(Block())
        return len(self.blocks) - 1


COMPARE_OPS = {"eq", "ne", "lt_s", "lt_u", "gt_s", "gt_u", "le_s", "le_u",
               "ge_s", "ge_u", "lt", "gt", "le", "ge", "eqz"}
STORE_OPS = {"store", "store8", "store16", "store32"}
LOAD_OPS = {"load", "load8_s", "load8_u", "load16_s", "load16_u",
            "load32_s", "load32_u"}


def dump_function(fn: DmirFunction) -> str:
    """Canonical text form, stable across runs."""
    lines = []
    params = ", ".join(fn.params)
    results = ", ".join(fn.results) if fn.results else "()"
    lines.append(f"func {fn.func_index} ({params}) -> {results}")
    for bi, block in enumerate(fn.blocks):
        lines.append(f"block {bi}:")
        for ins in block.instrs:
            lines.append("  " + format_instr(ins))
        lines.append("  " + format_term(block.term))
    return "\n".join(lines) + "\n"


def format_instr(ins: Instr) -> str:
    op = ins.op
    if op == "gas_charge":
        return f"gas_charge {ins.imm}"
    if op == "const":
        if ins.ty in ("f32", "f64"):
            return f"r{ins.dest} = const.{ins.ty} {ins.imm!r}"
        return f"r{ins.dest} = const.{ins.ty} {ins.imm}"
    if op == "checked":
        ctype, cop = ins.imm
        a, b = ins.args
        return f"r{ins.dest} = checked_{cop}.{ctype} r{a}, r{b}"
    if op in STORE_OPS:
        addr, val = ins.args
        return f"{op}.{ins.ty} r{addr}, r{val} offset={ins.imm}"
    if op in LOAD_OPS:
        return f"r{ins.dest} = {op}.{ins.ty} r{ins.args[0]} offset={ins.imm}"
    if op == "call":
        args = ", ".join(f"r{a}" for a in ins.args)
        lhs = f"r{ins.dest} = " if ins.dest is not None else ""
        return f"{lhs}call f{ins.imm} {args}".rstrip()
    if op == "call_host":
        args = ", ".join(f"r{a}" for a in ins.args)
        lhs = f"r{ins.dest} = " if ins.dest is not None else ""
        return f"{lhs}call_host f{ins.imm} {args}".rstrip()
    if op == "call_indirect":
        idx = ins.args[0]
        args = ", ".join(f"r{a}" for a in ins.args[1:])
        lhs = f"r{ins.dest} = " if ins.dest is not None else ""
        return f"{lhs}call_indirect type{ins.imm} [r{idx}] {args}".rstrip()
    if op == "global.get":
        return f"r{ins.dest} = global.get {ins.imm}"
    if op == "global.set":
        return f"global.set {ins.imm}, r{ins.args[0]}"
    if op in ("memory.size", "memory.grow"):
        args = ", ".join(f"r{a}" for a in ins.args)
        return f"r{ins.dest} = {op} {args}".rstrip()
    args = ", ".join(f"r{a}" for a in ins.args)
    return f"r{ins.dest} = {op}.{ins.ty} {args}"


def format_term(t: Term) -> str:
    if t.kind == "br":
        return f"br {t.targets[0]}"
    if t.kind == "br_if":
        return f"br_if r{t.args[0]}, {t.targets[0]}, {t.targets[1]}"
    if t.kind == "switch":
        table = ", ".join(str(x) for x in t.targets[:-1])
        return f"switch r{t.args[0]} [{table}] default {t.targets[-1]}"
    if t.kind == "ret":
        vals = ", ".join(f"r{a}" for a in t.args)
        return f"ret {vals}".rstrip()
    if t.kind == "trap":
        return f"trap {t.imm}"
    raise ValueError(f"bad terminator {t.kind}")


def verify_function(fn: DmirFunction):
    """Structural invariant check used by tests and after passes.

    Checks register bounds, single-terminator blocks, valid branch targets,
    return arity, and def-before-use on every path (locals count as defined
    at entry because the register file is zero-initialized per type).
    """
    nblocks = len(fn.blocks)
    nregs = len(fn.reg_types)
    assert nblocks > 0, "function needs an entry block"
    for bi, block in enumerate(fn.blocks):
        assert block.term is not None, f"block {bi} lacks a terminator"
        for ins in block.instrs:
            for a in ins.args:
                assert 0 <= a < nregs, f"bad register r{a} in block {bi}"
            if ins.dest is not None:
                assert 0 <= ins.dest < nregs
        t = block.term
        for tgt in t.targets:
            assert 0 <= tgt < nblocks, f"block {bi} targets missing block {tgt}"
        for a in t.args:
            assert 0 <= a < nregs
        if t.kind == "ret":
            assert len(t.args) == len(fn.results)

    # must-be-defined forward dataflow; joins intersect
    entry_defs = frozenset(range(fn.nlocals))
    avail = [None] * nblocks
    avail[0] = entry_defs
    work = [0]
    while work:
        bi = work.pop()
        cur = set(avail[bi])
        block = fn.blocks[bi]
        for ins in block.instrs:
            for a in ins.args:
                assert a in cur, f"r{a} used before definition in block {bi}"
            if ins.dest is not None:
                cur.add(ins.dest)
        for a in block.term.args:
            assert a in cur, f"r{a} used before definition in block {bi} terminator"
        out = frozenset(cur)
        for tgt in block.term.targets:
            old = avail[tgt]
            if old is None:
                avail[tgt] = out
                work.append(tgt)
            else:
                merged = old & out
                if merged != old:
                    avail[tgt] = merged
                    work.append(tgt)
    return True
