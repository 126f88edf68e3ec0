"""Quick tier: one closure per IR instruction, threaded through a block
dispatch loop.

Compilation here is a single pass that binds each instruction to the
instance objects it touches.  There is no source generation and no
bytecode compilation step, which keeps time-to-first-run low; steady-state
speed sits between the interpreter and the optimizing tier.
"""

from .dmir import LOAD_OPS, STORE_OPS, DmirFunction
from .errors import TrapCode, TrapError
from .numerics import checked_apply
from .semantics import BINOPS, CONVERTS, UNOPS

# Return-register convention: the terminator stores the return value in the
# extra slot appended after the real registers, then yields -1 (value) or
# -2 (void).  Keeping it inside regs makes recursion safe.


def _compile_cell(ins, inst):
    op = ins.op
    if op == "gas_charge":
        gs = inst.gas
        n = ins.imm
        return lambda regs: gs.consume(n)
    if op == "const":
        d, v = ins.dest, ins.imm
        return lambda regs: regs.__setitem__(d, v)
    if op == "move":
        d, s = ins.dest, ins.args[0]
        def cell(regs):
            regs[d] = regs[s]
        return cell
    key = (op, ins.ty)
    h = BINOPS.get(key)
    if h is not None:
        d, (a, b) = ins.dest, ins.args
        def cell(regs):
            regs[d] = h(regs[a], regs[b])
        return cell
    h = UNOPS.get(key) or CONVERTS.get(key)
    if h is not None:
        d, a = ins.dest, ins.args[0]
        def cell(regs):
            regs[d] = h(regs[a])
        return cell
    if op in LOAD_OPS:
        acc = inst.memory.accessors[key]
        d, a, off = ins.dest, ins.args[0], ins.imm
        def cell(regs):
            regs[d] = acc(regs[a], off)
        return cell
    if op in STORE_OPS:
        acc = inst.memory.accessors[key]
        (a, v), off = ins.args, ins.imm
        def cell(regs):
            acc(regs[a], off, regs[v])
        return cell
    if op == "select":
        d, (v1, v2, c) = ins.dest, ins.args
        def cell(regs):
            regs[d] = regs[v1] if regs[c] else regs[v2]
        return cell
    if op == "call":
        entries = inst.entries
        f, d, argixs = ins.imm, ins.dest, ins.args
        if d is None:
            def cell(regs):
                entries[f](*[regs[i] for i in argixs])
        else:
            def cell(regs):
                regs[d] = entries[f](*[regs[i] for i in argixs])
        return cell
    if op == "call_host":
        hc = inst.host_calls[ins.imm]
        d, argixs = ins.dest, ins.args
        if d is None:
            def cell(regs):
                hc(*[regs[i] for i in argixs])
        else:
            def cell(regs):
                regs[d] = hc(*[regs[i] for i in argixs])
        return cell
    if op == "call_indirect":
        ri = inst.resolve_indirect
        ti, d = ins.imm, ins.dest
        ix, argixs = ins.args[0], ins.args[1:]
        if d is None:
            def cell(regs):
                ri(ti, regs[ix])(*[regs[i] for i in argixs])
        else:
            def cell(regs):
                regs[d] = ri(ti, regs[ix])(*[regs[i] for i in argixs])
        return cell
    if op == "checked":
        ctype, cop = ins.imm
        d, (a, b) = ins.dest, ins.args
        def cell(regs):
            regs[d] = checked_apply(ctype, cop, regs[a], regs[b])
        return cell
    if op == "global.get":
        glb, d, i = inst.globals, ins.dest, ins.imm
        def cell(regs):
            regs[d] = glb[i]
        return cell
    if op == "global.set":
        glb, i, s = inst.globals, ins.imm, ins.args[0]
        def cell(regs):
            glb[i] = regs[s]
        return cell
    if op == "memory.size":
        mem, d = inst.memory, ins.dest
        def cell(regs):
            regs[d] = mem.size_pages()
        return cell
    if op == "memory.grow":
        mem, d, a = inst.memory, ins.dest, ins.args[0]
        def cell(regs):
            regs[d] = mem.grow(regs[a])
        return cell
    raise AssertionError(f"no cell for {op}")


def _compile_term(t, retslot):
    kind = t.kind
    if kind == "br":
        tgt = t.targets[0]
        return lambda regs: tgt
    if kind == "br_if":
        c = t.args[0]
        taken, fall = t.targets
        return lambda regs: taken if regs[c] else fall
    if kind == "switch":
        c = t.args[0]
        table = t.targets[:-1]
        default = t.targets[-1]
        n = len(table)
        def term(regs):
            i = regs[c]
            return table[i] if i < n else default
        return term
    if kind == "ret":
        if t.args:
            s = t.args[0]
            def term(regs):
                regs[retslot] = regs[s]
                return -1
            return term
        return lambda regs: -2
    code = TrapCode[t.imm]
    def term(regs):
        raise TrapError(code)
    return term


def compile_flat(inst, fn: DmirFunction):
    """Compile one function for one instance; returns (entry, code_size)."""
    retslot = len(fn.reg_types)
    blocks = []
    ncells = 0
    for block in fn.blocks:
        cells = [_compile_cell(ins, inst) for ins in block.instrs]
        cells.append(_compile_term(block.term, retslot))
        ncells += len(cells)
        blocks.append(cells)
    code_size = 8 * ncells + 16 * len(blocks)

    init = list(fn.reg_init) + [None]
    nargs = len(fn.params)
    cs = inst.callstack
    weight = fn.frame_weight

    def entry(*args):
        cs.enter(weight)
        regs = init[:]
        regs[:nargs] = args
        bi = 0
        r = -2
        while bi >= 0:
            for c in blocks[bi]:
                r = c(regs)
            bi = r
        cs.leave(weight)
        return regs[retslot] if r == -1 else None

    return entry, code_size
