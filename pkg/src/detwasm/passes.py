"""Middle IR cleanup passes used by the optimizing tier.

All passes preserve the gas schedule: gas_charge instructions are pinned
where metering placed them, and only literally adjacent charges inside one
block may be coalesced.  Moving a charge across any other instruction would
change the gas total observable at a mid-block trap.
"""

from .dmir import (EFFECTFUL_OPS, TRAPPING_PURE_OPS, Block, DmirFunction,
                   Instr, Term)
from .semantics import BINOPS, CONVERTS, UNOPS

_PINNED = EFFECTFUL_OPS | {"gas_charge"}


def _resolve(copies, reg):
    return copies.get(reg, reg)


def fold_block(fn: DmirFunction, block: Block) -> bool:
    """Block-local constant folding and copy propagation."""
    consts = {}
    copies = {}
    changed = False
    out = []

    def kill(reg):
        consts.pop(reg, None)
        copies.pop(reg, None)
        for r in [r for r, s in copies.items() if s == reg]:
            del copies[r]

    for ins in block.instrs:
        if ins.op == "gas_charge":
            out.append(ins)
            continue
        args = tuple(_resolve(copies, a) for a in ins.args)
        if args != ins.args:
            ins = Instr(ins.op, ins.ty, ins.dest, args, ins.imm)
            changed = True
        if ins.op == "const":
            kill(ins.dest)
            consts[ins.dest] = ins.imm
            out.append(ins)
            continue
        if ins.op == "move":
            src = ins.args[0]
            if src == ins.dest:
                changed = True
                continue
            kill(ins.dest)
            if src in consts:
                val = consts[src]
                out.append(Instr("const", ins.ty, ins.dest, (), val))
                consts[ins.dest] = val
                changed = True
            else:
                copies[ins.dest] = src
                out.append(ins)
            continue
        if ins.op == "select" and args[2] in consts:
            chosen = args[0] if consts[args[2]] else args[1]
            kill(ins.dest)
            if chosen in consts:
                val = consts[chosen]
                out.append(Instr("const", ins.ty, ins.dest, (), val))
                consts[ins.dest] = val
            elif chosen == ins.dest:
                pass
            else:
                copies[ins.dest] = chosen
                out.append(Instr("move", ins.ty, ins.dest, (chosen,)))
            changed = True
            continue
        folded = None
        if ins.op not in TRAPPING_PURE_OPS and all(a in consts for a in args):
            key = (ins.op, ins.ty)
            if len(args) == 2 and key in BINOPS:
                folded = BINOPS[key](consts[args[0]], consts[args[1]])
            elif len(args) == 1 and key in UNOPS:
                folded = UNOPS[key](consts[args[0]])
            elif len(args) == 1 and key in CONVERTS:
                folded = CONVERTS[key](consts[args[0]])
        if folded is not None:
            kill(ins.dest)
            out.append(Instr("const", ins.ty, ins.dest, (), folded))
            consts[ins.dest] = folded
            changed = True
            continue
        if ins.dest is not None:
            kill(ins.dest)
        out.append(ins)

    block.instrs = out
    t = block.term
    targs = tuple(_resolve(copies, a) for a in t.args)
    if targs != t.args:
        block.term = t = Term(t.kind, targs, t.targets, t.imm)
        changed = True
    if t.kind == "br_if":
        if t.targets[0] == t.targets[1]:
            block.term = Term("br", (), (t.targets[0],))
            changed = True
        elif t.args[0] in consts:
            tgt = t.targets[0] if consts[t.args[0]] else t.targets[1]
            block.term = Term("br", (), (tgt,))
            changed = True
    elif t.kind == "switch" and t.args[0] in consts:
        idx = consts[t.args[0]]
        table = t.targets[:-1]
        tgt = table[idx] if idx < len(table) else t.targets[-1]
        block.term = Term("br", (), (tgt,))
        changed = True
    return changed


def block_live_out(fn: DmirFunction):
    """Registers read by some later block, per block.  Terminator operands
    count as in-block reads and are not included."""
    nblocks = len(fn.blocks)
    live_in = [frozenset()] * nblocks
    preds = [[] for _ in range(nblocks)]
    for bi, b in enumerate(fn.blocks):
        for tgt in b.term.targets:
            preds[tgt].append(bi)

    def flow(bi):
        live = set()
        for tgt in fn.blocks[bi].term.targets:
            live |= live_in[tgt]
        live.update(fn.blocks[bi].term.args)
        for ins in reversed(fn.blocks[bi].instrs):
            if ins.dest is not None:
                live.discard(ins.dest)
            live.update(ins.args)
        return frozenset(live)

    work = list(range(nblocks))
    while work:
        bi = work.pop()
        new = flow(bi)
        if new != live_in[bi]:
            live_in[bi] = new
            work.extend(p for p in preds[bi] if p not in work)

    out = []
    for b in fn.blocks:
        live = set()
        for tgt in b.term.targets:
            live |= live_in[tgt]
        out.append(live)
    return out


def dead_code_elim(fn: DmirFunction) -> bool:
    """Remove pure instructions whose result is never read."""
    live_out = block_live_out(fn)
    changed = False
    for bi, b in enumerate(fn.blocks):
        live = set(live_out[bi])
        live.update(b.term.args)
        kept = []
        for ins in reversed(b.instrs):
            if ins.op in _PINNED or ins.op in TRAPPING_PURE_OPS:
                kept.append(ins)
                live.update(ins.args)
                continue
            if ins.dest is not None and ins.dest not in live:
                changed = True
                continue
            kept.append(ins)
            if ins.dest is not None:
                live.discard(ins.dest)
            live.update(ins.args)
        kept.reverse()
        b.instrs = kept
    return changed


def merge_blocks(fn: DmirFunction) -> bool:
    """Splice single-predecessor fallthrough chains.  The spliced block's
    gas charge stays at the splice point."""
    nblocks = len(fn.blocks)
    pred_count = [0] * nblocks
    for b in fn.blocks:
        for tgt in b.term.targets:
            pred_count[tgt] += 1
    changed = False
    merged = set()
    for bi in range(nblocks):
        if bi in merged:
            continue
        b = fn.blocks[bi]
        while (b.term.kind == "br"):
            tgt = b.term.targets[0]
            if tgt == bi or tgt == 0 or pred_count[tgt] != 1 or tgt in merged:
                break
            victim = fn.blocks[tgt]
            b.instrs.extend(victim.instrs)
            b.term = victim.term
            merged.add(tgt)
            victim.instrs = []
            changed = True
    return changed


def drop_unreachable(fn: DmirFunction) -> bool:
    reach = {0}
    work = [0]
    while work:
        for tgt in fn.blocks[work.pop()].term.targets:
            if tgt not in reach:
                reach.add(tgt)
                work.append(tgt)
    if len(reach) == len(fn.blocks):
        return False
    order = [bi for bi in range(len(fn.blocks)) if bi in reach]
    remap = {old: new for new, old in enumerate(order)}
    blocks = []
    for old in order:
        b = fn.blocks[old]
        t = b.term
        b.term = Term(t.kind, t.args, tuple(remap[x] for x in t.targets), t.imm)
        blocks.append(b)
    fn.blocks = blocks
    return True


def coalesce_charges(fn: DmirFunction) -> bool:
    changed = False
    for b in fn.blocks:
        out = []
        for ins in b.instrs:
            if (ins.op == "gas_charge" and out
                    and out[-1].op == "gas_charge"):
                out[-1] = Instr("gas_charge", imm=out[-1].imm + ins.imm)
                changed = True
            else:
                out.append(ins)
        b.instrs = out
    return changed


def run_pipeline(fn: DmirFunction) -> DmirFunction:
    """Iterate to a fixpoint; a second invocation is a no-op."""
    for _ in range(64):
        changed = False
        for b in fn.blocks:
            changed |= fold_block(fn, b)
        changed |= dead_code_elim(fn)
        changed |= merge_blocks(fn)
        changed |= drop_unreachable(fn)
        changed |= coalesce_charges(fn)
        if not changed:
            return fn
    raise AssertionError("pass pipeline failed to converge")
