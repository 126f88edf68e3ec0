"""Basic-block gas metering over the middle IR.

Each block is charged once, on entry, for everything it can execute.  The
charge is materialized as a gas_charge pseudo-instruction at the head of the
block so that later passes and all execution tiers see the same schedule.
"""

from dataclasses import dataclass, field

from .dmir import Block, DmirFunction, Instr

_CALL_OPS = ("call", "call_indirect", "call_host")

# Gas counters are 64-bit; a single block can never legitimately get close.
_MAX_BLOCK_COST = (1 << 63) - 1


@dataclass
class CostModel:
    """Deterministic opcode cost table.

    Every non-terminator instruction costs `default_cost` unless overridden;
    terminators are free so that empty forwarding blocks stay free.  Calls
    pay a fixed scheduling overhead on top of the opcode cost.
    """

    default_cost: int = 1
    call_overhead: int = 2
    terminator_cost: int = 0
    overrides: dict = field(default_factory=dict)

    def instr_cost(self, instr: Instr) -> int:
        if instr.op == "gas_charge":
            return 0
        cost = self.overrides.get(instr.op, self.default_cost)
        if instr.op in _CALL_OPS:
            cost += self.call_overhead
        return cost


def block_cost(block: Block, model: CostModel) -> int:
    total = sum(model.instr_cost(i) for i in block.instrs)
    total += model.terminator_cost
    if total > _MAX_BLOCK_COST:
        raise AssertionError("block cost exceeds the 64-bit gas domain")
    return total


def insert_metering(fn: DmirFunction, model: CostModel) -> DmirFunction:
    """Prefix every block with its entry charge.  Mutates fn in place."""
    for block in fn.blocks:
        cost = block_cost(block, model)
        if cost:
            block.instrs.insert(0, Instr(op="gas_charge", imm=cost))
    return fn
