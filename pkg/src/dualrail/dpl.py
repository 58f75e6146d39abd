"""Dual-rail-with-precharge code transformation.

A logical bit is encoded one-hot on two rails: encode(1) sets bit_t,
encode(0) sets bit_f, every other bit is zero.  Each sensitive logical
instruction is expanded into a macro that packs the two encoded operands
into a look-up-table index and fetches the encoded result, precharging
every written location to zero first so that each update flips exactly one
bit regardless of the data.  ``not`` needs no table: xor with the rail mask
swaps the rails in place, done through a precharged scratch register.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .asm import (
    AddressRef,
    Immediate,
    Instruction,
    Line,
    LOGICAL_OPS,
    MemDirect,
    MemIndirect,
    Program,
    Register,
)

PROLOGUE_TAG = "prologue"

EXPAND = "expand"
REWRITE_NOT = "rewrite_not"
KEEP = "keep"


class TransformError(ValueError):
    pass


@dataclass(frozen=True)
class DplConfig:
    """Encoding layout and transformer resources.

    bit_f/bit_t: rail bit indices (False/True).  pattern_lo: least
    significant bit of the 4-bit LUT index field; must equal min(bit_f,
    bit_t).  scratch: the three macro registers (index, loaded value,
    fetched result roles); zero_reg is kept at zero and used for precharge.
    """

    bit_f: int = 1
    bit_t: int = 0
    pattern_lo: int = 0
    lut_base: int = 0
    compact: bool = False
    scratch: tuple[int, int, int] = (20, 21, 22)
    zero_reg: int = 0

    @property
    def span(self) -> int:
        """Width of the bit field holding one encoded rail pair."""
        return abs(self.bit_f - self.bit_t) + 1

    @property
    def mask(self) -> int:
        return (1 << self.bit_f) | (1 << self.bit_t)

    @property
    def shifts(self) -> int:
        """Left shifts needed to stack operand a's field above b's."""
        return 4 - self.span

    @property
    def region_size(self) -> int:
        """Address span reserved per table: 2^(pattern_lo + 2*span)."""
        return 1 << (self.pattern_lo + 2 * self.span)

    @property
    def tables_per_region(self) -> int:
        return (1 << self.pattern_lo) if self.compact else 1

    def validate(self, word_width: int = 8) -> None:
        if self.bit_f == self.bit_t:
            raise TransformError("rails must use distinct bits")
        if self.span not in (2, 3):
            raise TransformError(f"rail span {self.span} unsupported (pair field must fit 4 bits)")
        if max(self.bit_f, self.bit_t) >= word_width:
            raise TransformError("rail bit outside the word")
        if self.pattern_lo + 2 * self.span > word_width:
            raise TransformError(
                f"packed index field [{self.pattern_lo},{self.pattern_lo + 2 * self.span})"
                f" does not fit a {word_width}-bit index register"
            )
        if self.pattern_lo != min(self.bit_f, self.bit_t):
            raise TransformError(
                f"pattern offset {self.pattern_lo} inconsistent with rails "
                f"{{{self.bit_f},{self.bit_t}}}"
            )
        field_mask = ((1 << 2 * self.span) - 1) << self.pattern_lo
        if self.lut_base & field_mask:
            raise TransformError(f"table base {self.lut_base} misaligned for the index field")
        if self.compact and self.pattern_lo == 0:
            raise TransformError("compact tables need a nonzero pattern offset")
        ids = (*self.scratch, self.zero_reg)
        if len(set(ids)) != 4:
            raise TransformError("scratch registers and zero register must be distinct")

    def encode(self, bit: int) -> int:
        if bit not in (0, 1):
            raise TransformError(f"cannot encode non-bit literal {bit}")
        return 1 << (self.bit_t if bit else self.bit_f)

    def decode(self, word: int) -> int:
        """Inverse of encode; rejects words that are not one-hot on the rails."""
        if word == 1 << self.bit_t:
            return 1
        if word == 1 << self.bit_f:
            return 0
        raise TransformError(f"word {word:#x} is not a valid rail encoding")

    def pack(self, ea: int, eb: int) -> int:
        """LUT index offset for encoded operands (a's field above b's)."""
        return (ea << self.shifts) | eb

    def table_base(self, op: str) -> int:
        k = ("and", "orr", "xor").index(op)
        region, slot = divmod(k, self.tables_per_region)
        return self.lut_base + region * self.region_size + slot


def encode(bit: int, cfg: DplConfig) -> int:
    """Encoded word for a logical bit under cfg."""
    return cfg.encode(bit)


_OP_FUNC = {"and": lambda a, b: a & b, "orr": lambda a, b: a | b, "xor": lambda a, b: a ^ b}


@dataclass(frozen=True)
class LutSpec:
    """One table: entries maps every in-region address offset to its cell
    value - encoded results at valid packed indices, poison 0 elsewhere."""

    op: str
    base: int
    entries: dict[int, int] = field(hash=False)

    def lookup(self, offset: int) -> int:
        return self.entries[offset]


@dataclass
class TransformReport:
    expanded_count: int
    skipped_count: int
    lut_bytes: int
    code_growth_ratio: float
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "expanded_count": self.expanded_count,
                "skipped_count": self.skipped_count,
                "lut_bytes": self.lut_bytes,
                "code_growth_ratio": round(self.code_growth_ratio, 4),
                "warnings": self.warnings,
            },
            indent=2,
        )


def gen_luts(cfg: DplConfig, ops_used) -> tuple[list[LutSpec], list[Instruction]]:
    """Table specs plus the prologue stores that materialize them.

    Each operator keeps a fixed slot (and, orr, xor in order) so table
    addresses do not depend on which operators a program happens to use.
    Only the regions holding used tables are emitted, every cell of an
    emitted region gets exactly one store, and in compact mode tables
    interleave on the free low bit(s) of a shared region.
    """
    cfg.validate()
    ops = [op for op in ("and", "orr", "xor") if op in ops_used]
    specs = []
    regions = set()
    for op in ops:
        base = cfg.table_base(op)
        regions.add(("and", "orr", "xor").index(op) // cfg.tables_per_region)
        slot = (base - cfg.lut_base) % cfg.region_size
        stride = cfg.tables_per_region
        entries = {}
        for off in range(0, cfg.region_size - slot, stride):
            entries[off] = 0
        for a in (0, 1):
            for b in (0, 1):
                entries[cfg.pack(cfg.encode(a), cfg.encode(b))] = cfg.encode(_OP_FUNC[op](a, b))
        specs.append(LutSpec(op, base, entries))
    covered = {spec.base + off: spec.entries[off] for spec in specs for off in spec.entries}
    stores = []
    for region in sorted(regions):
        lo = cfg.lut_base + region * cfg.region_size
        for addr in range(lo, lo + cfg.region_size):
            stores.append(Instruction("mov", (MemDirect(addr), Immediate(covered.get(addr, 0)))))
    return specs, stores


def lut_span(cfg: DplConfig, n_ops: int = 3) -> int:
    """Total reserved table bytes for n_ops tables under cfg."""
    if n_ops == 0:
        return 0
    regions = -(-n_ops // cfg.tables_per_region)
    return regions * cfg.region_size


def classify(p: Program) -> tuple[dict[int, str], list[str]]:
    """Per-instruction transformation action, plus taint warnings.

    Logical ops expand (or, for not, rewrite) unless tagged ;@public; all
    other opcodes are kept.  Warnings flag add/mul/branch instructions that
    read a location tainted by the declared ;@sensitive cells.
    """
    actions: dict[int, str] = {}
    instrs = p.instructions
    for idx, inst in enumerate(instrs):
        if p.tagged(idx, "public"):
            actions[idx] = KEEP
        elif inst.opcode in LOGICAL_OPS:
            actions[idx] = EXPAND
        elif inst.opcode == "not":
            actions[idx] = REWRITE_NOT
        else:
            actions[idx] = KEEP

    tainted_regs: set[int] = set()
    tainted_mem: set[int] = set()
    for kind, loc in p.declared_cells("sensitive"):
        (tainted_regs if kind == "reg" else tainted_mem).add(loc)
    any_mem = [bool(tainted_mem)]  # True once an indirect store spills taint

    def src_tainted(op) -> bool:
        if isinstance(op, Register):
            return op.index in tainted_regs
        if isinstance(op, MemDirect):
            return any_mem[0] or op.address in tainted_mem
        if isinstance(op, MemIndirect):
            return any_mem[0] or bool(tainted_mem)
        return False  # immediate

    changed = True
    while changed:
        changed = False
        for inst in instrs:
            if inst.opcode in ("nop", "jmp", "beq", "bne"):
                continue
            dest, *srcs = inst.operands
            if not any(src_tainted(s) for s in srcs):
                continue
            if isinstance(dest, Register):
                if dest.index not in tainted_regs:
                    tainted_regs.add(dest.index)
                    changed = True
            elif isinstance(dest, MemDirect):
                if dest.address not in tainted_mem:
                    tainted_mem.add(dest.address)
                    changed = True
            elif not any_mem[0]:
                any_mem[0] = True
                changed = True

    warnings = []
    for idx, inst in enumerate(instrs):
        if inst.opcode not in ("add", "mul", "beq", "bne"):
            continue
        if p.tagged(idx, "public"):
            continue
        srcs = inst.operands[:2] if inst.opcode in ("beq", "bne") else inst.operands[1:]
        if any(src_tainted(s) for s in srcs):
            warnings.append(f"instruction {idx}: {inst.opcode} reads sensitive data")
    return actions, warnings


def _scratch_free(op, cfg: DplConfig, what: str) -> None:
    reserved = set(cfg.scratch) | {cfg.zero_reg}
    reg = None
    if isinstance(op, Register):
        reg = op.index
    elif isinstance(op, MemIndirect) and isinstance(op.base, Register):
        reg = op.base.index
    if reg in reserved:
        raise TransformError(f"{what} uses reserved register r{reg}")


def _encode_value_operand(op, cfg: DplConfig):
    if isinstance(op, Immediate):
        return Immediate(cfg.encode(op.value))
    return op


def expand_macro(inst: Instruction, cfg: DplConfig) -> list[Instruction]:
    """The DPL macro for ``op d a b``: load and mask both encoded operands,
    stack them into the table index, fetch, and copy out - precharging every
    destination first.  13 instructions for adjacent rails (two shifts)."""
    if inst.opcode not in LOGICAL_OPS:
        raise TransformError(f"cannot expand {inst.opcode}")
    d, a, b = inst.operands
    r1, r2, r3 = (Register(i) for i in cfg.scratch)
    r0 = Register(cfg.zero_reg)
    for op, what in ((d, "destination"), (a, "operand"), (b, "operand")):
        _scratch_free(op, cfg, what)
    a = _encode_value_operand(a, cfg)
    b = _encode_value_operand(b, cfg)
    mask = Immediate(cfg.mask)
    out = [
        Instruction("mov", (r1, r0)),
        Instruction("mov", (r1, a)),
        Instruction("and", (r1, r1, mask)),
    ]
    out += [Instruction("lsl", (r1, r1, Immediate(1)))] * cfg.shifts
    out += [
        Instruction("mov", (r2, r0)),
        Instruction("mov", (r2, b)),
        Instruction("and", (r2, r2, mask)),
        Instruction("orr", (r1, r1, r2)),
        Instruction("mov", (r3, r0)),
        Instruction("mov", (r3, MemIndirect(r1, cfg.table_base(inst.opcode)))),
        Instruction("mov", (d, r0)),
        Instruction("mov", (d, r3)),
    ]
    return out


def rewrite_not(inst: Instruction, cfg: DplConfig) -> list[Instruction]:
    """``not d v`` on encoded data: xor with the rail mask swaps the rails.

    Routed through a precharged scratch register so both writes flip exactly
    one bit; a literal operand folds to a plain encoded store."""
    d, v = inst.operands
    r1 = Register(cfg.scratch[0])
    r0 = Register(cfg.zero_reg)
    _scratch_free(d, cfg, "destination")
    _scratch_free(v, cfg, "operand")
    if isinstance(v, Immediate):
        return [
            Instruction("mov", (d, r0)),
            Instruction("mov", (d, Immediate(cfg.encode(1 - v.value)))),
        ]
    return [
        Instruction("mov", (r1, r0)),
        Instruction("xor", (r1, v, Immediate(cfg.mask))),
        Instruction("mov", (d, r0)),
        Instruction("mov", (d, r1)),
    ]


def _used_registers(p: Program) -> set[int]:
    regs = set()
    for inst in p.instructions:
        for op in inst.operands:
            if isinstance(op, Register):
                regs.add(op.index)
            elif isinstance(op, MemIndirect) and isinstance(op.base, Register):
                regs.add(op.base.index)
    return regs


def _used_cells(p: Program) -> set[int]:
    cells = set()
    for inst in p.instructions:
        for op in inst.operands:
            if isinstance(op, MemDirect):
                cells.add(op.address)
            elif isinstance(op, MemIndirect):
                cells.add(op.offset)
    for name in ("sensitive", "output"):
        for kind, loc in p.declared_cells(name):
            if kind == "mem":
                cells.add(loc)
    return cells


def transform(p: Program, cfg: DplConfig, strict: bool = False) -> tuple[Program, TransformReport]:
    """Full program rewrite: prologue (zero register, table stores) followed
    by each source instruction kept, not-rewritten, or macro-expanded in
    order.  Labels and directives stay anchored to the first emitted line of
    their instruction's expansion."""
    cfg.validate()
    actions, warnings = classify(p)
    if strict and warnings:
        raise TransformError("; ".join(warnings))

    reserved = set(cfg.scratch) | {cfg.zero_reg}
    clash = _used_registers(p) & reserved
    if clash:
        raise TransformError(f"program already uses reserved register(s) {sorted(clash)}")

    ops_used = {p.instructions[i].opcode for i, act in actions.items() if act == EXPAND}
    specs, stores = gen_luts(cfg, ops_used)
    lut_bytes = len(stores)
    if lut_bytes:
        reserved_cells = {s.operands[0].address for s in stores}
        overlap = _used_cells(p) & reserved_cells
        if overlap:
            raise TransformError(
                f"tables [{min(reserved_cells)},{max(reserved_cells)}] "
                f"overlap program cells {sorted(overlap)[:8]}"
            )

    out_lines = [Line(None, Instruction("mov", (Register(cfg.zero_reg), Immediate(0))), PROLOGUE_TAG)]
    out_lines += [Line(None, s, PROLOGUE_TAG) for s in stores]

    expanded = skipped = 0
    idx = 0
    new_index: dict[int, int] = {}  # source instruction index -> transformed index
    emitted_so_far = len(out_lines)
    for ln in p.lines:
        if ln.instruction is None:
            out_lines.append(ln)
            continue
        new_index[idx] = emitted_so_far
        act = actions[idx]
        if act == EXPAND:
            emitted = expand_macro(ln.instruction, cfg)
            expanded += 1
        elif act == REWRITE_NOT:
            emitted = rewrite_not(ln.instruction, cfg)
            expanded += 1
        else:
            emitted = [ln.instruction]
            if ln.instruction.opcode in LOGICAL_OPS or ln.instruction.opcode == "not":
                skipped += 1
        out_lines.append(Line(ln.label, emitted[0], ln.directive))
        out_lines += [Line(None, e, None) for e in emitted[1:]]
        emitted_so_far += len(emitted)
        idx += 1
    new_index[idx] = emitted_so_far  # halt target

    out_lines = [_remap_absolute(ln, new_index) for ln in out_lines]
    n_in = len(p.instructions)
    n_out = emitted_so_far
    report = TransformReport(
        expanded_count=expanded,
        skipped_count=skipped,
        lut_bytes=lut_bytes,
        code_growth_ratio=(n_out / n_in) if n_in else 1.0,
        warnings=warnings,
    )
    return Program(tuple(out_lines)), report


def _remap_absolute(ln: Line, new_index: dict[int, int]) -> Line:
    """Absolute ``#N`` branch targets point at source instruction indices;
    move them to the first instruction of that source line's expansion."""
    inst = ln.instruction
    if inst is None or inst.opcode not in ("jmp", "beq", "bne"):
        return ln
    ops = tuple(
        AddressRef(index=new_index[op.index])
        if isinstance(op, AddressRef) and op.index is not None
        else op
        for op in inst.operands
    )
    if ops == inst.operands:
        return ln
    return Line(ln.label, Instruction(inst.opcode, ops), ln.directive)
