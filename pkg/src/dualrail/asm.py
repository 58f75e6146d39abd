"""Parser, AST and printer for a small generic assembly language.

The language is line oriented: an optional ``label:`` prefix, an optional
instruction, and an optional ``;`` comment.  Comments starting with ``;@``
carry directives (``;@sensitive <loc>``, ``;@public``, ``;@output <loc>``,
...) which are preserved by the printer; plain comments are dropped.

Operands:
    rN          register
    #N          immediate
    @N          direct memory cell
    !rN[,off]   indirect memory cell (base register plus constant offset)
    !#N[,off]   indirect with immediate base

Branch targets are labels or ``#`` absolute instruction indices.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

OPCODE0 = frozenset({"nop"})
BRANCH1 = frozenset({"jmp"})
OPCODE2 = frozenset({"not", "mov"})
OPCODE3 = frozenset({"and", "orr", "xor", "lsl", "lsr", "add", "mul"})
BRANCH3 = frozenset({"beq", "bne"})
OPCODES = OPCODE0 | BRANCH1 | OPCODE2 | OPCODE3 | BRANCH3

LOGICAL_OPS = frozenset({"and", "orr", "xor"})

_LABEL_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUM_RE = re.compile(r"-?(0[xX][0-9a-fA-F]+|0[bB][01]+|[0-9]+)")


class ParseError(ValueError):
    """Syntax or consistency error, carrying source line and column (1-based)."""

    def __init__(self, msg: str, line: int, col: int = 1):
        super().__init__(f"line {line}, col {col}: {msg}")
        self.line = line
        self.col = col
        self.msg = msg


class LinkError(ValueError):
    """Raised by resolve() for undefined labels or out-of-range references."""


@dataclass(frozen=True)
class Register:
    index: int

    def __str__(self):
        return f"r{self.index}"


@dataclass(frozen=True)
class Immediate:
    value: int

    def __str__(self):
        return f"#{self.value}"


@dataclass(frozen=True)
class MemDirect:
    address: int

    def __str__(self):
        return f"@{self.address}"


@dataclass(frozen=True)
class MemIndirect:
    base: Register | Immediate
    offset: int = 0

    def __str__(self):
        if self.offset:
            return f"!{self.base},{self.offset}"
        return f"!{self.base}"


Operand = Register | Immediate | MemDirect | MemIndirect


@dataclass(frozen=True)
class AddressRef:
    """Branch target: a label name or an absolute instruction index."""

    label: str | None = None
    index: int | None = None

    def __str__(self):
        return self.label if self.label is not None else f"#{self.index}"


@dataclass(frozen=True)
class Instruction:
    opcode: str
    operands: tuple

    def __str__(self):
        if not self.operands:
            return self.opcode
        return self.opcode + " " + " ".join(str(o) for o in self.operands)


@dataclass(frozen=True)
class Line:
    """One source line: optional label, optional instruction, optional directive.

    ``directive`` is the comment text without the leading ``;@`` (for example
    ``"sensitive @0-63"``); plain comments are not retained.
    """

    label: str | None = None
    instruction: Instruction | None = None
    directive: str | None = None


@dataclass(frozen=True)
class Program:
    lines: tuple[Line, ...]

    @property
    def instructions(self) -> tuple[Instruction, ...]:
        return tuple(ln.instruction for ln in self.lines if ln.instruction is not None)

    @property
    def label_table(self) -> dict[str, int]:
        table: dict[str, int] = {}
        idx = 0
        for ln in self.lines:
            if ln.label is not None:
                table[ln.label] = idx
            if ln.instruction is not None:
                idx += 1
        return table

    @property
    def directives(self) -> dict[int, tuple[str, ...]]:
        """Directive tags per instruction index.

        A directive on an instruction line belongs to that instruction; a
        standalone directive line belongs to the next instruction (or, at end
        of file, to index == number of instructions).
        """
        out: dict[int, list[str]] = {}
        pending: list[str] = []
        idx = 0
        for ln in self.lines:
            if ln.directive is not None:
                pending.append(ln.directive)
            if ln.instruction is not None:
                if pending:
                    out.setdefault(idx, []).extend(pending)
                    pending = []
                idx += 1
        if pending:
            out.setdefault(idx, []).extend(pending)
        return {i: tuple(tags) for i, tags in out.items()}

    def tagged(self, idx: int, name: str) -> bool:
        """True if instruction idx carries a directive starting with name."""
        for tag in self.directives.get(idx, ()):
            if tag == name or tag.startswith(name + " "):
                return True
        return False

    def declared_cells(self, name: str) -> tuple[tuple[str, int], ...]:
        """All locations declared by ``;@<name> <loc>`` directives, in order.

        Returns (kind, index) pairs with kind "reg" or "mem"; ``@lo-hi``
        ranges are expanded inclusively.
        """
        locs: list[tuple[str, int]] = []
        for tags in self.directives.values():
            for tag in tags:
                parts = tag.split()
                if parts and parts[0] == name:
                    for spec in parts[1:]:
                        locs.extend(_parse_loc(spec))
        return tuple(locs)


def _parse_loc(spec: str) -> list[tuple[str, int]]:
    if spec.startswith("r"):
        return [("reg", int(spec[1:]))]
    if spec.startswith("@"):
        body = spec[1:]
        if "-" in body:
            lo, hi = body.split("-", 1)
            return [("mem", a) for a in range(int(lo, 0), int(hi, 0) + 1)]
        return [("mem", int(body, 0))]
    raise ValueError(f"bad location {spec!r} (expected rN, @N or @lo-hi)")


@dataclass(frozen=True)
class LinkedProgram:
    """Executable form: branch targets resolved to absolute indices."""

    instructions: tuple[Instruction, ...]
    source: Program = field(compare=False, repr=False, default=None)
    n_regs: int = 32
    mem_size: int = 1024
    word_width: int = 8

    def __len__(self):
        return len(self.instructions)


# ---------------------------------------------------------------------------
# parsing

def _parse_number(tok: str, line: int, col: int) -> int:
    if not _NUM_RE.fullmatch(tok):
        raise ParseError(f"bad number {tok!r}", line, col)
    return int(tok, 0)


def _parse_operand(tok: str, line: int, col: int) -> Operand:
    if tok.startswith("r"):
        if not tok[1:].isdigit():
            raise ParseError(f"bad register {tok!r}", line, col)
        return Register(int(tok[1:]))
    if tok.startswith("#"):
        return Immediate(_parse_number(tok[1:], line, col))
    if tok.startswith("@"):
        return MemDirect(_parse_number(tok[1:], line, col))
    if tok.startswith("!"):
        body = tok[1:]
        off = 0
        if "," in body:
            body, off_s = body.split(",", 1)
            off = _parse_number(off_s, line, col)
        base = _parse_operand(body, line, col)
        if not isinstance(base, (Register, Immediate)):
            raise ParseError(f"indirect base must be register or immediate: {tok!r}", line, col)
        return MemIndirect(base, off)
    raise ParseError(f"bad operand {tok!r}", line, col)


def _parse_target(tok: str, line: int, col: int) -> AddressRef:
    if tok.startswith("#"):
        return AddressRef(index=_parse_number(tok[1:], line, col))
    if _LABEL_RE.fullmatch(tok):
        return AddressRef(label=tok)
    raise ParseError(f"bad branch target {tok!r}", line, col)


def _check_lval(op: Operand, opcode: str, line: int, col: int) -> None:
    if isinstance(op, Immediate):
        raise ParseError(f"destination of {opcode} cannot be an immediate", line, col)


def _parse_instruction(text: str, line: int, col: int) -> Instruction:
    toks = text.split()
    opcode, args = toks[0], toks[1:]
    if opcode not in OPCODES:
        raise ParseError(f"unknown opcode {opcode!r}", line, col)

    def need(n):
        if len(args) != n:
            raise ParseError(f"{opcode} takes {n} operand(s), got {len(args)}", line, col)

    if opcode in OPCODE0:
        need(0)
        return Instruction(opcode, ())
    if opcode in BRANCH1:
        need(1)
        return Instruction(opcode, (_parse_target(args[0], line, col),))
    if opcode in OPCODE2:
        need(2)
        dest = _parse_operand(args[0], line, col)
        _check_lval(dest, opcode, line, col)
        return Instruction(opcode, (dest, _parse_operand(args[1], line, col)))
    if opcode in OPCODE3:
        need(3)
        dest = _parse_operand(args[0], line, col)
        _check_lval(dest, opcode, line, col)
        return Instruction(
            opcode, (dest, _parse_operand(args[1], line, col), _parse_operand(args[2], line, col))
        )
    need(3)  # beq/bne
    return Instruction(
        opcode,
        (
            _parse_operand(args[0], line, col),
            _parse_operand(args[1], line, col),
            _parse_target(args[2], line, col),
        ),
    )


def parse(source: str) -> Program:
    """Parse assembly text into a Program.

    Raises ParseError with line/column on malformed input, and for duplicate
    label definitions.
    """
    lines: list[Line] = []
    seen_labels: set[str] = set()
    for lineno, raw in enumerate(source.splitlines(), start=1):
        text = raw
        directive = None
        if ";" in text:
            text, comment = text.split(";", 1)
            comment = comment.strip()
            if comment.startswith("@"):
                directive = comment[1:].strip()
        text = text.strip()
        label = None
        if ":" in text:
            label, text = text.split(":", 1)
            label = label.strip()
            if not _LABEL_RE.fullmatch(label):
                raise ParseError(f"bad label {label!r}", lineno)
            if label in seen_labels:
                raise ParseError(f"duplicate label {label!r}", lineno)
            seen_labels.add(label)
            text = text.strip()
        instruction = None
        if text:
            col = raw.index(text.split()[0]) + 1 if text.split()[0] in raw else 1
            instruction = _parse_instruction(text, lineno, col)
        if label is not None or instruction is not None or directive is not None:
            lines.append(Line(label, instruction, directive))
    return Program(tuple(lines))


def print_program(p: Program) -> str:
    """Inverse of parse: parse(print_program(p)) == p."""
    out = []
    for ln in p.lines:
        parts = []
        if ln.label is not None:
            parts.append(f"{ln.label}:")
        if ln.instruction is not None:
            parts.append(str(ln.instruction))
        if ln.directive is not None:
            parts.append(f";@{ln.directive}")
        out.append(" ".join(parts))
    return "\n".join(out) + ("\n" if out else "")


# ---------------------------------------------------------------------------
# linking

def resolve(p: Program, *, n_regs: int = 32, mem_size: int = 1024, word_width: int = 8) -> LinkedProgram:
    """Replace label references by absolute instruction indices and validate
    operand ranges against the machine configuration."""
    table = p.label_table
    instrs = p.instructions
    n = len(instrs)
    mask = (1 << word_width) - 1
    resolved = []
    for idx, inst in enumerate(instrs):
        ops = []
        for pos, op in enumerate(inst.operands):
            if isinstance(op, AddressRef):
                if op.label is not None:
                    if op.label not in table:
                        raise LinkError(f"instruction {idx}: undefined label {op.label!r}")
                    target = table[op.label]
                else:
                    target = op.index
                if not 0 <= target <= n:
                    raise LinkError(f"instruction {idx}: branch target {target} out of range")
                ops.append(AddressRef(index=target))
                continue
            _check_ranges(op, inst, pos, idx, n_regs, mem_size, mask)
            ops.append(op)
        resolved.append(Instruction(inst.opcode, tuple(ops)))
    return LinkedProgram(tuple(resolved), source=p, n_regs=n_regs, mem_size=mem_size, word_width=word_width)


def _check_ranges(op, inst, pos, idx, n_regs, mem_size, mask):
    where = f"instruction {idx} ({inst.opcode})"
    if isinstance(op, Register):
        if not 0 <= op.index < n_regs:
            raise LinkError(f"{where}: register r{op.index} out of range")
    elif isinstance(op, MemDirect):
        if not 0 <= op.address < mem_size:
            raise LinkError(f"{where}: address @{op.address} out of range")
    elif isinstance(op, Immediate):
        # immediates are data words except when used as a shift count,
        # which is bounded by the word width instead
        if inst.opcode in ("lsl", "lsr") and pos == 2:
            if not 0 <= op.value <= mask.bit_length():
                raise LinkError(f"{where}: shift count {op.value} out of range")
        elif not 0 <= op.value <= mask:
            raise LinkError(f"{where}: immediate {op.value} does not fit {mask.bit_length()} bits")
    elif isinstance(op, MemIndirect):
        if isinstance(op.base, Register):
            if not 0 <= op.base.index < n_regs:
                raise LinkError(f"{where}: register r{op.base.index} out of range")
        if not 0 <= op.offset < mem_size:
            raise LinkError(f"{where}: indirect offset {op.offset} out of range")


# ---------------------------------------------------------------------------
# syntax adapters

@dataclass(frozen=True)
class SyntaxAdapter:
    """A pluggable external-dialect front end: text in, Program out, and back."""

    name: str
    parse: callable
    print: callable


_AVR_TO_GENERIC = {
    "mov": "mov", "and": "and", "or": "orr", "eor": "xor", "com": "not",
    "lsl": "lsl", "lsr": "lsr", "add": "add", "mul": "mul",
    "rjmp": "jmp", "breq": "beq", "brne": "bne", "nop": "nop",
}
_GENERIC_TO_AVR = {v: k for k, v in _AVR_TO_GENERIC.items()}


def _map_opcodes(source: str, table: dict[str, str]) -> str:
    """Rewrite the opcode token of each line through table, leaving labels,
    operands and comments untouched."""
    out = []
    for lineno, raw in enumerate(source.splitlines(), start=1):
        text, _, comment = raw.partition(";")
        label = ""
        if ":" in text:
            label, _, text = text.partition(":")
            label += ":"
        toks = text.split()
        if toks:
            if toks[0] not in table:
                raise ParseError(f"unknown opcode {toks[0]!r}", lineno)
            toks[0] = table[toks[0]]
        rebuilt = (label + " " if label else "") + " ".join(toks)
        if comment:
            rebuilt += " ;" + comment
        out.append(rebuilt.strip())
    return "\n".join(out) + "\n"


def _avr_parse(source: str) -> Program:
    return parse(_map_opcodes(source, _AVR_TO_GENERIC))


def _avr_print(p: Program) -> str:
    return _map_opcodes(print_program(p), _GENERIC_TO_AVR)


AVR_LIKE = SyntaxAdapter("avr-like", _avr_parse, _avr_print)

ADAPTERS = {AVR_LIKE.name: AVR_LIKE}
