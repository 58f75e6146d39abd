"""Static balance verification by set-valued symbolic execution.

Each register and memory cell holds the set of values it may take over all
assignments of the declared sensitive inputs.  Control flow must stay
concrete.  An update whose possible Hamming distances (or weights) are not
a single value is a leak finding; a program with no findings has constant
leakage activity under the Hamming model.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .asm import (
    Immediate,
    LinkedProgram,
    MemDirect,
    MemIndirect,
    Register,
)
from .dpl import DplConfig, PROLOGUE_TAG
from .machine import _POP, MachineState, cycle_leakage, run

BALANCED = "balanced"
LEAKY = "leaky"
INCONCLUSIVE = "inconclusive"


class VerifierError(RuntimeError):
    pass


class SensitiveBranchError(VerifierError):
    """A branch condition depends on sensitive data."""


class _CapExceeded(Exception):
    pass


@dataclass
class SymbolicState:
    registers: list[frozenset[int]]
    memory: list[frozenset[int]]
    pc: int = 0
    cycle: int = 0

    @classmethod
    def fresh(cls, n_regs: int = 32, mem_size: int = 1024) -> "SymbolicState":
        zero = frozenset((0,))
        return cls([zero] * n_regs, [zero] * mem_size)


@dataclass
class LeakFinding:
    index: int
    kind: str
    location: str
    hd_set: frozenset[int]
    hw_set: frozenset[int]
    witness: tuple  # two (old, new) pairs with different observations

    def merge(self, other: "LeakFinding") -> None:
        self.hd_set = self.hd_set | other.hd_set
        self.hw_set = self.hw_set | other.hw_set


@dataclass
class BalanceReport:
    verdict: str
    findings: list[LeakFinding]
    cycles_verified: int
    reason: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "verdict": self.verdict,
                "findings": [
                    {
                        "index": f.index,
                        "kind": f.kind,
                        "location": f.location,
                        "hd_set": sorted(f.hd_set),
                        "hw_set": sorted(f.hw_set),
                        "witness": [list(w) for w in f.witness],
                    }
                    for f in self.findings
                ],
                "cycles": self.cycles_verified,
                "reason": self.reason,
            },
            indent=2,
        )


def symbolic_init(
    program: LinkedProgram, cfg: DplConfig | None = None
) -> SymbolicState:
    """Initial state: declared ;@sensitive cells take both bit values
    ({0,1} plain, both rail encodings under cfg), everything else is 0."""
    state = SymbolicState.fresh(program.n_regs, program.mem_size)
    pair = (
        frozenset((0, 1))
        if cfg is None
        else frozenset((cfg.encode(0), cfg.encode(1)))
    )
    if program.source is None:
        return state
    for kind, loc in program.source.declared_cells("sensitive"):
        if kind == "reg":
            state.registers[loc] = pair
        else:
            state.memory[loc] = pair
    return state


_OPS = {
    "and": lambda x, y, m: x & y,
    "orr": lambda x, y, m: x | y,
    "xor": lambda x, y, m: x ^ y,
    "add": lambda x, y, m: (x + y) & m,
    "mul": lambda x, y, m: (x * y) & m,
    "lsl": lambda x, y, m: (x << y) & m,
    "lsr": lambda x, y, m: x >> y,
}


def _hd_witness(pairs):
    """Two (old,new) pairs with distinct Hamming distances, if any."""
    seen = {}
    for o, n in pairs:
        h = _POP[o ^ n]
        if h not in seen:
            seen[h] = (o, n)
            if len(seen) == 2:
                a, b = seen.values()
                return (a, b)
    return None


def _hw_witness(new: frozenset):
    seen = {}
    for n in new:
        h = _POP[n]
        if h not in seen:
            seen[h] = (None, n)
            if len(seen) == 2:
                a, b = seen.values()
                return (a, b)
    return None


class Verifier:
    def __init__(self, program: LinkedProgram, cap: int = 16):
        self.program = program
        self.cap = cap
        self.mask = (1 << program.word_width) - 1
        directives = program.source.directives if program.source is not None else {}
        self.skip = {
            i
            for i, tags in directives.items()
            if any(t == PROLOGUE_TAG or t.startswith(PROLOGUE_TAG + " ") for t in tags)
        }

    # -- operand access -----------------------------------------------------

    def _value(self, state: SymbolicState, op) -> frozenset:
        if isinstance(op, Register):
            return state.registers[op.index]
        if isinstance(op, Immediate):
            return frozenset((op.value,))
        raise VerifierError(f"not a value operand: {op}")

    def _addresses(self, state: SymbolicState, op) -> frozenset:
        if isinstance(op, MemDirect):
            return frozenset((op.address,))
        bases = (
            frozenset((op.base.value,))
            if isinstance(op.base, Immediate)
            else state.registers[op.base.index]
        )
        addrs = frozenset(b + op.offset for b in bases)
        for a in addrs:
            if not 0 <= a < self.program.mem_size:
                raise VerifierError(f"address {a} out of range at cycle {state.cycle}")
        return addrs

    def _load(self, state: SymbolicState, op, findings: list, idx: int):
        if isinstance(op, (Register, Immediate)):
            return self._value(state, op)
        addrs = self._addresses(state, op)
        vals = set()
        for a in addrs:
            vals |= state.memory[a]
        if len(vals) > self.cap:
            raise _CapExceeded
        vals = frozenset(vals)
        hw_addr = frozenset(_POP[a] for a in addrs)
        if len(hw_addr) > 1:
            w = _hw_witness(addrs)
            findings.append(LeakFinding(idx, "addr_bus", "abus", hw_addr, hw_addr, w))
        hw_data = frozenset(_POP[v] for v in vals)
        if len(hw_data) > 1:
            w = _hw_witness(vals)
            findings.append(LeakFinding(idx, "data_bus", "dbus", hw_data, hw_data, w))
        return vals

    def _store(
        self,
        state: SymbolicState,
        op,
        vals: frozenset,
        findings: list,
        idx: int,
        pairs: frozenset | None = None,
    ):
        """Write `vals` to a destination.  `pairs` carries the correlated
        (old, new) possibilities when the destination aliases a source
        operand; otherwise old and new are treated as independent."""
        hw_set = frozenset(_POP[v] for v in vals)
        if isinstance(op, Register):
            old = state.registers[op.index]
            state.registers[op.index] = vals
            loc, kind = f"r{op.index}", "reg_update"
        else:
            addrs = self._addresses(state, op)
            if len(addrs) != 1:
                raise VerifierError(
                    f"data-dependent store address at instruction {idx}"
                )
            (addr,) = addrs
            old = state.memory[addr]
            state.memory[addr] = vals
            loc, kind = f"@{addr}", "mem_update"
            # store address is concrete so the address bus is balanced;
            # the written value still crosses the data bus
            if len(hw_set) > 1:
                findings.append(
                    LeakFinding(idx, "data_bus", "dbus", hw_set, hw_set, _hw_witness(vals))
                )
        if pairs is None:
            pairs = tuple((o, n) for o in old for n in vals)
        hd_set = frozenset(_POP[o ^ n] for o, n in pairs)
        if len(hd_set) > 1 or len(hw_set) > 1:
            witness = _hd_witness(pairs) or _hw_witness(vals)
            findings.append(LeakFinding(idx, kind, loc, hd_set, hw_set, witness))

    # -- stepping -----------------------------------------------------------

    def sym_step(self, state: SymbolicState) -> list[LeakFinding]:
        program = self.program
        if state.pc >= len(program.instructions):
            raise VerifierError("halted")
        idx = state.pc
        inst = program.instructions[idx]
        op = inst.opcode
        findings: list[LeakFinding] = []
        next_pc = idx + 1

        if op == "nop":
            pass
        elif op == "jmp":
            next_pc = inst.operands[0].index
        elif op in ("mov", "not"):
            dest, src = inst.operands
            vals = self._load(state, src, findings, idx)
            alias = dest == src
            if op == "not":
                out = frozenset(~v & self.mask for v in vals)
                pairs = frozenset((v, ~v & self.mask) for v in vals) if alias else None
            else:
                out = vals
                pairs = frozenset((v, v) for v in vals) if alias else None
            self._store(state, dest, out, findings, idx, pairs=pairs)
        elif op in ("beq", "bne"):
            a = self._load(state, inst.operands[0], findings, idx)
            b = self._load(state, inst.operands[1], findings, idx)
            target = inst.operands[2].index
            if len(a) > 1 or len(b) > 1:
                if target != next_pc:
                    raise SensitiveBranchError(
                        f"instruction {idx}: branch condition is not a single value"
                    )
            else:
                (va,), (vb,) = a, b
                taken = (va == vb) if op == "beq" else (va != vb)
                if taken:
                    next_pc = target
        else:
            dest, sa, sb = inst.operands
            a = self._load(state, sa, findings, idx)
            b = self._load(state, sb, findings, idx)
            f = _OPS[op]
            alias_a, alias_b = dest == sa, dest == sb
            image = set()
            pairs = set()
            for x in a:
                for y in b:
                    v = f(x, y, self.mask)
                    image.add(v)
                    if alias_a:
                        pairs.add((x, v))
                    elif alias_b:
                        pairs.add((y, v))
            if len(image) > self.cap:
                raise _CapExceeded
            self._store(
                state,
                dest,
                frozenset(image),
                findings,
                idx,
                pairs=frozenset(pairs) if (alias_a or alias_b) else None,
            )

        state.pc = next_pc
        state.cycle += 1
        if idx in self.skip:
            return []
        return findings


def sym_step(state: SymbolicState, program: LinkedProgram, cap: int = 16) -> list[LeakFinding]:
    """Single-step convenience wrapper around Verifier."""
    return Verifier(program, cap).sym_step(state)


def verify(
    program: LinkedProgram,
    init: SymbolicState | None = None,
    max_steps: int = 2_000_000,
    cap: int = 16,
    cfg: DplConfig | None = None,
) -> BalanceReport:
    """Run the program symbolically to halt, aggregating leak findings per
    (instruction, event kind, location).  Verdict: balanced / leaky /
    inconclusive (value-set cap or step limit hit)."""
    v = Verifier(program, cap)
    state = init if init is not None else symbolic_init(program, cfg)
    merged: dict[tuple, LeakFinding] = {}
    steps = 0
    n = len(program.instructions)
    verdict_reason = ""
    verdict = None
    while state.pc < n:
        if steps >= max_steps:
            verdict, verdict_reason = INCONCLUSIVE, f"step limit {max_steps} reached"
            break
        try:
            for f in v.sym_step(state):
                key = (f.index, f.kind, f.location)
                if key in merged:
                    merged[key].merge(f)
                else:
                    merged[key] = f
        except _CapExceeded:
            verdict, verdict_reason = (
                INCONCLUSIVE,
                f"value-set cap {cap} exceeded at instruction {state.pc}",
            )
            break
        steps += 1
    findings = sorted(merged.values(), key=lambda f: (f.index, f.kind, f.location))
    if verdict is None:
        verdict = LEAKY if findings else BALANCED
    return BalanceReport(verdict, findings, steps, verdict_reason)


@dataclass
class CrossValidation:
    passed: bool
    pairs_checked: int
    first_diff_cycle: int | None = None


def cross_validate(
    program: LinkedProgram,
    n_pairs: int = 100,
    seed: int = 0,
    cfg: DplConfig | None = None,
    max_steps: int = 2_000_000,
) -> CrossValidation:
    """Dynamic confirmation of a balanced verdict: random pairs of sensitive
    inputs must yield identical per-cycle leakage under uniform weights."""
    if program.source is None:
        return CrossValidation(True, 0)
    cells = program.source.declared_cells("sensitive")
    rng = random.Random(seed)
    width = program.word_width

    def one_run(bits):
        init = MachineState.fresh(program.n_regs, program.mem_size)
        for (kind, loc), bit in zip(cells, bits):
            val = bit if cfg is None else cfg.encode(bit)
            if kind == "reg":
                init.registers[loc] = val
            else:
                init.memory[loc] = val
        res = run(program, init, max_steps=max_steps)
        return cycle_leakage(res.events, [1.0] * width, include_bus=True)

    for p in range(n_pairs):
        bits_a = [rng.randint(0, 1) for _ in cells]
        bits_b = [rng.randint(0, 1) for _ in cells]
        la, lb = one_run(bits_a), one_run(bits_b)
        if la != lb:
            diff = next(
                (i for i, (x, y) in enumerate(zip(la, lb)) if x != y),
                min(len(la), len(lb)),
            )
            return CrossValidation(False, p + 1, diff)
    return CrossValidation(True, n_pairs)
