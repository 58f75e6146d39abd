"""Concrete interpreter with a Hamming-model leakage event log.

Every destination write emits a reg_update/mem_update event carrying the
Hamming distance of the update and the Hamming weight of the new value;
every memory access additionally emits one addr_bus and one data_bus event.
Buses are precharged to zero, so a bus event's hd equals its hw.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

from .asm import (
    AddressRef,
    Immediate,
    Instruction,
    LinkedProgram,
    MemDirect,
    MemIndirect,
    Register,
)

# popcount table covering data words and the address space
_POP = [bin(i).count("1") for i in range(1 << 16)]

REG_UPDATE = "reg_update"
MEM_UPDATE = "mem_update"
ADDR_BUS = "addr_bus"
DATA_BUS = "data_bus"


class MachineError(RuntimeError):
    pass


class StepLimitExceeded(MachineError):
    pass


@dataclass(frozen=True)
class LeakageEvent:
    """One observable update.

    ``flips`` is the xor of old and new value for update events, and the
    transferred value itself for (precharged) bus events; cycle_leakage uses
    it for per-bit weighting.  hd == popcount(flips) always.
    """

    cycle: int
    kind: str
    location: str
    hd: int
    hw: int
    flips: int


@dataclass
class MachineState:
    registers: list[int]
    memory: list[int]
    pc: int = 0
    cycle: int = 0

    @classmethod
    def fresh(cls, n_regs: int = 32, mem_size: int = 1024) -> "MachineState":
        return cls([0] * n_regs, [0] * mem_size)

    def copy(self) -> "MachineState":
        return MachineState(list(self.registers), list(self.memory), self.pc, self.cycle)


@dataclass
class RunResult:
    final_state: MachineState
    events: list[LeakageEvent]
    instruction_count: int


def _load(state: MachineState, op, events: list[LeakageEvent], mem_size: int):
    if isinstance(op, Register):
        return state.registers[op.index]
    if isinstance(op, Immediate):
        return op.value
    if isinstance(op, MemDirect):
        addr = op.address
    else:  # MemIndirect
        base = op.base.value if isinstance(op.base, Immediate) else state.registers[op.base.index]
        addr = base + op.offset
    if not 0 <= addr < mem_size:
        raise MachineError(f"load address {addr} out of range at cycle {state.cycle}")
    value = state.memory[addr]
    events.append(LeakageEvent(state.cycle, ADDR_BUS, "abus", _POP[addr], _POP[addr], addr))
    events.append(LeakageEvent(state.cycle, DATA_BUS, "dbus", _POP[value], _POP[value], value))
    return value


def _store(state: MachineState, op, value: int, events: list[LeakageEvent], mem_size: int):
    if isinstance(op, Register):
        old = state.registers[op.index]
        state.registers[op.index] = value
        flips = old ^ value
        events.append(
            LeakageEvent(state.cycle, REG_UPDATE, f"r{op.index}", _POP[flips], _POP[value], flips)
        )
        return
    if isinstance(op, MemDirect):
        addr = op.address
    else:  # MemIndirect
        base = op.base.value if isinstance(op.base, Immediate) else state.registers[op.base.index]
        addr = base + op.offset
    if not 0 <= addr < mem_size:
        raise MachineError(f"store address {addr} out of range at cycle {state.cycle}")
    old = state.memory[addr]
    state.memory[addr] = value
    flips = old ^ value
    events.append(LeakageEvent(state.cycle, ADDR_BUS, "abus", _POP[addr], _POP[addr], addr))
    events.append(LeakageEvent(state.cycle, DATA_BUS, "dbus", _POP[value], _POP[value], value))
    events.append(LeakageEvent(state.cycle, MEM_UPDATE, f"@{addr}", _POP[flips], _POP[value], flips))


def step(state: MachineState, program: LinkedProgram) -> list[LeakageEvent]:
    """Execute one instruction in place; returns the cycle's events."""
    if state.pc >= len(program.instructions):
        raise MachineError("machine is halted")
    inst = program.instructions[state.pc]
    mask = (1 << program.word_width) - 1
    mem_size = program.mem_size
    events: list[LeakageEvent] = []
    op = inst.opcode
    next_pc = state.pc + 1

    if op == "nop":
        pass
    elif op == "jmp":
        next_pc = inst.operands[0].index
    elif op in ("mov", "not"):
        dest, src = inst.operands
        v = _load(state, src, events, mem_size)
        if op == "not":
            v = ~v & mask
        _store(state, dest, v, events, mem_size)
    elif op in ("beq", "bne"):
        a = _load(state, inst.operands[0], events, mem_size)
        b = _load(state, inst.operands[1], events, mem_size)
        taken = (a == b) if op == "beq" else (a != b)
        if taken:
            next_pc = inst.operands[2].index
    else:
        dest, sa, sb = inst.operands
        a = _load(state, sa, events, mem_size)
        b = _load(state, sb, events, mem_size)
        if op == "and":
            v = a & b
        elif op == "orr":
            v = a | b
        elif op == "xor":
            v = a ^ b
        elif op == "add":
            v = (a + b) & mask
        elif op == "mul":
            v = (a * b) & mask
        elif op == "lsl":
            v = (a << b) & mask
        elif op == "lsr":
            v = a >> b
        else:  # pragma: no cover - parser rejects unknown opcodes
            raise MachineError(f"unknown opcode {op}")
        _store(state, dest, v, events, mem_size)

    state.pc = next_pc
    state.cycle += 1
    return events


def run(
    program: LinkedProgram,
    init: MachineState | None = None,
    max_steps: int = 1_000_000,
    collect_events: bool = True,
) -> RunResult:
    """Run to halt (pc past the last instruction) or max_steps.

    Raises StepLimitExceeded if the program does not halt in time.
    """
    state = init.copy() if init is not None else MachineState.fresh(program.n_regs, program.mem_size)
    all_events: list[LeakageEvent] = []
    count = 0
    n = len(program.instructions)
    while state.pc < n:
        if count >= max_steps:
            raise StepLimitExceeded(f"no halt within {max_steps} steps")
        events = step(state, program)
        if collect_events:
            all_events.extend(events)
        count += 1
    return RunResult(state, all_events, count)


def cycle_leakage(
    events: list[LeakageEvent],
    weights,
    include_bus: bool = False,
    n_cycles: int | None = None,
) -> list[float]:
    """Per-cycle weighted bit-flip counts.

    weights[i] applies to bit position i of data words; address-bus bits past
    the word width weigh 1.0.  Uniform weights reduce to summed Hamming
    distances.  Cycles with no events contribute 0.0.
    """
    weights = list(weights)
    width = len(weights)
    if n_cycles is None:
        n_cycles = (max(e.cycle for e in events) + 1) if events else 0
    # per-byte weighted popcount tables, one for data, one extended for addresses
    wtab = [sum(weights[i] for i in range(width) if v >> i & 1) for v in range(1 << width)]
    out = [0.0] * n_cycles
    for e in events:
        if e.kind in (ADDR_BUS, DATA_BUS):
            if not include_bus:
                continue
            if e.kind == ADDR_BUS:
                v = e.flips
                w = wtab[v & ((1 << width) - 1)] + _POP[v >> width]
            else:
                w = wtab[e.flips]
        else:
            w = wtab[e.flips]
        if e.cycle < n_cycles:
            out[e.cycle] += w
    return out


def write_events_csv(events: list[LeakageEvent], path) -> None:
    """Event log export: one row per event, columns cycle,kind,location,hd,hw."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cycle", "kind", "location", "hd", "hw"])
        for e in events:
            w.writerow([e.cycle, e.kind, e.location, e.hd, e.hw])
