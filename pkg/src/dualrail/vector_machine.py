"""Batch interpreter: many runs of one program in lockstep, vectorized
across runs with numpy.

Semantics and event accounting mirror machine.step exactly (dual-route
tested); control flow must agree across all runs in the batch, which holds
for the constant-time programs this package produces.  Optionally
accumulates per-cycle weighted leakage over a cycle window, which is how
trace synthesis stays fast enough for large attack campaigns.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .asm import Immediate, LinkedProgram, MemDirect, MemIndirect, Register


class NonConstantTimeError(RuntimeError):
    """Branch outcome differed between runs of the same batch."""


@dataclass
class BatchResult:
    registers: np.ndarray        # (n_regs, n_runs)
    memory: np.ndarray           # (mem_size, n_runs)
    leakage: np.ndarray | None   # (n_cycles, n_runs) float32, or None
    cycles: int
    window_start: int = 0


def _weight_tables(weights, width: int, mem_size: int, include_bus: bool):
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (width,):
        raise ValueError(f"need {width} per-bit weights")
    vals = np.arange(1 << width)
    bits = (vals[:, None] >> np.arange(width)) & 1
    wtab = (bits * w).sum(axis=1).astype(np.float32)
    atab = None
    if include_bus:
        addrs = np.arange(mem_size)
        abits = (addrs[:, None] >> np.arange(width)) & 1
        atab = (abits * w).sum(axis=1)
        hi = addrs >> width
        # address bits beyond the data word weigh 1.0
        while hi.any():
            atab += hi & 1
            hi = hi >> 1
        atab = atab.astype(np.float32)
    return wtab, atab


class _Ctx:
    """Shared mutable execution context for the compiled closures."""

    __slots__ = ("regs", "mem", "ar", "mask", "row", "wtab", "atab", "bus")

    def __init__(self, regs, mem, mask, wtab, atab, bus):
        self.regs = regs
        self.mem = mem
        self.ar = np.arange(regs.shape[1])
        self.mask = mask
        self.row = None
        self.wtab = wtab
        self.atab = atab
        self.bus = bus

    def emit_flips(self, flips):
        if self.row is not None:
            self.row += self.wtab[flips]

    def emit_abus(self, addr):
        if self.row is not None and self.bus:
            self.row += self.atab[addr]

    def emit_dbus(self, value):
        if self.row is not None and self.bus:
            self.row += self.wtab[value]


def _value_loader(op, ctx: _Ctx, mem_size: int):
    """Returns a nullary closure producing the operand's value vector (or a
    scalar for immediates), emitting bus activity for memory operands."""
    if isinstance(op, Register):
        i = op.index
        regs = ctx.regs
        return lambda: regs[i]
    if isinstance(op, Immediate):
        v = op.value
        return lambda: v
    mem, ar = ctx.mem, ctx.ar
    if isinstance(op, MemDirect):
        a = op.address

        def load_direct():
            v = mem[a]
            ctx.emit_abus(a)
            ctx.emit_dbus(v)
            return v

        return load_direct
    # MemIndirect
    off = op.offset
    if isinstance(op.base, Immediate):
        a = op.base.value + off
        if not 0 <= a < mem_size:
            raise ValueError(f"address {a} out of range")

        def load_fixed():
            v = mem[a]
            ctx.emit_abus(a)
            ctx.emit_dbus(v)
            return v

        return load_fixed
    b = op.base.index
    regs = ctx.regs

    def load_indexed():
        addr = regs[b].astype(np.intp) + off
        if addr.max(initial=0) >= mem_size:
            raise IndexError(f"indexed address beyond memory (offset {off})")
        v = mem[addr, ar]
        ctx.emit_abus(addr)
        ctx.emit_dbus(v)
        return v

    return load_indexed


def _storer(op, ctx: _Ctx, mem_size: int):
    """Returns a closure storing a value vector/scalar into the operand,
    emitting the same events as the scalar machine."""
    dtype = ctx.regs.dtype
    if isinstance(op, Register):
        i = op.index
        regs = ctx.regs

        def store_reg(v):
            if ctx.row is not None:
                ctx.emit_flips((regs[i] ^ v).astype(dtype))
            regs[i] = v

        return store_reg
    mem, ar = ctx.mem, ctx.ar
    if isinstance(op, MemDirect):
        a = op.address

        def store_direct(v):
            if ctx.row is not None:
                ctx.emit_abus(a)
                ctx.emit_dbus(np.asarray(v, dtype=dtype))
                ctx.emit_flips((mem[a] ^ v).astype(dtype))
            mem[a] = v

        return store_direct
    off = op.offset
    if isinstance(op.base, Immediate):
        return _storer(MemDirect(op.base.value + off), ctx, mem_size)
    b = op.base.index
    regs = ctx.regs

    def store_indexed(v):
        addr = regs[b].astype(np.intp) + off
        if addr.max(initial=0) >= mem_size:
            raise IndexError(f"indexed address beyond memory (offset {off})")
        if ctx.row is not None:
            ctx.emit_abus(addr)
            ctx.emit_dbus(np.asarray(v, dtype=dtype))
            ctx.emit_flips((mem[addr, ar] ^ v).astype(dtype))
        mem[addr, ar] = v

    return store_indexed


_ALU = {
    "and": lambda a, b, m: a & b,
    "orr": lambda a, b, m: a | b,
    "xor": lambda a, b, m: a ^ b,
    "add": lambda a, b, m: (a + b) & m,
    "mul": lambda a, b, m: (a * b) & m,
    "lsl": lambda a, b, m: (a << b) & m,
    "lsr": lambda a, b, m: (a >> b) & m,
}


def _compile(program: LinkedProgram, ctx: _Ctx):
    """One closure per instruction; each returns the next pc."""
    mem_size = program.mem_size
    mask = ctx.mask
    dtype = ctx.regs.dtype
    fns = []
    for pc, inst in enumerate(program.instructions):
        op = inst.opcode
        nxt = pc + 1
        if op == "nop":
            fns.append(lambda nxt=nxt: nxt)
        elif op == "jmp":
            t = inst.operands[0].index
            fns.append(lambda t=t: t)
        elif op in ("mov", "not"):
            load = _value_loader(inst.operands[1], ctx, mem_size)
            store = _storer(inst.operands[0], ctx, mem_size)
            if op == "mov":
                def f_mov(load=load, store=store, nxt=nxt):
                    store(load())
                    return nxt
                fns.append(f_mov)
            else:
                def f_not(load=load, store=store, nxt=nxt):
                    v = load()
                    store(~v & mask if np.isscalar(v) else (~v & mask).astype(dtype))
                    return nxt
                fns.append(f_not)
        elif op in ("beq", "bne"):
            la = _value_loader(inst.operands[0], ctx, mem_size)
            lb = _value_loader(inst.operands[1], ctx, mem_size)
            t = inst.operands[2].index
            eq = op == "beq"

            def f_br(la=la, lb=lb, t=t, eq=eq, nxt=nxt, pc=pc):
                cond = la() == lb()
                if not eq:
                    cond = ~cond if isinstance(cond, np.ndarray) else not cond
                if isinstance(cond, np.ndarray):
                    first = bool(cond[0])
                    if not (cond == first).all():
                        raise NonConstantTimeError(f"instruction {pc}: divergent branch")
                    cond = first
                return t if cond else nxt

            fns.append(f_br)
        else:
            la = _value_loader(inst.operands[1], ctx, mem_size)
            lb = _value_loader(inst.operands[2], ctx, mem_size)
            store = _storer(inst.operands[0], ctx, mem_size)
            alu = _ALU[op]

            def f_alu(la=la, lb=lb, store=store, alu=alu, nxt=nxt):
                v = alu(la(), lb(), mask)
                store(v if np.isscalar(v) else v.astype(dtype))
                return nxt

            fns.append(f_alu)
    return fns


def batch_run(
    program: LinkedProgram,
    n_runs: int,
    init_memory: np.ndarray | None = None,
    init_registers: np.ndarray | None = None,
    weights=None,
    include_bus: bool = False,
    window: tuple[int, int | None] = (0, None),
    max_steps: int = 50_000_000,
) -> BatchResult:
    """Run n_runs instances of the program in lockstep.

    With weights, returns per-cycle weighted leakage for cycles in
    [window[0], window[1]); execution stops at the window end, at halt, or
    at max_steps, whichever comes first.
    """
    if program.word_width > 8:
        raise ValueError("batch engine supports word widths up to 8")
    mask = (1 << program.word_width) - 1
    dtype = np.uint8
    mem = (
        np.zeros((program.mem_size, n_runs), dtype=dtype)
        if init_memory is None
        else init_memory.astype(dtype, copy=True)
    )
    regs = (
        np.zeros((program.n_regs, n_runs), dtype=dtype)
        if init_registers is None
        else init_registers.astype(dtype, copy=True)
    )
    if mem.shape != (program.mem_size, n_runs) or regs.shape != (program.n_regs, n_runs):
        raise ValueError("bad init array shape")

    start, end = window
    wtab = atab = None
    leak = None
    grow: list[np.ndarray] | None = None
    if weights is not None:
        wtab, atab = _weight_tables(weights, program.word_width, program.mem_size, include_bus)
        if end is not None:
            leak = np.zeros((end - start, n_runs), dtype=np.float32)
        else:
            grow = []

    ctx = _Ctx(regs, mem, mask, wtab, atab, include_bus)
    fns = _compile(program, ctx)
    n = len(fns)
    pc = 0
    cycle = 0
    stop = max_steps if end is None else min(max_steps, end)
    while pc < n and cycle < stop:
        if weights is not None and cycle >= start:
            if leak is not None:
                ctx.row = leak[cycle - start]
            else:
                row = np.zeros(n_runs, dtype=np.float32)
                grow.append(row)
                ctx.row = row
        else:
            ctx.row = None
        pc = fns[pc]()
        cycle += 1
    if grow is not None:
        leak = np.vstack(grow) if grow else np.zeros((0, n_runs), dtype=np.float32)
    return BatchResult(regs, mem, leak, cycle, start)
