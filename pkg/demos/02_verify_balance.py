#!/usr/bin/env python3
"""Prove constant activity by set-valued symbolic execution.

Instead of running one input, the verifier runs the program once with every
sensitive cell holding the *set* of its possible values.  At each cycle it
checks that the set of possible flip counts (and bus weights) collapses to a
single value: if it does for every cycle, no power trace can depend on the
secrets.  A full PRESENT-80 encryption verifies in seconds.
"""

import time

from dualrail import (
    DplConfig,
    parse,
    present_program,
    resolve,
    symbolic_init,
    transform,
    verify,
)

# -- a single unprotected gate leaks ----------------------------------------

gate = resolve(parse(";@sensitive @100-101\n;@output @102\nand @102 @100 @101\n"))
report = verify(gate, init=symbolic_init(gate))
print("unprotected gate verdict:", report.verdict)
for f in report.findings:
    observed = sorted(f.hw_set if "bus" in f.kind else f.hd_set)
    print(
        f"  cycle-level finding: {f.kind} at {f.location} "
        f"(instruction {f.index}) – observable values {observed}"
    )
print("  witness (two executions an attacker can tell apart):", report.findings[0].witness)

# -- its balanced form does not ---------------------------------------------

cfg = DplConfig()
balanced, _ = transform(parse(";@sensitive @100-101\n;@output @102\nand @102 @100 @101\n"), cfg)
lb = resolve(balanced)
report = verify(lb, init=symbolic_init(lb, cfg), cfg=cfg)
print("\nbalanced gate verdict:", report.verdict, f"({report.cycles_verified} cycles checked)")

# -- the full cipher, both ways ---------------------------------------------

print("\nfull PRESENT-80 corpus:")
src = parse(present_program(0))
linked = resolve(src)
t0 = time.perf_counter()
rep_u = verify(linked, init=symbolic_init(linked))
t1 = time.perf_counter()
print(
    f"  unprotected: {rep_u.verdict}, {len(rep_u.findings)} distinct leaking "
    f"locations, {rep_u.cycles_verified} cycles ({t1 - t0:.1f} s)"
)

cfg = DplConfig(lut_base=768)
dpl, _ = transform(src, cfg)
ld = resolve(dpl)
t0 = time.perf_counter()
rep_d = verify(ld, init=symbolic_init(ld, cfg), cfg=cfg)
t1 = time.perf_counter()
print(
    f"  dual-rail:   {rep_d.verdict}, {len(rep_d.findings)} findings, "
    f"{rep_d.cycles_verified} cycles ({t1 - t0:.1f} s)"
)
print("\nThe transformed cipher has provably constant activity at every cycle.")
