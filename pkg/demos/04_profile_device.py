#!/usr/bin/env python3
"""Choose the rail pair to match the device.

Dual-rail balance assumes both rail bit lines leak equally.  Real devices
don't: one data line may sit next to a clock trace and leak three times as
much.  This demo profiles such a device (bit 0 weighted 3x), picks the rail
pair with the closest-matched leakage, and shows that the naive pair {0,1}
is breakable while the recommended pair resists.
"""

from dualrail import (
    DplConfig,
    LeakModel,
    build_corpus,
    loop_iteration_window,
    profile_bits,
    resolve,
    success_rate,
    transform,
)

KEY = 0x133457799BBCDFF1AABB

# a device whose bit line 0 leaks 3x more than the others
device = LeakModel(weights=(3.0,) + (1.0,) * 7, noise_sigma=2.0)

# -- profile: run each single-bit cipher variant and score its leak ---------

entries = build_corpus()  # one bitsliced variant per bit position
programs = [resolve(e.program) for e in entries]
prof = profile_bits(programs, device, n=256, seed=0)

print("per-bit leakage scores (max NICV over one S-box iteration):")
for bit, score in enumerate(prof.scores):
    marker = " <-- outlier" if bit == prof.ranking[0] else ""
    print(f"  bit {bit}: {score:.3f}{marker}")
print(f"\nrecommended rail pair: {prof.recommended} "
      f"(bit_f={prof.recommended_rails[0]}, bit_t={prof.recommended_rails[1]})")

# -- consequence: attack both layouts on this device ------------------------

print("\nCPA success at n=200 traces on this device (50 attacks):")
for label, cfg in [
    ("naive pair {0,1}      ", DplConfig(bit_f=1, bit_t=0, pattern_lo=0, lut_base=768)),
    ("recommended pair {1,2}", DplConfig(bit_f=2, bit_t=1, pattern_lo=1, lut_base=768)),
]:
    entry = entries[0]
    prog, _ = transform(entry.program, cfg)
    lp = resolve(prog)
    win = loop_iteration_window(lp, "sbx")
    curve = success_rate(lp, KEY, device, [200], attacks_per_point=50,
                         seed=0, window=win, cfg=cfg)
    print(f"  {label}: {curve[0][1]:.2f}")

print(
    "\nBoth layouts are formally balanced under uniform weights, but only the\n"
    "profile-matched pair stays balanced on the asymmetric device: putting a\n"
    "rail on the outlier bit line turns every table fetch into a broadcast of\n"
    "the data bit."
)
