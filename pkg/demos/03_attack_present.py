#!/usr/bin/env python3
"""Attack both cipher corpora with synthetic power traces.

The device model turns the simulator's per-cycle bit flips into a power
sample (weighted flips + Gaussian noise).  A monobit correlation attack then
guesses one key nibble from the first-round S-box lookups.  The unprotected
corpus falls with a few hundred traces; the balanced corpus keeps the attack
at its guessing floor even with 10,000.

Writes success-rate curves to demos/out/.
"""

import pathlib

from dualrail import (
    DplConfig,
    LeakModel,
    cpa_monobit,
    first_round_subkey_nibble,
    loop_iteration_window,
    nibble_classifier,
    nicv,
    parse,
    present_program,
    resolve,
    success_rate,
    synth_traces,
    transform,
    write_curve_csv,
)

KEY = 0x133457799BBCDFF1AABB
OUT = pathlib.Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

model = LeakModel(noise_sigma=2.0)  # uniform bit weights, sigma = 2 flips

src = parse(present_program(0))
unprot = resolve(src)
cfg = DplConfig(lut_base=768)
dpl, _ = transform(src, cfg)
prot = resolve(dpl)

win_u = loop_iteration_window(unprot, "sbx")
win_d = loop_iteration_window(prot, "sbx")
print(f"first S-box iteration: cycles {win_u} unprotected, {win_d} dual-rail")

# -- where does it leak?  NICV profiling ------------------------------------

ts = synth_traces(unprot, KEY, 1000, model, seed=1, window=win_u)
curve = nicv(ts, nibble_classifier(0))
print(
    f"\nNICV over the unprotected S-box window: peak {curve.max():.2f} at "
    f"cycle {win_u[0] + int(curve.argmax())}"
)

# -- single attacks ---------------------------------------------------------

true_nib = first_round_subkey_nibble(KEY, 0)
res = cpa_monobit(ts)
print(
    f"\nCPA on 1000 unprotected traces: best guess {res.best_guess:#x} "
    f"(true nibble {true_nib:#x}), success={res.success}"
)
ts_d = synth_traces(prot, KEY, 1000, model, seed=1, window=win_d, cfg=cfg)
res_d = cpa_monobit(ts_d)
print(
    f"CPA on 1000 dual-rail traces:   best guess {res_d.best_guess:#x} "
    f"(true nibble {true_nib:#x}), success={res_d.success}"
)

# -- success-rate curves ----------------------------------------------------

print("\nsuccess rates (20 attacks per point):")
grid_u = [50, 100, 200, 500]
curve_u = success_rate(unprot, KEY, model, grid_u, attacks_per_point=20, seed=0, window=win_u)
print("  unprotected:", "  ".join(f"n={n}: {r:.2f}" for n, r in curve_u))
write_curve_csv(OUT / "unprotected.csv", curve_u)

grid_d = [500, 2000, 10000]
curve_d = success_rate(prot, KEY, model, grid_d, attacks_per_point=20, seed=0, window=win_d, cfg=cfg)
print("  dual-rail:  ", "  ".join(f"n={n}: {r:.2f}" for n, r in curve_d))
write_curve_csv(OUT / "dualrail.csv", curve_d)

print(
    "\nThe dual-rail rate never leaves the guessing floor (the S-box LSB has\n"
    "a linear structure, so 2 of 16 guesses are indistinguishable and random\n"
    "scores put the true pair on top 1 time in 8)."
)
print(f"curves written to {OUT}/")
