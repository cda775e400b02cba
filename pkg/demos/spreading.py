"""Spreading a 32-bit message over a grid of cells, and getting it back.

Run:  python3 demos/spreading.py
"""
import numpy as np

from ddmark import msgcodec

params = msgcodec.SpreadParams(L=32, k=2, b=16, n=3, W=256, H=256, seed=7)
print("grid", params.grid_shape, "cells; each cell stores", params.k_prime, "bits")
print("that is", params.index_bits, "index bits plus", params.k, "payload bits per tuple,",
      params.n_slices, "tuples")

m = msgcodec.message_from_hex("c0ffee42")
grid, ext = msgcodec.propagate(m, params)
print("extended grid", ext.shape)

# every tuple sits in at least one cell, most in several
counts = np.bincount(grid.layout.ravel(), minlength=params.n_slices)
print("copies per tuple:", counts.tolist())

bits, conf = msgcodec.translate(grid.values, params)
print("clean decode:", msgcodec.message_to_hex(bits), "min confidence", conf.min())

# A decoder never outputs clean bits. Push every cell towards 0.5 and add noise;
# the translator still reads the message as long as the majority survives.
rng = np.random.default_rng(0)
soft = 0.5 + 0.6 * (grid.values - 0.5) + rng.normal(0, 0.15, grid.values.shape)
bits, conf = msgcodec.translate(np.clip(soft, 0, 1), params)
print("noisy decode:", msgcodec.message_to_hex(bits), "mean confidence %.3f" % conf.mean())

# Flip whole cells and watch the error count grow (averaged over 50 draws).
for frac in (0.05, 0.1, 0.2, 0.3):
    wrong = []
    for _ in range(50):
        bad = grid.values.copy()
        pick = rng.random(bad.shape[:2]) < frac
        bad[pick] = 1 - bad[pick]
        out, _ = msgcodec.translate(bad, params)
        wrong.append(int((out != m).sum()))
    print(f"{frac:.0%} cells inverted -> {np.mean(wrong):.1f} wrong bits on average")

# Cropping keeps a window of cells; the rest are masked out of the vote.
mask = np.zeros(params.grid_shape, dtype=bool)
mask[3:12, 2:13] = True
bits, _ = msgcodec.translate(grid.values, params, mask=mask)
print("decode from a cropped window:", msgcodec.message_to_hex(bits))
