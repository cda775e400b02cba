"""Naive vs double identification on a small planted population.

No networks involved: scores and decoded keys are drawn from simple
distributions so the effect of the discriminator gate is easy to see.
Run:  python3 demos/identification.py
"""
import numpy as np

from ddmark.identification import DetectionConfig, KeyPool, Sample, evaluate_protocol, sweep_threshold

rng = np.random.default_rng(0)
pool = KeyPool.random(20000, 32, rng)
samples = []
for _ in range(400):
    i = int(rng.integers(len(pool)))
    bits = pool.bits[i].copy()
    # a decoder that gets each bit right 93% of the time
    bits[rng.random(32) < 0.07] ^= 1
    samples.append(Sample(True, i, float(rng.beta(5, 2)), bits))
for _ in range(400):
    # covers decode to something arbitrary; some land on a key by accident
    bits = pool.bits[int(rng.integers(len(pool)))].copy() if rng.random() < 0.1 else rng.integers(0, 2, 32)
    samples.append(Sample(False, None, float(rng.beta(2, 5)), np.asarray(bits, dtype=np.uint8)))

for mode in ("naive", "double"):
    r = evaluate_protocol(samples, pool, DetectionConfig(t=29, t_F=0.5, mode=mode))
    print(f"{mode:6s} TIR {r.TIR:.3f}  FIR_en {r.FIR_en:.3f}  FIR_co {r.FIR_co:.3f}")

t_F, table = sweep_threshold(samples, pool, t=29)
chosen = next(r for r in table if r["t_F"] == t_F)
print(f"\nswept threshold t_F={t_F:.3f}: TIR {chosen['TIR']:.3f}, FIR_co {chosen['FIR_co']:.3f}")
for r in table[::40]:
    print(f"  t_F={r['t_F']:.2f}  TIR={r['TIR']:.3f}  FIR_co={r['FIR_co']:.3f}")
