"""Why a random extraction can accuse someone: key pool collisions.

Run:  python3 demos/keypool_collisions.py
"""
import numpy as np

from ddmark.identification import KeyPool, collision_probability, match_keys

print("P(random 32-bit string matches >= t bits of some key)")
print("  t   pool=1e3    pool=1e4    pool=1e6")
for t in (26, 27, 28, 29, 30, 31, 32):
    row = [collision_probability(32, t, n) for n in (10 ** 3, 10 ** 4, 10 ** 6)]
    print(f" {t:2d}  " + "  ".join(f"{v:9.5f}" for v in row))

# With a million users and t=29, a cover image decoded to noise points at
# somebody most of the time. That is what the discriminator gate is for.
print("\nt=29, 1e6 keys:", round(collision_probability(32, 29, 10 ** 6), 4))

# Check one row by brute force on a small pool.
rng = np.random.default_rng(1)
pool = KeyPool.random(2000, 32, rng)
hits = np.mean([len(match_keys(rng.integers(0, 2, 32), pool, 26)) > 0 for _ in range(3000)])
print("t=26, 2000 keys: simulated %.4f, closed form %.4f" % (hits, collision_probability(32, 26, 2000)))
