import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddmark.identification import (DetectionConfig, KeyPool, Sample, bit_accuracy, categorize, classify,
                                   collision_probability, evaluate_protocol, match_keys, select_threshold,
                                   sweep_threshold, threshold_grid, true_key_extracted)


def flip(bits, positions):
    out = np.array(bits, dtype=np.uint8).copy()
    out[list(positions)] ^= 1
    return out


def test_bit_accuracy_basic():
    m = np.random.default_rng(0).integers(0, 2, 32)
    assert bit_accuracy(m, m) == 1.0
    assert bit_accuracy(m, 1 - m) == 0.0
    with pytest.raises(ValueError):
        bit_accuracy(m, m[:31])


def test_bit_accuracy_random_mean():
    rng = np.random.default_rng(1)
    a = rng.integers(0, 2, (10000, 32))
    b = rng.integers(0, 2, (10000, 32))
    mean = np.mean([bit_accuracy(x, y) for x, y in zip(a, b)])
    assert abs(mean - 0.5) <= 0.01


def test_pool_distinct_and_io(tmp_path):
    pool = KeyPool.random(500, 32, rng=0)
    assert len(pool) == 500
    path = tmp_path / "keys.txt"
    pool.save(path)
    assert len(path.read_text().split()) == 500 and len(path.read_text().split()[0]) == 8
    assert np.array_equal(KeyPool.load(path).bits, pool.bits)
    with pytest.raises(ValueError):
        KeyPool(np.vstack([pool.bits[:2], pool.bits[:1]]))


def test_match_keys_edges():
    pool = KeyPool.random(200, 32, rng=2)
    m = pool.bits[17]
    assert match_keys(m, pool, 32).tolist() == [17]
    assert len(match_keys(m, pool, 0)) == 200


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6), L=st.sampled_from([8, 32, 64, 70]), t=st.integers(0, 70))
def test_match_keys_brute_force(seed, L, t):
    rng = np.random.default_rng(seed)
    pool = KeyPool.random(min(300, 2 ** L // 2), L, rng)
    m = rng.integers(0, 2, L).astype(np.uint8)
    brute = [i for i, key in enumerate(pool.bits) if sum(int(a == b) for a, b in zip(key, m)) >= t]
    assert match_keys(m, pool, t).tolist() == brute


def test_match_keys_agrees_with_scan_large_pool():
    rng = np.random.default_rng(3)
    pool = KeyPool.random(100_000, 32, rng)
    m = rng.integers(0, 2, 32).astype(np.uint8)
    scan = np.flatnonzero((pool.bits == m).sum(axis=1) >= 24)
    assert np.array_equal(match_keys(m, pool, 24), scan)


def test_expected_suspects_binomial_tail():
    tail = sum(math.comb(32, i) for i in range(29, 33)) / 2 ** 32
    assert math.isclose(1000 * tail, 0.0013, rel_tol=0.05)
    # Monte-Carlo cross-check at a threshold where hits are frequent enough to count
    rng = np.random.default_rng(4)
    pool = KeyPool.random(1000, 32, rng)
    t = 22
    expected = 1000 * sum(math.comb(32, i) for i in range(t, 33)) / 2 ** 32
    counts = [len(match_keys(rng.integers(0, 2, 32), pool, t)) for _ in range(2000)]
    assert abs(np.mean(counts) - expected) < 3 * math.sqrt(expected / 2000) + 1e-9


def test_collision_probability_paper_value():
    p = collision_probability(32, 29, 10 ** 6)
    assert 0.71 <= p <= 0.73


def test_collision_probability_edges():
    assert collision_probability(32, 33, 10 ** 6) == 0.0
    assert collision_probability(32, 0, 5) == 1.0


def test_collision_probability_monte_carlo():
    L, t, size, trials = 8, 7, 50, 100_000
    rng = np.random.default_rng(5)
    keys = rng.integers(0, 2 ** L, size=(trials, size))
    probe = rng.integers(0, 2 ** L, size=(trials, 1))
    agree = L - np.bitwise_count((keys ^ probe).astype(np.uint8))
    estimate = np.mean((agree >= t).any(axis=1))
    p = collision_probability(L, t, size)
    sigma = math.sqrt(p * (1 - p) / trials)
    assert abs(estimate - p) <= 3 * sigma


@pytest.mark.parametrize("L,t", [(32, 29), (16, 12), (8, 5)])
def test_collision_probability_monotone(L, t):
    sizes = [1, 10, 100, 10 ** 4, 10 ** 6]
    values = [collision_probability(L, t, s) for s in sizes]
    assert values == sorted(values)
    assert collision_probability(L, t + 1, 1000) <= collision_probability(L, t, 1000)


def test_classify_and_categorize():
    assert categorize(classify(0.9, 0.5), True) == "TP"
    assert categorize(classify(0.5, 0.5), True) == "FN"
    assert categorize(classify(0.9, 0.5), False) == "FP"
    assert categorize(classify(0.1, 0.5), False) == "TN"


def test_true_key_requires_unique_best():
    agreement = np.array([30, 32, 29])
    assert true_key_extracted(agreement, 1, 29)
    assert not true_key_extracted(agreement, 0, 29)
    assert not true_key_extracted(np.array([31, 31]), 0, 29)
    assert not true_key_extracted(np.array([28, 10]), 0, 29)


@pytest.fixture(scope="module")
def ten_image_fixture():
    """Hand-built images with known outcomes at t=29, t_F=0.5.

    encoded 0: score .9, exact key            -> TP, true key
    encoded 1: score .8, 2 bit flips          -> TP, true key
    encoded 2: score .7, decodes to key 5     -> TP, wrong key
    encoded 3: score .6, 16 flips             -> TP, no suspect
    encoded 4: score .3, exact key            -> FN (naive: true key)
    encoded 5: score .2, decodes to key 7     -> FN (naive: wrong key)
    cover 6:   score .9, equals key 9         -> FP, false identification
    cover 7:   score .4, equals key 11        -> TN (naive: false identification)
    cover 8:   score .7, random far key       -> FP, no suspect
    cover 9:   score .1, random far key       -> TN
    """
    rng = np.random.default_rng(6)
    pool = KeyPool.random(20, 32, rng)
    keys = pool.bits
    far = 1 - keys[0]
    samples = [
        Sample(True, 0, 0.9, keys[0].copy()),
        Sample(True, 1, 0.8, flip(keys[1], [0, 5])),
        Sample(True, 2, 0.7, keys[5].copy()),
        Sample(True, 3, 0.6, flip(keys[3], range(16))),
        Sample(True, 4, 0.3, keys[4].copy()),
        Sample(True, 6, 0.2, keys[7].copy()),
        Sample(False, None, 0.9, keys[9].copy()),
        Sample(False, None, 0.4, keys[11].copy()),
        Sample(False, None, 0.7, far),
        Sample(False, None, 0.1, far),
    ]
    for s in samples[2:4] + samples[8:]:
        assert s.decoded is not None
    # the far and half-flipped decodes must not collide with any pool key
    for d in (far, samples[3].decoded):
        assert pool.agreement(d).max() < 29
    return samples, pool


def test_protocol_hand_computed(ten_image_fixture):
    samples, pool = ten_image_fixture
    double = evaluate_protocol(samples, pool, DetectionConfig(29, 0.5, "double"))
    assert (double.TIR, double.FIR_en, double.FIR_co) == (2 / 6, 1 / 6, 1 / 4)
    assert double.counts["TP"] == 4 and double.counts["FN"] == 2
    assert double.counts["FP"] == 2 and double.counts["TN"] == 2
    naive = evaluate_protocol(samples, pool, DetectionConfig(29, 0.5, "naive"))
    assert (naive.TIR, naive.FIR_en, naive.FIR_co) == (3 / 6, 2 / 6, 2 / 4)
    assert double.FIR_co <= naive.FIR_co
    assert sum(double.counts[c] for c in ("TP", "FP", "TN", "FN")) == 10


def test_protocol_all_covers():
    pool = KeyPool.random(10, 32, rng=0)
    samples = [Sample(False, None, 0.9, pool.bits[i].copy()) for i in range(4)]
    samples += [Sample(False, None, 0.1, pool.bits[i].copy()) for i in range(4)]
    r = evaluate_protocol(samples, pool, DetectionConfig(29, 0.5, "double"))
    assert (r.TIR, r.FIR_en, r.FIR_co) == (0.0, 0.0, 0.5)


def test_protocol_perfect_models():
    pool = KeyPool.random(50, 32, rng=1)
    far = 1 - pool.bits[0]
    samples = [Sample(True, i, 0.99, pool.bits[i].copy()) for i in range(10)]
    samples += [Sample(False, None, 0.01, far) for _ in range(10)]
    r = evaluate_protocol(samples, pool, DetectionConfig(29, 0.5, "double"))
    assert (r.TIR, r.FIR_en, r.FIR_co) == (1.0, 0.0, 0.0)


def test_protocol_empty():
    with pytest.raises(ValueError):
        evaluate_protocol([], KeyPool.random(3, 32, rng=0), DetectionConfig())


def test_threshold_grid_contains_scores():
    grid = threshold_grid([0.123, 0.5])
    assert 0.123 in grid and len(grid) == 202 and grid[0] == 0 and grid[-1] == 1


def test_select_threshold_prefers_low_fir_co_within_tolerance():
    table = [{"t_F": 0.2, "TIR": 0.95, "FIR_en": 0.0, "FIR_co": 0.30},
             {"t_F": 0.6, "TIR": 0.91, "FIR_en": 0.0, "FIR_co": 0.01},
             {"t_F": 0.9, "TIR": 0.80, "FIR_en": 0.0, "FIR_co": 0.00}]
    assert select_threshold(table)["t_F"] == 0.6


def test_sweep_separated_scores():
    pool = KeyPool.random(30, 32, rng=2)
    far = 1 - pool.bits[0]
    samples = [Sample(True, i, 0.8 + 0.01 * i, pool.bits[i].copy()) for i in range(10)]
    samples += [Sample(False, None, 0.1 + 0.01 * i, pool.bits[10 + i].copy()) for i in range(10)]
    samples += [Sample(False, None, 0.05, far)]
    t_F, table = sweep_threshold(samples, pool)
    chosen = next(r for r in table if r["t_F"] == t_F)
    assert chosen["TIR"] == 1.0 and chosen["FIR_co"] == 0.0
    assert 0.19 <= t_F < 0.8
    # the largest threshold that still keeps every encoded image
    assert t_F == max(r["t_F"] for r in table if r["TIR"] == 1.0 and r["FIR_co"] == 0.0)
    fir_co = [r["FIR_co"] for r in table]
    assert all(a >= b for a, b in zip(fir_co, fir_co[1:]))


def test_sweep_degenerate_scores(caplog):
    pool = KeyPool.random(5, 32, rng=3)
    samples = [Sample(True, 0, 0.4, pool.bits[0].copy()), Sample(False, None, 0.4, 1 - pool.bits[0])]
    t_F, _ = sweep_threshold(samples, pool)
    assert t_F == 0.4
    assert "equal" in caplog.text
