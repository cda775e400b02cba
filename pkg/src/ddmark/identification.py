"""Key identification: matching extracted keys against a key pool.

Two detection protocols are supported. The naive one decodes every image and
flags it when any pool key agrees with the extracted key on at least ``t``
bits. The double one first asks the discriminator whether the image is
watermarked (``score > t_F``) and only then decodes.

Rates are reported per image population, as in the usual tables:

``TIR``     encoded images that pass the gate and yield their true key
``FIR_en``  encoded images that pass the gate and yield a wrong key
``FIR_co``  cover images that pass the gate and yield any key
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class KeyPool:
    """Distinct ``L``-bit keys, packed into 64-bit words for fast matching."""

    def __init__(self, keys):
        keys = np.asarray(keys, dtype=np.uint8)
        if keys.ndim != 2 or len(keys) == 0:
            raise ValueError("key pool needs a non-empty (N, L) bit array")
        if not np.isin(keys, (0, 1)).all():
            raise ValueError("keys must be binary")
        self.L = keys.shape[1]
        self.bits = keys
        self.packed = pack_bits(keys)
        if len(np.unique(self.packed, axis=0)) != len(keys):
            raise ValueError("keys in a pool must be distinct")

    def __len__(self):
        return len(self.bits)

    @classmethod
    def random(cls, size: int, L: int = 32, rng=None) -> KeyPool:
        rng = np.random.default_rng(rng)
        if size > 2 ** L:
            raise ValueError(f"cannot draw {size} distinct {L}-bit keys")
        keys = np.zeros((0, L), dtype=np.uint8)
        while len(keys) < size:
            extra = rng.integers(0, 2, size=(size - len(keys), L), dtype=np.uint8)
            keys = np.concatenate([keys, extra])
            _, first = np.unique(pack_bits(keys), axis=0, return_index=True)
            keys = keys[np.sort(first)]
        return cls(keys)

    def agreement(self, m) -> np.ndarray:
        """Number of equal bits between ``m`` and every key."""
        packed = pack_bits(np.asarray(m, dtype=np.uint8)[None])[0]
        diff = np.bitwise_count(self.packed ^ packed).sum(axis=1)
        return self.L - diff.astype(np.int64)

    def save(self, path) -> None:
        """Newline-delimited hex, most-significant bit first."""
        width = math.ceil(self.L / 4)
        with open(path, "w") as fh:
            for row in self.bits:
                value = int("".join(map(str, row.tolist())), 2)
                fh.write(f"{value:0{width}x}\n")

    @classmethod
    def load(cls, path, L: int = 32) -> KeyPool:
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append([int(c) for c in f"{int(line, 16):0{L}b}"])
        return cls(np.array(rows, dtype=np.uint8))


def pack_bits(bits: np.ndarray) -> np.ndarray:
    n, L = bits.shape
    words = math.ceil(L / 64)
    padded = np.zeros((n, words * 64), dtype=np.uint8)
    padded[:, :L] = bits
    return np.packbits(padded, axis=1).view(">u8").astype(np.uint64)


def bit_accuracy(m, m2) -> float:
    m, m2 = np.asarray(m), np.asarray(m2)
    if m.shape != m2.shape:
        raise ValueError(f"length mismatch {m.shape} vs {m2.shape}")
    return float(np.mean(m == m2))


def match_keys(m, pool: KeyPool, t: int) -> np.ndarray:
    """Indices of pool keys sharing at least ``t`` bits with ``m``."""
    return np.flatnonzero(pool.agreement(m) >= t)


def collision_probability(L: int, t: int, pool_size: int) -> float:
    """Chance that a uniformly random key agrees with some pool key on >= t bits.

    Pool keys are treated as independent uniform draws.
    """
    if t > L:
        return 0.0
    tail = sum(math.comb(L, i) for i in range(max(t, 0), L + 1)) / 2 ** L
    if tail >= 1.0:
        return 1.0
    # 1 - (1 - tail)^N without cancellation for tiny tails and huge N
    return -math.expm1(pool_size * math.log1p(-tail))


def classify(score: float, t_F: float) -> bool:
    return score > t_F


def categorize(classified: bool, is_encoded: bool) -> str:
    if is_encoded:
        return "TP" if classified else "FN"
    return "FP" if classified else "TN"


def true_key_extracted(agreement: np.ndarray, true_index: int, t: int) -> bool:
    """The true key is a suspect and the unique best match."""
    a = agreement[true_index]
    return bool(a >= t and (agreement == a).sum() == 1 and a == agreement.max())


@dataclass
class DetectionConfig:
    t: int = 29
    t_F: float = 0.5
    mode: str = "double"

    def __post_init__(self):
        if self.mode not in ("naive", "double"):
            raise ValueError(f"mode must be naive or double, got {self.mode!r}")


@dataclass
class Sample:
    """One evaluated image: its ground truth and what the models produced."""

    is_encoded: bool
    key_index: int | None
    score: float
    decoded: np.ndarray


@dataclass
class ProtocolResult:
    TIR: float
    FIR_en: float
    FIR_co: float
    counts: dict = field(default_factory=dict)
    outcomes: list = field(default_factory=list, repr=False)


def identify(sample: Sample, pool: KeyPool, config: DetectionConfig, agreement=None) -> dict:
    gate = True if config.mode == "naive" else classify(sample.score, config.t_F)
    category = categorize(classify(sample.score, config.t_F), sample.is_encoded)
    if not gate:
        return {"gate": False, "category": category, "suspects": 0, "true_key": False}
    if agreement is None:
        agreement = pool.agreement(sample.decoded)
    n_suspects = int((agreement >= config.t).sum())
    hit = sample.is_encoded and true_key_extracted(agreement, sample.key_index, config.t)
    return {"gate": True, "category": category, "suspects": n_suspects, "true_key": hit}


def evaluate_protocol(samples: list[Sample], pool: KeyPool, config: DetectionConfig,
                      agreements: list | None = None) -> ProtocolResult:
    """Compute ``(TIR, FIR_en, FIR_co)`` over ``samples``.

    ``agreements`` optionally caches ``pool.agreement(decoded)`` per sample so
    that threshold sweeps do not rescan the pool.
    """
    if not samples:
        raise ValueError("no images to evaluate")
    outcomes = [identify(s, pool, config, None if agreements is None else agreements[i])
                for i, s in enumerate(samples)]
    n_en = sum(s.is_encoded for s in samples)
    n_co = len(samples) - n_en
    tir = sum(o["true_key"] for o in outcomes)
    wrong = sum(o["gate"] and o["suspects"] > 0 and not o["true_key"]
                for o, s in zip(outcomes, samples) if s.is_encoded)
    false_id = sum(o["gate"] and o["suspects"] > 0 for o, s in zip(outcomes, samples) if not s.is_encoded)
    counts = {c: sum(o["category"] == c for o in outcomes) for c in ("TP", "FP", "TN", "FN")}
    counts.update(encoded=n_en, cover=n_co, true_key=tir, wrong_key=wrong, false_id=false_id)
    return ProtocolResult(
        TIR=tir / n_en if n_en else 0.0,
        FIR_en=wrong / n_en if n_en else 0.0,
        FIR_co=false_id / n_co if n_co else 0.0,
        counts=counts,
        outcomes=outcomes,
    )


def threshold_grid(scores) -> np.ndarray:
    return np.unique(np.concatenate([np.linspace(0.0, 1.0, 201), np.asarray(scores, dtype=float)]))


def select_threshold(table: list[dict], tolerance: float = 0.05) -> dict:
    """Pick the row with the lowest ``FIR_co`` among those within ``tolerance``
    (absolute) of the best ``TIR``; remaining ties go to the larger threshold."""
    best = max(r["TIR"] for r in table)
    candidates = [r for r in table if best - r["TIR"] <= tolerance + 1e-12]
    return min(candidates, key=lambda r: (r["FIR_co"], -r["TIR"], -r["t_F"]))


def sweep_threshold(samples: list[Sample], pool: KeyPool, t: int = 29,
                    tolerance: float = 0.05) -> tuple[float, list[dict]]:
    """Sweep ``t_F`` for the double protocol; return ``(chosen t_F, table)``."""
    scores = np.array([s.score for s in samples])
    if np.ptp(scores) == 0:
        log.warning("all discriminator scores equal %.6f; using it as threshold", scores[0])
    agreements = [pool.agreement(s.decoded) for s in samples]
    table = []
    for t_F in threshold_grid(scores):
        r = evaluate_protocol(samples, pool, DetectionConfig(t, float(t_F), "double"), agreements)
        table.append({"t_F": float(t_F), "TIR": r.TIR, "FIR_en": r.FIR_en, "FIR_co": r.FIR_co})
    if np.ptp(scores) == 0:
        return float(scores[0]), table
    return select_threshold(table, tolerance)["t_F"], table


def write_sweep_csv(table: list[dict], path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["t_F", "TIR", "FIR_en", "FIR_co"])
        writer.writeheader()
        writer.writerows(table)


def write_report(report: dict, path) -> None:
    def default(o):
        if isinstance(o, np.generic):
            return o.item()
        if hasattr(o, "__dataclass_fields__"):
            return asdict(o)
        raise TypeError(type(o))

    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, default=default)
