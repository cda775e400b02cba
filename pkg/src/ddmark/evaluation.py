"""Model-level evaluation: per-attack bit accuracy and identification samples.

These glue a trained :class:`~ddmark.networks.WatermarkModel` to the pure
protocol code in :mod:`ddmark.identification`.
"""
from __future__ import annotations

import numpy as np
import torch

from .attacks import AttackSpec, apply_attack
from .identification import DetectionConfig, KeyPool, Sample, bit_accuracy, evaluate_protocol
from .training import decode_messages, encode_batch


def collect_samples(model, covers: torch.Tensor, pool: KeyPool, attack, seed: int = 0,
                    batch_size: int = 16) -> tuple[list[Sample], np.ndarray]:
    """Embed pool keys, attack, and decode/score both encoded and cover images.

    Image ``i`` carries key ``key_index[i]``, drawn uniformly from the pool.
    Returns ``(samples, bit accuracies of the encoded images)``; the samples
    list holds all encoded images first, then all covers.
    """
    spec = AttackSpec.parse(attack) if isinstance(attack, str) else attack
    rng = np.random.default_rng([seed, 11])
    key_index = rng.integers(0, len(pool), size=len(covers))
    enc_samples, cov_samples, acc = [], [], []
    model.eval()
    with torch.no_grad():
        for start in range(0, len(covers), batch_size):
            cover = covers[start:start + batch_size]
            idx = key_index[start:start + batch_size]
            messages = pool.bits[idx]
            enc, _, _ = encode_batch(model, cover, np.random.default_rng([seed, 12, start]), messages)
            attacked = apply_attack(enc, cover, None, spec, np.random.default_rng([seed, 13, start]), model.params.b)
            plain = apply_attack(cover, cover, None, spec, np.random.default_rng([seed, 14, start]), model.params.b)
            dec_en = decode_messages(model, attacked.encoded)
            dec_co = decode_messages(model, plain.encoded)
            s_en = model.score(attacked.encoded).reshape(-1).tolist()
            s_co = model.score(plain.encoded).reshape(-1).tolist()
            for j in range(len(cover)):
                enc_samples.append(Sample(True, int(idx[j]), s_en[j], dec_en[j]))
                cov_samples.append(Sample(False, None, s_co[j], dec_co[j]))
                acc.append(bit_accuracy(messages[j], dec_en[j]))
    return enc_samples + cov_samples, np.array(acc)


def attack_table(model, covers, pool: KeyPool, attacks, config: DetectionConfig, seed: int = 0,
                 batch_size: int = 16) -> list[dict]:
    """One row per attack: bit accuracy plus naive and double identification rates."""
    rows = []
    for a in attacks:
        samples, acc = collect_samples(model, covers, pool, a, seed, batch_size)
        row = {"attack": str(AttackSpec.parse(a) if isinstance(a, str) else a), "bit_accuracy": float(acc.mean())}
        agreements = [pool.agreement(s.decoded) for s in samples]
        for mode in ("naive", "double"):
            cfg = DetectionConfig(config.t, config.t_F, mode)
            res = evaluate_protocol(samples, pool, cfg, agreements)
            row.update({f"{mode}_TIR": res.TIR, f"{mode}_FIR_en": res.FIR_en, f"{mode}_FIR_co": res.FIR_co})
        rows.append(row)
    return rows
