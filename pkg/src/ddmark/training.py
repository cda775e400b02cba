"""Losses and the two-phase training loop.

Phase 1 alternates a discriminator step on its own objective with a joint
adapter/encoder/decoder step. Phase 2 freezes everything but the
discriminator and keeps training it on the same attack schedule.

All randomness after model initialization (data order, messages, layouts,
attack choice and realization) is drawn from generators keyed on
``(seed, step)``, so a run resumed from a checkpoint continues exactly as an
uninterrupted one.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import msgcodec
from .attacks import AttackSpec, apply_attack, prenoise
from .identification import bit_accuracy
from .networks import WatermarkModel, load_checkpoint, save_checkpoint
from .transparency import psnr

log = logging.getLogger(__name__)

EPS = 1e-6

TABLE_ATTACKS = ("none", "crop:p=0.3", "cropout:p=0.3", "dropout:p=0.5", "rotate:alpha=5",
                 "gaussian:sigma=2", "gaussian:sigma=4", "subsample420", "resize:s=0.5,m=N",
                 "resize:s=0.5,m=L", "jpeg:q=50")


# -- losses --------------------------------------------------------------------

@dataclass
class LossWeights:
    lambda_E: float = 2.4
    lambda_F: float = 0.05
    lambda_D_mean: float = 1.0
    lambda_D_var: float = 1.0

    def __post_init__(self):
        if min(dataclasses.astuple(self)) < 0:
            raise ValueError("loss weights must be non-negative")


ROBUST_WEIGHTS = LossWeights(3.0, 0.01, 1.0, 1.0)


def loss_encoder_mse(encoded, cover):
    return torch.mean((encoded - cover) ** 2)


def loss_decoder_meanvar(target, decoded, weights: LossWeights = LossWeights(), mask=None):
    """Mean over cells of ``mean + var`` of the absolute error across channels.

    Grids are ``(B, k', rows, cols)``; ``mask`` is ``(B, rows, cols)`` and
    excludes cells from the average.
    """
    err = torch.abs(target - decoded)
    cell = (weights.lambda_D_mean * err.mean(dim=1)
            + weights.lambda_D_var * err.var(dim=1, unbiased=False))
    if mask is None:
        return cell.mean()
    mask = mask.to(cell.dtype)
    return (cell * mask).sum() / mask.sum().clamp_min(1.0)


def loss_adversarial(score_encoded):
    return torch.log(score_encoded.clamp(EPS, 1 - EPS)).mean()


def loss_discriminator(score_cover, score_encoded):
    return (torch.log(score_cover.clamp(EPS, 1 - EPS))
            + torch.log(1 - score_encoded.clamp(EPS, 1 - EPS))).mean()


# -- batched message helpers ---------------------------------------------------

def spread_batch(messages: np.ndarray, params: msgcodec.SpreadParams, rng: np.random.Generator,
                 size: tuple[int, int] | None = None):
    """Ground-truth grids ``(B, k', r, c)`` and extended grids ``(B, k', H, W)``.

    ``size=(H, W)`` may exceed the grid coverage; the uncovered border then
    repeats the edge cells.
    """
    H, W = size or (params.H, params.W)
    grids, exts = [], []
    for m in messages:
        grid, ext = msgcodec.propagate(m, params, rng)
        pad = ((0, H - ext.shape[0]), (0, W - ext.shape[1]), (0, 0))
        if pad[0][1] or pad[1][1]:
            ext = np.pad(ext, pad, mode="edge")
        grids.append(grid.values)
        exts.append(ext)
    grids = torch.from_numpy(np.stack(grids).transpose(0, 3, 1, 2).copy())
    exts = torch.from_numpy(np.stack(exts).transpose(0, 3, 1, 2).copy())
    return grids, exts


def encode_batch(model: WatermarkModel, covers: torch.Tensor, rng: np.random.Generator,
                 messages: np.ndarray | None = None):
    """Embed random (or given) messages; returns ``(encoded, messages, grids)``."""
    B, _, H, W = covers.shape
    b = model.params.b
    params = model.params.with_size(W // b * b, H // b * b)
    if messages is None:
        messages = rng.integers(0, 2, size=(B, params.L), dtype=np.uint8)
    grids, exts = spread_batch(messages, params, rng, (H, W))
    return model.embed(covers, exts), messages, grids


def decode_messages(model: WatermarkModel, images: torch.Tensor, mask=None) -> np.ndarray:
    soft = model.decode(images).detach().cpu().numpy().transpose(0, 2, 3, 1)
    out = []
    for i, g in enumerate(soft):
        params = model.params.with_size(g.shape[1] * model.params.b, g.shape[0] * model.params.b)
        out.append(msgcodec.translate(g, params, None if mask is None else mask[i])[0])
    return np.stack(out)


def decode_accuracy(model: WatermarkModel, images: torch.Tensor, messages: np.ndarray) -> np.ndarray:
    decoded = decode_messages(model, images)
    return np.array([bit_accuracy(m, d) for m, d in zip(messages, decoded)])


# -- configuration -------------------------------------------------------------

@dataclass
class TrainConfig:
    data_dir: str | None = None
    n_train: int = 10000
    n_test: int = 1000
    image_size: int = 256
    L: int = 32
    k: int = 2
    b: int = 16
    n: int = 3
    channels: int = 64
    batch_size: int = 12
    epochs: int = 100
    disc_epochs: int = 20
    lr: float = 1e-3
    disc_lr: float = 1e-3
    attacks: list = field(default_factory=lambda: list(TABLE_ATTACKS))
    eval_attacks: list | None = None
    eval_images: int | None = None
    prenoise_p: float | None = None
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 10
    out_dir: str = "runs/default"

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        for a in self.attacks + (self.eval_attacks or []):
            AttackSpec.parse(a)

    @property
    def spread_params(self) -> msgcodec.SpreadParams:
        return msgcodec.SpreadParams(self.L, self.k, self.b, self.n, self.image_size, self.image_size)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> TrainConfig:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


# -- metrics log ---------------------------------------------------------------

class MetricsLog:
    """Append-only CSV; the header is fixed by the first row."""

    def __init__(self, path):
        self.path = Path(path)
        self.fields = None
        self._lock = threading.Lock()
        if self.path.exists():
            with open(self.path) as fh:
                self.fields = next(csv.reader(fh), None)

    def append(self, row: dict) -> None:
        with self._lock:
            new = self.fields is None
            if new:
                self.fields = list(row)
            with open(self.path, "a", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=self.fields)
                if new:
                    writer.writeheader()
                writer.writerow({k: _fmt(v) for k, v in row.items()})


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


# -- trainer -------------------------------------------------------------------

class Trainer:
    def __init__(self, config: TrainConfig, train_images=None, test_images=None):
        self.config = config
        torch.manual_seed(config.seed)
        self.model = WatermarkModel(config.spread_params, config.channels)
        m = self.model
        self.opt = torch.optim.Adam([*m.adapter.parameters(), *m.encoder.parameters(),
                                     *m.decoder.parameters()], lr=config.lr)
        self.opt_disc = torch.optim.Adam(m.discriminator.parameters(), lr=config.disc_lr)
        self.step = 0
        if train_images is None:
            from .data import load_dataset

            train_images, test_images = load_dataset(config.n_train, config.n_test,
                                                     config.image_size, config.data_dir, config.seed)
        self.train_images = train_images
        self.test_images = test_images
        self.attacks = [AttackSpec.parse(a) for a in config.attacks]
        self.out_dir = Path(config.out_dir)

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.train_images) / self.config.batch_size)

    @property
    def total_steps(self) -> int:
        return (self.config.epochs + self.config.disc_epochs) * self.steps_per_epoch

    def _batch(self, step: int) -> torch.Tensor:
        epoch, i = divmod(step, self.steps_per_epoch)
        order = np.random.default_rng([self.config.seed, 1, epoch]).permutation(len(self.train_images))
        bs = self.config.batch_size
        batch = self.train_images[order[i * bs:(i + 1) * bs]]
        return batch.contiguous(memory_format=torch.channels_last)

    def choose_attack(self, step: int) -> AttackSpec:
        """Uniform choice over the enabled attacks, one per iteration."""
        rng = np.random.default_rng([self.config.seed, 5, step])
        return self.attacks[rng.integers(len(self.attacks))]

    def _noise(self, enc, cov, grid, rng):
        b = self.config.b
        mask = None
        if self.config.prenoise_p is not None:
            pre = prenoise(enc, cov, grid, self.config.prenoise_p, rng, b)
            enc, cov = pre.encoded, pre.cover
        spec = self.choose_attack(self.step)
        res = apply_attack(enc, cov, grid, spec, rng, b, clamp=False)
        if res.grid_mask is not None:
            mask = res.grid_mask
        return res, mask, spec

    def train_step(self) -> dict:
        """One optimization step of whichever phase ``self.step`` falls in."""
        cfg, m = self.config, self.model
        rng = np.random.default_rng([cfg.seed, 2, self.step])
        cover = self._batch(self.step)
        phase = 1 if self.step < cfg.epochs * self.steps_per_epoch else 2
        if phase == 1:
            m.train()
            enc, _, grid = encode_batch(m, cover, rng)
        else:
            for net in (m.adapter, m.encoder, m.decoder):
                net.eval()
                net.requires_grad_(False)
            m.discriminator.train()
            with torch.no_grad():
                enc, _, grid = encode_batch(m, cover, rng)
        res, mask, spec = self._noise(enc, cover, grid, rng)

        self.opt_disc.zero_grad()
        loss_f = loss_discriminator(m.score(res.cover), m.score(res.encoded.detach()))
        loss_f.backward()
        self.opt_disc.step()
        row = {"phase": phase, "step": self.step, "attack": str(spec), "loss_F": loss_f.item()}

        if phase == 1:
            self.opt.zero_grad()
            loss_e = loss_encoder_mse(enc, cover)
            loss_d = loss_decoder_meanvar(res.grid, m.decode(res.encoded), cfg.weights, mask)
            total = cfg.weights.lambda_E * loss_e + loss_d
            loss_ef = torch.zeros(())
            if cfg.weights.lambda_F > 0:
                loss_ef = loss_adversarial(m.score(res.encoded))
                total = total + cfg.weights.lambda_F * loss_ef
            total.backward()
            self.opt.step()
            m.discriminator.zero_grad(set_to_none=True)
            row.update(loss_E=loss_e.item(), loss_D=loss_d.item(), loss_EF=loss_ef.item(),
                       loss_total=total.item())
        for key, value in row.items():
            if isinstance(value, float) and not math.isfinite(value):
                raise FloatingPointError(f"non-finite {key}={value} at step {self.step} ({spec})")
        self.step += 1
        return row

    def evaluate(self, attacks=None) -> dict:
        """Held-out bit accuracy per attack, PSNR per channel and discriminator rates."""
        cfg, m = self.config, self.model
        attacks = attacks or cfg.eval_attacks or cfg.attacks
        images = self.test_images if cfg.eval_images is None else self.test_images[:cfg.eval_images]
        m.eval()
        acc = {a: [] for a in attacks}
        psnrs, disc = [], []
        with torch.no_grad():
            for start in range(0, len(images), cfg.batch_size):
                cover = images[start:start + cfg.batch_size].contiguous(memory_format=torch.channels_last)
                rng = np.random.default_rng([cfg.seed, 3, start])
                enc, messages, _ = encode_batch(m, cover, rng)
                psnrs += [psnr(enc[i], cover[i], per_channel=True) for i in range(len(cover))]
                for j, a in enumerate(attacks):
                    res = apply_attack(enc, cover, None, a, np.random.default_rng([cfg.seed, 4, start, j]),
                                       cfg.b)
                    acc[a] += decode_accuracy(m, res.encoded, messages).tolist()
                    if a == "none":
                        disc += ((m.score(res.encoded) > 0.5).tolist()
                                 + (m.score(res.cover) <= 0.5).tolist())
        psnrs = np.array(psnrs)
        out = {"psnr_Y": psnrs[:, 0].mean(), "psnr_Cb": psnrs[:, 2].mean(), "psnr_Cr": psnrs[:, 1].mean()}
        out.update({f"acc[{a}]": float(np.mean(v)) for a, v in acc.items()})
        if disc:
            out["disc_acc"] = float(np.mean(disc))
        return out

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        save_checkpoint(path, self.model, self.step, self.config.to_dict(), extra={
            "optimizer": self.opt.state_dict(),
            "optimizer_disc": self.opt_disc.state_dict(),
        })

    def restore(self, path) -> None:
        model, state = load_checkpoint(path)
        self.model.load_state_dict(model.state_dict())
        self.opt.load_state_dict(state["optimizer"])
        self.opt_disc.load_state_dict(state["optimizer_disc"])
        self.step = state["step"]

    def run(self, resume_from=None, log_every: int = 10) -> Path:
        """Train to completion; returns the final checkpoint path."""
        cfg = self.config
        self.out_dir.mkdir(parents=True, exist_ok=True)
        cfg.save(self.out_dir / "config.json")
        if resume_from is not None:
            self.restore(resume_from)
        metrics = MetricsLog(self.out_dir / "metrics.csv")
        spe = self.steps_per_epoch
        sums: dict = {}
        t0 = time.time()
        while self.step < self.total_steps:
            row = self.train_step()
            for key in ("loss_E", "loss_D", "loss_EF", "loss_F"):
                if key in row:
                    sums.setdefault(key, []).append(row[key])
            if self.step % log_every == 0:
                log.info("step %d/%d %s (%.1fs)", self.step, self.total_steps,
                         {k: round(v, 5) for k, v in row.items() if k.startswith("loss")}, time.time() - t0)
            if self.step % spe == 0:
                epoch = self.step // spe
                record = {"epoch": epoch, "step": self.step, "phase": row["phase"]}
                for key in ("loss_E", "loss_D", "loss_EF", "loss_F"):
                    record[key] = float(np.mean(sums[key])) if key in sums else float("nan")
                record.update(self.evaluate())
                metrics.append(record)
                log.info("epoch %d %s", epoch, record)
                sums = {}
                if epoch % cfg.checkpoint_every == 0:
                    self.save(self.out_dir / f"checkpoint_e{epoch:03d}.pt")
        final = self.out_dir / "checkpoint_final.pt"
        self.save(final)
        return final


def train_pipeline(config: TrainConfig, train_images=None, test_images=None, resume_from=None):
    """Run both training phases; returns ``(trainer, final checkpoint path)``."""
    trainer = Trainer(config, train_images, test_images)
    path = trainer.run(resume_from)
    return trainer, path
