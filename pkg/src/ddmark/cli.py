"""``ddmark`` command line.

Every command reads an optional JSON config (``--config``); explicit flags
override it, and it overrides the built-in defaults. Images are 8-bit RGB
PNG files, messages are MSB-first hex, and reports are JSON (plus CSV
tables) carrying a snapshot of the resolved configuration.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import msgcodec
from .attacks import AttackParamError, AttackSpec, apply_attack
from .color import rgb_to_ycrcb, to_array, to_tensor, ycrcb_to_rgb
from .data import load_dataset, load_image_dir, read_rgb, write_rgb
from .identification import DetectionConfig, KeyPool, classify, sweep_threshold, write_report
from .identification import write_sweep_csv as write_threshold_csv
from .networks import load_checkpoint
from .training import LossWeights, TrainConfig, decode_messages, encode_batch, train_pipeline
from .transparency import bernoulli_blend, psnr, transparency_sweep
from .transparency import write_sweep_csv as write_transparency_csv

log = logging.getLogger("ddmark")


class UsageError(Exception):
    pass


# -- configuration -------------------------------------------------------------

@dataclass
class RunConfig:
    """Training configuration plus artifact paths and evaluation options."""

    train: TrainConfig = field(default_factory=TrainConfig)
    checkpoint: str | None = None
    keys: str | None = None
    report_dir: str = "reports"
    n_images: int = 100
    pool_size: int = 1000
    t: int = 29
    t_F: float = 0.5
    p_values: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])

    OWN = ("checkpoint", "keys", "report_dir", "n_images", "pool_size", "t", "t_F", "p_values")

    def to_dict(self) -> dict:
        d = self.train.to_dict()
        d.update({k: getattr(self, k) for k in self.OWN})
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        own = {k: v for k, v in d.items() if k in cls.OWN}
        rest = {k: v for k, v in d.items() if k not in cls.OWN}
        return cls(TrainConfig.from_dict(rest), **own)


def _train_fields():
    return {f.name: f for f in dataclasses.fields(TrainConfig) if f.name != "weights"}


def _flag_type(default):
    if isinstance(default, bool):
        return None
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


def add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    g = p.add_argument_group("configuration (mirrors config keys)")
    defaults = TrainConfig()
    for name, f in _train_fields().items():
        default = getattr(defaults, name)
        if name in ("attacks", "eval_attacks"):
            g.add_argument(f"--{name.replace('_', '-')}", dest=name, nargs="+", default=None,
                           metavar="SPEC")
        elif name in ("eval_images", "prenoise_p"):
            g.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None,
                           type=int if name == "eval_images" else float)
        else:
            g.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, type=_flag_type(default))
    for name in ("lambda_E", "lambda_F", "lambda_D_mean", "lambda_D_var"):
        g.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float, default=None)
    g.add_argument("--checkpoint", default=None)
    g.add_argument("--keys", default=None, help="key pool file, one hex key per line")
    g.add_argument("--report-dir", dest="report_dir", default=None)
    g.add_argument("--n-images", dest="n_images", type=int, default=None)
    g.add_argument("--pool-size", dest="pool_size", type=int, default=None)
    g.add_argument("--t", type=int, default=None, help="bit-match threshold")
    g.add_argument("--t-F", dest="t_F", type=float, default=None, help="discriminator threshold")
    g.add_argument("--p-values", dest="p_values", type=float, nargs="+", default=None)


def resolve_config(args) -> RunConfig:
    merged: dict = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            merged.update(json.load(fh))
    weights = dict(merged.get("weights") or dataclasses.asdict(LossWeights()))
    for key in RunConfig.OWN + tuple(_train_fields()):
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    for key in weights:
        value = getattr(args, key, None)
        if value is not None:
            weights[key] = value
    merged["weights"] = weights
    try:
        return RunConfig.from_dict(merged)
    except (TypeError, ValueError, AttackParamError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


# -- helpers ---------------------------------------------------------------------

def _load_model(cfg: RunConfig):
    if not cfg.checkpoint:
        raise UsageError("--checkpoint is required")
    if not Path(cfg.checkpoint).exists():
        raise UsageError(f"checkpoint not found: {cfg.checkpoint}")
    model, _ = load_checkpoint(cfg.checkpoint)
    return model


def _read(path) -> np.ndarray:
    try:
        return read_rgb(path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read image {path}: {exc}") from exc


def _to_ycc(rgb: np.ndarray) -> torch.Tensor:
    return to_tensor(rgb_to_ycrcb(rgb / 255.0))


def _to_rgb8(ycc: torch.Tensor) -> np.ndarray:
    return np.round(ycrcb_to_rgb(to_array(ycc)) * 255.0).astype(np.uint8)


def _snapshot(cfg: RunConfig, **extra) -> dict:
    return {"config": cfg.to_dict(), **extra}


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, default=float))


def _covers(cfg: RunConfig) -> torch.Tensor:
    tc = cfg.train
    if tc.data_dir:
        return load_image_dir(tc.data_dir, tc.image_size, cfg.n_images)
    return load_dataset(0, cfg.n_images, tc.image_size, None, tc.seed + 1)[1]


def _pool(cfg: RunConfig, L: int) -> KeyPool:
    if cfg.keys:
        if not Path(cfg.keys).exists():
            raise UsageError(f"key pool not found: {cfg.keys}")
        return KeyPool.load(cfg.keys, L)
    return KeyPool.random(cfg.pool_size, L, rng=cfg.train.seed)


# -- commands ----------------------------------------------------------------------

def cmd_train(args, cfg: RunConfig) -> int:
    out = Path(cfg.train.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "run_config.json", "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
    _, final = train_pipeline(cfg.train, resume_from=args.resume)
    _emit({"checkpoint": str(final), "metrics": str(out / "metrics.csv")})
    return 0


def embed_image(model, rgb: np.ndarray, bits: np.ndarray, seed: int = 0, p_blend: float | None = None):
    """Embed ``bits`` into an 8-bit RGB array; returns the 8-bit RGB result."""
    cover = _to_ycc(rgb)
    with torch.no_grad():
        enc, _, _ = encode_batch(model, cover, np.random.default_rng(seed), bits[None])
    out = np.clip(ycrcb_to_rgb(to_array(enc)), 0, 1)
    if p_blend is not None:
        # blending in file space keeps untouched entries byte-exact
        out = bernoulli_blend(out, rgb / 255.0, p_blend, seed=seed)
    return np.round(out * 255.0).astype(np.uint8)


def cmd_embed(args, cfg: RunConfig) -> int:
    model = _load_model(cfg)
    try:
        bits = msgcodec.message_from_hex(args.message, model.params.L)
    except (ValueError, msgcodec.InvalidParamsError) as exc:
        raise UsageError(str(exc)) from exc
    rgb = _read(args.image)
    out = embed_image(model, rgb, bits, cfg.train.seed, args.p_blend)
    snap = _snapshot(cfg, command="embed", message=args.message.lower(), p_blend=args.p_blend)
    write_rgb(args.out, out, {"ddmark": json.dumps(snap)})
    y, cr, cb = psnr(rgb_to_ycrcb(out / 255.0), rgb_to_ycrcb(rgb / 255.0), per_channel=True)
    _emit({"out": str(args.out), "psnr_Y": y, "psnr_Cb": cb, "psnr_Cr": cr})
    return 0


def extract_image(model, rgb: np.ndarray):
    """Return ``(bits, per-slice confidences)`` decoded from an RGB array."""
    img = _to_ycc(rgb)
    b = model.params.b
    if img.shape[-1] < b or img.shape[-2] < b:
        raise UsageError(f"image is smaller than one {b}x{b} cell")
    with torch.no_grad():
        soft = model.decode(img)[0].numpy().transpose(1, 2, 0)
    params = model.params.with_size(soft.shape[1] * b, soft.shape[0] * b)
    try:
        return msgcodec.translate(soft, params)
    except msgcodec.CapacityError as exc:
        raise UsageError(str(exc)) from exc


def cmd_extract(args, cfg: RunConfig) -> int:
    model = _load_model(cfg)
    bits, conf = extract_image(model, _read(args.image))
    _emit({"message": msgcodec.message_to_hex(bits), "confidences": [float(c) for c in conf]})
    return 0


def cmd_attack(args, cfg: RunConfig) -> int:
    try:
        spec = AttackSpec.parse(args.spec)
    except AttackParamError as exc:
        raise UsageError(f"bad attack spec {args.spec!r}: {exc}") from exc
    rgb = _read(args.image)
    enc = _to_ycc(rgb)
    cov = _to_ycc(_read(args.cover)) if args.cover else enc
    if cov.shape != enc.shape:
        raise UsageError("cover and image sizes differ")
    with torch.no_grad():
        res = apply_attack(enc, cov, None, spec, np.random.default_rng(cfg.train.seed), cfg.train.b)
    out = _to_rgb8(res.encoded)
    snap = _snapshot(cfg, command="attack", spec=str(spec))
    write_rgb(args.out, out, {"ddmark": json.dumps(snap)})
    _emit({"out": str(args.out), "spec": str(spec), "size": [out.shape[1], out.shape[0]]})
    return 0


def cmd_detect(args, cfg: RunConfig) -> int:
    model = _load_model(cfg)
    with torch.no_grad():
        score = float(model.score(_to_ycc(_read(args.image))).reshape(-1)[0])
    _emit({"score": score, "t_F": cfg.t_F, "watermarked": classify(score, cfg.t_F)})
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    from .evaluation import attack_table

    model = _load_model(cfg)
    pool = _pool(cfg, model.params.L)
    covers = _covers(cfg)
    attacks = cfg.train.eval_attacks or cfg.train.attacks
    rows = attack_table(model, covers, pool, attacks, DetectionConfig(cfg.t, cfg.t_F), cfg.train.seed,
                        cfg.train.batch_size)
    out = Path(cfg.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    import csv

    with open(out / "evaluation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    report = _snapshot(cfg, command="evaluate", images=len(covers), pool_size=len(pool), rows=rows)
    write_report(report, out / "evaluation.json")
    _emit({"report": str(out / "evaluation.json"), "rows": rows})
    return 0


def cmd_sweep_threshold(args, cfg: RunConfig) -> int:
    from .evaluation import collect_samples

    model = _load_model(cfg)
    pool = _pool(cfg, model.params.L)
    samples, _ = collect_samples(model, _covers(cfg), pool, args.attack, cfg.train.seed, cfg.train.batch_size)
    t_F, table = sweep_threshold(samples, pool, cfg.t)
    out = Path(cfg.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_threshold_csv(table, out / "threshold_sweep.csv")
    write_report(_snapshot(cfg, command="sweep-threshold", attack=args.attack, t_F=t_F, table=table),
                 out / "threshold_sweep.json")
    _emit({"t_F": t_F, "table": str(out / "threshold_sweep.csv")})
    return 0


def cmd_transparency_sweep(args, cfg: RunConfig) -> int:
    model = _load_model(cfg)
    attacks = cfg.train.eval_attacks or ["none"]
    rows = transparency_sweep(model, _covers(cfg), cfg.p_values, attacks, cfg.train.seed, cfg.train.batch_size)
    out = Path(cfg.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_transparency_csv(rows, out / "transparency.csv")
    write_report(_snapshot(cfg, command="transparency-sweep", rows=rows), out / "transparency.json")
    _emit({"report": str(out / "transparency.json"), "rows": rows})
    return 0


# -- entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddmark", description="Deep image watermarking toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the four networks")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="write a watermarked copy of an image")
    p.add_argument("image")
    p.add_argument("--message", "-m", required=True, help="hex message, MSB first")
    p.add_argument("--out", "-o", required=True)
    p.add_argument("--p-blend", dest="p_blend", type=float, default=None,
                   help="keep each encoded entry with this probability")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("extract", help="decode the message from an image")
    p.add_argument("image")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("attack", help="apply one distortion to an image")
    p.add_argument("image")
    p.add_argument("--spec", "-s", required=True, help='e.g. "crop:p=0.3", "jpeg:q=50", "none"')
    p.add_argument("--out", "-o", required=True)
    p.add_argument("--cover", help="cover image for cropout/dropout (defaults to the image itself)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("detect", help="discriminator score and decision")
    p.add_argument("image")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="per-attack bit accuracy and identification rates")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-threshold", help="choose the discriminator threshold")
    p.add_argument("--attack", default="none")
    p.set_defaults(func=cmd_sweep_threshold)

    p = sub.add_parser("transparency-sweep", help="PSNR and accuracy versus blend probability")
    p.set_defaults(func=cmd_transparency_sweep)

    for action in sub.choices.values():
        add_config_flags(action)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "train" else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except UsageError as exc:
        parser.exit(2, f"ddmark {args.command}: error: {exc}\n")


if __name__ == "__main__":
    sys.exit(main())
