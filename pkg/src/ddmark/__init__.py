"""Deep image watermarking.

The message is spread over a grid of cells (:mod:`ddmark.msgcodec`), embedded
by a small CNN (:mod:`ddmark.networks`), trained against differentiable
distortions (:mod:`ddmark.attacks`, :mod:`ddmark.jpeg`) and recovered with an
optional discriminator gate (:mod:`ddmark.identification`).
"""
from .attacks import AttackSpec, apply_attack
from .identification import DetectionConfig, KeyPool, collision_probability, evaluate_protocol
from .msgcodec import SpreadParams, propagate, translate
from .networks import WatermarkModel, load_checkpoint, save_checkpoint
from .training import TrainConfig, Trainer, train_pipeline
from .transparency import bernoulli_blend, psnr

__version__ = "0.1.0"
