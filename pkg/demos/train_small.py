"""Train a deliberately small model for a few epochs and look at what it learned.

This is minutes on a laptop CPU, not the real thing: 32-channel networks, 64x64
images, 8 bits per message. Pass a directory of photos to use them instead of
the bundled scikit-image samples.

Run:  python3 demos/train_small.py [image_dir]
"""
import logging
import sys

from ddmark.training import TrainConfig, train_pipeline

logging.basicConfig(level=logging.INFO, format="%(message)s")

config = TrainConfig(
    data_dir=sys.argv[1] if len(sys.argv) > 1 else None,
    n_train=192, n_test=32, image_size=64, L=8, k=2, b=16, n=2,
    channels=32, batch_size=16, epochs=8, disc_epochs=1,
    attacks=["none", "dropout:p=0.3"], eval_attacks=["none", "dropout:p=0.3", "jpeg:q=75"],
    checkpoint_every=4, out_dir="runs/small",
)
trainer, final = train_pipeline(config)
print("\nfinal checkpoint:", final)
for key, value in trainer.evaluate().items():
    print(f"  {key:24s} {value:.3f}")
print("metrics per epoch in runs/small/metrics.csv")
