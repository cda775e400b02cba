"""Trading watermark strength for image quality after training.

Keeping each encoded entry with probability p (and the cover entry
otherwise) moves PSNR up and accuracy down without retraining.

Run:  python3 demos/transparency_dial.py path/to/checkpoint.pt
"""
import sys

from ddmark.data import load_dataset
from ddmark.networks import load_checkpoint
from ddmark.transparency import transparency_sweep

if len(sys.argv) < 2:
    sys.exit("usage: transparency_dial.py CHECKPOINT  (train one with demos/train_small.py)")
model, state = load_checkpoint(sys.argv[1])
size = state["config"].get("image_size", 128)
_, covers = load_dataset(0, 24, size, seed=42)

rows = transparency_sweep(model, covers, [0.0, 0.2, 0.4, 0.6, 0.8, 1.0], ["none", "jpeg:q=75"], seed=1)
print("   p   PSNR-Y  PSNR-Cb  PSNR-Cr   acc(none)  acc(jpeg75)")
for r in rows:
    print(f"{r['p']:5.1f}  {r['psnr_Y']:6.2f}  {r['psnr_Cb']:6.2f}  {r['psnr_Cr']:6.2f}"
          f"     {r['none']:.3f}      {r['jpeg:q=75']:.3f}")
