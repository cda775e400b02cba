"""Every distortion in the training noiser, applied to one photograph.

Run:  python3 demos/attacks_tour.py [out_dir]
Writes one PNG per attack (default: ./attack_tour/).
"""
import sys
from pathlib import Path

import numpy as np
import torch

from ddmark.attacks import DEFAULTS, AttackSpec, apply_attack
from ddmark.color import rgb_to_ycrcb, to_array, to_tensor, ycrcb_to_rgb
from ddmark.data import synthetic_photos, write_rgb
from ddmark.transparency import psnr

out = Path(sys.argv[1] if len(sys.argv) > 1 else "attack_tour")
out.mkdir(exist_ok=True)

rgb = synthetic_photos(1, 256, seed=3)[0]
img = to_tensor(rgb_to_ycrcb(rgb / 255.0))
# cropout and dropout need a second image to fill in with; use a flipped copy so the effect is visible
other = torch.flip(img, dims=[-1])

for kind in ["none", *DEFAULTS]:
    spec = AttackSpec.parse(kind)
    res = apply_attack(img, other, None, spec, seed=0)
    shown = np.round(ycrcb_to_rgb(to_array(res.encoded)) * 255).astype(np.uint8)
    write_rgb(out / f"{kind}.png", shown)
    if res.encoded.shape == img.shape:
        q = "PSNR-Y %.1f dB" % psnr(res.encoded, img, per_channel=True)[0]
    else:
        q = "now %dx%d" % tuple(res.encoded.shape[-2:])
    print(f"{str(spec):22s} {q}")

# Gradients flow through all of them (JPEG via a straight-through rounding).
x = img.clone().requires_grad_(True)
apply_attack(x, other, None, "jpeg:q=50", seed=0, clamp=False).encoded.sum().backward()
print("jpeg gradient norm", float(x.grad.norm()))
print("images in", out)
