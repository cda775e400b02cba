"""How close is the differentiable JPEG to a real encoder?

Compares jpeg_approx (hard rounding) with Pillow's libjpeg at several qualities.
Run:  python3 demos/jpeg_check.py
"""
import io

import numpy as np
from PIL import Image

from ddmark.color import rgb_to_ycrcb, to_array, to_tensor, ycrcb_to_rgb
from ddmark.data import synthetic_photos
from ddmark.jpeg import jpeg_approx, quant_tables
from ddmark.transparency import psnr


def pillow(rgb, q):
    buf = io.BytesIO()
    Image.fromarray(rgb).save(buf, "JPEG", quality=q, subsampling=2)
    return np.asarray(Image.open(io.BytesIO(buf.getvalue())).convert("RGB"))


photos = synthetic_photos(8, 128, seed=11)
print(" q   vs-original(ours)  vs-original(pillow)  ours-vs-pillow")
for q in (10, 30, 50, 75, 95):
    ours_o, pil_o, cross = [], [], []
    for rgb in photos:
        ref = pillow(rgb, q) / 255.0
        ours = ycrcb_to_rgb(to_array(jpeg_approx(to_tensor(rgb_to_ycrcb(rgb / 255.0)).double(), q, "hard")))
        ours_o.append(psnr(ours, rgb / 255.0))
        pil_o.append(psnr(ref, rgb / 255.0))
        cross.append(psnr(ours, ref))
    print(f"{q:3d}   {np.mean(ours_o):8.2f}           {np.mean(pil_o):8.2f}           {np.mean(cross):8.2f}")

luma, chroma = quant_tables(50)
print("q=50 luma table, first row:", luma[0].tolist())
