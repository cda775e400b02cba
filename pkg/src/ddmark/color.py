"""RGB <-> YCrCb conversion (ITU-R BT.601, full range, as used by JPEG/JFIF).

Channel order of every image tensor in this package is ``(Y, Cr, Cb)`` with
all components in [0, 1]; chroma is centred on 0.5.
"""
import numpy as np
import torch

Y, CR, CB = 0, 1, 2
CHANNEL_NAMES = ("Y", "Cr", "Cb")

_RGB_TO_YCRCB = np.array([
    [0.299, 0.587, 0.114],
    [0.5, -0.418688, -0.081312],
    [-0.168736, -0.331264, 0.5],
])
_OFFSET = np.array([0.0, 0.5, 0.5])
_YCRCB_TO_RGB = np.linalg.inv(_RGB_TO_YCRCB)


def rgb_to_ycrcb(rgb: np.ndarray) -> np.ndarray:
    """``(H, W, 3)`` RGB in [0, 1] to ``(H, W, 3)`` YCrCb in [0, 1]."""
    return np.clip(rgb @ _RGB_TO_YCRCB.T + _OFFSET, 0.0, 1.0)


def ycrcb_to_rgb(ycc: np.ndarray) -> np.ndarray:
    return np.clip((ycc - _OFFSET) @ _YCRCB_TO_RGB.T, 0.0, 1.0)


def rgb_to_ycrcb_torch(rgb: torch.Tensor) -> torch.Tensor:
    """Batched ``(B, 3, H, W)`` variant."""
    m = torch.as_tensor(_RGB_TO_YCRCB, dtype=rgb.dtype, device=rgb.device)
    off = torch.as_tensor(_OFFSET, dtype=rgb.dtype, device=rgb.device)
    return torch.einsum("ij,bjhw->bihw", m, rgb) + off[None, :, None, None]


def ycrcb_to_rgb_torch(ycc: torch.Tensor) -> torch.Tensor:
    m = torch.as_tensor(_YCRCB_TO_RGB, dtype=ycc.dtype, device=ycc.device)
    off = torch.as_tensor(_OFFSET, dtype=ycc.dtype, device=ycc.device)
    return torch.einsum("ij,bjhw->bihw", m, ycc - off[None, :, None, None])


def to_tensor(img: np.ndarray) -> torch.Tensor:
    """``(H, W, 3)`` array to a ``(1, 3, H, W)`` float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1), dtype=np.float32))[None]


def to_array(t: torch.Tensor) -> np.ndarray:
    """``(1, 3, H, W)`` or ``(3, H, W)`` tensor to ``(H, W, 3)`` float64 array."""
    t = t.detach().cpu()
    if t.ndim == 4:
        t = t[0]
    return t.permute(1, 2, 0).double().numpy()
