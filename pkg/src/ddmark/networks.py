"""Adapter, encoder, decoder and discriminator networks.

All four are built from conv-bn-relu blocks (reflection padding, stride 1) and
are fully convolutional except for the discriminator's global pooling head.
"""
from __future__ import annotations

import torch
from torch import nn

from .msgcodec import SpreadParams

CHECKPOINT_VERSION = 1


class ConvBNReLU(nn.Sequential):
    def __init__(self, in_channels: int, out_channels: int = 64, kernel: int = 3):
        pad = (kernel - 1) // 2
        super().__init__(
            nn.Conv2d(in_channels, out_channels, kernel, padding=pad,
                      padding_mode="reflect" if pad else "zeros"),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )


class Adapter(nn.Module):
    """Maps the extended message ``(B, k', H, W)`` to a 6-channel representation."""

    def __init__(self, k_prime: int = 6, channels: int = 64, out_channels: int = 6):
        super().__init__()
        self.layers = nn.Sequential(
            ConvBNReLU(k_prime, channels),
            ConvBNReLU(channels, channels),
            ConvBNReLU(channels, channels),
            ConvBNReLU(channels, out_channels),
        )

    def forward(self, m_ext):
        return self.layers(m_ext)


class Encoder(nn.Module):
    def __init__(self, channels: int = 64, adapted_channels: int = 6):
        super().__init__()
        self.features = nn.Sequential(ConvBNReLU(3, channels), ConvBNReLU(channels, channels),
                                      ConvBNReLU(channels, channels))
        self.merge = nn.Sequential(ConvBNReLU(channels + 3 + adapted_channels, channels),
                                   ConvBNReLU(channels, channels))
        self.final = nn.Conv2d(3 + channels, 3, kernel_size=1)
        # start as a pass-through of the cover; the message path grows from zero
        with torch.no_grad():
            self.final.weight.zero_()
            self.final.weight[:, :3, 0, 0] = torch.eye(3)
            self.final.bias.zero_()

    def forward(self, cover, adapted):
        h = self.features(cover)
        h = self.merge(torch.cat([h, cover, adapted], dim=1))
        out = self.final(torch.cat([cover, h], dim=1))
        # clamping only outside training keeps gradients alive at the range edges
        return out if self.training else out.clamp(0.0, 1.0)


class Decoder(nn.Module):
    """Predicts the soft cell grid ``(B, k', H // b, W // b)`` in [0, 1]."""

    def __init__(self, k_prime: int = 6, b: int = 16, channels: int = 64, depth: int = 8):
        super().__init__()
        self.b = b
        blocks = [ConvBNReLU(3, channels)] + [ConvBNReLU(channels, channels) for _ in range(depth - 1)]
        self.features = nn.Sequential(*blocks)
        self.pool = nn.AvgPool2d(b, stride=b)
        self.head = nn.Sequential(ConvBNReLU(channels, channels, kernel=1),
                                  nn.Conv2d(channels, k_prime, kernel_size=1))

    def forward(self, img):
        if min(img.shape[-2:]) < self.b:
            raise ValueError(f"image {tuple(img.shape[-2:])} is smaller than one {self.b}px block")
        return torch.sigmoid(self.head(self.pool(self.features(img))))


class Discriminator(nn.Module):
    """Scores an image: towards 1 for encoded images, towards 0 for covers."""

    def __init__(self, channels: int = 64):
        super().__init__()
        self.features = nn.Sequential(ConvBNReLU(3, channels), ConvBNReLU(channels, channels),
                                      ConvBNReLU(channels, channels))
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.linear = nn.Linear(channels, 1)

    def forward(self, img):
        h = self.pool(self.features(img)).flatten(1)
        return torch.sigmoid(self.linear(h)).squeeze(1)


class WatermarkModel(nn.Module):
    """The four networks plus the spreading parameters they were trained for."""

    def __init__(self, params: SpreadParams | None = None, channels: int = 64):
        super().__init__()
        self.params = params or SpreadParams()
        self.channels = channels
        kp = self.params.k_prime
        self.adapter = Adapter(kp, channels)
        self.encoder = Encoder(channels)
        self.decoder = Decoder(kp, self.params.b, channels)
        self.discriminator = Discriminator(channels)
        # channels_last roughly halves CPU conv time. Every model uses it, so a
        # reloaded checkpoint runs the same kernels as the model that was trained
        self.to(memory_format=torch.channels_last)

    def embed(self, cover, m_ext, adapted=None):
        """Encode ``cover``; pass ``adapted`` to reuse a precomputed adapter output."""
        if adapted is None:
            adapted = self.adapter(m_ext)
        if adapted.shape[0] != cover.shape[0]:
            adapted = adapted.expand(cover.shape[0], -1, -1, -1)
        return self.encoder(cover, adapted)

    def decode(self, img):
        return self.decoder(img)

    def score(self, img):
        return self.discriminator(img)


def model_config(model: WatermarkModel) -> dict:
    p = model.params
    return {"L": p.L, "k": p.k, "b": p.b, "n": p.n, "W": p.W, "H": p.H, "channels": model.channels}


def save_checkpoint(path, model: WatermarkModel, step: int = 0, config: dict | None = None,
                    extra: dict | None = None) -> None:
    state = {
        "format_version": CHECKPOINT_VERSION,
        "step": step,
        "model": model_config(model),
        "config": config or {},
        "adapter": model.adapter.state_dict(),
        "encoder": model.encoder.state_dict(),
        "decoder": model.decoder.state_dict(),
        "discriminator": model.discriminator.state_dict(),
    }
    if extra:
        state.update(extra)
    torch.save(state, path)


def load_checkpoint(path, map_location="cpu") -> tuple[WatermarkModel, dict]:
    """Return ``(model in eval mode, raw checkpoint dict)``."""
    state = torch.load(path, map_location=map_location, weights_only=False)
    if state.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {state.get('format_version')!r}")
    cfg = dict(state["model"])
    channels = cfg.pop("channels")
    model = WatermarkModel(SpreadParams(**cfg), channels)
    for name in ("adapter", "encoder", "decoder", "discriminator"):
        getattr(model, name).load_state_dict(state[name])
    model.eval()
    return model, state
