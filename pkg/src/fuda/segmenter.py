"""Dilated-residual U-Net with bottleneck feature exposure.

Three encoder scales of residual double-conv blocks, a bottleneck whose
blocks cascade through the configured dilation rates, and a skip-connected
decoder ending in a 4-class head. Smooth activations (SiLU) and single-group
GroupNorm keep the forward pass batch-independent, deterministic in eval
mode, and differentiable enough for finite-difference verification.
"""
from __future__ import annotations

from typing import NamedTuple

import torch
from torch import Tensor, nn

from .config import SegConfig
from .errors import ShapeError
from .slices import NUM_CLASSES


class SegOutput(NamedTuple):
    logits: Tensor      # (B, 4, H, W)
    bottleneck: Tensor  # deepest features, (B, C, H/4, W/4)


class ResBlock(nn.Module):
    """GroupNorm/SiLU double conv with an additive skip (1x1 projection if needed)."""

    def __init__(self, in_ch: int, out_ch: int, dilation: int = 1):
        super().__init__()
        pad = dilation
        self.body = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=pad, dilation=dilation),
            nn.GroupNorm(1, out_ch),
            nn.SiLU(),
            nn.Conv2d(out_ch, out_ch, 3, padding=pad, dilation=dilation),
            nn.GroupNorm(1, out_ch),
        )
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()
        self.act = nn.SiLU()

    def forward(self, x: Tensor) -> Tensor:
        return self.act(self.body(x) + self.skip(x))


class DRUNet(nn.Module):
    def __init__(self, cfg: SegConfig, in_ch: int = 1, n_classes: int = NUM_CLASSES):
        super().__init__()
        w1, w2, w3 = cfg.widths
        self.stem = nn.Conv2d(in_ch, w1, 3, padding=1)
        self.enc1 = ResBlock(w1, w1)
        self.down1 = nn.Conv2d(w1, w2, 3, stride=2, padding=1)
        self.enc2 = ResBlock(w2, w2)
        self.down2 = nn.Conv2d(w2, w3, 3, stride=2, padding=1)
        self.bottleneck = nn.Sequential(*[ResBlock(w3, w3, dilation=d)
                                          for d in cfg.dilations])
        self.up1 = nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"),
                                 nn.Conv2d(w3, w2, 3, padding=1))
        self.dec1 = ResBlock(2 * w2, w2)
        self.up2 = nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"),
                                 nn.Conv2d(w2, w1, 3, padding=1))
        self.dec2 = ResBlock(2 * w1, w1)
        self.head = nn.Conv2d(w1, n_classes, 1)

    def forward(self, x: Tensor) -> SegOutput:
        if x.dim() != 4:
            raise ShapeError(f"expected (B, 1, H, W) input, got {tuple(x.shape)}")
        if x.shape[-1] % 4 or x.shape[-2] % 4:
            raise ShapeError(f"spatial dims must be multiples of 4, got {tuple(x.shape[-2:])}")
        s1 = self.enc1(self.stem(x))
        s2 = self.enc2(self.down1(s1))
        z = self.bottleneck(self.down2(s2))
        h = self.dec1(torch.cat([self.up1(z), s2], dim=1))
        h = self.dec2(torch.cat([self.up2(h), s1], dim=1))
        return SegOutput(logits=self.head(h), bottleneck=z)

    @torch.no_grad()
    def predict(self, x: Tensor) -> Tensor:
        """Hard label map (B, H, W); runs in eval mode."""
        was_training = self.training
        self.eval()
        try:
            return self.forward(x).logits.argmax(dim=1)
        finally:
            self.train(was_training)
