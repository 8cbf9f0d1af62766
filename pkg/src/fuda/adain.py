"""Adaptive instance normalization on channel-wise feature moments."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .errors import ShapeError

EPS_STD = 1e-5
_VAR_TINY = 1e-20  # keeps sqrt differentiable on exactly-constant channels


@dataclass
class FeatureMoments:
    """Per-sample, per-channel (mean, std) of a feature tensor; both (B, C).

    std carries a floor of ``EPS_STD`` so renormalization never divides by
    zero on constant channels.
    """

    mean: Tensor
    std: Tensor

    def concat(self) -> Tensor:
        """(B, 2C) mean-then-std concatenation."""
        return torch.cat([self.mean, self.std], dim=1)

    @staticmethod
    def from_concat(vec: Tensor) -> "FeatureMoments":
        if vec.shape[-1] % 2:
            raise ShapeError(f"moment vector length {vec.shape[-1]} is odd")
        c = vec.shape[-1] // 2
        return FeatureMoments(mean=vec[..., :c], std=vec[..., c:])


def channel_moments(f: Tensor, eps_std: float = EPS_STD) -> FeatureMoments:
    """Mean and population std over each sample's spatial extent, per channel.

    The std is the population std floored at ``eps_std``, so stds above the
    floor are reported exactly; the tiny additive inside the sqrt only guards
    its gradient on exactly-constant channels (where the clamp is active and
    blocks the gradient anyway).
    """
    if f.dim() != 4:
        raise ShapeError(f"expected (B, C, H, W) features, got shape {tuple(f.shape)}")
    mean = f.mean(dim=(2, 3))
    var = f.var(dim=(2, 3), unbiased=False)
    std = torch.sqrt(var + _VAR_TINY).clamp_min(eps_std)
    return FeatureMoments(mean=mean, std=std)


def adain(content: Tensor, style: FeatureMoments, eps_std: float = EPS_STD) -> Tensor:
    """Renormalize content features to the style's channel-wise moments.

    Output = style.std * (content - mu_c) / sigma_c + style.mean, with the
    content's own (floored) moments. Broadcasts a single style row over the
    content batch.
    """
    if content.dim() != 4:
        raise ShapeError(f"expected (B, C, H, W) features, got shape {tuple(content.shape)}")
    if style.mean.shape[-1] != content.shape[1]:
        raise ShapeError(
            f"style has {style.mean.shape[-1]} channels, content has {content.shape[1]}")
    own = channel_moments(content, eps_std)
    mu_c = own.mean[:, :, None, None]
    sd_c = own.std[:, :, None, None]
    mu_s = style.mean.reshape(-1, content.shape[1])[:, :, None, None]
    sd_s = style.std.reshape(-1, content.shape[1])[:, :, None, None]
    return sd_s * (content - mu_c) / sd_c + mu_s
