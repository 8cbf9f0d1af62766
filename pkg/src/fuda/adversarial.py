"""Adversarial exploration of the latent style space.

The target patient's slices define per-slice latent Gaussians. A style code
drawn from one of them is pushed uphill on the segmentation loss — the
stylizer and segmenter stay frozen, only the code moves — so the stylized
training images get progressively harder. Periodic resampling restores
diversity and bounds drift.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import torch
from torch import Tensor

from .errors import AscentAborted, ConfigError
from .rain import RainNetworks, StyleDistribution, sample_style_code
from .seg_losses import ce_loss, jaccard_loss
from .segmenter import DRUNet


def init_style_distribution(target_batch: Tensor, rain: RainNetworks
                            ) -> list[StyleDistribution]:
    """Per-slice latent Gaussians for a (N, 1, H, W) batch of target slices."""
    if target_batch.dim() != 4 or target_batch.shape[0] < 1:
        raise ConfigError(f"need a non-empty (N, 1, H, W) batch, got {tuple(target_batch.shape)}")
    dists = []
    with torch.no_grad():
        for i in range(target_batch.shape[0]):
            dists.append(rain.style_distribution(target_batch[i:i + 1]))
    return dists


def sample_initial_code(dists: list[StyleDistribution], seed: int | torch.Generator
                        ) -> Tensor:
    """Pick one slice distribution uniformly at random, then draw from it."""
    if not dists:
        raise ConfigError("no style distributions to sample from")
    gen = seed if isinstance(seed, torch.Generator) else torch.Generator().manual_seed(seed)
    idx = int(torch.randint(len(dists), (1,), generator=gen).item())
    return sample_style_code(dists[idx], gen).reshape(-1)


@dataclass
class AdvState:
    """Single-owner mutable state of the ascent loop."""

    style_code: Tensor
    iteration: int
    step_size: float
    slice_dists: list[StyleDistribution]
    resample_period: int
    rng: torch.Generator

    def __post_init__(self):
        if self.step_size <= 0:
            raise ConfigError(f"step_size must be > 0, got {self.step_size}")
        if self.resample_period < 1:
            raise ConfigError(f"resample_period must be >= 1, got {self.resample_period}")


def make_adv_state(target_batch: Tensor, rain: RainNetworks, step_size: float,
                   resample_period: int, seed: int) -> AdvState:
    rng = torch.Generator().manual_seed(seed)
    dists = init_style_distribution(target_batch, rain)
    return AdvState(
        style_code=sample_initial_code(dists, rng),
        iteration=0,
        step_size=step_size,
        slice_dists=dists,
        resample_period=resample_period,
        rng=rng,
    )


def seg_loss_of_code(code: Tensor, x_s: Tensor, y_s: Tensor,
                     rain: RainNetworks, seg: DRUNet,
                     jaccard_smooth: float = 1e-6) -> Tensor:
    """Supervised loss of the segmenter on content stylized with ``code``."""
    stylized = rain.stylize(x_s, code)
    logits = seg(stylized).logits
    probs = torch.softmax(logits, dim=1)
    return ce_loss(logits, y_s) + jaccard_loss(probs, y_s, jaccard_smooth)


def grad_wrt_style_code(code: Tensor, x_s: Tensor, y_s: Tensor,
                        rain: RainNetworks, seg: DRUNet,
                        jaccard_smooth: float = 1e-6) -> tuple[Tensor, float]:
    """Gradient of the segmentation loss w.r.t. the style code, networks held fixed.

    Returns (gradient, loss value). Raises AscentAborted on a non-finite
    gradient so the caller can resample a fresh code.
    """
    leaf = code.detach().clone().requires_grad_(True)
    loss = seg_loss_of_code(leaf, x_s, y_s, rain, seg, jaccard_smooth)
    if loss.requires_grad:
        (grad,) = torch.autograd.grad(loss, leaf, allow_unused=True)
    else:
        grad = None  # pipeline dropped the code entirely
    if grad is None:
        grad = torch.zeros_like(leaf)
    if not torch.isfinite(grad).all():
        raise AscentAborted("non-finite gradient w.r.t. style code")
    return grad.detach(), float(loss.detach())


def ascent_step(state: AdvState, grad: Tensor) -> AdvState:
    """code <- code + step_size * grad; resample on every resample_period-th step."""
    if grad.shape != state.style_code.shape:
        raise ConfigError(
            f"gradient shape {tuple(grad.shape)} != code shape {tuple(state.style_code.shape)}")
    new_code = (state.style_code + state.step_size * grad).detach()
    it = state.iteration + 1
    resampled = it % state.resample_period == 0
    if resampled:
        new_code = sample_initial_code(state.slice_dists, state.rng)
    return replace(state, style_code=new_code, iteration=it)
