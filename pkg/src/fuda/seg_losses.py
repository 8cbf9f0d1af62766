"""Supervised and consistency losses for the segmentation module."""
from __future__ import annotations

from typing import NamedTuple

import torch
from torch import Tensor
from torch.nn import functional as F

from .errors import ShapeError
from .slices import NUM_CLASSES


class SegLossParts(NamedTuple):
    seg: Tensor    # cross-entropy + jaccard distance
    con: Tensor    # bottleneck consistency
    total: Tensor  # seg + lambda * con


def ce_loss(logits: Tensor, y: Tensor) -> Tensor:
    """Mean over pixels of -log softmax probability of the true class."""
    return F.cross_entropy(logits, y.long())


def jaccard_loss(probs: Tensor, y: Tensor, smooth: float = 1e-6) -> Tensor:
    """Soft Jaccard distance, averaged over classes and batch items.

    Per item and class: 1 - (sum p*g + s) / (sum p + sum g - sum p*g + s)
    with one-hot g. Classes absent from both prediction mass and truth
    contribute ~0 through the smoothing term.
    """
    if probs.shape[0] != y.shape[0] or probs.shape[-2:] != y.shape[-2:]:
        raise ShapeError(f"probs {tuple(probs.shape)} vs labels {tuple(y.shape)}")
    onehot = F.one_hot(y.long(), NUM_CLASSES).permute(0, 3, 1, 2).to(probs.dtype)
    inter = (probs * onehot).sum(dim=(2, 3))
    total = probs.sum(dim=(2, 3)) + onehot.sum(dim=(2, 3))
    jac = (inter + smooth) / (total - inter + smooth)
    return (1.0 - jac).mean()


def consistency_loss(z_s: Tensor, z_t: Tensor) -> Tensor:
    """Per-item Euclidean norm of the feature difference, mean over the batch."""
    if z_s.shape != z_t.shape:
        raise ShapeError(f"feature shapes differ: {tuple(z_s.shape)} vs {tuple(z_t.shape)}")
    diff = (z_s - z_t).reshape(z_s.shape[0], -1)
    return torch.linalg.vector_norm(diff, dim=1).mean()


def seg_total_loss(logits: Tensor, probs: Tensor | None, y: Tensor,
                   z_s: Tensor, z_t: Tensor, lam: float,
                   smooth: float = 1e-6) -> SegLossParts:
    """Full training objective: (CE + JD) + lambda * consistency."""
    if probs is None:
        probs = F.softmax(logits, dim=1)
    seg = ce_loss(logits, y) + jaccard_loss(probs, y, smooth)
    con = consistency_loss(z_s, z_t)
    return SegLossParts(seg=seg, con=con, total=seg + lam * con)
