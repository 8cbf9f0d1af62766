"""Preprocessing: min-max normalization, center crop, affine augmentation."""
from __future__ import annotations

from dataclasses import replace

import numpy as np
from scipy.ndimage import affine_transform

from .config import AffineConfig
from .errors import ShapeError
from .slices import LabelMask, Slice


def minmax_normalize(sl: Slice) -> Slice:
    """Rescale pixels affinely to [0, 1]; a constant slice maps to all zeros."""
    px = sl.pixels
    lo = px.min()
    hi = px.max()
    if hi <= lo:
        out = np.zeros_like(px)
    else:
        out = (px - lo) / (hi - lo)
    return replace(sl, pixels=out)


def center_crop(sl: Slice, mask: LabelMask | None, h: int, w: int
                ) -> tuple[Slice, LabelMask | None]:
    """Crop a centered (h, w) window; odd margins fall toward the top-left.

    The mask, when given, is cropped with the identical window.
    """
    H, W = sl.shape
    if h > H or w > W:
        raise ShapeError(f"crop ({h}, {w}) larger than image ({H}, {W})")
    r0 = (H - h) // 2
    c0 = (W - w) // 2
    out_sl = replace(sl, pixels=sl.pixels[r0:r0 + h, c0:c0 + w].copy())
    out_mask = None
    if mask is not None:
        if mask.shape != (H, W):
            raise ShapeError(f"mask shape {mask.shape} does not match slice {sl.shape}")
        out_mask = LabelMask(mask.labels[r0:r0 + h, c0:c0 + w].copy())
    return out_sl, out_mask


def apply_affine(sl: Slice, mask: LabelMask, *, rotate_deg: float = 0.0,
                 shear_deg: float = 0.0, scale: tuple[float, float] = (1.0, 1.0),
                 translate: tuple[float, float] = (0.0, 0.0),
                 ) -> tuple[Slice, LabelMask]:
    """Apply one explicit affine map about the image center.

    Image is resampled bilinearly, mask with nearest-neighbor so labels stay
    integral; out-of-bounds regions fill with 0 / background.
    """
    if mask.shape != sl.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match slice {sl.shape}")
    if (rotate_deg == 0.0 and shear_deg == 0.0 and scale == (1.0, 1.0)
            and translate == (0.0, 0.0)):
        return replace(sl, pixels=sl.pixels.copy()), LabelMask(mask.labels.copy())

    ang = np.deg2rad(rotate_deg)
    sh = np.tan(np.deg2rad(shear_deg))
    rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    shear = np.array([[1.0, sh], [0.0, 1.0]])
    sc = np.diag(scale)
    fwd = rot @ shear @ sc

    center = (np.asarray(sl.shape, dtype=np.float64) - 1.0) / 2.0
    t = np.asarray(translate, dtype=np.float64)
    # affine_transform maps output coords to input coords: in = M @ out + offset.
    inv = np.linalg.inv(fwd)
    offset = center - inv @ (center + t)

    img = affine_transform(sl.pixels, inv, offset=offset, order=1,
                           mode="constant", cval=0.0, prefilter=False)
    lab = affine_transform(mask.labels, inv, offset=offset, order=0,
                           mode="constant", cval=0, prefilter=False)
    return replace(sl, pixels=img), LabelMask(lab)


def affine_augment(sl: Slice, mask: LabelMask, aug: AffineConfig, seed: int
                   ) -> tuple[Slice, LabelMask]:
    """Sample one affine map from ``aug`` ranges and apply it; deterministic per seed."""
    aug.validate()
    if aug.is_identity():
        return replace(sl, pixels=sl.pixels.copy()), LabelMask(mask.labels.copy())
    rng = np.random.default_rng(seed)
    rot = rng.uniform(-aug.rotate_deg, aug.rotate_deg)
    sh = rng.uniform(-aug.shear_deg, aug.shear_deg)
    s = rng.uniform(aug.scale_range[0], aug.scale_range[1])
    H, W = sl.shape
    ty = rng.uniform(-aug.translate_frac, aug.translate_frac) * H
    tx = rng.uniform(-aug.translate_frac, aug.translate_frac) * W
    return apply_affine(sl, mask, rotate_deg=rot, shear_deg=sh, scale=(s, s),
                        translate=(ty, tx))
