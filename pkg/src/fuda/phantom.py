"""Synthetic multi-modal phantom with shared geometry and a controllable gap.

Each (patient, slice) pair gets one anatomy: an LV disk wrapped by a
concentric Myo ring, with an RV crescent hugging the ring from outside. The
same label mask is rendered in all three modalities; only the intensity map
and texture noise differ, so the cross-modality gap is purely appearance.
"""
from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .config import ModalityAppearance, PhantomConfig
from .errors import ConfigError
from .slices import LabelMask, Modality, Slice, BACKGROUND, MYO, LV, RV

# Tissue intensities of the canonical (pre-remap) render.
_BASE_INTENSITY = {BACKGROUND: 0.10, MYO: 0.45, LV: 0.90, RV: 0.75}


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def _uniform(rng: np.random.Generator, interval: tuple[float, float]) -> float:
    lo, hi = interval
    if hi < lo:
        raise ConfigError(f"empty interval ({lo}, {hi})")
    return float(rng.uniform(lo, hi))


def _make_mask(params: PhantomConfig, rng: np.random.Generator) -> np.ndarray:
    size = params.image_size
    cy = size / 2 + rng.uniform(-1, 1) * params.center_jitter * size
    cx = size / 2 + rng.uniform(-1, 1) * params.center_jitter * size

    lv_r = _uniform(rng, params.lv_radius_range) * size
    myo_t = _uniform(rng, params.myo_thickness_range) * size
    outer_r = lv_r + myo_t

    theta = rng.uniform(0, 2 * np.pi)
    rv_dist = outer_r + _uniform(rng, params.rv_offset_range) * size
    rv_cy = cy + rv_dist * np.sin(theta)
    rv_cx = cx + rv_dist * np.cos(theta)
    rv_r = lv_r * _uniform(rng, params.rv_radius_factor)

    yy, xx = np.mgrid[0:size, 0:size]
    d_center = np.hypot(yy - cy, xx - cx)
    d_rv = np.hypot(yy - rv_cy, xx - rv_cx)

    mask = np.full((size, size), BACKGROUND, dtype=np.uint8)
    mask[(d_rv <= rv_r) & (d_center > outer_r)] = RV
    mask[(d_center <= outer_r) & (d_center > lv_r)] = MYO
    mask[d_center <= lv_r] = LV
    return mask


def _render(mask: np.ndarray, app: ModalityAppearance, params: PhantomConfig,
            rng: np.random.Generator) -> np.ndarray:
    proto = np.empty(mask.shape, dtype=np.float64)
    for cls, val in _BASE_INTENSITY.items():
        proto[mask == cls] = val
    if params.edge_sigma > 0:
        proto = gaussian_filter(proto, sigma=params.edge_sigma)

    gamma = app.gamma * float(np.exp(rng.uniform(-1, 1) * app.gamma_jitter))
    gain = app.gain * float(np.exp(rng.uniform(-1, 1) * app.gain_jitter))

    img = 1.0 - proto if app.invert else proto
    img = np.clip(img, 0.0, 1.0) ** gamma
    img = app.bias + gain * img

    if app.noise_amp > 0:
        field = gaussian_filter(rng.standard_normal(mask.shape), sigma=app.noise_scale)
        std = field.std()
        if std > 0:
            field /= std
        img = img * (1.0 + app.noise_amp * field)
    return np.clip(img, 0.0, 1.0)


def gen_phantom(params: PhantomConfig, n_patients: int, slices_per_patient: int,
                ) -> dict[Modality, list[tuple[Slice, LabelMask]]]:
    """Generate ``n_patients * slices_per_patient`` geometries in all modalities.

    Deterministic given ``params.seed``: geometry and per-modality noise use
    independent seed streams keyed by (seed, patient, slice[, modality]).
    """
    params.validate()
    if n_patients < 1 or slices_per_patient < 1:
        raise ConfigError("n_patients and slices_per_patient must be >= 1")

    out: dict[Modality, list[tuple[Slice, LabelMask]]] = {m: [] for m in Modality}
    for p in range(n_patients):
        pid = f"p{p:02d}"
        for k in range(slices_per_patient):
            mask = _make_mask(params, _rng(params.seed, p, k))
            for mi, modality in enumerate(Modality):
                app = params.appearance[modality.value]
                img = _render(mask, app, params, _rng(params.seed, p, k, mi))
                sl = Slice(
                    pixels=img,
                    spacing=tuple(params.spacing_mm),
                    modality=modality,
                    patient_id=pid,
                    slice_index=k,
                )
                out[modality].append((sl, LabelMask(mask.copy())))
    return out
