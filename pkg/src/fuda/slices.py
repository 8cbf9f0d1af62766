"""Core data containers: 2-D grayscale slices, label masks, and dataset grouping.

A slice is one 2-D image with physical pixel spacing and a modality tag.
Masks use the fixed class alphabet {background=0, Myo=1, LV=2, RV=3} and are
always paired with a slice of identical shape.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ShapeError

NUM_CLASSES = 4
BACKGROUND, MYO, LV, RV = 0, 1, 2, 3
CLASS_NAMES = {MYO: "Myo", LV: "LV", RV: "RV"}
FOREGROUND_CLASSES = (MYO, LV, RV)


class Modality(Enum):
    SOURCE_CONTENT = "source_content"
    STYLE_AUX = "style_aux"
    TARGET = "target"


@dataclass
class Slice:
    """One 2-D grayscale image plus acquisition metadata.

    pixels are float64 internally; spacing is (row_mm, col_mm).
    """

    pixels: np.ndarray
    spacing: tuple[float, float]
    modality: Modality
    patient_id: str
    slice_index: int

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ShapeError(f"slice pixels must be 2-D, got shape {self.pixels.shape}")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("slice pixels must be finite")
        if self.spacing[0] <= 0 or self.spacing[1] <= 0:
            raise ValueError(f"pixel spacing must be positive, got {self.spacing}")
        if self.slice_index < 0:
            raise ValueError("slice_index must be >= 0")

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass
class LabelMask:
    """Integer class map paired with a slice; entries restricted to {0, 1, 2, 3}."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got shape {self.labels.shape}")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise ValueError("mask labels must be integers")
        self.labels = self.labels.astype(np.uint8)
        bad = np.setdiff1d(np.unique(self.labels), np.arange(NUM_CLASSES))
        if bad.size:
            raise ValueError(f"mask contains labels outside {{0..3}}: {bad.tolist()}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass
class SliceRecord:
    image: Slice
    mask: LabelMask | None = None

    def __post_init__(self):
        if self.mask is not None and self.mask.shape != self.image.shape:
            raise ShapeError(
                f"mask shape {self.mask.shape} does not match slice shape {self.image.shape}"
            )


def _record_key(rec: SliceRecord) -> tuple:
    return (rec.image.modality.value, rec.image.patient_id, rec.image.slice_index)


@dataclass
class Dataset:
    """Flat collection of slice records with deterministic iteration order.

    Ordering is (modality, patient_id, slice_index) so that any two loads of
    the same data iterate identically.
    """

    records: list[SliceRecord] = field(default_factory=list)

    def __post_init__(self):
        self.records = sorted(self.records, key=_record_key)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i: int) -> SliceRecord:
        return self.records[i]

    def filter(self, modality: Modality | None = None, patients=None) -> "Dataset":
        pats = set(patients) if patients is not None else None
        kept = [
            r
            for r in self.records
            if (modality is None or r.image.modality is modality)
            and (pats is None or r.image.patient_id in pats)
        ]
        return Dataset(kept)

    def patients(self, modality: Modality | None = None) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.records:
            if modality is None or r.image.modality is modality:
                seen.setdefault(r.image.patient_id, None)
        return sorted(seen)

    def without_masks(self) -> "Dataset":
        return Dataset([SliceRecord(r.image, None) for r in self.records])
