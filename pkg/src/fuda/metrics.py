"""Per-class Dice and Hausdorff distance with per-patient aggregation.

Conventions: Dice of two empty masks is 1.0; Hausdorff of two empty boundary
sets is 0.0 and of exactly one empty set is the image diagonal in mm. The
Hausdorff variant is the full (100th percentile) symmetric distance over
boundary pixel centers, scaled by the pixel spacing.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .slices import CLASS_NAMES, FOREGROUND_CLASSES, LabelMask


def dice(pred: LabelMask, truth: LabelMask, cls: int) -> float:
    """2|P∩T| / (|P| + |T|) for the binary masks of one class."""
    if pred.shape != truth.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    p = pred.labels == cls
    t = truth.labels == cls
    denom = int(p.sum()) + int(t.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & t).sum()) / denom


def boundary_pixels(binary: np.ndarray) -> np.ndarray:
    """(N, 2) row/col indices of pixels with a 4-neighbor outside the set.

    Pixels on the image edge count as boundary.
    """
    b = binary.astype(bool)
    inner = np.zeros_like(b)
    inner[1:-1, 1:-1] = (b[1:-1, 1:-1] & b[:-2, 1:-1] & b[2:, 1:-1]
                         & b[1:-1, :-2] & b[1:-1, 2:])
    return np.argwhere(b & ~inner)


def image_diagonal_mm(shape: tuple[int, int], spacing: tuple[float, float]) -> float:
    dr = shape[0] * spacing[0]
    dc = shape[1] * spacing[1]
    return float(np.sqrt(dr * dr + dc * dc))


def hausdorff(pred: LabelMask, truth: LabelMask, cls: int,
              spacing: tuple[float, float]) -> float:
    """Symmetric Hausdorff distance between class boundaries, in mm."""
    if pred.shape != truth.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if spacing[0] <= 0 or spacing[1] <= 0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    bp = boundary_pixels(pred.labels == cls)
    bt = boundary_pixels(truth.labels == cls)
    if bp.size == 0 and bt.size == 0:
        return 0.0
    if bp.size == 0 or bt.size == 0:
        return image_diagonal_mm(pred.shape, spacing)
    dr = (bp[:, None, 0] - bt[None, :, 0]) * spacing[0]
    dc = (bp[:, None, 1] - bt[None, :, 1]) * spacing[1]
    d = np.sqrt(dr * dr + dc * dc)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


@dataclass
class ClassMetrics:
    dice: float
    hd_mm: float


@dataclass
class MetricsReport:
    """Table-style summary: per-class and averaged Dice/HD plus per-patient rows."""

    per_class: dict[str, ClassMetrics]
    avg: ClassMetrics
    per_patient: dict[str, dict[str, ClassMetrics]] = field(default_factory=dict)

    def row(self) -> list[float]:
        """DC Myo/LV/RV/AVG then HD Myo/LV/RV/AVG."""
        names = [CLASS_NAMES[c] for c in FOREGROUND_CLASSES]
        return ([self.per_class[n].dice for n in names] + [self.avg.dice]
                + [self.per_class[n].hd_mm for n in names] + [self.avg.hd_mm])


CSV_HEADER = ["run", "dice_myo", "dice_lv", "dice_rv", "dice_avg",
              "hd_myo", "hd_lv", "hd_rv", "hd_avg"]


def volume_dice(preds: list[LabelMask], truths: list[LabelMask], cls: int) -> float:
    """Dice over pixel counts pooled across all of a patient's slices."""
    inter = total = 0
    for p, t in zip(preds, truths):
        if p.shape != t.shape:
            raise ShapeError(f"shape mismatch: {p.shape} vs {t.shape}")
        pb = p.labels == cls
        tb = t.labels == cls
        inter += int((pb & tb).sum())
        total += int(pb.sum()) + int(tb.sum())
    if total == 0:
        return 1.0
    return 2.0 * inter / total


def evaluate(pred_by_patient: dict[str, list[LabelMask]],
             truth_by_patient: dict[str, list[LabelMask]],
             spacing: tuple[float, float],
             dice_mode: str = "slice") -> MetricsReport:
    """Slice metrics averaged within each patient, then across patients.

    ``dice_mode="slice"`` averages per-slice Dice within each patient;
    ``"volume"`` pools a patient's pixel counts across slices before forming
    the ratio. Hausdorff is always per-slice.
    """
    if dice_mode not in ("slice", "volume"):
        raise ValueError(f"dice_mode must be 'slice' or 'volume', got {dice_mode!r}")
    if set(pred_by_patient) != set(truth_by_patient):
        raise ValueError("prediction and truth patient sets differ")
    if not pred_by_patient:
        raise ValueError("no patients to evaluate")
    per_patient: dict[str, dict[str, ClassMetrics]] = {}
    for pid in sorted(pred_by_patient):
        preds = pred_by_patient[pid]
        truths = truth_by_patient[pid]
        if len(preds) != len(truths) or not preds:
            raise ValueError(f"patient {pid}: {len(preds)} predictions vs {len(truths)} truths")
        per_patient[pid] = {}
        for cls in FOREGROUND_CLASSES:
            if dice_mode == "volume":
                d = volume_dice(preds, truths, cls)
            else:
                d = float(np.mean([dice(p, t, cls) for p, t in zip(preds, truths)]))
            hs = [hausdorff(p, t, cls, spacing) for p, t in zip(preds, truths)]
            per_patient[pid][CLASS_NAMES[cls]] = ClassMetrics(
                dice=d, hd_mm=float(np.mean(hs)))

    per_class = {}
    for cls in FOREGROUND_CLASSES:
        name = CLASS_NAMES[cls]
        per_class[name] = ClassMetrics(
            dice=float(np.mean([per_patient[p][name].dice for p in per_patient])),
            hd_mm=float(np.mean([per_patient[p][name].hd_mm for p in per_patient])))
    avg = ClassMetrics(
        dice=float(np.mean([m.dice for m in per_class.values()])),
        hd_mm=float(np.mean([m.hd_mm for m in per_class.values()])))
    return MetricsReport(per_class=per_class, avg=avg, per_patient=per_patient)


def write_report_csv(path: str | Path, reports: dict[str, MetricsReport]):
    """One row per labeled run, Table-style column order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for label, rep in reports.items():
            writer.writerow([label] + [f"{v:.6f}" for v in rep.row()])


def format_report_text(reports: dict[str, MetricsReport]) -> str:
    """Aligned text table mirroring the CSV."""
    rows = [CSV_HEADER] + [[label] + [f"{v:.4f}" for v in rep.row()]
                           for label, rep in reports.items()]
    widths = [max(len(r[i]) for r in rows) for i in range(len(CSV_HEADER))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in rows]
    return "\n".join(lines) + "\n"
