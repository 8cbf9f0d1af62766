"""Dataset serialization.

Directory layout::

    <root>/manifest.json
    <root>/<modality>/<patient_id>/<k>.npy        # float image, row-major
    <root>/<modality>/<patient_id>/<k>_mask.npy   # uint8 labels, optional
    <root>/<modality>/<patient_id>/<k>.png        # optional 16-bit preview
    <root>/<modality>/<patient_id>/<k>_mask.png   # optional 8-bit labels

Arrays use the NumPy ``.npy`` container (shape + dtype header, row-major
payload). PNGs are a convenience mirror: 16-bit grayscale for images (value =
round(pixel * 65535)), 8-bit raw label values for masks. The manifest records
pixel spacing and the modality directories present.
"""
from __future__ import annotations

import json
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataLayoutError
from .slices import Dataset, LabelMask, Modality, Slice, SliceRecord

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


class Layout(Enum):
    AUTO = "auto"   # prefer .npy, fall back to .png
    NPY = "npy"
    PNG = "png"


def save_dataset(root: str | Path,
                 data: dict[Modality, list[tuple[Slice, LabelMask | None]]],
                 write_png: bool = True):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    spacing = None
    for modality, pairs in data.items():
        for sl, mask in pairs:
            spacing = sl.spacing if spacing is None else spacing
            d = root / modality.value / sl.patient_id
            d.mkdir(parents=True, exist_ok=True)
            stem = d / f"{sl.slice_index:03d}"
            np.save(f"{stem}.npy", sl.pixels.astype(np.float32))
            if mask is not None:
                np.save(f"{stem}_mask.npy", mask.labels)
            if write_png:
                img16 = np.clip(np.round(sl.pixels * 65535), 0, 65535).astype(np.uint16)
                Image.fromarray(img16).save(f"{stem}.png")
                if mask is not None:
                    Image.fromarray(mask.labels).save(f"{stem}_mask.png")
    manifest = {
        "version": MANIFEST_VERSION,
        "spacing_mm": list(spacing) if spacing is not None else [1.0, 1.0],
        "modalities": sorted(m.value for m in data),
    }
    with open(root / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_image(path: Path) -> np.ndarray:
    try:
        if path.suffix == ".npy":
            arr = np.load(path)
        else:
            with Image.open(path) as im:
                arr = np.asarray(im)
            if arr.dtype == np.uint8:
                arr = arr.astype(np.float64) / 255.0
            elif arr.dtype in (np.uint16, np.int32):
                arr = arr.astype(np.float64) / 65535.0
            else:
                raise DataLayoutError(f"unsupported PNG depth {arr.dtype} in {path}")
    except DataLayoutError:
        raise
    except Exception as exc:
        raise DataLayoutError(f"failed to read {path}: {exc}") from exc
    if arr.ndim != 2:
        raise DataLayoutError(f"{path} is not a 2-D array (shape {arr.shape})")
    return np.asarray(arr, dtype=np.float64)


def _read_mask(path: Path) -> LabelMask:
    try:
        if path.suffix == ".npy":
            arr = np.load(path)
        else:
            with Image.open(path) as im:
                arr = np.asarray(im)
    except Exception as exc:
        raise DataLayoutError(f"failed to read {path}: {exc}") from exc
    try:
        return LabelMask(np.asarray(arr).astype(np.int64))
    except Exception as exc:
        raise DataLayoutError(f"invalid mask in {path}: {exc}") from exc


def _slice_paths(pdir: Path, layout: Layout):
    exts = {Layout.NPY: [".npy"], Layout.PNG: [".png"], Layout.AUTO: [".npy", ".png"]}[layout]
    found: dict[int, Path] = {}
    for ext in exts:
        for f in sorted(pdir.glob(f"*{ext}")):
            if f.stem.endswith("_mask"):
                continue
            try:
                idx = int(f.stem)
            except ValueError:
                raise DataLayoutError(f"unexpected file name {f} (want <index>{ext})")
            found.setdefault(idx, f)
    return sorted(found.items())


def load_dataset(root: str | Path, layout: Layout = Layout.AUTO,
                 modalities: set[Modality] | None = None) -> Dataset:
    """Read every slice under ``root``; raises naming the offending file.

    ``modalities`` restricts which subdirectories are opened at all (the
    style-pretraining stage uses this to guarantee target data is never read).
    """
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise DataLayoutError(f"missing {manifest_path}")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        spacing = tuple(float(v) for v in manifest["spacing_mm"])
    except DataLayoutError:
        raise
    except Exception as exc:
        raise DataLayoutError(f"malformed manifest {manifest_path}: {exc}") from exc

    records = []
    for modality in Modality:
        if modalities is not None and modality not in modalities:
            continue
        mdir = root / modality.value
        if not mdir.is_dir():
            continue
        for pdir in sorted(p for p in mdir.iterdir() if p.is_dir()):
            for idx, ipath in _slice_paths(pdir, layout):
                pixels = _read_image(ipath)
                sl = Slice(pixels=pixels, spacing=spacing, modality=modality,
                           patient_id=pdir.name, slice_index=idx)
                mask = None
                for ext in (".npy", ".png") if layout is Layout.AUTO else [ipath.suffix]:
                    mpath = pdir / f"{ipath.stem}_mask{ext}"
                    if mpath.is_file():
                        mask = _read_mask(mpath)
                        break
                if mask is not None and mask.shape != sl.shape:
                    raise DataLayoutError(
                        f"mask {mpath} shape {mask.shape} != image shape {sl.shape}")
                records.append(SliceRecord(sl, mask))
    if not records:
        raise DataLayoutError(f"no slices found under {root}")
    return Dataset(records)
