"""Image I/O, dataset manifests and training-patch sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .imaging import DegradationSpec, degrade, modcrop, quantize

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png",)


def read_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_png(path: str | Path, img: np.ndarray) -> None:
    arr = np.round(np.clip(np.asarray(img, dtype=np.float64), 0, 1) * 255).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0)).save(path, format="PNG")


def list_images(directory: str | Path) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def read_manifest(path: str | Path) -> list[tuple[Path, Path | None]]:
    """One record per line: ``hr_path<TAB>lr_path`` with lr_path optional.
    Relative paths resolve against the manifest's directory."""
    path = Path(path)
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) > 2:
            raise ValueError(f"{path}:{lineno}: expected 1 or 2 tab-separated fields")
        hr = path.parent / parts[0].strip()
        lr = path.parent / parts[1].strip() if len(parts) == 2 and parts[1].strip() else None
        records.append((hr, lr))
    return records


@dataclass
class PairDataset:
    """HR images with their LR counterparts (float arrays, (3,H,W), [0,1])."""

    hr: list[np.ndarray]
    lr: list[np.ndarray]
    names: list[str] = field(default_factory=list)
    scale: int = 4

    def __len__(self) -> int:
        return len(self.hr)

    @classmethod
    def from_images(cls, images: Sequence[np.ndarray], spec: DegradationSpec,
                    names: Sequence[str] | None = None, quantize_lr: bool = False) -> "PairDataset":
        hrs, lrs = [], []
        for img in images:
            hr = modcrop(np.asarray(img, dtype=np.float64), spec.scale)
            lr = degrade(hr, spec)
            hrs.append(hr)
            lrs.append(quantize(lr) if quantize_lr else lr)
        return cls(hrs, lrs, list(names or [f"img{i}" for i in range(len(hrs))]), spec.scale)

    @classmethod
    def from_path(cls, source: str | Path, spec: DegradationSpec,
                  quantize_lr: bool = True) -> "PairDataset":
        """Load a directory of HR PNGs or a manifest file; missing LR images are
        synthesised with ``spec``."""
        source = Path(source)
        if source.is_dir():
            manifest = source / "manifest.txt"
            records = read_manifest(manifest) if manifest.exists() else [
                (p, None) for p in list_images(source)]
        else:
            records = read_manifest(source)
        if not records:
            raise FileNotFoundError(f"no images found in {source}")
        hrs, lrs, names = [], [], []
        for hr_path, lr_path in records:
            hr = modcrop(read_png(hr_path).astype(np.float64), spec.scale)
            if lr_path is None:
                lr = degrade(hr, spec)
                lr = quantize(lr) if quantize_lr else lr
            else:
                lr = read_png(lr_path).astype(np.float64)
                if lr.shape[1] * spec.scale != hr.shape[1] or lr.shape[2] * spec.scale != hr.shape[2]:
                    raise ValueError(f"{lr_path}: LR {lr.shape} does not match HR {hr.shape} at x{spec.scale}")
            hrs.append(hr)
            lrs.append(lr)
            names.append(hr_path.stem)
        return cls(hrs, lrs, names, spec.scale)


# dihedral augmentations: code k -> rotate k % 4 quarter turns, then flip if k >= 4

def augment(patch: np.ndarray, code: int) -> np.ndarray:
    out = np.rot90(patch, code % 4, axes=(-2, -1))
    if code >= 4:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def inverse_augment(patch: np.ndarray, code: int) -> np.ndarray:
    out = patch[..., ::-1] if code >= 4 else patch
    return np.ascontiguousarray(np.rot90(out, -(code % 4), axes=(-2, -1)))


@dataclass
class SampleBatch:
    lr: np.ndarray   # (B, 3, p, p)
    hr: np.ndarray   # (B, 3, p*s, p*s)
    records: list[tuple[int, int, int, int]]  # (image, lr_y, lr_x, augmentation)
    skipped: list[int] = field(default_factory=list)


def sample_batch(dataset: PairDataset, rng: np.random.Generator, batch: int = 16,
                 patch: int = 48, scale: int | None = None, augment_patches: bool = True,
                 dtype=np.float32) -> SampleBatch:
    """Draw ``batch`` aligned LR/HR patch pairs at uniform locations.

    The LR patch at (y, x) pairs with the HR patch at (s*y, s*x); the same
    augmentation is applied to both.
    """
    s = scale or dataset.scale
    usable = [i for i, lr in enumerate(dataset.lr) if min(lr.shape[1:]) >= patch]
    skipped = [i for i in range(len(dataset)) if i not in usable]
    if skipped:
        log.warning("skipping %d image(s) smaller than a %dx%d LR patch: %s",
                    len(skipped), patch, patch, [dataset.names[i] for i in skipped])
    if not usable:
        raise ValueError(f"no image is large enough for a {patch}x{patch} LR patch")
    lrs, hrs, records = [], [], []
    for _ in range(batch):
        i = usable[int(rng.integers(len(usable)))]
        lr, hr = dataset.lr[i], dataset.hr[i]
        y = int(rng.integers(lr.shape[1] - patch + 1))
        x = int(rng.integers(lr.shape[2] - patch + 1))
        code = int(rng.integers(8)) if augment_patches else 0
        lrs.append(augment(lr[:, y:y + patch, x:x + patch], code))
        hrs.append(augment(hr[:, s * y:s * (y + patch), s * x:s * (x + patch)], code))
        records.append((i, y, x, code))
    return SampleBatch(np.stack(lrs).astype(dtype), np.stack(hrs).astype(dtype), records, skipped)
