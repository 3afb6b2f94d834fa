"""Synthetic mammogram-like fixtures.

Each image is a 16-bit grayscale breast silhouette (a half ellipse against
the chest wall, left or right side by laterality) with smooth texture and
faint background noise. Positive images additionally carry a bright
Gaussian blob inside the breast. A small burned-in marker sits in the
opposite top corner, as on real screening images.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image
from scipy import ndimage

from .manifest import DatasetManifest, ImageRecord, write_manifest


@dataclass(frozen=True)
class SyntheticSpec:
    n_patients: int = 100
    images_per_patient: int = 2
    n_positive: int = 50
    size: int = 128
    seed: int = 0
    tissue_level: float = 0.35
    blob_amplitude: float = 0.7
    blob_sigma: float = 6.0


def breast_image(
    rng: np.random.Generator,
    size: int,
    laterality: str = "L",
    positive: bool = False,
    tissue_level: float = 0.35,
    blob_amplitude: float = 0.7,
    blob_sigma: float = 6.0,
) -> np.ndarray:
    """One synthetic uint16 image of shape (size, size)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = size / 2 + rng.uniform(-0.05, 0.05) * size
    ry = size * rng.uniform(0.38, 0.46)
    rx = size * rng.uniform(0.45, 0.6)
    r = np.sqrt((xx / rx) ** 2 + ((yy - cy) / ry) ** 2)
    breast = np.clip((1.0 - r) * 6.0, 0.0, 1.0)

    texture = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=2.0)
    texture /= max(texture.std(), 1e-9)
    img = breast * (tissue_level + 0.06 * texture)

    if positive:
        # keep the blob well inside the silhouette
        for _ in range(100):
            bx, by = rng.uniform(0.08, 0.7) * rx, cy + rng.uniform(-0.6, 0.6) * ry
            if np.sqrt((bx / rx) ** 2 + ((by - cy) / ry) ** 2) < 0.7:
                break
        img += blob_amplitude * np.exp(-((xx - bx) ** 2 + (yy - by) ** 2) / (2 * blob_sigma**2))

    img += np.abs(rng.normal(0.0, 0.004, size=img.shape))
    marker = max(2, size // 40)
    img[2 : 2 + marker, size - 2 - marker : size - 2] = 0.5
    if laterality == "R":
        img = img[:, ::-1]
    return np.clip(np.rint(img * 65535), 0, 65535).astype(np.uint16)


def make_synthetic_dataset(root: str | Path, spec: Optional[SyntheticSpec] = None) -> tuple[DatasetManifest, Path]:
    """Write PNG images plus ``manifest.csv`` under ``root``.

    Positive images are spread over distinct patients (one per patient while
    ``n_positive <= n_patients``). Returns the manifest and the manifest path.
    """
    spec = spec or SyntheticSpec()
    root = Path(root)
    rng = np.random.default_rng(spec.seed)
    n_images = spec.n_patients * spec.images_per_patient
    if spec.n_positive > n_images:
        raise ValueError("more positives than images")

    if spec.n_positive <= spec.n_patients:
        pats = rng.choice(spec.n_patients, size=spec.n_positive, replace=False)
        positive = {(int(p), int(rng.integers(spec.images_per_patient))) for p in pats}
    else:
        slots = [(p, j) for j in range(spec.images_per_patient) for p in range(spec.n_patients)]
        positive = {slots[i] for i in rng.choice(len(slots), size=spec.n_positive, replace=False)}
    views = ("CC", "MLO")

    records = []
    for p in range(spec.n_patients):
        pid = f"p{p:04d}"
        age = int(rng.integers(40, 80))
        for j in range(spec.images_per_patient):
            iid = f"{pid}_{j}"
            laterality = "LR"[j % 2]
            is_pos = (p, j) in positive
            pixels = breast_image(
                rng,
                spec.size,
                laterality,
                is_pos,
                spec.tissue_level,
                spec.blob_amplitude,
                spec.blob_sigma,
            )
            rel = Path("images") / pid / f"{iid}.png"
            (root / rel).parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(pixels).save(root / rel, format="PNG")
            records.append(
                ImageRecord(
                    patient_id=pid,
                    image_id=iid,
                    laterality=laterality,
                    view=views[(j // 2) % 2],
                    age=age,
                    cancer=int(is_pos),
                    biopsy=int(is_pos or rng.random() < 0.03),
                    source_path=str(rel),
                )
            )
    manifest = DatasetManifest.from_records(records)
    path = root / "manifest.csv"
    write_manifest(manifest, path)
    return manifest, path
