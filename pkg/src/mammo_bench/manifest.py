"""Dataset manifest loading, EDA summary and raw pixel decoding.

The manifest is a CSV with one row per image::

    patient_id,image_id,laterality,view,age,cancer,biopsy,source_path

``source_path`` is optional; when absent or empty the image is looked up as
``<image_root>/<patient_id>/<image_id>.{dcm,png}`` (the RSNA layout).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    CorruptPixelData,
    DuplicateImageId,
    ImageFileNotFound,
    InvalidEnumValue,
    MissingColumn,
    UnsupportedFormat,
)

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("patient_id", "image_id", "laterality", "view", "age", "cancer", "biopsy")
OPTIONAL_COLUMNS = ("source_path",)
CSV_COLUMNS = REQUIRED_COLUMNS + OPTIONAL_COLUMNS

LATERALITIES = ("L", "R")
VIEWS = ("CC", "MLO", "other")
# DICOM ViewPosition codes outside CC/MLO that appear in screening data.
_OTHER_VIEW_CODES = {"ML", "LM", "LMO", "AT", "XCCL", "XCCM", "FB", "SIO", "ISO", "MLOID", "CCID"}

AGE_BIN_WIDTH = 5
MAX_AGE = 130


@dataclass(frozen=True)
class ImageRecord:
    patient_id: str
    image_id: str
    laterality: str
    view: str
    age: Optional[int]
    cancer: int
    biopsy: int
    source_path: str = ""

    def resolve_path(self, image_root: str | Path | None = None) -> Path:
        """Locate the pixel file for this record.

        An explicit ``source_path`` wins (relative paths are taken relative to
        ``image_root``). Otherwise ``<root>/<patient_id>/<image_id>`` is tried
        with the ``.dcm`` and ``.png`` suffixes.
        """
        root = Path(image_root) if image_root is not None else Path(".")
        if self.source_path:
            p = Path(self.source_path)
            return p if p.is_absolute() else root / p
        base = root / self.patient_id / self.image_id
        for suffix in (".dcm", ".png"):
            candidate = base.with_name(base.name + suffix)
            if candidate.exists():
                return candidate
        return base.with_name(base.name + ".dcm")


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ImageRecord, ...]
    patient_index: Mapping[str, tuple[int, ...]]

    @classmethod
    def from_records(cls, records: Iterable[ImageRecord]) -> "DatasetManifest":
        records = tuple(records)
        seen: set[str] = set()
        index: "OrderedDict[str, list[int]]" = OrderedDict()
        for i, rec in enumerate(records):
            if rec.image_id in seen:
                raise DuplicateImageId(rec.image_id)
            seen.add(rec.image_id)
            index.setdefault(rec.patient_id, []).append(i)
        frozen = MappingProxyType({k: tuple(v) for k, v in index.items()})
        return cls(records=records, patient_index=frozen)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def patient_ids(self) -> list[str]:
        return list(self.patient_index)

    def records_for(self, patient_id: str) -> list[ImageRecord]:
        return [self.records[i] for i in self.patient_index[patient_id]]

    def patient_label(self, patient_id: str) -> int:
        """Patient-level cancer label: 1 iff any of the patient's images is positive."""
        return int(any(self.records[i].cancer for i in self.patient_index[patient_id]))

    def subset(self, patient_ids: Iterable[str]) -> "DatasetManifest":
        keep = set(patient_ids)
        return DatasetManifest.from_records(r for r in self.records if r.patient_id in keep)


@dataclass
class DatasetSummary:
    n_patients: int = 0
    n_images: int = 0
    n_cancer_patients: int = 0
    image_positive_rate: float = 0.0
    age_bin_edges: list[int] = field(default_factory=list)
    age_counts: list[int] = field(default_factory=list)
    age_missing: int = 0
    # n_images -> n_patients having that many images
    images_per_patient: dict[int, int] = field(default_factory=dict)
    # [cancer][biopsy] image counts
    biopsy_by_cancer: list[list[int]] = field(default_factory=lambda: [[0, 0], [0, 0]])
    # same table at patient level (patient biopsy = any image biopsied)
    biopsy_by_cancer_patients: list[list[int]] = field(default_factory=lambda: [[0, 0], [0, 0]])

    def to_json(self) -> str:
        doc = asdict(self)
        doc["images_per_patient"] = {str(k): v for k, v in sorted(self.images_per_patient.items())}
        doc["age_histogram"] = {
            "bin_width": AGE_BIN_WIDTH,
            "bins": [
                {"lo": lo, "hi": lo + AGE_BIN_WIDTH, "count": c}
                for lo, c in zip(self.age_bin_edges[:-1], self.age_counts)
            ],
            "missing": self.age_missing,
        }
        return json.dumps(doc, indent=2, sort_keys=True)


@dataclass
class RawImage:
    pixels: np.ndarray
    bit_depth: int
    photometric: str = "MONO2"
    window_hint: Optional[tuple[float, float]] = None

    @property
    def max_value(self) -> int:
        return (1 << self.bit_depth) - 1


# ---------------------------------------------------------------- parsing


def _parse_binary(value: str, row: int, name: str) -> int:
    v = value.strip()
    if v in ("0", "1"):
        return int(v)
    try:
        f = float(v)
    except ValueError:
        raise InvalidEnumValue(row, name, value) from None
    if f in (0.0, 1.0):
        return int(f)
    raise InvalidEnumValue(row, name, value)


def _parse_age(value: str, row: int) -> Optional[int]:
    v = value.strip()
    if v == "" or v.lower() in ("nan", "na", "none"):
        return None
    try:
        f = float(v)
    except ValueError:
        raise InvalidEnumValue(row, "age", value) from None
    if math.isnan(f):
        return None
    if not (0 <= f <= MAX_AGE) or f != int(f):
        raise InvalidEnumValue(row, "age", value)
    return int(f)


def _parse_view(value: str, row: int) -> str:
    v = value.strip()
    if v in VIEWS:
        return v
    if v.upper() in _OTHER_VIEW_CODES:
        return "other"
    raise InvalidEnumValue(row, "view", value)


def _parse_row(raw: Mapping[str, str], row: int) -> ImageRecord:
    laterality = raw["laterality"].strip()
    if laterality not in LATERALITIES:
        raise InvalidEnumValue(row, "laterality", raw["laterality"])
    patient_id = raw["patient_id"].strip()
    image_id = raw["image_id"].strip()
    if not patient_id:
        raise InvalidEnumValue(row, "patient_id", raw["patient_id"])
    if not image_id:
        raise InvalidEnumValue(row, "image_id", raw["image_id"])
    return ImageRecord(
        patient_id=patient_id,
        image_id=image_id,
        laterality=laterality,
        view=_parse_view(raw["view"], row),
        age=_parse_age(raw["age"], row),
        cancer=_parse_binary(raw["cancer"], row, "cancer"),
        biopsy=_parse_binary(raw["biopsy"], row, "biopsy"),
        source_path=(raw.get("source_path") or "").strip(),
    )


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read and validate a manifest CSV, preserving row order.

    Row numbers in errors are 1-based data rows (the header is row 0).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        for col in REQUIRED_COLUMNS:
            if col not in header:
                raise MissingColumn(col)
        extra = [h for h in header if h not in CSV_COLUMNS]
        if extra:
            logger.warning("ignoring extra manifest columns: %s", ", ".join(extra))
        reader.fieldnames = header
        records = []
        seen: set[str] = set()
        for row, raw in enumerate(reader, start=1):
            rec = _parse_row(raw, row)
            if rec.image_id in seen:
                raise DuplicateImageId(f"row {row}: {rec.image_id}")
            seen.add(rec.image_id)
            records.append(rec)
    return DatasetManifest.from_records(records)


def write_manifest(manifest: DatasetManifest | Sequence[ImageRecord], path: str | Path) -> None:
    records = manifest.records if isinstance(manifest, DatasetManifest) else manifest
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.patient_id,
                    r.image_id,
                    r.laterality,
                    r.view,
                    "" if r.age is None else r.age,
                    r.cancer,
                    r.biopsy,
                    r.source_path,
                ]
            )


# ---------------------------------------------------------------- summary


def dataset_summary(manifest: DatasetManifest) -> DatasetSummary:
    summary = DatasetSummary()
    if len(manifest) == 0:
        return summary

    recs = manifest.records
    summary.n_images = len(recs)
    summary.n_patients = len(manifest.patient_index)
    summary.image_positive_rate = sum(r.cancer for r in recs) / len(recs)

    ages: list[int] = []
    for pid, idx in manifest.patient_index.items():
        pats = [recs[i] for i in idx]
        cancer = int(any(r.cancer for r in pats))
        biopsy = int(any(r.biopsy for r in pats))
        summary.n_cancer_patients += cancer
        summary.biopsy_by_cancer_patients[cancer][biopsy] += 1
        n = len(idx)
        summary.images_per_patient[n] = summary.images_per_patient.get(n, 0) + 1
        known = [r.age for r in pats if r.age is not None]
        if known:
            ages.append(known[0])
        else:
            summary.age_missing += 1

    for r in recs:
        summary.biopsy_by_cancer[r.cancer][r.biopsy] += 1

    if ages:
        lo = (min(ages) // AGE_BIN_WIDTH) * AGE_BIN_WIDTH
        hi = (max(ages) // AGE_BIN_WIDTH + 1) * AGE_BIN_WIDTH
        edges = list(range(lo, hi + 1, AGE_BIN_WIDTH))
        counts = [0] * (len(edges) - 1)
        for a in ages:
            counts[(a - lo) // AGE_BIN_WIDTH] += 1
        summary.age_bin_edges = edges
        summary.age_counts = counts
    summary.images_per_patient = dict(sorted(summary.images_per_patient.items()))
    return summary


# ---------------------------------------------------------------- pixels


def invert_mono1(pixels: np.ndarray, bit_depth: int) -> np.ndarray:
    """MONOCHROME1 -> MONOCHROME2: p -> (2**bit_depth - 1) - p."""
    max_value = (1 << bit_depth) - 1
    return (max_value - pixels.astype(np.int64)).astype(pixels.dtype)


def _first(value) -> float:
    try:
        return float(value[0])
    except TypeError:
        return float(value)


def _load_dicom(path: Path) -> RawImage:
    import pydicom
    from pydicom.errors import InvalidDicomError

    try:
        ds = pydicom.dcmread(str(path))
    except InvalidDicomError as exc:
        raise UnsupportedFormat(f"{path}: not a DICOM file ({exc})") from exc
    except Exception as exc:
        raise CorruptPixelData(f"{path}: {exc}") from exc

    photometric = str(getattr(ds, "PhotometricInterpretation", "MONOCHROME2")).upper()
    if photometric not in ("MONOCHROME1", "MONOCHROME2"):
        raise UnsupportedFormat(f"{path}: photometric interpretation {photometric}")
    if int(getattr(ds, "PixelRepresentation", 0)) != 0:
        raise UnsupportedFormat(f"{path}: signed pixel data")
    if int(getattr(ds, "NumberOfFrames", 1) or 1) != 1:
        raise UnsupportedFormat(f"{path}: multi-frame images")
    if int(getattr(ds, "SamplesPerPixel", 1)) != 1:
        raise UnsupportedFormat(f"{path}: colour images")

    try:
        arr = np.asarray(ds.pixel_array)
    except Exception as exc:
        raise CorruptPixelData(f"{path}: {exc}") from exc
    if arr.ndim != 2 or arr.size == 0:
        raise CorruptPixelData(f"{path}: pixel array shape {arr.shape}")

    bit_depth = int(getattr(ds, "BitsStored", arr.dtype.itemsize * 8))
    if arr.max() >= (1 << bit_depth):
        raise CorruptPixelData(f"{path}: pixel value {arr.max()} exceeds BitsStored={bit_depth}")
    arr = arr.astype(np.uint16 if bit_depth <= 16 else np.uint32)

    hint = None
    if "WindowCenter" in ds and "WindowWidth" in ds:
        hint = (_first(ds.WindowCenter), _first(ds.WindowWidth))

    if photometric == "MONOCHROME1":
        arr = invert_mono1(arr, bit_depth)
    return RawImage(pixels=arr, bit_depth=bit_depth, photometric="MONO2", window_hint=hint)


def _load_png(path: Path) -> RawImage:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("L", "1"):
                arr, bit_depth = np.asarray(im.convert("L"), dtype=np.uint8), 8
            elif mode.startswith("I"):
                arr, bit_depth = np.asarray(im), 16
            else:
                raise UnsupportedFormat(f"{path}: PNG mode {mode} is not grayscale")
    except UnidentifiedImageError as exc:
        raise UnsupportedFormat(f"{path}: {exc}") from exc
    except (OSError, SyntaxError) as exc:
        raise CorruptPixelData(f"{path}: {exc}") from exc
    if arr.ndim != 2 or arr.size == 0:
        raise CorruptPixelData(f"{path}: pixel array shape {arr.shape}")
    if bit_depth == 16:
        if arr.min() < 0 or arr.max() > 0xFFFF:
            raise CorruptPixelData(f"{path}: values outside 16-bit range")
        arr = arr.astype(np.uint16)
    return RawImage(pixels=arr, bit_depth=bit_depth, photometric="MONO2", window_hint=None)


def load_image(record: ImageRecord | str | Path, image_root: str | Path | None = None) -> RawImage:
    """Decode a DICOM or grayscale PNG into a MONO2 :class:`RawImage`."""
    path = record.resolve_path(image_root) if isinstance(record, ImageRecord) else Path(record)
    if not path.is_file():
        raise ImageFileNotFound(str(path))
    with path.open("rb") as fh:
        head = fh.read(132)
    if head[:8] == b"\x89PNG\r\n\x1a\n":
        return _load_png(path)
    if head[128:132] == b"DICM" or path.suffix.lower() in (".dcm", ".dicom"):
        return _load_dicom(path)
    raise UnsupportedFormat(str(path))
