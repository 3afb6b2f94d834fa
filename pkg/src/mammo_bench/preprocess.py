"""ROI cropping, windowing, orientation and isotropic rescale + pad.

The chain for one image is::

    load_image -> detect_roi -> crop -> apply_windowing
               -> orient_breast_left -> rescale_pad

Everything here is a pure function of its inputs, so the batch driver can
fan out over any number of workers without changing the output bytes.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigError, DetectorFailure, InvalidWindow
from .manifest import DatasetManifest, ImageRecord, RawImage, load_image

logger = logging.getLogger(__name__)

ROI_SOURCES = ("rule_based", "learned", "full_frame_fallback")
# 4-connectivity
_CROSS = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class RoiBox:
    x: int
    y: int
    w: int
    h: int
    confidence: float = 1.0
    source: str = "rule_based"

    def __post_init__(self):
        if self.x < 0 or self.y < 0 or self.w < 1 or self.h < 1:
            raise ValueError(f"degenerate ROI box {self}")
        if self.source not in ROI_SOURCES:
            raise ValueError(f"unknown ROI source {self.source!r}")

    def contains(self, row: int, col: int) -> bool:
        return self.y <= row < self.y + self.h and self.x <= col < self.x + self.w

    def crop(self, pixels: np.ndarray) -> np.ndarray:
        return pixels[self.y : self.y + self.h, self.x : self.x + self.w]


@dataclass(frozen=True)
class WindowSpec:
    center: float
    width: float
    function: str = "linear"

    def __post_init__(self):
        if self.function != "linear":
            raise InvalidWindow(f"unsupported VOI function {self.function!r}")


@dataclass(frozen=True)
class PreprocessConfig:
    target_height: int = 1024
    target_width: int = 512
    detector_input_size: int = 416
    roi_threshold_fraction: float = 0.05
    roi_margin_fraction: float = 0.02
    pad_value: int = 0
    output_bit_depth: int = 16

    def __post_init__(self):
        if self.target_height < 32 or self.target_width < 32:
            raise ConfigError("target dimensions must be >= 32")
        if not 0 < self.roi_threshold_fraction < 1:
            raise ConfigError("roi_threshold_fraction must lie in (0, 1)")
        if self.roi_margin_fraction < 0:
            raise ConfigError("roi_margin_fraction must be >= 0")
        if self.detector_input_size < 1:
            raise ConfigError("detector_input_size must be >= 1")
        if not 1 <= self.output_bit_depth <= 16:
            raise ConfigError("output_bit_depth must be in [1, 16]")
        if not 0 <= self.pad_value <= self.out_max:
            raise ConfigError("pad_value outside the output bit depth")

    @property
    def out_max(self) -> int:
        return (1 << self.output_bit_depth) - 1


@dataclass
class ProcessedImage:
    pixels: np.ndarray
    roi: RoiBox
    window: WindowSpec
    flipped: bool

    def sidecar(self) -> dict:
        return {"roi": asdict(self.roi), "window": asdict(self.window), "flipped": self.flipped}


class RoiDetector(Protocol):
    """Learned detector hook.

    Receives a ``size x size`` float32 array in [0, 1] (the letterboxed image,
    content in the top-left corner) and returns candidate boxes as
    ``(x, y, w, h, confidence)`` in that array's coordinates.
    """

    def __call__(self, image: np.ndarray) -> Sequence[tuple[float, float, float, float, float]]: ...


# ---------------------------------------------------------------- ROI


def _full_frame(shape: tuple[int, int]) -> RoiBox:
    h, w = shape
    return RoiBox(0, 0, w, h, confidence=0.0, source="full_frame_fallback")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _rule_based_roi(pixels: np.ndarray, config: PreprocessConfig) -> RoiBox:
    img = np.asarray(pixels, dtype=np.float64)
    peak = img.max()
    if peak <= 0:
        return _full_frame(img.shape)
    mask = (img / peak) > config.roi_threshold_fraction
    labels, n = ndimage.label(mask, structure=_CROSS)
    if n == 0:
        return _full_frame(img.shape)
    sizes = np.bincount(labels.ravel())[1:]
    best = int(np.argmax(sizes)) + 1
    rows, cols = ndimage.find_objects(labels)[best - 1]

    y0, y1 = rows.start, rows.stop
    x0, x1 = cols.start, cols.stop
    my = math.ceil(config.roi_margin_fraction * (y1 - y0))
    mx = math.ceil(config.roi_margin_fraction * (x1 - x0))
    H, W = img.shape
    y0, y1 = max(0, y0 - my), min(H, y1 + my)
    x0, x1 = max(0, x0 - mx), min(W, x1 + mx)
    confidence = float(sizes[best - 1] / sizes.sum())
    return RoiBox(x0, y0, x1 - x0, y1 - y0, confidence=confidence, source="rule_based")


def _learned_roi(pixels: np.ndarray, config: PreprocessConfig, detector: RoiDetector) -> RoiBox:
    img = np.asarray(pixels, dtype=np.float32)
    H, W = img.shape
    size = config.detector_input_size
    scale = min(size / H, size / W)
    h, w = max(1, _round_half_up(H * scale)), max(1, _round_half_up(W * scale))
    peak = float(img.max())
    norm = img / peak if peak > 0 else img
    letterbox = np.zeros((size, size), dtype=np.float32)
    letterbox[:h, :w] = _resize(norm, h, w)
    try:
        boxes = list(detector(letterbox))
    except Exception as exc:
        raise DetectorFailure(str(exc)) from exc
    if not boxes:
        return _full_frame(img.shape)
    bx, by, bw, bh, conf = max(boxes, key=lambda b: b[4])
    x0 = min(W - 1, max(0, int(math.floor(bx / scale))))
    y0 = min(H - 1, max(0, int(math.floor(by / scale))))
    x1 = min(W, max(x0 + 1, int(math.ceil((bx + bw) / scale))))
    y1 = min(H, max(y0 + 1, int(math.ceil((by + bh) / scale))))
    return RoiBox(x0, y0, x1 - x0, y1 - y0, confidence=float(conf), source="learned")


def detect_roi(
    image: RawImage | np.ndarray,
    config: PreprocessConfig,
    detector: Optional[RoiDetector] = None,
) -> RoiBox:
    """Find the breast bounding box.

    Without a detector: threshold at ``roi_threshold_fraction`` of the image
    maximum, keep the largest 4-connected component and dilate its bounding
    box by ``roi_margin_fraction``. An image with nothing above threshold
    yields a full-frame box tagged ``full_frame_fallback``.
    """
    pixels = image.pixels if isinstance(image, RawImage) else np.asarray(image)
    if pixels.ndim != 2 or pixels.size == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {pixels.shape}")
    if detector is not None:
        return _learned_roi(pixels, config, detector)
    return _rule_based_roi(pixels, config)


# ---------------------------------------------------------------- windowing


def default_window(bit_depth: int) -> WindowSpec:
    """Full-range window for ``bit_depth``-bit data."""
    return WindowSpec(center=float(1 << (bit_depth - 1)), width=float(1 << bit_depth))


def select_window(image: RawImage) -> WindowSpec:
    if image.window_hint is not None:
        c, w = image.window_hint
        return WindowSpec(center=float(c), width=float(w))
    return default_window(image.bit_depth)


def apply_windowing(image: RawImage | np.ndarray, window: WindowSpec, out_max: float) -> np.ndarray:
    """Linear VOI LUT mapped onto ``[0, out_max]`` (float64).

    ``y = clip((x - (c - 0.5)) / (w - 1) + 0.5, 0, 1) * out_max``; a width of
    1 is a hard step: ``x <= c - 0.5`` maps to 0, anything above to ``out_max``.
    """
    if window.width < 1:
        raise InvalidWindow(f"window width {window.width} < 1")
    x = np.asarray(image.pixels if isinstance(image, RawImage) else image, dtype=np.float64)
    c, w = float(window.center), float(window.width)
    if w == 1:
        y = (x > c - 0.5).astype(np.float64)
    else:
        y = np.clip((x - (c - 0.5)) / (w - 1) + 0.5, 0.0, 1.0)
    return y * out_max


# ---------------------------------------------------------------- geometry


def orient_breast_left(pixels: np.ndarray) -> tuple[np.ndarray, bool]:
    """Mirror the image when its right half is strictly brighter than its left half."""
    arr = np.asarray(pixels)
    if arr.size == 0:
        raise ValueError("empty image")
    half = arr.shape[1] // 2
    if half == 0:
        return arr, False
    left = arr[:, :half].mean(dtype=np.float64)
    right = arr[:, arr.shape[1] - half :].mean(dtype=np.float64)
    if right > left:
        return arr[:, ::-1].copy(), True
    return arr, False


def _resize(pixels: np.ndarray, height: int, width: int) -> np.ndarray:
    src = np.ascontiguousarray(pixels, dtype=np.float32)
    if src.shape == (height, width):
        return src.copy()
    out = Image.fromarray(src).resize((width, height), resample=Image.BILINEAR)
    return np.asarray(out, dtype=np.float32)


def content_shape(shape: tuple[int, int], target_height: int, target_width: int) -> tuple[int, int]:
    """Size of the resized content region inside the padded output."""
    H, W = shape
    scale = min(target_height / H, target_width / W)
    h = min(target_height, max(1, _round_half_up(H * scale)))
    w = min(target_width, max(1, _round_half_up(W * scale)))
    return h, w


def rescale_pad(pixels: np.ndarray, config: PreprocessConfig) -> np.ndarray:
    """Aspect-preserving bilinear resize, then pad right/bottom with ``pad_value``.

    Integer inputs come back in the same dtype (rounded and clipped);
    float inputs come back as float32.
    """
    arr = np.asarray(pixels)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    th, tw = config.target_height, config.target_width
    h, w = content_shape(arr.shape, th, tw)
    out = np.full((th, tw), config.pad_value, dtype=np.float32)
    out[:h, :w] = _resize(arr, h, w)
    if np.issubdtype(arr.dtype, np.integer):
        info = np.iinfo(arr.dtype)
        return np.clip(np.rint(out), info.min, info.max).astype(arr.dtype)
    return out


# ---------------------------------------------------------------- chain


def _output_dtype(bit_depth: int):
    return np.uint8 if bit_depth <= 8 else np.uint16


def process_raw(
    raw: RawImage,
    config: PreprocessConfig,
    detector: Optional[RoiDetector] = None,
    window: Optional[WindowSpec] = None,
) -> ProcessedImage:
    """Run the chain on already-decoded pixels."""
    roi = detect_roi(raw, config, detector)
    cropped = roi.crop(raw.pixels)
    window = window or select_window(raw)
    windowed = apply_windowing(cropped, window, config.out_max)
    oriented, flipped = orient_breast_left(windowed)
    resized = rescale_pad(oriented.astype(np.float32), config)
    pixels = np.clip(np.rint(resized), 0, config.out_max).astype(_output_dtype(config.output_bit_depth))
    return ProcessedImage(pixels=pixels, roi=roi, window=window, flipped=flipped)


def preprocess_image(
    record: ImageRecord,
    config: PreprocessConfig,
    detector: Optional[RoiDetector] = None,
    image_root: str | Path | None = None,
) -> ProcessedImage:
    return process_raw(load_image(record, image_root), config, detector)


def processed_path(out_dir: str | Path, record: ImageRecord) -> Path:
    return Path(out_dir) / record.patient_id / f"{record.image_id}.png"


def save_processed(image: ProcessedImage, out_dir: str | Path, record: ImageRecord) -> Path:
    """Write ``<out_dir>/<patient_id>/<image_id>.png`` plus its JSON sidecar."""
    path = processed_path(out_dir, record)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = image.pixels
    Image.fromarray(arr.astype(np.uint16) if arr.dtype != np.uint8 else arr).save(path, format="PNG")
    path.with_suffix(".json").write_text(json.dumps(image.sidecar(), indent=2, sort_keys=True) + "\n")
    return path


def load_processed(out_dir: str | Path, record: ImageRecord) -> np.ndarray:
    path = processed_path(out_dir, record)
    return np.asarray(load_image(path).pixels)


def preprocess_manifest(
    manifest: DatasetManifest,
    config: PreprocessConfig,
    out_dir: str | Path,
    image_root: str | Path | None = None,
    detector: Optional[RoiDetector] = None,
    workers: int = 1,
    progress: Optional[Callable[[ImageRecord], None]] = None,
) -> list[Path]:
    """Preprocess every record into the PNG tree; returns paths in manifest order."""

    def job(rec: ImageRecord) -> Path:
        path = save_processed(preprocess_image(rec, config, detector, image_root), out_dir, rec)
        if progress is not None:
            progress(rec)
        return path

    if workers <= 1:
        return [job(r) for r in manifest.records]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, manifest.records))
