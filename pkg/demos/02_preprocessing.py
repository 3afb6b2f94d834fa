"""
From raw pixels to a fixed-size network input
=============================================

Each image goes through: ROI crop, VOI windowing, left orientation and an
aspect-preserving rescale with padding.
"""

import numpy as np

from mammo_bench.manifest import RawImage
from mammo_bench.preprocess import (
    PreprocessConfig,
    WindowSpec,
    apply_windowing,
    content_shape,
    detect_roi,
    orient_breast_left,
    process_raw,
)
from mammo_bench.synthetic import breast_image

rng = np.random.default_rng(3)
pixels = breast_image(rng, 256, positive=True, laterality="R")
raw = RawImage(pixels=pixels, bit_depth=16, photometric="MONO2")
print("raw", pixels.shape, pixels.dtype, pixels.min(), pixels.max())

###############################################################################
# Region of interest: threshold at 5% of the max, keep the largest
# connected component, add a 2% margin.
config = PreprocessConfig(target_height=128, target_width=64)
box = detect_roi(raw, config)
print("roi", box)

# An empty frame has nothing to crop and falls back to the full image
print("empty frame ->", detect_roi(np.zeros((32, 32)), config).source)

###############################################################################
# Linear windowing maps [c - w/2, c + w/2] onto [0, out_max].
win = WindowSpec(center=30000, width=20000)
x = np.array([0, 20000, 30000, 40000, 65535])
print("windowed", apply_windowing(x, win, 65535).round(1))

###############################################################################
# Orientation puts the brighter half on the left.
_, flipped = orient_breast_left(box.crop(pixels).astype(float))
print("right breast flipped:", flipped)

###############################################################################
# Rescale keeps the aspect ratio; a 2000x1500 crop in a 1024x512 frame keeps
# 683x512 of content.
print("content", content_shape((2000, 1500), 1024, 512))

out = process_raw(raw, config)
print("processed", out.pixels.shape, out.pixels.dtype, out.sidecar()["roi"]["source"])
