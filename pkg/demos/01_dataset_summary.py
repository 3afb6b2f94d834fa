"""
Loading a screening manifest and summarising the cohort
=======================================================

A manifest is a CSV with one row per image. We write a small synthetic
cohort to a scratch directory, load it back and look at the summary that
``mammo-bench ingest`` would write.
"""

import json
import sys
import tempfile
from pathlib import Path

from mammo_bench.manifest import dataset_summary, load_image, load_manifest
from mammo_bench.synthetic import SyntheticSpec, make_synthetic_dataset

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="mb_demo_"))

# the default cohort: 100 patients, two views each, 50 of them with one cancer-labelled image
_, csv_path = make_synthetic_dataset(root, SyntheticSpec())
print("manifest written to", csv_path)
print(csv_path.read_text().splitlines()[:3])

###############################################################################
# Parsing validates every row; bad enums raise with the row number.
manifest = load_manifest(csv_path)
print(len(manifest), "images from", len(manifest.patient_ids), "patients")

first = manifest.patient_ids[0]
print("patient", first, "->", [r.image_id for r in manifest.records_for(first)])

###############################################################################
# The summary counts patients, the image-level positive rate, a 5-year age
# histogram and the biopsy-by-cancer cross tab.
summary = dataset_summary(manifest)
doc = json.loads(summary.to_json())
print(json.dumps({k: doc[k] for k in ("n_patients", "n_images", "n_cancer_patients")}, indent=1))
print("biopsy x cancer (images):", summary.biopsy_by_cancer)

###############################################################################
# Pixels come back as a RawImage with bit depth and photometric tag.
raw = load_image(manifest.records[0], root)
print(raw.pixels.shape, raw.pixels.dtype, raw.bit_depth, raw.photometric)
