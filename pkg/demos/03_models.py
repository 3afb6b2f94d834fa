"""
The two single-logit backbones
==============================

Both classifiers take one grey channel, end in global max pooling and a
single logit. Weights are random unless ``pretrained=True``.
"""

import tempfile
from pathlib import Path

import torch

from mammo_bench.model import ModelConfig, build_model, checkpoint_roundtrip, predict_proba

torch.manual_seed(0)
x = torch.randn(2, 1, 128, 64)

for arch in ("convnext_small", "efficientnet_v2_s"):
    clf = build_model(ModelConfig(arch)).eval()
    p = predict_proba(clf, x)
    print(f"{arch:18s} params={clf.parameter_count():,}  p={p.round(4)}")

###############################################################################
# Checkpoints carry the config; reloading reproduces predictions exactly.
with tempfile.TemporaryDirectory() as tmp:
    back = checkpoint_roundtrip(clf, Path(tmp) / "m.ckpt")
    print("bit exact after reload:", bool((predict_proba(back, x) == p).all()))

###############################################################################
# Any spatial size from 32 px works; the head pools globally.
print(predict_proba(clf, torch.randn(1, 1, 32, 32)))
