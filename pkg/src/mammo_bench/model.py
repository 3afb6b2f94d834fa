"""ConvNeXt-small / EfficientNetV2-S classifiers with a single-logit max-pool head.

Backbones come from ``torchvision.models`` unchanged except for the stem
convolution, which is rebuilt for ``in_channels`` inputs. The head is::

    [final norm] -> global max pool -> dropout -> linear(C, 1)

ConvNeXt keeps its final LayerNorm, applied per position ahead of the pool
(the ``head_norm_first`` ordering); EfficientNet has no norm there.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from scipy.special import expit
from torch import nn
from torchvision import models as tvm

from .errors import (
    ArchitectureMismatch,
    ConfigError,
    CorruptCheckpoint,
    ShapeMismatch,
    UnknownArchitecture,
    WeightsUnavailable,
)

ARCHITECTURES = ("convnext_small", "efficientnet_v2_s")
DISPLAY_NAMES = {"convnext_small": "ConvNeXT-S", "efficientnet_v2_s": "EffNetV2-S"}
# Both backbones reduce spatial size by 32x.
MIN_INPUT_SIZE = {"convnext_small": 32, "efficientnet_v2_s": 32}

_MAGIC = b"MAMMOCKPT\x01"
_HEADER_LEN = struct.Struct("<Q")


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "convnext_small"
    in_channels: int = 1
    dropout_rate: float = 0.1
    drop_path_rate: float = 0.2
    global_pool: str = "max"
    pretrained: bool = False
    num_outputs: int = 1
    # Optional local torchvision-format (3-channel) state dict used when
    # ``pretrained`` is set; otherwise torchvision's download cache is tried.
    weights_path: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise UnknownArchitecture(self.arch)
        if self.in_channels < 1:
            raise ConfigError("in_channels must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if not 0 <= self.drop_path_rate < 1:
            raise ConfigError("drop_path_rate must lie in [0, 1)")
        if self.global_pool != "max":
            raise ConfigError("global_pool is fixed to 'max'")
        if self.num_outputs != 1:
            raise ConfigError("num_outputs is fixed to 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("weights_path")
        return d


class MammoNet(nn.Module):
    def __init__(self, features: nn.Module, norm: nn.Module, channels: int, dropout: float):
        super().__init__()
        self.features = features
        self.norm = norm
        self.pool = nn.AdaptiveMaxPool2d(1)
        self.dropout = nn.Dropout(p=dropout)
        self.fc = nn.Linear(channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.norm(self.features(x))
        x = torch.flatten(self.pool(x), 1)
        return self.fc(self.dropout(x))


class Classifier:
    """Model handle: config, parameters (``module``) and an explicit train/eval mode."""

    def __init__(self, config: ModelConfig, module: MammoNet):
        self.config = config
        self.module = module
        self.eval()

    @property
    def mode(self) -> str:
        return "train" if self.module.training else "eval"

    def train(self) -> "Classifier":
        self.module.train()
        return self

    def eval(self) -> "Classifier":
        self.module.eval()
        return self

    def freeze_batch_stats(self) -> "Classifier":
        """Put batch-norm layers in eval mode while leaving the rest untouched."""
        for m in self.module.modules():
            if isinstance(m, nn.modules.batchnorm._BatchNorm):
                m.eval()
        return self

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.module.parameters())

    def parameters(self):
        return self.module.parameters()

    def __repr__(self) -> str:
        return f"Classifier({self.config.arch}, mode={self.mode}, params={self.parameter_count():,})"


# ---------------------------------------------------------------- building


def _replace_stem(conv: nn.Conv2d, in_channels: int) -> nn.Conv2d:
    return nn.Conv2d(
        in_channels,
        conv.out_channels,
        kernel_size=conv.kernel_size,
        stride=conv.stride,
        padding=conv.padding,
        bias=conv.bias is not None,
    )


def adapt_stem_kernel(weight: torch.Tensor, in_channels: int) -> torch.Tensor:
    """Fold an RGB stem kernel onto ``in_channels`` inputs.

    The RGB kernels are summed, so a grey image replicated over three channels
    gives the same response as the summed kernel on the grey image. For more
    than one input channel the sum is split evenly across them.
    """
    if weight.shape[1] == in_channels:
        return weight.clone()
    summed = weight.sum(dim=1, keepdim=True)
    return summed.repeat(1, in_channels, 1, 1) / in_channels


def _torchvision_backbone(config: ModelConfig):
    if config.arch == "convnext_small":
        tv = tvm.convnext_small(weights=None, stochastic_depth_prob=config.drop_path_rate)
        norm, channels = tv.classifier[0], tv.classifier[2].in_features
    else:
        tv = tvm.efficientnet_v2_s(weights=None, stochastic_depth_prob=config.drop_path_rate)
        norm, channels = nn.Identity(), tv.classifier[1].in_features
    return tv, norm, channels


def _pretrained_state(config: ModelConfig) -> dict:
    if config.weights_path:
        try:
            return torch.load(config.weights_path, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise WeightsUnavailable(f"{config.weights_path}: {exc}") from exc
    enum = {
        "convnext_small": tvm.ConvNeXt_Small_Weights.IMAGENET1K_V1,
        "efficientnet_v2_s": tvm.EfficientNet_V2_S_Weights.IMAGENET1K_V1,
    }[config.arch]
    try:
        return enum.get_state_dict(progress=False)
    except Exception as exc:
        raise WeightsUnavailable(f"{config.arch}: {exc}") from exc


def _load_pretrained(net: MammoNet, config: ModelConfig) -> None:
    state = _pretrained_state(config)
    mapped = {}
    for key, value in state.items():
        if key.startswith("features."):
            mapped[key] = value
        elif config.arch == "convnext_small" and key.startswith("classifier.0."):
            mapped["norm." + key[len("classifier.0.") :]] = value
    stem = "features.0.0.weight"
    if stem not in mapped:
        raise WeightsUnavailable(f"{config.arch}: state dict has no stem weight")
    mapped[stem] = adapt_stem_kernel(mapped[stem], config.in_channels)
    missing, _ = net.load_state_dict(mapped, strict=False)
    backbone_missing = [k for k in missing if not k.startswith("fc.")]
    if backbone_missing:
        raise WeightsUnavailable(f"{config.arch}: weights missing {backbone_missing[:3]}")


def build_model(config: ModelConfig | str) -> Classifier:
    if isinstance(config, str):
        config = ModelConfig(arch=config)
    tv, norm, channels = _torchvision_backbone(config)
    features = tv.features
    features[0][0] = _replace_stem(features[0][0], config.in_channels)
    net = MammoNet(features, norm, channels, config.dropout_rate)
    if config.pretrained:
        _load_pretrained(net, config)
    return Classifier(config, net)


# ---------------------------------------------------------------- inference


def _as_batch(classifier: Classifier, batch) -> torch.Tensor:
    x = torch.as_tensor(np.asarray(batch) if not isinstance(batch, torch.Tensor) else batch)
    if x.ndim != 4:
        raise ShapeMismatch(f"expected [B, C, H, W], got shape {tuple(x.shape)}")
    b, c, h, w = x.shape
    cfg = classifier.config
    if b < 1:
        raise ShapeMismatch("empty batch")
    if c != cfg.in_channels:
        raise ShapeMismatch(f"expected {cfg.in_channels} channel(s), got {c}")
    lo = MIN_INPUT_SIZE[cfg.arch]
    if h < lo or w < lo:
        raise ShapeMismatch(f"{cfg.arch} needs H, W >= {lo}, got {h}x{w}")
    return x.to(dtype=next(classifier.module.parameters()).dtype)


def forward(classifier: Classifier, batch) -> torch.Tensor:
    """Logits of shape [B, 1]. Gradients flow in train mode; call under
    ``torch.no_grad()`` for inference."""
    return classifier.module(_as_batch(classifier, batch))


def sigmoid(logits) -> np.ndarray:
    return expit(np.asarray(logits, dtype=np.float64))


def predict_proba(classifier: Classifier, batch) -> np.ndarray:
    """Cancer probabilities [B] (float64) from the current mode of ``classifier``."""
    with torch.no_grad():
        logits = forward(classifier, batch)
    return sigmoid(logits[:, 0].double().numpy())


def ensemble_proba(classifiers, batch) -> np.ndarray:
    """Mean probability over several classifiers (e.g. the four fold models)."""
    return np.mean([predict_proba(c, batch) for c in classifiers], axis=0)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(classifier: Classifier, path: str | Path) -> Path:
    """Write config + parameters as ``MAGIC | u64 header length | JSON header | tensor bytes``."""
    path = Path(path)
    tensors, chunks, offset = [], [], 0
    for name, t in classifier.module.state_dict().items():
        arr = t.detach().cpu().contiguous().numpy()
        raw = arr.tobytes()
        tensors.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format": 1,
        "config": classifier.config.to_dict(),
        "tensors": tensors,
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(_HEADER_LEN.pack(len(blob)))
        fh.write(blob)
        fh.write(payload)
    return path


def read_checkpoint_config(path: str | Path) -> ModelConfig:
    header, _ = _read_container(Path(path), with_payload=False)
    return ModelConfig(**header["config"])


def _read_container(path: Path, with_payload: bool = True):
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from exc
    if not data.startswith(_MAGIC):
        raise CorruptCheckpoint(f"{path}: bad magic")
    pos = len(_MAGIC)
    if len(data) < pos + _HEADER_LEN.size:
        raise CorruptCheckpoint(f"{path}: truncated header")
    (n,) = _HEADER_LEN.unpack_from(data, pos)
    pos += _HEADER_LEN.size
    try:
        header = json.loads(data[pos : pos + n])
    except ValueError as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header") from exc
    payload = data[pos + n :]
    if with_payload:
        if len(payload) != header.get("payload_bytes"):
            raise CorruptCheckpoint(f"{path}: truncated payload")
        if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
            raise CorruptCheckpoint(f"{path}: checksum mismatch")
    return header, payload


def load_checkpoint(path: str | Path, arch: Optional[str] = None) -> Classifier:
    """Rebuild a classifier (eval mode) from ``path``.

    ``arch``, when given, must match the architecture stored in the file.
    """
    header, payload = _read_container(Path(path))
    try:
        config = ModelConfig(**header["config"])
    except (TypeError, KeyError) as exc:
        raise CorruptCheckpoint(f"{path}: bad config") from exc
    if arch is not None and arch != config.arch:
        raise ArchitectureMismatch(f"checkpoint holds {config.arch}, requested {arch}")
    # parameters come from the file, so never fetch pretrained weights here
    classifier = build_model(replace(config, pretrained=False))
    classifier.config = config
    state = {}
    for spec in header["tensors"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=spec["offset"])
        state[spec["name"]] = torch.from_numpy(arr.reshape(spec["shape"]).copy())
    try:
        classifier.module.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from exc
    return classifier.eval()


def checkpoint_roundtrip(classifier: Classifier, path: str | Path) -> Classifier:
    save_checkpoint(classifier, path)
    return load_checkpoint(path, arch=classifier.config.arch)


def checkpoint_name(arch: str, fold: int) -> str:
    return f"{arch}_fold{fold}.ckpt"
