"""Patient-grouped k-fold training with positive upsampling.

One epoch is a list of batches built by :func:`build_epoch_plan`: every
negative image is used once, each batch is topped up with
``positives_per_batch`` positives drawn by cycling through a shuffled
positive list. Optimisation is SGD with momentum under a per-step cosine
learning-rate schedule; the loss is plain BCE on soft positive targets.
"""

from __future__ import annotations

import csv
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import torch

from .errors import (
    ConfigError,
    DivergedLoss,
    FoldTrainingError,
    LeakageError,
    NoNegatives,
    NoPositives,
    TooFewPatients,
    TooFewPositives,
)
from .manifest import DatasetManifest, ImageRecord
from .model import Classifier, ModelConfig, build_model, checkpoint_name, forward, predict_proba, save_checkpoint

logger = logging.getLogger(__name__)

ImageSource = Callable[[ImageRecord], np.ndarray]

OOF_COLUMNS = ("image_id", "patient_id", "laterality", "fold", "probability", "label")


@dataclass(frozen=True)
class FoldSplit:
    k: int
    assignments: Mapping[str, int]

    def __post_init__(self):
        counts = [0] * self.k
        for f in self.assignments.values():
            if not 0 <= f < self.k:
                raise ValueError(f"fold index {f} outside [0, {self.k})")
            counts[f] += 1
        if any(c == 0 for c in counts):
            raise ValueError(f"empty fold in split: {counts}")

    def patients_in(self, fold: int) -> list[str]:
        return [p for p, f in self.assignments.items() if f == fold]

    def train_records(self, manifest: DatasetManifest, fold: int) -> list[ImageRecord]:
        return [r for r in manifest.records if self.assignments[r.patient_id] != fold]

    def val_records(self, manifest: DatasetManifest, fold: int) -> list[ImageRecord]:
        return [r for r in manifest.records if self.assignments[r.patient_id] == fold]

    def to_dict(self) -> dict:
        return {"k": self.k, "assignments": dict(self.assignments)}


@dataclass(frozen=True)
class SamplerConfig:
    batch_size: int = 8
    positives_per_batch: int = 1
    shuffle_seed: int = 0

    def __post_init__(self):
        if not 1 <= self.positives_per_batch < self.batch_size:
            raise ConfigError("need 1 <= positives_per_batch < batch_size")


@dataclass
class EpochSamplePlan:
    batches: list[list[str]]

    def __len__(self) -> int:
        return len(self.batches)

    def multiplicities(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for b in self.batches:
            for i in b:
                counts[i] = counts.get(i, 0) + 1
        return counts


@dataclass(frozen=True)
class TrainConfig:
    lr_max: float = 1e-2
    lr_min: float = 1e-5
    momentum: float = 0.9
    epochs: int = 5
    soft_positive: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    eval_batch_size: int = 16
    # global L2 gradient-norm clip applied before every SGD step; None disables it
    grad_clip_norm: Optional[float] = None

    def __post_init__(self):
        if not 0 <= self.lr_min <= self.lr_max:
            raise ConfigError("need 0 <= lr_min <= lr_max")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0.5 < self.soft_positive <= 1.0:
            raise ConfigError("soft_positive must lie in (0.5, 1]")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.grad_clip_norm is not None and not self.grad_clip_norm > 0:
            raise ConfigError("grad_clip_norm must be > 0 when set")


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    lr: float = 0.0
    loss_history: list[float] = field(default_factory=list)
    fold: Optional[int] = None
    train_image_ids: frozenset = frozenset()
    val_image_ids: frozenset = frozenset()

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "epoch": self.epoch,
            "step": self.step,
            "lr": self.lr,
            "loss_history": list(self.loss_history),
        }


# ---------------------------------------------------------------- folds


def make_folds(manifest: DatasetManifest, k: int = 4, seed: int = 0) -> FoldSplit:
    """Stratified, patient-grouped fold assignment.

    Patients are split by their patient-level label, each stratum shuffled
    with ``seed``, then dealt round-robin. The dealing position carries over
    from the positive to the negative stratum so fold sizes differ by at most one.
    """
    patients = manifest.patient_ids
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(patients) < k:
        raise TooFewPatients(f"{len(patients)} patients for {k} folds")
    pos = [p for p in patients if manifest.patient_label(p)]
    neg = [p for p in patients if not manifest.patient_label(p)]
    if len(pos) < k:
        raise TooFewPositives(f"{len(pos)} positive patients for {k} folds")
    rng = np.random.default_rng(seed)
    assignments: dict[str, int] = {}
    slot = 0
    for stratum in (pos, neg):
        for i in rng.permutation(len(stratum)):
            assignments[stratum[i]] = slot % k
            slot += 1
    ordered = {p: assignments[p] for p in patients}
    return FoldSplit(k=k, assignments=ordered)


# ---------------------------------------------------------------- sampling


def build_epoch_plan(
    train_records: Sequence[ImageRecord],
    sampler: SamplerConfig,
    epoch_seed,
) -> EpochSamplePlan:
    pos = [r.image_id for r in train_records if r.cancer]
    neg = [r.image_id for r in train_records if not r.cancer]
    if not pos:
        raise NoPositives("training set has no positive images")
    if not neg:
        raise NoNegatives("training set has no negative images")

    rng = np.random.default_rng(epoch_seed)
    per_batch_neg = sampler.batch_size - sampler.positives_per_batch
    n_batches = math.ceil(len(neg) / per_batch_neg)
    neg_order = [neg[i] for i in rng.permutation(len(neg))]

    pos_queue: list[str] = []

    def next_positive() -> str:
        if not pos_queue:
            pos_queue.extend(pos[i] for i in rng.permutation(len(pos)))
        return pos_queue.pop(0)

    batches = []
    for b in range(n_batches):
        batch = neg_order[b * per_batch_neg : (b + 1) * per_batch_neg]
        batch += [next_positive() for _ in range(sampler.positives_per_batch)]
        batches.append([batch[i] for i in rng.permutation(len(batch))])
    return EpochSamplePlan(batches=batches)


def epoch_seed(seed: int, fold: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, fold, epoch]).generate_state(1)[0])


# ---------------------------------------------------------------- schedule / loss


def cosine_lr(step: float, total: float, lr_max: float, lr_min: float) -> float:
    if total < 1 or not 0 <= step <= total:
        raise ValueError(f"need 0 <= step <= total and total >= 1 (got {step}, {total})")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total))


def bce_soft_loss(logits, targets, soft_positive: float = 0.9):
    """Mean BCE against targets ``soft_positive`` (label 1) and 0 (label 0).

    Uses ``max(z, 0) - z * t + log1p(exp(-|z|))``, which stays finite for any
    logit. Torch tensors in -> tensor out (differentiable); anything else in
    -> Python float.
    """
    as_tensor = isinstance(logits, torch.Tensor)
    z = logits if as_tensor else torch.as_tensor(np.asarray(logits, dtype=np.float64))
    y = torch.as_tensor(np.asarray(targets) if not isinstance(targets, torch.Tensor) else targets)
    t = y.to(z.dtype) * soft_positive
    z = z.reshape(t.shape)
    loss = (torch.clamp(z, min=0) - z * t + torch.log1p(torch.exp(-z.abs()))).mean()
    return loss if as_tensor else float(loss)


def soft_loss_minimum(soft_positive: float) -> float:
    t = soft_positive
    if t >= 1.0:
        return 0.0
    return -(t * math.log(t) + (1 - t) * math.log(1 - t))


# ---------------------------------------------------------------- training loop


def set_deterministic(seed: int) -> None:
    """Seed every RNG in play and force deterministic torch kernels on one thread."""
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)


def to_input(pixels: np.ndarray) -> np.ndarray:
    """Map a processed image to the network's input scale, [-1, 1] float32."""
    arr = np.asarray(pixels)
    if np.issubdtype(arr.dtype, np.integer):
        arr = arr.astype(np.float32) / np.iinfo(arr.dtype).max
    return (arr.astype(np.float32) - 0.5) / 0.5


def _batch(records: Sequence[ImageRecord], source: ImageSource, cache: dict) -> np.ndarray:
    out = []
    for r in records:
        if r.image_id not in cache:
            cache[r.image_id] = to_input(source(r))
        out.append(cache[r.image_id])
    return np.stack(out)[:, None]


def predict_records(
    classifier: Classifier,
    records: Sequence[ImageRecord],
    source: ImageSource,
    batch_size: int = 16,
) -> np.ndarray:
    classifier.eval()
    probs = []
    cache: dict = {}
    for i in range(0, len(records), batch_size):
        chunk = records[i : i + batch_size]
        probs.append(predict_proba(classifier, _batch(chunk, source, cache)))
        cache.clear()
    return np.concatenate(probs) if probs else np.zeros(0)


def train_fold(
    manifest: DatasetManifest,
    folds: FoldSplit,
    fold_id: int,
    model_config: ModelConfig,
    train_config: TrainConfig,
    sampler: SamplerConfig,
    image_source: ImageSource,
    deterministic: bool = True,
    log: Optional[Callable[[str], None]] = None,
) -> tuple[Classifier, TrainState]:
    """Train on every fold except ``fold_id``; validation images are never read."""
    if not 0 <= fold_id < folds.k:
        raise ValueError(f"fold_id {fold_id} outside [0, {folds.k})")
    train_recs = folds.train_records(manifest, fold_id)
    val_ids = frozenset(r.image_id for r in folds.val_records(manifest, fold_id))
    by_id = {r.image_id: r for r in train_recs}

    seen: set[str] = set()

    def guarded(rec: ImageRecord) -> np.ndarray:
        if rec.image_id in val_ids:
            raise LeakageError(f"validation image {rec.image_id} requested during training of fold {fold_id}")
        seen.add(rec.image_id)
        return image_source(rec)

    seed = train_config.seed * 1000 + fold_id
    if deterministic:
        set_deterministic(seed)
    else:
        torch.manual_seed(seed)

    classifier = build_model(model_config)
    opt = torch.optim.SGD(
        classifier.parameters(),
        lr=train_config.lr_max,
        momentum=train_config.momentum,
        weight_decay=train_config.weight_decay,
    )

    plans = [
        build_epoch_plan(train_recs, sampler, epoch_seed(sampler.shuffle_seed + train_config.seed, fold_id, e))
        for e in range(train_config.epochs)
    ]
    total = sum(len(p) for p in plans)
    state = TrainState(fold=fold_id, val_image_ids=val_ids)
    cache: dict = {}

    for e, plan in enumerate(plans):
        classifier.train()
        losses = []
        for batch_ids in plan.batches:
            recs = [by_id[i] for i in batch_ids]
            x = torch.from_numpy(_batch(recs, guarded, cache))
            y = torch.tensor([r.cancer for r in recs], dtype=torch.float32)
            state.lr = cosine_lr(state.step, total, train_config.lr_max, train_config.lr_min)
            for group in opt.param_groups:
                group["lr"] = state.lr
            loss = bce_soft_loss(forward(classifier, x)[:, 0], y, train_config.soft_positive)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if train_config.grad_clip_norm is not None:
                torch.nn.utils.clip_grad_norm_(classifier.parameters(), train_config.grad_clip_norm)
            opt.step()
            losses.append(float(loss.detach()))
            state.step += 1
        mean = float(np.mean(losses))
        if not math.isfinite(mean):
            raise DivergedLoss(f"fold {fold_id} epoch {e}: mean loss {mean}")
        state.loss_history.append(mean)
        state.epoch = e + 1
        if log is not None:
            log(f"fold {fold_id} epoch {e + 1}/{train_config.epochs} loss {mean:.4f} lr {state.lr:.2e}")

    state.train_image_ids = frozenset(seen)
    if state.train_image_ids & val_ids:
        raise LeakageError(f"fold {fold_id}: train/validation overlap")
    return classifier.eval(), state


# ---------------------------------------------------------------- all folds


def write_oof_csv(path: str | Path, rows: Sequence[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=OOF_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({**r, "probability": repr(float(r["probability"]))})
    return path


def oof_rows(records: Sequence[ImageRecord], fold: int, probs: np.ndarray) -> list[dict]:
    return [
        {
            "image_id": r.image_id,
            "patient_id": r.patient_id,
            "laterality": r.laterality,
            "fold": fold,
            "probability": float(p),
            "label": r.cancer,
        }
        for r, p in zip(records, probs)
    ]


def train_all_folds(
    manifest: DatasetManifest,
    folds: FoldSplit,
    model_config: ModelConfig,
    train_config: TrainConfig,
    sampler: SamplerConfig,
    image_source: ImageSource,
    out_dir: str | Path | None = None,
    deterministic: bool = True,
    only_folds: Optional[Sequence[int]] = None,
    log: Optional[Callable[[str], None]] = None,
) -> list[tuple[Classifier, TrainState]]:
    """Train one model per fold and collect out-of-fold predictions.

    With ``out_dir`` set, writes ``<arch>_fold<k>.ckpt``,
    ``<arch>_fold<k>_oof.csv`` and the merged ``<arch>_oof.csv`` (manifest order).
    Every fold is attempted; failures are raised together afterwards.
    """
    arch = model_config.arch
    out = Path(out_dir) if out_dir is not None else None
    fold_ids = list(range(folds.k)) if only_folds is None else list(only_folds)
    results: list[tuple[Classifier, TrainState]] = []
    errors: dict[int, Exception] = {}
    predictions: dict[str, dict] = {}

    for k in fold_ids:
        try:
            classifier, state = train_fold(
                manifest, folds, k, model_config, train_config, sampler, image_source, deterministic, log
            )
        except Exception as exc:
            logger.exception("fold %d failed", k)
            errors[k] = exc
            continue
        val = folds.val_records(manifest, k)
        probs = predict_records(classifier, val, image_source, train_config.eval_batch_size)
        rows = oof_rows(val, k, probs)
        for r in rows:
            predictions[r["image_id"]] = r
        if out is not None:
            save_checkpoint(classifier, out / checkpoint_name(arch, k))
            write_oof_csv(out / f"{arch}_fold{k}_oof.csv", rows)
        results.append((classifier, state))

    if out is not None and predictions:
        merged = [predictions[r.image_id] for r in manifest.records if r.image_id in predictions]
        write_oof_csv(out / f"{arch}_oof.csv", merged)
    if errors:
        raise FoldTrainingError(errors)
    return results
