"""Screening-mammography cancer classification pipeline.

Preprocessing (ROI crop, windowing, isotropic rescale + pad), ConvNeXt-small
and EfficientNetV2-S single-logit classifiers, patient-grouped k-fold
training with positive upsampling, and ROC/F1 evaluation.
"""

from .errors import MammoBenchError
from .evaluate import (
    ComparisonTable,
    ConfusionCounts,
    MetricReport,
    PredictionSet,
    aggregate_per_breast,
    compare_models,
    compute_metrics,
    confusion_at_threshold,
    evaluate_predictions,
    roc_auc,
    roc_auc_pairwise_oracle,
)
from .manifest import (
    DatasetManifest,
    DatasetSummary,
    ImageRecord,
    RawImage,
    dataset_summary,
    load_image,
    load_manifest,
)
from .model import Classifier, ModelConfig, build_model, checkpoint_roundtrip, forward, predict_proba
from .preprocess import (
    PreprocessConfig,
    ProcessedImage,
    RoiBox,
    WindowSpec,
    apply_windowing,
    detect_roi,
    orient_breast_left,
    preprocess_image,
    rescale_pad,
)
from .training import (
    EpochSamplePlan,
    FoldSplit,
    SamplerConfig,
    TrainConfig,
    TrainState,
    bce_soft_loss,
    build_epoch_plan,
    cosine_lr,
    make_folds,
    train_all_folds,
    train_fold,
)

__version__ = "0.1.0"
