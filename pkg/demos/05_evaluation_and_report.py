"""
Scoring predictions and comparing models
========================================

Metrics are computed from a confusion table at a threshold; AUC uses the
trapezoid over the full ROC curve. The comparison table ranks models by AUC.
"""

import numpy as np

from mammo_bench.evaluate import (
    ConfusionCounts,
    PredictionSet,
    aggregate_per_breast,
    compute_metrics,
    evaluate_predictions,
    roc_auc,
    roc_auc_pairwise_oracle,
)
from mammo_bench.report import load_fixtures, render_comparison, reported_reports

print(compute_metrics(ConfusionCounts(tp=3, tn=5, fp=1, fn=1)))
# undefined ratios are None, never 0
print(compute_metrics(ConfusionCounts(tp=0, tn=4, fp=0, fn=2)))

###############################################################################
# The fast AUC agrees with counting concordant pairs.
rng = np.random.default_rng(0)
labels = rng.integers(0, 2, 300)
scores = np.round(rng.random(300) * 0.6 + 0.4 * labels, 2)
preds = PredictionSet.from_arrays(scores, labels)
print("auc", roc_auc(preds), "pairs", roc_auc_pairwise_oracle(preds))

###############################################################################
# Per-breast scoring averages the views of one breast.
breasts = PredictionSet(
    keys=["a", "b", "c", "d"],
    probabilities=np.array([0.2, 0.6, 0.9, 0.1]),
    labels=np.array([0, 1, 1, 0]),
    patient_ids=["p1", "p1", "p2", "p2"],
    lateralities=["L", "L", "R", "L"],
)
agg = aggregate_per_breast(breasts)
print(list(zip(agg.keys, agg.probabilities, agg.labels)))
print(evaluate_predictions(agg).to_json())

###############################################################################
# The full-scale reported numbers next to two published baselines.
print(render_comparison(reported_reports(), load_fixtures()).text)
