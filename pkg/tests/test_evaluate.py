import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mammo_bench.errors import EmptyPredictions, SingleClassOnly, UndefinedMetric
from mammo_bench.evaluate import (
    ConfusionCounts,
    MetricReport,
    PredictionSet,
    aggregate_per_breast,
    compare_models,
    compute_metrics,
    confusion_at_threshold,
    evaluate_by_fold,
    evaluate_predictions,
    f1_from,
    read_predictions_csv,
    roc_auc,
    roc_auc_pairwise_oracle,
    roc_curve,
)
from mammo_bench.training import write_oof_csv


def P(scores, labels):
    return PredictionSet.from_arrays(scores, labels)


def random_set(rng, n=None, tie_levels=None):
    n = n or int(rng.integers(2, 501))
    labels = rng.integers(0, 2, n)
    labels[0], labels[1] = 0, 1
    if tie_levels is None:
        tie_levels = int(rng.choice([3, 10, 50, 0]))
    scores = rng.integers(0, tie_levels, n) / max(1, tie_levels - 1) if tie_levels else rng.random(n)
    return P(scores, labels)


# ---------------------------------------------------------------- confusion / metrics


def test_confusion_examples():
    assert confusion_at_threshold(P([0.2, 0.8], [0, 1]), 0.5) == ConfusionCounts(tp=1, tn=1, fp=0, fn=0)
    assert confusion_at_threshold(P([0.2, 0.8], [0, 1]), 0.9) == ConfusionCounts(tp=0, tn=1, fp=0, fn=1)
    assert confusion_at_threshold(P([0.5], [1]), 0.5).tp == 1
    assert confusion_at_threshold(P([0.5], [0]), 0.5).fp == 1


def test_confusion_empty():
    with pytest.raises(EmptyPredictions):
        confusion_at_threshold(P([], []))


def test_metrics_arithmetic():
    m = compute_metrics(ConfusionCounts(tp=3, tn=5, fp=1, fn=1))
    assert m == {"precision": 0.75, "recall": 0.75, "accuracy": 0.8, "f1": 0.75}


def test_f1_from_reported_precision_recall():
    # harmonic mean of the reported ConvNeXT-S precision/recall; differs from the reported 0.9513
    assert f1_from(0.9321, 0.9524) == pytest.approx(2 * 0.9321 * 0.9524 / (0.9321 + 0.9524), abs=1e-15)
    assert round(f1_from(0.9321, 0.9524), 4) == 0.9421
    assert round(f1_from(0.9244, 0.9305), 4) == 0.9274


def test_metrics_undefined():
    m = compute_metrics(ConfusionCounts(tp=0, tn=4, fp=0, fn=2))
    assert m["precision"] is None and m["f1"] is None
    assert m["recall"] == 0.0 and m["accuracy"] == 4 / 6
    m = compute_metrics(ConfusionCounts(tp=0, tn=3, fp=2, fn=0))
    assert m["recall"] is None and m["precision"] == 0.0
    m = compute_metrics(ConfusionCounts(tp=0, tn=1, fp=1, fn=1))
    assert m["precision"] == 0.0 and m["recall"] == 0.0 and m["f1"] is None
    assert compute_metrics(ConfusionCounts(0, 0, 0, 0))["accuracy"] is None


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 1000), st.integers(0, 1000), st.integers(0, 1000), st.integers(0, 1000))
def test_metric_identities(tp, tn, fp, fn):
    c = ConfusionCounts(tp, tn, fp, fn)
    m = compute_metrics(c)
    if c.n:
        assert m["accuracy"] == (tp + tn) / c.n
    for k in ("precision", "recall", "accuracy", "f1"):
        if m[k] is not None:
            assert 0 <= m[k] <= 1
    if m["f1"] is not None:
        p, r = m["precision"], m["recall"]
        assert abs(m["f1"] - 2 * p * r / (p + r)) <= 1e-12


# ---------------------------------------------------------------- AUC


def test_auc_examples():
    assert roc_auc(P([0.1, 0.9], [0, 1])) == 1.0
    assert roc_auc(P([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])) == 0.75
    assert roc_auc_pairwise_oracle(P([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])) == 0.75
    assert roc_auc(P([0.3] * 6, [0, 1, 0, 1, 1, 0])) == 0.5
    assert roc_auc_pairwise_oracle(P([0.5, 0.5], [0, 1])) == 0.5
    assert roc_auc(P([0.9, 0.1], [0, 1])) == 0.0


def test_auc_single_class():
    with pytest.raises(SingleClassOnly):
        roc_auc(P([0.1, 0.2], [1, 1]))
    with pytest.raises(SingleClassOnly):
        roc_auc_pairwise_oracle(P([0.1, 0.2], [0, 0]))


def test_roc_curve_points():
    fpr, tpr, thr = roc_curve(P([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]))
    assert fpr.tolist() == [0, 0, 0.5, 0.5, 1]
    assert tpr.tolist() == [0, 0.5, 0.5, 1, 1]
    assert thr[0] == np.inf


def test_auc_matches_oracle_random(rng):
    for _ in range(200):
        s = random_set(rng)
        assert abs(roc_auc(s) - roc_auc_pairwise_oracle(s)) <= 1e-9


def test_auc_matches_sklearn(rng):
    sk = pytest.importorskip("sklearn.metrics")
    for _ in range(50):
        s = random_set(rng)
        assert roc_auc(s) == pytest.approx(sk.roc_auc_score(s.labels, s.probabilities), abs=1e-12)


def test_auc_invariant_under_monotone_transform(rng):
    for _ in range(50):
        s = random_set(rng)
        t = P(s.probabilities**3 * 0.5 + 0.1, s.labels)
        assert roc_auc(t) == pytest.approx(roc_auc(s), abs=1e-12)


def test_auc_flip_symmetry(rng):
    for _ in range(50):
        s = random_set(rng)
        flipped = P(1 - s.probabilities, 1 - s.labels)
        assert roc_auc(flipped) == pytest.approx(roc_auc(s), abs=1e-12)


# ---------------------------------------------------------------- aggregation


def breast_set(pids, lats, probs, labels):
    return PredictionSet([f"img{i}" for i in range(len(pids))], probs, labels, list(pids), list(lats))


def test_aggregate_mean_and_or():
    agg = aggregate_per_breast(breast_set(["a", "a"], ["L", "L"], [0.2, 0.4], [0, 1]))
    assert agg.keys == ["a_L"]
    assert agg.probabilities[0] == pytest.approx(0.3)
    assert agg.labels.tolist() == [1]


def test_aggregate_identity_and_keying():
    single = aggregate_per_breast(breast_set(["a"], ["R"], [0.7], [0]))
    assert single.probabilities.tolist() == [0.7] and single.labels.tolist() == [0]
    two = aggregate_per_breast(breast_set(["a", "a"], ["L", "R"], [0.1, 0.9], [0, 1]))
    assert two.keys == ["a_L", "a_R"]


def test_aggregate_size(rng):
    pids = rng.integers(0, 30, 200).astype(str)
    lats = rng.choice(["L", "R"], 200)
    agg = aggregate_per_breast(breast_set(pids, lats, rng.random(200), rng.integers(0, 2, 200)))
    assert len(agg) == len(set(zip(pids, lats)))
    assert len(set(agg.keys)) == len(agg)


def test_aggregate_needs_columns():
    with pytest.raises(ValueError):
        aggregate_per_breast(P([0.1], [0]))


# ---------------------------------------------------------------- reports


def test_evaluate_perfect():
    r = evaluate_predictions(P([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]))
    assert (r.auc, r.precision, r.recall, r.accuracy, r.f1) == (1.0, 1.0, 1.0, 1.0, 1.0)
    assert r.n == 4 and r.threshold == 0.5


def test_evaluate_constant_half():
    r = evaluate_predictions(P([0.5] * 6, [0, 1] * 3), 0.5)
    assert r.recall == 1.0 and r.accuracy == 0.5 and r.auc == 0.5


def test_evaluate_single_class_auc_undefined():
    r = evaluate_predictions(P([0.2, 0.7], [0, 0]))
    assert r.auc is None and r.accuracy == 0.5


def test_evaluate_f1_consistency(rng):
    for _ in range(20):
        s = random_set(rng, n=500)
        r = evaluate_predictions(s, float(rng.random()))
        if r.f1 is not None:
            assert abs(r.f1 - 2 * r.precision * r.recall / (r.precision + r.recall)) <= 1e-12


def test_report_json_round_trip():
    r = evaluate_predictions(P([0.1, 0.7, 0.6], [0, 1, 0]))
    back = MetricReport.from_dict(json.loads(r.to_json()))
    assert back == r


def test_compare_models_paper_order():
    conv = MetricReport(auc=0.9433, precision=0.9321, recall=0.9524, accuracy=0.9336, f1=0.9513)
    eff = MetricReport(auc=0.9234, precision=0.9244, recall=0.9305, accuracy=0.9147, f1=0.9306)
    table = compare_models({"EffNetV2-S": eff, "ConvNeXT-S": conv})
    assert [n for n, _ in table.rows] == ["ConvNeXT-S", "EffNetV2-S"]
    text = table.render_text()
    assert text.splitlines()[0].split() == ["Model", "AUC", "Precision", "Recall", "Accuracy", "F-score"]
    assert text.splitlines()[2].split() == ["ConvNeXT-S", "0.9433", "0.9321", "0.9524", "0.9336", "0.9513"]


def test_compare_models_tie_break():
    a = MetricReport(auc=0.8, precision=None, recall=None, accuracy=None, f1=0.8)
    b = MetricReport(auc=0.8, precision=None, recall=None, accuracy=None, f1=0.9)
    assert [n for n, _ in compare_models([("a", a), ("b", b)]).rows] == ["b", "a"]


def test_compare_models_undefined_auc():
    with pytest.raises(UndefinedMetric):
        compare_models({"x": MetricReport(auc=None, precision=None, recall=None, accuracy=None, f1=None)})


def test_undefined_rendered_explicitly():
    r = MetricReport(auc=0.6, precision=None, recall=0.0, accuracy=0.5, f1=None)
    line = compare_models({"m": r}).render_text().splitlines()[2].split()
    assert line == ["m", "0.6000", "undefined", "0.0000", "0.5000", "undefined"]


def test_predictions_csv_and_per_fold(tmp_path):
    rows = [
        {"image_id": f"i{k}", "patient_id": f"p{k // 2}", "laterality": "LR"[k % 2], "fold": k % 2, "probability": p, "label": y}
        for k, (p, y) in enumerate([(0.1, 0), (0.9, 1), (0.3, 0), (0.6, 1), (0.2, 0), (0.4, 1)])
    ]
    path = write_oof_csv(tmp_path / "oof.csv", rows)
    preds = read_predictions_csv(path)
    assert preds.keys == [f"i{k}" for k in range(6)]
    assert preds.folds == [0, 1, 0, 1, 0, 1]
    per_fold = evaluate_by_fold(preds)
    assert set(per_fold) == {0, 1}
    assert per_fold[1].auc is None  # fold 1 holds only positives
