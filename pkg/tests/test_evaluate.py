import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhs.catalog import load_builtin_catalog
from mhs.corpus import generate_synthetic
from mhs.embedding import HashEmbeddingProvider
from mhs.errors import LengthMismatch, SingleClass
from mhs.evaluate import confusion_metrics, evaluate, roc_auc
from mhs.model import build_variant
from mhs.train import TrainConfig, train


def brute_force_auc(scores, truths):
    pos = [s for s, t in zip(scores, truths) if t == 1]
    neg = [s for s, t in zip(scores, truths) if t == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def brute_force_metrics(preds, truths):
    tp = sum(1 for p, t in zip(preds, truths) if p == 1 and t == 1)
    fp = sum(1 for p, t in zip(preds, truths) if p == 1 and t == 0)
    tn = sum(1 for p, t in zip(preds, truths) if p == 0 and t == 0)
    fn = sum(1 for p, t in zip(preds, truths) if p == 0 and t == 1)
    n = len(truths)
    acc = (tp + tn) / n
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    prec_n = tn / (tn + fn) if tn + fn else 0.0
    rec_n = tn / (tn + fp) if tn + fp else 0.0
    f1_n = 2 * prec_n * rec_n / (prec_n + rec_n) if prec_n + rec_n else 0.0
    wf1 = (f1 * (tp + fn) + f1_n * (tn + fp)) / n
    return acc, prec, rec, f1, wf1


def test_hand_confusion_example():
    # TP=2, FP=1, FN=1, TN=6
    preds = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0]
    truth = [1, 1, 0, 1, 0, 0, 0, 0, 0, 0]
    report = confusion_metrics(preds, truth)
    assert (report.tp, report.fp, report.fn, report.tn) == (2, 1, 1, 6)
    assert abs(report.precision - 2 / 3) < 1e-12
    assert abs(report.recall - 2 / 3) < 1e-12
    assert abs(report.f1 - 2 / 3) < 1e-12
    assert abs(report.accuracy - 0.8) < 1e-12


def test_perfect_predictions():
    report = confusion_metrics([0, 1, 1, 0], [0, 1, 1, 0])
    assert report.accuracy == 1.0 and report.f1 == 1.0 and report.weighted_f1 == 1.0


def test_all_negative_predictor_gets_zero_f1():
    report = confusion_metrics([0, 0, 0, 0], [1, 0, 1, 0])
    assert report.f1 == 0.0
    assert report.precision == 0.0 and report.recall == 0.0


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        confusion_metrics([0, 1], [0])


def test_auc_hand_example():
    assert abs(roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) - 0.75) < 1e-12


def test_auc_perfect_ranking():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0


def test_auc_all_ties():
    assert roc_auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5


def test_auc_single_class_raises():
    with pytest.raises(SingleClass):
        roc_auc([0.1, 0.2], [1, 1])


def test_metrics_match_brute_force_on_random_instances():
    rng = np.random.Generator(np.random.PCG64(0))
    for _ in range(300):
        n = int(rng.integers(2, 51))
        truths = rng.integers(0, 2, n)
        if truths.sum() in (0, n):
            truths[0] = 1 - truths[0]
        preds = rng.integers(0, 2, n)
        scores = np.round(rng.random(n), 2)  # coarse grid to exercise ties
        report = confusion_metrics(preds, truths)
        acc, prec, rec, f1, wf1 = brute_force_metrics(preds, truths)
        assert abs(report.accuracy - acc) < 1e-12
        assert abs(report.precision - prec) < 1e-12
        assert abs(report.recall - rec) < 1e-12
        assert abs(report.f1 - f1) < 1e-12
        assert abs(report.weighted_f1 - wf1) < 1e-12
        assert abs(roc_auc(scores, truths) - brute_force_auc(scores, truths)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 100)), min_size=4, max_size=40))
def test_auc_invariant_under_monotone_transform(pairs):
    # scores on a 0.01 grid keep exp() from collapsing distinct values to ties
    truths = [t for t, _ in pairs]
    scores = [s / 100 for _, s in pairs]
    if len(set(truths)) < 2:
        truths[0] = 1 - truths[0]
    a = roc_auc(scores, truths)
    b = roc_auc([np.exp(3 * s) for s in scores], truths)
    assert abs(a - b) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.permutations(list(range(12))))
def test_metrics_permutation_invariant(order):
    truths = [1, 0, 1, 0, 0, 1, 0, 0, 1, 0, 1, 0]
    preds = [1, 0, 0, 0, 1, 1, 0, 0, 1, 0, 0, 0]
    scores = [0.9, 0.1, 0.4, 0.2, 0.6, 0.8, 0.3, 0.15, 0.7, 0.25, 0.45, 0.05]
    base = confusion_metrics(preds, truths)
    base_auc = roc_auc(scores, truths)
    shuffled = confusion_metrics([preds[i] for i in order], [truths[i] for i in order])
    assert shuffled == base
    assert abs(roc_auc([scores[i] for i in order], [truths[i] for i in order]) - base_auc) < 1e-12


def test_evaluate_with_degenerate_params():
    catalog = load_builtin_catalog("mdd")
    provider = HashEmbeddingProvider(dim=16, seed=0)
    corpus = generate_synthetic(catalog, 10, 10, 0.6, seed=2)
    params = build_variant("full", catalog, dim=16, c1=4, c2=4, seed=0)
    # W = 0, b = 0 at init: all logits equal, ties break to label 0
    report = evaluate(params, corpus, catalog, provider)
    assert report.tp == 0 and report.fp == 0
    assert report.auc == 0.5


def test_evaluate_deterministic():
    catalog = load_builtin_catalog("gad")
    provider = HashEmbeddingProvider(dim=16, seed=0)
    corpus = generate_synthetic(catalog, 8, 8, 0.6, seed=3)
    config = TrainConfig(batch_size=4, epochs=1, learning_rate=1e-3, seed=1,
                         variant="full", dim=16, c1=4, c2=4)
    params = train(corpus, catalog, provider, config).params
    a = evaluate(params, corpus, catalog, provider)
    b = evaluate(params, corpus, catalog, provider)
    assert a == b


def test_evaluate_uses_model_catalog_when_none_given():
    catalog = load_builtin_catalog("gad")
    provider = HashEmbeddingProvider(dim=16, seed=0)
    corpus = generate_synthetic(catalog, 8, 8, 0.6, seed=4)
    config = TrainConfig(batch_size=4, epochs=1, learning_rate=1e-3, seed=1,
                         variant="full", dim=16, c1=4, c2=4)
    params = train(corpus, catalog, provider, config).params
    assert evaluate(params, corpus, None, provider) == evaluate(params, corpus, catalog, provider)
