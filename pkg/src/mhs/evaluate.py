"""Classification metrics and model evaluation on a labeled corpus."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .catalog import SymptomCatalog
from .errors import CatalogMismatch, LengthMismatch, SingleClass
from .model import MhsParams, encode_symptoms, forward_many
from .train import PreparedCorpus, arrange_symptoms, embed_catalog_sentences, prepare_corpus


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    weighted_f1: float
    auc: float | None
    tp: int
    fp: int
    tn: int
    fn: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "weighted_f1": self.weighted_f1,
            "auc": self.auc,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
        }


def confusion_metrics(predictions: Sequence[int], truths: Sequence[int]) -> EvalReport:
    """Accuracy, positive-class P/R/F1 and support-weighted F1 from counts.

    Zero denominators yield 0 rather than raising, so degenerate predictors
    (e.g. all-negative) still produce a report.
    """
    preds = np.asarray(predictions, dtype=np.int64)
    ys = np.asarray(truths, dtype=np.int64)
    if preds.shape != ys.shape or preds.ndim != 1 or len(preds) == 0:
        raise LengthMismatch(f"got {preds.shape} predictions vs {ys.shape} truths")
    tp = int(np.sum((preds == 1) & (ys == 1)))
    fp = int(np.sum((preds == 1) & (ys == 0)))
    tn = int(np.sum((preds == 0) & (ys == 0)))
    fn = int(np.sum((preds == 0) & (ys == 1)))
    n = len(ys)
    accuracy = (tp + tn) / n
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    # negative class, for the support-weighted aggregate
    precision_neg = tn / (tn + fn) if tn + fn else 0.0
    recall_neg = tn / (tn + fp) if tn + fp else 0.0
    f1_neg = (
        2 * precision_neg * recall_neg / (precision_neg + recall_neg)
        if precision_neg + recall_neg
        else 0.0
    )
    support_pos = tp + fn
    support_neg = tn + fp
    weighted_f1 = (f1 * support_pos + f1_neg * support_neg) / n
    return EvalReport(
        accuracy=accuracy, precision=precision, recall=recall, f1=f1,
        weighted_f1=weighted_f1, auc=None, tp=tp, fp=fp, tn=tn, fn=fn,
    )


def roc_auc(scores: Sequence[float], truths: Sequence[int]) -> float:
    """Rank-based (Mann-Whitney) AUC; tied scores contribute one half."""
    s = np.asarray(scores, dtype=np.float64)
    ys = np.asarray(truths, dtype=np.int64)
    if s.shape != ys.shape or len(s) == 0:
        raise LengthMismatch(f"got {s.shape} scores vs {ys.shape} truths")
    n_pos = int(np.sum(ys == 1))
    n_neg = int(np.sum(ys == 0))
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs at least one sample of each class")
    # average ranks (1-based) with ties sharing the mean rank
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s), dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum_pos = float(ranks[ys == 1].sum())
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


@dataclass
class Predictions:
    labels: np.ndarray          # predicted labels
    scores: np.ndarray          # positive-class softmax probability
    truths: np.ndarray
    head_distances: np.ndarray | None  # (n_samples, n_heads); None for cnn_only


def predict_prepared(
    params: MhsParams,
    prepared: PreparedCorpus,
    catalog: SymptomCatalog | None,
    provider,
) -> Predictions:
    """Forward every prepared sample; argmax ties break to the negative label."""
    symptoms = None
    collect_d = params.config.variant != "cnn_only"
    if collect_d:
        if catalog is None:
            catalog = params.catalog
        if catalog is None:
            raise CatalogMismatch("siamese variants need the catalog at evaluation time")
        arranged = arrange_symptoms(
            embed_catalog_sentences(catalog, provider), params.config.variant
        )
        if len(arranged) != params.config.n_heads:
            raise CatalogMismatch(
                f"catalog yields {len(arranged)} heads but model has {params.config.n_heads}"
            )
        symptoms = encode_symptoms(params, arranged)
    n = len(prepared.sequences)
    labels = np.empty(n, dtype=np.int64)
    scores = np.empty(n, dtype=np.float64)
    distances = (
        np.empty((n, params.config.n_heads), dtype=np.float64) if collect_d else None
    )
    chunk = 256  # bound memory for batched convolutions on large corpora
    for start in range(0, n, chunk):
        traces, _ = forward_many(params, prepared.sequences[start : start + chunk], symptoms)
        for offset, trace in enumerate(traces):
            i = start + offset
            # np.argmax picks the first maximum, i.e. label 0 on exact ties
            labels[i] = int(np.argmax(trace.o))
            scores[i] = trace.p[1]
            if collect_d:
                distances[i] = trace.D
    return Predictions(
        labels=labels, scores=scores, truths=prepared.labels, head_distances=distances
    )


def report_from_predictions(pred: Predictions) -> EvalReport:
    report = confusion_metrics(pred.labels, pred.truths)
    classes = np.unique(pred.truths)
    auc = roc_auc(pred.scores, pred.truths) if len(classes) == 2 else None
    return EvalReport(**{**report.to_dict(), "auc": auc})


def evaluate_prepared(
    params: MhsParams,
    prepared: PreparedCorpus,
    catalog: SymptomCatalog | None,
    provider,
) -> EvalReport:
    return report_from_predictions(predict_prepared(params, prepared, catalog, provider))


def evaluate(params: MhsParams, corpus, catalog: SymptomCatalog | None, provider) -> EvalReport:
    """Preprocess, embed, and score a labeled corpus against a trained model."""
    prepared = prepare_corpus(corpus, provider)
    return evaluate_prepared(params, prepared, catalog, provider)
