"""Interpretability artifacts: head-distance heatmaps, salient-symptom
thresholds, salient-count distributions, and per-text explanations.

The threshold convention: for each head, collect its distances over the
true-positive samples of a reference corpus and take the nearest-rank 70th
percentile (the ceil(p/100 * N)-th smallest value). A head is "salient" for
a text when its distance meets or exceeds that threshold. Percentile ranks
reported in explanations are the fraction of reference values <= the text's
distance.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from math import ceil

import numpy as np

from .catalog import SymptomCatalog
from .corpus import TokenizedText
from .errors import CatalogMismatch, EmptyClass, NoTruePositives, ValidationError
from .evaluate import Predictions, predict_prepared
from .model import MhsParams, encode_symptoms, forward
from .train import PreparedCorpus, arrange_symptoms, embed_catalog_sentences, prepare_corpus


def _resolve_catalog(params: MhsParams, catalog: SymptomCatalog | None) -> SymptomCatalog:
    catalog = catalog if catalog is not None else params.catalog
    if catalog is None:
        raise CatalogMismatch("model carries no catalog; pass one explicitly")
    return catalog


def head_ids_for(params: MhsParams, catalog: SymptomCatalog) -> list[str]:
    """Head labels in model order, accounting for the variant's head layout."""
    if params.config.variant == "single_head":
        return ["ALL"]
    return [h.id for h in catalog.heads]


def head_heatmap(
    params: MhsParams, corpus, catalog: SymptomCatalog | None, provider
) -> tuple[list[str], np.ndarray]:
    """Mean head distance per true class: returns (head_ids, n x 2 matrix).

    Column 0 is the negative class, column 1 the positive class.
    """
    catalog = _resolve_catalog(params, catalog)
    prepared = prepare_corpus(corpus, provider)
    pred = predict_prepared(params, prepared, catalog, provider)
    matrix = np.empty((params.config.n_heads, 2), dtype=np.float64)
    for cls in (0, 1):
        mask = pred.truths == cls
        if not mask.any():
            raise EmptyClass(f"no samples with label {cls}")
        matrix[:, cls] = pred.head_distances[mask].mean(axis=0)
    return head_ids_for(params, catalog), matrix


def write_heatmap_csv(path: str, head_ids: list[str], matrix: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["head_id", "mean_distance_negative", "mean_distance_positive"])
        for head_id, (neg, pos) in zip(head_ids, matrix):
            writer.writerow([head_id, repr(float(neg)), repr(float(pos))])


def render_heatmap_png(path: str, head_ids: list[str], matrix: np.ndarray) -> None:
    """Optional image emitter; requires matplotlib."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 0.4 * len(head_ids) + 1))
    im = ax.imshow(matrix, aspect="auto", cmap="viridis")
    ax.set_xticks([0, 1], ["negative", "positive"])
    ax.set_yticks(range(len(head_ids)), head_ids)
    fig.colorbar(im, ax=ax, label="mean head distance")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def nearest_rank_percentile(values: np.ndarray, percentile: float) -> float:
    """The ceil(p/100 * N)-th smallest value (1-indexed), clamped to [1, N]."""
    if len(values) == 0:
        raise ValidationError("percentile of an empty sample")
    ordered = np.sort(np.asarray(values, dtype=np.float64))
    rank = ceil(percentile / 100.0 * len(ordered))
    rank = min(max(rank, 1), len(ordered))
    return float(ordered[rank - 1])


@dataclass
class SalientThresholds:
    """Per-head thresholds plus the reference distances that produced them."""

    head_ids: list[str]
    thresholds: np.ndarray           # (n,)
    reference: np.ndarray            # (n_true_positive, n) head distances
    percentile: float = 70.0
    reference_descriptor: str = ""

    @property
    def n_reference(self) -> int:
        return self.reference.shape[0]

    def to_dict(self) -> dict:
        return {
            "percentile": self.percentile,
            "definition": "nearest-rank percentile over true-positive head distances",
            "reference_descriptor": self.reference_descriptor,
            "n_reference": self.n_reference,
            "head_ids": self.head_ids,
            "thresholds": [float(t) for t in self.thresholds],
            "reference_distances": [[float(v) for v in row] for row in self.reference.T],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SalientThresholds":
        reference = np.asarray(data["reference_distances"], dtype=np.float64).T
        if reference.size == 0:
            reference = reference.reshape(0, len(data["head_ids"]))
        return cls(
            head_ids=list(data["head_ids"]),
            thresholds=np.asarray(data["thresholds"], dtype=np.float64),
            reference=reference,
            percentile=float(data["percentile"]),
            reference_descriptor=str(data.get("reference_descriptor", "")),
        )


def true_positive_distances(pred: Predictions) -> np.ndarray:
    mask = (pred.labels == 1) & (pred.truths == 1)
    if not mask.any():
        raise NoTruePositives("model produced no true positives on the reference corpus")
    return pred.head_distances[mask]


def compute_thresholds(
    params: MhsParams,
    corpus,
    catalog: SymptomCatalog | None,
    provider,
    percentile: float = 70.0,
    reference_descriptor: str = "",
) -> SalientThresholds:
    """Nearest-rank percentile of each head's true-positive distances."""
    catalog = _resolve_catalog(params, catalog)
    prepared = prepare_corpus(corpus, provider)
    pred = predict_prepared(params, prepared, catalog, provider)
    reference = true_positive_distances(pred)
    thresholds = np.array(
        [nearest_rank_percentile(reference[:, i], percentile) for i in range(reference.shape[1])]
    )
    return SalientThresholds(
        head_ids=head_ids_for(params, catalog),
        thresholds=thresholds,
        reference=reference,
        percentile=percentile,
        reference_descriptor=reference_descriptor or getattr(corpus, "task_name", ""),
    )


def salient_counts(distances: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Number of heads with distance >= threshold, per sample row."""
    return (distances >= thresholds[None, :]).sum(axis=1)


def salient_count_distribution(
    params: MhsParams,
    corpus,
    catalog: SymptomCatalog | None,
    provider,
    thresholds: SalientThresholds,
) -> dict[int, tuple[int, float]]:
    """Bucket true positives by salient-head count.

    Returns {count: (frequency, mean positive probability)}; frequencies
    partition the true-positive set.
    """
    catalog = _resolve_catalog(params, catalog)
    prepared = prepare_corpus(corpus, provider)
    pred = predict_prepared(params, prepared, catalog, provider)
    mask = (pred.labels == 1) & (pred.truths == 1)
    if not mask.any():
        raise NoTruePositives("no true positives to bucket")
    counts = salient_counts(pred.head_distances[mask], thresholds.thresholds)
    probs = pred.scores[mask]
    out: dict[int, tuple[int, float]] = {}
    for count in sorted(set(int(c) for c in counts)):
        sel = counts == count
        out[count] = (int(sel.sum()), float(probs[sel].mean()))
    return out


@dataclass
class Explanation:
    text_id: str
    predicted_label: int
    positive_probability: float
    head_ids: list[str]
    distances: np.ndarray
    percentile_ranks: np.ndarray  # percent of reference values <= distance
    salient: np.ndarray

    def to_dict(self) -> dict:
        return {
            "text_id": self.text_id,
            "predicted_label": self.predicted_label,
            "positive_probability": self.positive_probability,
            "heads": [
                {
                    "head_id": hid,
                    "distance": float(d),
                    "percentile_rank": float(r),
                    "salient": bool(s),
                }
                for hid, d, r, s in zip(
                    self.head_ids, self.distances, self.percentile_ranks, self.salient
                )
            ],
        }


def explain(
    params: MhsParams,
    text: TokenizedText | str,
    catalog: SymptomCatalog | None,
    provider,
    thresholds: SalientThresholds,
    text_id: str = "",
) -> Explanation:
    """Per-head distances, percentile ranks, and salient flags for one text."""
    catalog = _resolve_catalog(params, catalog)
    if params.config.variant == "cnn_only":
        raise CatalogMismatch("cnn_only models have no head distances to explain")
    if len(thresholds.head_ids) != params.config.n_heads:
        raise CatalogMismatch(
            f"thresholds cover {len(thresholds.head_ids)} heads, model has "
            f"{params.config.n_heads}"
        )
    if isinstance(text, str):
        from .corpus import default_tokenizer

        tokens = default_tokenizer(text)
        seq = provider.embed(tokens[:512], source_id=text_id)
    elif isinstance(text, TokenizedText):
        seq = provider.embed(text, source_id=text_id)
    else:  # a known id in a file-backed store
        seq = provider.embed(text)
    arranged = arrange_symptoms(
        embed_catalog_sentences(catalog, provider), params.config.variant
    )
    trace = forward(params, seq, encode_symptoms(params, arranged))
    d = trace.D
    n_ref = thresholds.n_reference
    ranks = np.array(
        [
            100.0 * float((thresholds.reference[:, i] <= d[i]).sum()) / n_ref
            for i in range(len(d))
        ]
    )
    return Explanation(
        text_id=text_id or seq.source_id,
        predicted_label=int(np.argmax(trace.o)),
        positive_probability=float(trace.p[1]),
        head_ids=thresholds.head_ids,
        distances=d,
        percentile_ranks=ranks,
        salient=d >= thresholds.thresholds,
    )


def save_thresholds(thresholds: SalientThresholds, path: str, provenance: dict | None = None) -> None:
    payload = thresholds.to_dict()
    if provenance:
        payload["provenance"] = provenance
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def load_thresholds(path: str) -> SalientThresholds:
    with open(path, "r", encoding="utf-8") as f:
        return SalientThresholds.from_dict(json.load(f))
