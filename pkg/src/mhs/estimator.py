"""Scikit-learn style estimator facade over the siamese classifier.

MhsClassifier takes raw text (list of strings) and binary labels, so the
model drops into sklearn pipelines, cross_val_score, and friends. The heavy
lifting stays in the catalog/embedding/train modules; this wrapper only
adapts interfaces and validates inputs.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .catalog import SymptomCatalog, load_builtin_catalog, load_catalog
from .corpus import Corpus, Post
from .embedding import HashEmbeddingProvider
from .evaluate import predict_prepared
from .train import PreparedCorpus, TrainConfig, prepare_corpus, train


def _as_text_list(X) -> list[str]:
    if isinstance(X, str):
        raise ValueError("X must be a sequence of texts, not a single string")
    texts = list(X)
    if not texts:
        raise ValueError("X is empty")
    for t in texts:
        if not isinstance(t, str):
            raise ValueError(f"X must contain strings, got {type(t).__name__}")
    return texts


class MhsClassifier(BaseEstimator, ClassifierMixin):
    """Symptom-grounded binary text classifier with a fit/predict interface.

    Parameters
    ----------
    catalog : str or SymptomCatalog, default "mdd"
        Builtin disorder name, path to a catalog JSON file, or a catalog value.
    dim : int, default 64
        Embedding width of the deterministic hash encoder.
    c1, c2 : int
        Channel widths of the two convolution layers.
    variant : str
        One of full, single_head, one_description, cnn_only.
    learning_rate, epochs, batch_size, seed
        Training protocol knobs (Adam, seeded shuffling).
    """

    def __init__(
        self,
        catalog="mdd",
        dim=64,
        c1=16,
        c2=16,
        variant="full",
        learning_rate=1e-2,
        epochs=3,
        batch_size=8,
        seed=0,
        embedding_seed=0,
    ):
        self.catalog = catalog
        self.dim = dim
        self.c1 = c1
        self.c2 = c2
        self.variant = variant
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.embedding_seed = embedding_seed

    def _resolve_catalog(self) -> SymptomCatalog:
        if isinstance(self.catalog, SymptomCatalog):
            return self.catalog
        name = str(self.catalog)
        if name.lower() in ("mdd", "bipolar", "gad", "bpd"):
            return load_builtin_catalog(name)
        return load_catalog(name)

    def _prepare(self, X) -> PreparedCorpus:
        texts = _as_text_list(X)
        # estimator contract: no sample is silently dropped, so texts bypass
        # the corpus rejection filters and are tokenized directly
        from .corpus import default_tokenizer

        sequences = [
            self._provider_.embed(default_tokenizer(t)[:512], source_id=str(i))
            for i, t in enumerate(texts)
        ]
        return PreparedCorpus(sequences=sequences, labels=np.zeros(len(texts), dtype=np.int64))

    def fit(self, X, y):
        texts = _as_text_list(X)
        y = np.asarray(y)
        if y.shape != (len(texts),):
            raise ValueError(f"y has shape {y.shape}, expected ({len(texts)},)")
        classes = np.unique(y)
        if not np.isin(classes, [0, 1]).all():
            raise ValueError("y must contain only 0/1 labels")
        if len(classes) < 2:
            raise ValueError("fit needs both classes present in y")

        self._catalog_ = self._resolve_catalog()
        self._provider_ = HashEmbeddingProvider(dim=self.dim, seed=self.embedding_seed)
        posts = tuple(
            Post(id=str(i), title="", body=t, label=int(label))
            for i, (t, label) in enumerate(zip(texts, y))
        )
        corpus = Corpus(posts=posts, task_name="fit")
        prepared = self._prepare(texts)
        prepared = PreparedCorpus(sequences=prepared.sequences, labels=y.astype(np.int64))
        config = TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            seed=self.seed,
            variant=self.variant,
            dim=self.dim,
            c1=self.c1,
            c2=self.c2,
        )
        result = train(corpus, self._catalog_, self._provider_, config, prepared=prepared)
        self.params_ = result.params
        self.epoch_losses_ = result.epoch_losses
        self.classes_ = np.array([0, 1])
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("fit this MhsClassifier before calling predict")

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        prepared = self._prepare(X)
        pred = predict_prepared(self.params_, prepared, self._catalog_, self._provider_)
        return np.column_stack([1.0 - pred.scores, pred.scores])

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        prepared = self._prepare(X)
        pred = predict_prepared(self.params_, prepared, self._catalog_, self._provider_)
        return pred.labels

    def head_distances(self, X) -> np.ndarray:
        """Per-head distance vectors, the model's interpretable representation."""
        self._check_fitted()
        prepared = self._prepare(X)
        pred = predict_prepared(self.params_, prepared, self._catalog_, self._provider_)
        return pred.head_distances
