"""Multi-head siamese text classification against symptom descriptions."""

__version__ = "0.1.0"

from .catalog import (
    SymptomCatalog,
    SymptomHead,
    head_sentences,
    load_builtin_catalog,
    load_catalog,
    merge_to_single_head,
    restrict_to_first_sentence,
    save_catalog,
)
from .corpus import (
    Corpus,
    Post,
    Rejected,
    TokenizedText,
    default_tokenizer,
    generate_synthetic,
    load_corpus,
    preprocess,
    save_corpus,
    stratified_folds,
)
from .embedding import (
    EmbeddedSequence,
    FileEmbeddingProvider,
    HashEmbeddingProvider,
    hash_token_vector,
    open_embedding_store,
    write_embedding_store,
)
from .estimator import MhsClassifier
from .evaluate import EvalReport, confusion_metrics, evaluate, roc_auc
from .interpret import (
    SalientThresholds,
    compute_thresholds,
    explain,
    head_heatmap,
    salient_count_distribution,
)
from .model import (
    MhsParams,
    ModelConfig,
    build_variant,
    channel_features,
    count_params,
    forward,
    init_params,
    load_model,
    save_model,
)
from .train import TrainConfig, adam_step, cross_validate, loss_and_grad, train

__all__ = [
    "Corpus",
    "EmbeddedSequence",
    "EvalReport",
    "FileEmbeddingProvider",
    "HashEmbeddingProvider",
    "MhsClassifier",
    "MhsParams",
    "ModelConfig",
    "Post",
    "Rejected",
    "SalientThresholds",
    "SymptomCatalog",
    "SymptomHead",
    "TokenizedText",
    "TrainConfig",
    "adam_step",
    "build_variant",
    "channel_features",
    "compute_thresholds",
    "confusion_metrics",
    "count_params",
    "cross_validate",
    "default_tokenizer",
    "evaluate",
    "explain",
    "forward",
    "generate_synthetic",
    "hash_token_vector",
    "head_heatmap",
    "head_sentences",
    "init_params",
    "load_builtin_catalog",
    "load_catalog",
    "load_corpus",
    "load_model",
    "loss_and_grad",
    "merge_to_single_head",
    "open_embedding_store",
    "preprocess",
    "restrict_to_first_sentence",
    "roc_auc",
    "salient_count_distribution",
    "save_catalog",
    "save_corpus",
    "save_model",
    "stratified_folds",
    "train",
    "write_embedding_store",
]
