"""Training loop: softmax cross-entropy, hand-rolled Adam, epoch/batch protocol.

One run is fully deterministic in (config.seed, corpus, provider): parameter
init, per-epoch shuffles, and gradient reduction order are all seeded or
fixed. Parameters stay on the float32 grid (updates are computed in float64
and rounded), so checkpoints round-trip bit-exactly.
"""

from __future__ import annotations

import json
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pickle import PicklingError

import numpy as np

from .catalog import SymptomCatalog
from .corpus import (
    Corpus,
    Rejected,
    Tokenizer,
    default_tokenizer,
    preprocess,
    stratified_folds_from_labels,
)
from .embedding import EmbeddedSequence
from .errors import InsufficientData, ShapeError
from .model import (
    ChannelParams,
    MhsGrads,
    MhsParams,
    SymptomFeatures,
    batch_backward,
    build_variant,
    encode_symptoms,
    forward_many,
)
from .util import thread_limit

DEFAULT_LR_GRID = (1e-5, 2e-5, 1e-6, 2e-6)
DEFAULT_SEEDS = (1, 2, 3, 4, 5, 6)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    epochs: int = 5
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    variant: str = "full"
    dim: int = 512
    c1: int = 100
    c2: int = 100
    max_tokens: int = 512

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ShapeError("batch_size and epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ShapeError("learning_rate must be positive")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def init_adam_state(params: MhsParams) -> AdamState:
    return AdamState(
        m={name: np.zeros(tensor.shape, dtype=np.float64) for name, tensor in params.tensors()},
        v={name: np.zeros(tensor.shape, dtype=np.float64) for name, tensor in params.tensors()},
        t=0,
    )


def _clone_with(params: MhsParams, tensors: dict[str, np.ndarray]) -> MhsParams:
    channels = []
    for ch in params.channels:
        k = ch.kernel_size
        channels.append(
            ChannelParams(
                kernel_size=k,
                w1=tensors[f"conv{k}.w1"],
                b1=tensors[f"conv{k}.b1"],
                w2=tensors[f"conv{k}.w2"],
                b2=tensors[f"conv{k}.b2"],
            )
        )
    return MhsParams(config=params.config, channels=tuple(channels),
                     W=tensors["W"], b=tensors["b"], catalog=params.catalog)


def adam_step(
    params: MhsParams,
    grads: MhsGrads,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[MhsParams, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    t = state.t + 1
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    new_tensors: dict[str, np.ndarray] = {}
    for (name, theta), (gname, g) in zip(params.tensors(), grads.tensors()):
        if name != gname or theta.shape != g.shape:
            raise ShapeError(f"gradient tensor {gname!r} does not match parameter {name!r}")
        g = np.asarray(g, dtype=np.float64)
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        theta64 = theta.astype(np.float64) - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_tensors[name] = theta64.astype(np.float32)
        new_m[name] = m
        new_v[name] = v
    return _clone_with(params, new_tensors), AdamState(m=new_m, v=new_v, t=t)


# --- sample and symptom preparation -------------------------------------------


@dataclass
class PreparedCorpus:
    sequences: list[EmbeddedSequence]
    labels: np.ndarray
    n_rejected: int = 0


def prepare_corpus(
    corpus: Corpus, provider, tokenizer: Tokenizer = default_tokenizer
) -> PreparedCorpus:
    """Embed each post; hash providers preprocess first, file providers look up ids."""
    sequences = []
    labels = []
    n_rejected = 0
    for post in corpus.posts:
        if provider.mode == "file-backed":
            sequences.append(provider.embed(post.id))
            labels.append(post.label)
            continue
        result = preprocess(post, tokenizer)
        if isinstance(result, Rejected):
            n_rejected += 1
            continue
        sequences.append(provider.embed(result, source_id=post.id))
        labels.append(post.label)
    return PreparedCorpus(
        sequences=sequences, labels=np.array(labels, dtype=np.int64), n_rejected=n_rejected
    )


def embed_catalog_sentences(
    catalog: SymptomCatalog, provider, tokenizer: Tokenizer = default_tokenizer
) -> list[list[EmbeddedSequence]]:
    """Embeddings for every catalog sentence, keyed <disorder>/<head>/<index>."""
    per_head = []
    for head in catalog.heads:
        sentences = []
        for idx, sentence in enumerate(head.sentences()):
            sid = f"{catalog.disorder}/{head.id}/{idx}"
            if provider.mode == "file-backed":
                sentences.append(provider.embed(sid))
            else:
                sentences.append(provider.embed(tokenizer(sentence), source_id=sid))
        per_head.append(sentences)
    return per_head


def arrange_symptoms(
    per_head: list[list[EmbeddedSequence]], variant: str
) -> list[list[EmbeddedSequence]] | None:
    """Reshape full-catalog sentence embeddings to a variant's head layout."""
    if variant == "full":
        return per_head
    if variant == "single_head":
        merged = [seq for head in per_head for seq in head]
        return [merged]
    if variant == "one_description":
        return [[head[0]] for head in per_head]
    if variant == "cnn_only":
        return None
    raise ShapeError(f"unknown variant {variant!r}")


# --- loss ---------------------------------------------------------------------


def cross_entropy(o: np.ndarray, label: int) -> float:
    """Numerically stable -log softmax(o)[label]."""
    shifted = o - np.max(o)
    return float(np.log(np.exp(shifted).sum()) - shifted[label])


def loss_and_grad(
    params: MhsParams,
    batch: list[tuple[EmbeddedSequence, int]],
    symptoms: SymptomFeatures | None,
) -> tuple[float, MhsGrads]:
    """Mean softmax cross-entropy over a batch and its exact gradients.

    Equal-length targets in the batch share convolution calls, forward and
    backward; the math is identical to the per-sample path.
    """
    if not batch:
        raise ShapeError("empty batch")
    n = len(batch)
    traces, groups = forward_many(params, [seq for seq, _ in batch], symptoms)
    g_logits = []
    total = 0.0
    for trace, (_, label) in zip(traces, batch):
        total += cross_entropy(trace.o, label)
        g = trace.p.copy()
        g[label] -= 1.0
        g_logits.append(g / n)
    grads = batch_backward(params, traces, g_logits, target_groups=groups)
    return total / n, grads


# --- training loop -------------------------------------------------------------


@dataclass
class TrainResult:
    params: MhsParams
    epoch_losses: list[float]
    n_rejected: int = 0


def train(
    corpus: Corpus,
    catalog: SymptomCatalog,
    provider,
    config: TrainConfig,
    prepared: PreparedCorpus | None = None,
) -> TrainResult:
    """Train one model under the mini-batch protocol.

    ``prepared`` lets callers reuse embedded posts across folds; it must have
    been produced from the same corpus and provider.
    """
    if prepared is None:
        prepared = prepare_corpus(corpus, provider)
    n = len(prepared.sequences)
    if n == 0:
        raise InsufficientData("no posts survived preprocessing")
    counts = np.bincount(prepared.labels, minlength=2)
    if counts[0] == 0 or counts[1] == 0:
        raise InsufficientData(
            f"training corpus needs both classes (got {counts[1]} positive, {counts[0]} negative)"
        )

    params = build_variant(
        config.variant, catalog, dim=provider.dim, c1=config.c1, c2=config.c2,
        seed=config.seed,
    )
    symptom_embeddings = arrange_symptoms(
        embed_catalog_sentences(catalog, provider), config.variant
    )
    state = init_adam_state(params)
    rng = np.random.Generator(np.random.PCG64(config.seed))

    epoch_losses = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = [(prepared.sequences[i], int(prepared.labels[i])) for i in idx]
            symptoms = (
                encode_symptoms(params, symptom_embeddings)
                if symptom_embeddings is not None
                else None
            )
            loss, grads = loss_and_grad(params, batch, symptoms)
            params, state = adam_step(
                params, grads, state, config.learning_rate,
                beta1=config.beta1, beta2=config.beta2, eps=config.eps,
            )
            total += loss * len(batch)
        epoch_losses.append(total / n)
    return TrainResult(params=params, epoch_losses=epoch_losses,
                       n_rejected=prepared.n_rejected)


# --- checkpointing --------------------------------------------------------------


def save_train_state(path: str, params: MhsParams, state: AdamState) -> None:
    """Bit-exact optimizer checkpoint (float32 params + float64 moments)."""
    arrays: dict[str, np.ndarray] = {}
    for name, tensor in params.tensors():
        arrays[f"param::{name}"] = tensor
    for name, m in state.m.items():
        arrays[f"m::{name}"] = m
    for name, v in state.v.items():
        arrays[f"v::{name}"] = v
    cfg = params.config
    meta = {
        "t": state.t,
        "config": {
            "dim": cfg.dim, "c1": cfg.c1, "c2": cfg.c2, "n_heads": cfg.n_heads,
            "variant": cfg.variant, "kernels": list(cfg.kernels),
            "catalog_fingerprint": cfg.catalog_fingerprint,
        },
    }
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_train_state(path: str) -> tuple[MhsParams, AdamState]:
    from .model import ModelConfig, init_params

    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        cfg_raw = meta["config"]
        config = ModelConfig(
            dim=cfg_raw["dim"], c1=cfg_raw["c1"], c2=cfg_raw["c2"],
            n_heads=cfg_raw["n_heads"], variant=cfg_raw["variant"],
            kernels=tuple(cfg_raw["kernels"]),
            catalog_fingerprint=cfg_raw["catalog_fingerprint"],
        )
        params = init_params(config, seed=0)
        m: dict[str, np.ndarray] = {}
        v: dict[str, np.ndarray] = {}
        for name, _ in list(params.tensors()):
            params.set_tensor(name, data[f"param::{name}"].copy())
            m[name] = data[f"m::{name}"].copy()
            v[name] = data[f"v::{name}"].copy()
    return params, AdamState(m=m, v=v, t=int(meta["t"]))


# --- cross validation ------------------------------------------------------------


@dataclass
class RunRecord:
    seed: int
    fold: int
    report: "EvalReport"  # noqa: F821 - imported lazily to avoid a cycle
    train_size: int = 0
    test_size: int = 0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "fold": self.fold,
            "train_size": self.train_size,
            "test_size": self.test_size,
            "metrics": self.report.to_dict(),
        }


@dataclass
class CrossValResult:
    records: list[RunRecord]
    f1_mean: float
    f1_std: float

    def to_dict(self) -> dict:
        return {
            "f1_mean": self.f1_mean,
            "f1_std": self.f1_std,
            "runs": [r.to_dict() for r in self.records],
        }

    def mean(self, metric: str) -> float:
        return float(np.mean([getattr(r.report, metric) for r in self.records]))


def _crossval_run(
    corpus: Corpus,
    catalog: SymptomCatalog,
    provider,
    config: TrainConfig,
    folds: int,
    seed: int,
    fold_id: int,
) -> RunRecord:
    """One (seed, fold) cell; self-contained so it can run in a worker process."""
    from .evaluate import evaluate_prepared

    prepared = prepare_corpus(corpus, provider)
    train_idx, test_idx = stratified_folds_from_labels(prepared.labels, folds, seed)[fold_id]
    run_config = replace(config, seed=seed)
    train_prep = PreparedCorpus(
        sequences=[prepared.sequences[i] for i in train_idx],
        labels=prepared.labels[train_idx],
    )
    result = train(corpus, catalog, provider, run_config, prepared=train_prep)
    test_prep = PreparedCorpus(
        sequences=[prepared.sequences[i] for i in test_idx],
        labels=prepared.labels[test_idx],
    )
    report = evaluate_prepared(result.params, test_prep, catalog, provider)
    return RunRecord(seed=seed, fold=fold_id, report=report,
                     train_size=len(train_idx), test_size=len(test_idx))


def cross_validate(
    corpus: Corpus,
    catalog: SymptomCatalog,
    provider,
    config: TrainConfig,
    folds: int = 5,
    seeds: tuple[int, ...] = DEFAULT_SEEDS,
) -> CrossValResult:
    """The k-fold x multi-seed protocol: one record per (seed, fold) run.

    Cells are independent and deterministic, so they run in parallel worker
    processes (MHS_THREADS caps the count); results are identical to a
    serial run.
    """
    jobs = [(seed, fold_id) for seed in seeds for fold_id in range(folds)]
    workers = min(thread_limit(), len(jobs))
    records: list[RunRecord] | None = None
    if workers > 1:
        try:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                futures = [
                    pool.submit(_crossval_run, corpus, catalog, provider, config,
                                folds, seed, fold_id)
                    for seed, fold_id in jobs
                ]
                records = [f.result() for f in futures]
        except (ValueError, OSError, PicklingError):
            records = None  # e.g. no fork on this platform; fall back to serial
    if records is None:
        records = [
            _crossval_run(corpus, catalog, provider, config, folds, seed, fold_id)
            for seed, fold_id in jobs
        ]
    records.sort(key=lambda r: (r.seed, r.fold))
    f1s = [r.report.f1 for r in records]
    return CrossValResult(
        records=records,
        f1_mean=float(np.mean(f1s)),
        f1_std=float(np.std(f1s, ddof=1)) if len(f1s) > 1 else 0.0,
    )
