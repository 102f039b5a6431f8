"""The multi-head siamese network: forward pass, exact backward pass, variants.

Architecture, for a target text and a catalog of n symptom heads:

* Three convolutional channels (kernel sizes 2, 3, 5) share parameters between
  the target branch and every symptom-sentence branch. Each channel runs
  valid 1-D conv -> ReLU -> max-pool (window 2, stride 2) -> valid 1-D conv
  -> ReLU -> global max-pool, producing a fixed-size feature vector per input.
* Each (head i, sentence j) pair gets a distance: the mean over channels of
  the cosine similarity between target and sentence features. Head distances
  average over the head's sentences, giving the length-n distance vector D.
* A final linear layer maps D to two logits; softmax gives the probability of
  the mental-illness class.

The backward pass is written out by hand (no autograd): cosine gradients,
max-pool argmax routing, and convolution transposes, with conv-weight
gradients accumulated over the target branch and all sentence branches.
Computation runs in float64; parameters live on the float32 grid so the
MHSM1 container round-trips bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .catalog import (
    SymptomCatalog,
    catalog_from_dict,
    merge_to_single_head,
    restrict_to_first_sentence,
)
from .embedding import EmbeddedSequence
from .errors import (
    BadMagic,
    CatalogMismatch,
    CorruptRecord,
    MissingTrace,
    ShapeError,
    VersionMismatch,
    ZeroVector,
)

KERNEL_SIZES = (2, 3, 5)
VARIANTS = ("full", "single_head", "one_description", "cnn_only")
NORM_EPS = 1e-12

MODEL_MAGIC = b"MHSM1"
MODEL_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    dim: int
    c1: int = 100
    c2: int = 100
    n_heads: int = 1
    variant: str = "full"
    kernels: tuple[int, ...] = KERNEL_SIZES
    catalog_fingerprint: str | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ShapeError(f"unknown variant {self.variant!r}")
        if min(self.dim, self.c1, self.c2) < 1:
            raise ShapeError("dim, c1, c2 must all be >= 1")
        if self.variant != "cnn_only" and self.n_heads < 1:
            raise ShapeError("need at least one head")

    @property
    def head_input_width(self) -> int:
        """Rows of the final linear map: n for siamese variants, 3*c2 for cnn_only."""
        if self.variant == "cnn_only":
            return len(self.kernels) * self.c2
        return self.n_heads


@dataclass
class ChannelParams:
    kernel_size: int
    w1: np.ndarray  # (dim, k, c1)
    b1: np.ndarray  # (c1,)
    w2: np.ndarray  # (c1, k, c2)
    b2: np.ndarray  # (c2,)


@dataclass
class MhsParams:
    config: ModelConfig
    channels: tuple[ChannelParams, ...]
    W: np.ndarray  # (head_input_width, 2)
    b: np.ndarray  # (2,)
    # original (untransformed) catalog the model was built against, so saved
    # models are self-contained for evaluation and explanation
    catalog: SymptomCatalog | None = None

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        """All trainable tensors in a fixed, documented order (14 at K=3)."""
        for ch in self.channels:
            k = ch.kernel_size
            yield f"conv{k}.w1", ch.w1
            yield f"conv{k}.b1", ch.b1
            yield f"conv{k}.w2", ch.w2
            yield f"conv{k}.b2", ch.b2
        yield "W", self.W
        yield "b", self.b

    def set_tensor(self, name: str, value: np.ndarray) -> None:
        for ch in self.channels:
            k = ch.kernel_size
            if name == f"conv{k}.w1":
                ch.w1 = value
                return
            if name == f"conv{k}.b1":
                ch.b1 = value
                return
            if name == f"conv{k}.w2":
                ch.w2 = value
                return
            if name == f"conv{k}.b2":
                ch.b2 = value
                return
        if name == "W":
            self.W = value
        elif name == "b":
            self.b = value
        else:
            raise KeyError(name)


def init_params(config: ModelConfig, seed: int) -> MhsParams:
    """Uniform fan-in/fan-out scaled conv weights, zero biases, zero final layer."""
    rng = np.random.Generator(np.random.PCG64(seed))
    channels = []
    for k in config.kernels:
        bound1 = np.sqrt(6.0 / (config.dim * k + config.c1))
        bound2 = np.sqrt(6.0 / (config.c1 * k + config.c2))
        channels.append(
            ChannelParams(
                kernel_size=k,
                w1=rng.uniform(-bound1, bound1, (config.dim, k, config.c1)).astype(np.float32),
                b1=np.zeros(config.c1, dtype=np.float32),
                w2=rng.uniform(-bound2, bound2, (config.c1, k, config.c2)).astype(np.float32),
                b2=np.zeros(config.c2, dtype=np.float32),
            )
        )
    width = config.head_input_width
    return MhsParams(
        config=config,
        channels=tuple(channels),
        W=np.zeros((width, 2), dtype=np.float32),
        b=np.zeros(2, dtype=np.float32),
    )


# --- channel pipeline --------------------------------------------------------


@dataclass
class ChannelTrace:
    z1: np.ndarray        # (L1, c1) conv1 preactivation
    pool_src: np.ndarray  # (Lp, c1) absolute argmax index into relu(z1)
    pooled: np.ndarray    # (Lp, c1)
    z2: np.ndarray        # (L2, c2) conv2 preactivation
    t_star: np.ndarray    # (c2,) global argmax position over relu(z2)
    features: np.ndarray  # (c2,)


@dataclass
class BranchTrace:
    """One input sequence pushed through all channels, intermediates retained."""

    E: np.ndarray  # (L, dim) float64
    channels: tuple[ChannelTrace, ...]

    def features(self) -> list[np.ndarray]:
        return [ct.features for ct in self.channels]


def min_length(kernel_size: int) -> int:
    """Smallest input length for which conv -> pool -> conv yields output."""
    return 3 * kernel_size - 1


def _valid_conv(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid 1-D convolution, stride 1. x: (L, cin); w: (cin, k, cout)."""
    k = w.shape[1]
    windows = sliding_window_view(x, k, axis=0)  # (L-k+1, cin, k)
    flat = windows.reshape(windows.shape[0], -1)
    return flat @ w.reshape(-1, w.shape[2]) + b


def _channel_forward(ch: ChannelParams, E: np.ndarray) -> ChannelTrace:
    k = ch.kernel_size
    if E.shape[0] < min_length(k):
        raise ShapeError(
            f"sequence length {E.shape[0]} too short for kernel {k} "
            f"(needs >= {min_length(k)})"
        )
    z1 = _valid_conv(E, ch.w1.astype(np.float64), ch.b1.astype(np.float64))
    a1 = np.maximum(z1, 0.0)
    n_pairs = a1.shape[0] // 2
    pairs = a1[: 2 * n_pairs].reshape(n_pairs, 2, -1)
    arg = pairs.argmax(axis=1)  # ties resolve to the earlier position
    pooled = np.take_along_axis(pairs, arg[:, None, :], axis=1)[:, 0, :]
    pool_src = 2 * np.arange(n_pairs)[:, None] + arg
    z2 = _valid_conv(pooled, ch.w2.astype(np.float64), ch.b2.astype(np.float64))
    a2 = np.maximum(z2, 0.0)
    t_star = a2.argmax(axis=0)
    features = a2.max(axis=0)
    return ChannelTrace(z1=z1, pool_src=pool_src, pooled=pooled, z2=z2,
                        t_star=t_star, features=features)


def branch_forward(params: MhsParams, seq: EmbeddedSequence) -> BranchTrace:
    if seq.dim != params.config.dim:
        raise ShapeError(f"embedding width {seq.dim} != model dim {params.config.dim}")
    E = np.asarray(seq.values, dtype=np.float64)
    return BranchTrace(E=E, channels=tuple(_channel_forward(ch, E) for ch in params.channels))


# --- batched branch pipeline (same-length sequences) ---------------------------
#
# Symptom sentences are re-encoded every optimization step (the extractor is
# training), which dominates step cost if done one sentence at a time. Equal
# length sequences run through each conv as a single matmul instead.


@dataclass
class BatchedChannelTrace:
    z1: np.ndarray        # (B, L1, c1)
    pool_src: np.ndarray  # (B, Lp, c1)
    pooled: np.ndarray    # (B, Lp, c1)
    z2: np.ndarray        # (B, L2, c2)
    t_star: np.ndarray    # (B, c2)
    features: np.ndarray  # (B, c2)


@dataclass
class BatchedBranchTrace:
    E: np.ndarray  # (B, L, dim) float64
    channels: tuple[BatchedChannelTrace, ...]


def _channel_forward_batch(ch: ChannelParams, E: np.ndarray) -> BatchedChannelTrace:
    B, L, d = E.shape
    k = ch.kernel_size
    if L < min_length(k):
        raise ShapeError(
            f"sequence length {L} too short for kernel {k} (needs >= {min_length(k)})"
        )
    c1 = ch.w1.shape[2]
    c2 = ch.w2.shape[2]
    w1 = ch.w1.astype(np.float64).reshape(d * k, c1)
    w2 = ch.w2.astype(np.float64).reshape(c1 * k, c2)
    L1 = L - k + 1
    windows = sliding_window_view(E, k, axis=1)  # (B, L1, d, k)
    z1 = (windows.reshape(B * L1, d * k) @ w1).reshape(B, L1, c1)
    z1 += ch.b1.astype(np.float64)
    a1 = np.maximum(z1, 0.0)
    n_pairs = L1 // 2
    pairs = a1[:, : 2 * n_pairs].reshape(B, n_pairs, 2, c1)
    arg = pairs.argmax(axis=2)
    pooled = np.take_along_axis(pairs, arg[:, :, None, :], axis=2)[:, :, 0, :]
    pool_src = 2 * np.arange(n_pairs)[None, :, None] + arg
    L2 = n_pairs - k + 1
    windows_p = sliding_window_view(pooled, k, axis=1)  # (B, L2, c1, k)
    z2 = (windows_p.reshape(B * L2, c1 * k) @ w2).reshape(B, L2, c2)
    z2 += ch.b2.astype(np.float64)
    a2 = np.maximum(z2, 0.0)
    t_star = a2.argmax(axis=1)
    features = a2.max(axis=1)
    return BatchedChannelTrace(z1=z1, pool_src=pool_src, pooled=pooled, z2=z2,
                               t_star=t_star, features=features)


def branches_forward(
    params: MhsParams, seqs: Sequence[EmbeddedSequence]
) -> list[tuple[list[int], BatchedBranchTrace]]:
    """Forward many sequences, grouping equal lengths into batched convolutions.

    Returns (member indices, batched trace) per length group; member order
    maps the group's batch rows back to positions in ``seqs``.
    """
    groups: dict[int, list[int]] = {}
    for i, seq in enumerate(seqs):
        if seq.dim != params.config.dim:
            raise ShapeError(f"embedding width {seq.dim} != model dim {params.config.dim}")
        groups.setdefault(seq.length, []).append(i)
    out = []
    for length in sorted(groups):
        members = groups[length]
        E = np.stack([np.asarray(seqs[i].values, dtype=np.float64) for i in members])
        out.append(
            (
                members,
                BatchedBranchTrace(
                    E=E,
                    channels=tuple(_channel_forward_batch(ch, E) for ch in params.channels),
                ),
            )
        )
    return out


def _channel_backward_batch(
    ch: ChannelParams,
    E: np.ndarray,
    trace: BatchedChannelTrace,
    g_features: np.ndarray,
    grads: "ChannelGrads",
) -> None:
    """Batched analogue of _channel_backward (no input gradients)."""
    B, L, d = E.shape
    k = ch.kernel_size
    c1 = ch.w1.shape[2]
    c2 = ch.w2.shape[2]
    L2 = trace.z2.shape[1]
    L1 = trace.z1.shape[1]
    g_a2 = np.zeros_like(trace.z2)
    b_idx = np.arange(B)[:, None]
    g_a2[b_idx, trace.t_star, np.arange(c2)[None, :]] = g_features
    g_z2 = np.where(trace.z2 > 0.0, g_a2, 0.0)
    windows_p = sliding_window_view(trace.pooled, k, axis=1)
    grads.w2 += (
        windows_p.reshape(B * L2, c1 * k).T @ g_z2.reshape(B * L2, c2)
    ).reshape(c1, k, c2)
    grads.b2 += g_z2.sum(axis=(0, 1))
    w2 = ch.w2.astype(np.float64)
    g_pooled = np.zeros_like(trace.pooled)
    for ki in range(k):
        g_pooled[:, ki : ki + L2] += g_z2 @ w2[:, ki, :].T
    g_a1 = np.zeros_like(trace.z1)
    np.add.at(
        g_a1,
        (np.arange(B)[:, None, None], trace.pool_src,
         np.broadcast_to(np.arange(c1), trace.pool_src.shape)),
        g_pooled,
    )
    g_z1 = np.where(trace.z1 > 0.0, g_a1, 0.0)
    windows_e = sliding_window_view(E, k, axis=1)
    grads.w1 += (
        windows_e.reshape(B * L1, d * k).T @ g_z1.reshape(B * L1, c1)
    ).reshape(d, k, c1)
    grads.b1 += g_z1.sum(axis=(0, 1))


def channel_features(ch: ChannelParams, seq: EmbeddedSequence) -> np.ndarray:
    """Feature vector of one channel for one sequence (no trace retained)."""
    E = np.asarray(seq.values, dtype=np.float64)
    if E.ndim != 2 or E.shape[1] != ch.w1.shape[0]:
        raise ShapeError(f"expected (L, {ch.w1.shape[0]}) input, got {E.shape}")
    return _channel_forward(ch, E).features


def _channel_backward(
    ch: ChannelParams,
    E: np.ndarray,
    trace: ChannelTrace,
    g_features: np.ndarray,
    grads: "ChannelGrads",
    want_input_grad: bool = False,
) -> np.ndarray | None:
    """Accumulate conv parameter gradients for one branch/channel."""
    k = ch.kernel_size
    c1 = ch.w1.shape[2]
    c2 = ch.w2.shape[2]
    # global max-pool: route to stored argmax rows
    g_a2 = np.zeros_like(trace.z2)
    g_a2[trace.t_star, np.arange(c2)] = g_features
    g_z2 = np.where(trace.z2 > 0.0, g_a2, 0.0)
    # conv2
    windows_p = sliding_window_view(trace.pooled, k, axis=0)  # (L2, c1, k)
    flat_p = windows_p.reshape(windows_p.shape[0], c1 * k)
    grads.w2 += (flat_p.T @ g_z2).reshape(c1, k, c2)
    grads.b2 += g_z2.sum(axis=0)
    w2 = ch.w2.astype(np.float64)
    g_pooled = np.zeros_like(trace.pooled)
    for ki in range(k):
        g_pooled[ki : ki + g_z2.shape[0]] += g_z2 @ w2[:, ki, :].T
    # max-pool: scatter to argmax source rows
    g_a1 = np.zeros_like(trace.z1)
    cols = np.broadcast_to(np.arange(c1), trace.pool_src.shape)
    np.add.at(g_a1, (trace.pool_src, cols), g_pooled)
    g_z1 = np.where(trace.z1 > 0.0, g_a1, 0.0)
    # conv1
    windows_e = sliding_window_view(E, k, axis=0)  # (L1, dim, k)
    flat_e = windows_e.reshape(windows_e.shape[0], -1)
    grads.w1 += (flat_e.T @ g_z1).reshape(ch.w1.shape)
    grads.b1 += g_z1.sum(axis=0)
    if not want_input_grad:
        return None
    w1 = ch.w1.astype(np.float64)
    g_E = np.zeros_like(E)
    for ki in range(k):
        g_E[ki : ki + g_z1.shape[0]] += g_z1 @ w1[:, ki, :].T
    return g_E


# --- distance aggregation ----------------------------------------------------


def cosine(x: np.ndarray, y: np.ndarray, strict: bool = False) -> float:
    """Cosine similarity in [-1, 1]; near-zero vectors map to 0 unless strict."""
    nx = float(np.linalg.norm(x))
    ny = float(np.linalg.norm(y))
    if nx < NORM_EPS or ny < NORM_EPS:
        if strict:
            raise ZeroVector("cosine undefined for a zero feature vector")
        return 0.0
    # clamp float noise so the [-1, 1] bound holds exactly
    return float(min(1.0, max(-1.0, np.dot(x, y) / (nx * ny))))


def pair_distance(
    target_features: Sequence[np.ndarray],
    sentence_features: Sequence[np.ndarray],
    strict: bool = False,
) -> float:
    """Mean over channels of per-channel cosine similarity."""
    if len(target_features) != len(sentence_features):
        raise ShapeError("channel count mismatch between branches")
    sims = [cosine(x, y, strict=strict) for x, y in zip(target_features, sentence_features)]
    return float(np.mean(sims))


def head_distance(pair_distances: Sequence[float]) -> float:
    """Mean over a head's sentences."""
    if len(pair_distances) == 0:
        raise ShapeError("head has no sentences")
    return float(np.mean(pair_distances))


def logits(W: np.ndarray, b: np.ndarray, D: np.ndarray) -> np.ndarray:
    return W.astype(np.float64).T @ np.asarray(D, dtype=np.float64) + b.astype(np.float64)


def softmax(o: np.ndarray) -> np.ndarray:
    shifted = o - np.max(o)
    e = np.exp(shifted)
    return e / e.sum()


@dataclass
class SymptomFeatures:
    """All symptom-sentence branches, encoded once and reusable across a batch.

    Sentences are grouped by length and pushed through the convolutions as
    batches; features are also kept stacked per channel ((M, c2) with M the
    total sentence count) with precomputed norms, so the cosine aggregation
    is a matrix-vector product per channel instead of per-pair loops.
    """

    groups: list[tuple[list[int], BatchedBranchTrace]]
    head_slices: tuple[tuple[int, int], ...]
    stacked: list[np.ndarray]  # per channel: (M, c2)
    norms: list[np.ndarray]    # per channel: (M,)

    @property
    def n_heads(self) -> int:
        return len(self.head_slices)

    @property
    def total_sentences(self) -> int:
        return self.head_slices[-1][1] if self.head_slices else 0

    def sentence_counts(self) -> list[int]:
        return [end - start for start, end in self.head_slices]

    def sentence_features(self, head: int, sentence: int) -> list[np.ndarray]:
        """Per-channel feature vectors of one symptom sentence."""
        flat = self.head_slices[head][0] + sentence
        return [s[flat] for s in self.stacked]


def encode_symptoms(
    params: MhsParams, symptoms: Sequence[Sequence[EmbeddedSequence]]
) -> SymptomFeatures:
    """Run every symptom sentence through the shared extractor."""
    if params.config.variant == "cnn_only":
        raise ShapeError("cnn_only variant takes no symptom inputs")
    if len(symptoms) != params.config.n_heads:
        raise ShapeError(
            f"got {len(symptoms)} heads of sentences, model expects {params.config.n_heads}"
        )
    slices = []
    offset = 0
    for i, head in enumerate(symptoms):
        if len(head) == 0:
            raise ShapeError(f"head {i} has no sentences")
        slices.append((offset, offset + len(head)))
        offset += len(head)
    flat_seqs = [seq for head in symptoms for seq in head]
    groups = branches_forward(params, flat_seqs)
    K = len(params.config.kernels)
    stacked = [np.empty((len(flat_seqs), params.config.c2), dtype=np.float64) for _ in range(K)]
    for members, btrace in groups:
        for k in range(K):
            stacked[k][members] = btrace.channels[k].features
    return SymptomFeatures(
        groups=groups,
        head_slices=tuple(slices),
        stacked=stacked,
        norms=[np.linalg.norm(s, axis=1) for s in stacked],
    )


@dataclass
class ForwardTrace:
    """Everything forward computed, retained for backward and interpretation."""

    target: BranchTrace
    symptoms: SymptomFeatures | None
    cos_flat: np.ndarray | None         # (M, K) per-channel cosines, flat sentence order
    pair_flat: np.ndarray | None        # (M,) per-sentence distances d_(i,j)
    D: np.ndarray                       # (n,) distances, or (3*c2,) features for cnn_only
    o: np.ndarray                       # (2,) logits
    p: np.ndarray                       # (2,) softmax probabilities
    degenerate_flat: np.ndarray | None = None  # (M, K) zero-norm mask

    @property
    def head_distances(self) -> np.ndarray:
        if self.pair_flat is None:
            raise MissingTrace("cnn_only trace has no head distances")
        return self.D

    def channel_cos(self, head: int) -> np.ndarray:
        """Per-channel cosines for one head: (m_i, K)."""
        start, end = self.symptoms.head_slices[head]
        return self.cos_flat[start:end]

    def pair_distances(self, head: int) -> np.ndarray:
        """The head's d_(i,j) values in sentence order."""
        start, end = self.symptoms.head_slices[head]
        return self.pair_flat[start:end]


def _aggregate(
    params: MhsParams,
    target_trace: BranchTrace,
    symptoms: SymptomFeatures | Sequence[Sequence[EmbeddedSequence]] | None,
    strict: bool = False,
) -> ForwardTrace:
    """Distance aggregation and classification on top of a computed target branch."""
    cfg = params.config

    if cfg.variant == "cnn_only":
        x = np.concatenate(target_trace.features())
        o = logits(params.W, params.b, x)
        return ForwardTrace(
            target=target_trace, symptoms=None, cos_flat=None, pair_flat=None,
            D=x, o=o, p=softmax(o),
        )

    if symptoms is None:
        raise ShapeError("siamese variants require symptom inputs")
    if not isinstance(symptoms, SymptomFeatures):
        symptoms = encode_symptoms(params, symptoms)
    if symptoms.n_heads != cfg.n_heads:
        raise ShapeError(
            f"symptom features have {symptoms.n_heads} heads, model expects {cfg.n_heads}"
        )

    K = len(cfg.kernels)
    M = symptoms.total_sentences
    target_feats = target_trace.features()
    cos_flat = np.empty((M, K), dtype=np.float64)
    degen_flat = np.zeros((M, K), dtype=bool)
    for k in range(K):
        x = target_feats[k]
        nx = float(np.linalg.norm(x))
        ny = symptoms.norms[k]
        degen = ny < NORM_EPS
        if nx < NORM_EPS:
            degen = np.ones(M, dtype=bool)
        if degen.any() and strict:
            raise ZeroVector(f"zero feature vector in channel {k}")
        if nx < NORM_EPS:
            cos_flat[:, k] = 0.0
        else:
            denom = np.where(degen, 1.0, ny * nx)
            cos_flat[:, k] = np.where(
                degen, 0.0, np.clip(symptoms.stacked[k] @ x / denom, -1.0, 1.0)
            )
        degen_flat[:, k] = degen

    pair_flat = cos_flat.mean(axis=1)
    head_d = np.array(
        [pair_flat[start:end].mean() for start, end in symptoms.head_slices]
    )

    o = logits(params.W, params.b, head_d)
    return ForwardTrace(
        target=target_trace, symptoms=symptoms, cos_flat=cos_flat,
        pair_flat=pair_flat, D=head_d, o=o, p=softmax(o), degenerate_flat=degen_flat,
    )


def forward(
    params: MhsParams,
    target: EmbeddedSequence,
    symptoms: SymptomFeatures | Sequence[Sequence[EmbeddedSequence]] | None,
    strict: bool = False,
) -> ForwardTrace:
    """Full forward pass for one target text.

    ``symptoms`` may be pre-encoded (SymptomFeatures) to share work across a
    batch; passing raw embedded sentences encodes them on the fly. The
    cnn_only variant ignores symptoms entirely and classifies from the
    concatenated channel features of the target.
    """
    return _aggregate(params, branch_forward(params, target), symptoms, strict=strict)


def _branch_views(group: BatchedBranchTrace, row: int) -> BranchTrace:
    """Per-sequence view into a batched branch trace (no copies)."""
    return BranchTrace(
        E=group.E[row],
        channels=tuple(
            ChannelTrace(
                z1=ct.z1[row], pool_src=ct.pool_src[row], pooled=ct.pooled[row],
                z2=ct.z2[row], t_star=ct.t_star[row], features=ct.features[row],
            )
            for ct in group.channels
        ),
    )


def forward_many(
    params: MhsParams,
    targets: Sequence[EmbeddedSequence],
    symptoms: SymptomFeatures | Sequence[Sequence[EmbeddedSequence]] | None,
    strict: bool = False,
) -> tuple[list[ForwardTrace], list[tuple[list[int], BatchedBranchTrace]]]:
    """Forward a batch of targets, convolving equal-length sequences together.

    Returns per-target traces (in input order) plus the length groups, which
    batch_backward can reuse to run the target-branch backward batched.
    """
    if (
        symptoms is not None
        and not isinstance(symptoms, SymptomFeatures)
        and params.config.variant != "cnn_only"
    ):
        symptoms = encode_symptoms(params, symptoms)
    groups = branches_forward(params, targets)
    traces: list[ForwardTrace | None] = [None] * len(targets)
    for members, group in groups:
        for row, i in enumerate(members):
            traces[i] = _aggregate(
                params, _branch_views(group, row), symptoms, strict=strict
            )
    return traces, groups


# --- backward ----------------------------------------------------------------


@dataclass
class ChannelGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class MhsGrads:
    kernels: tuple[int, ...]
    channels: tuple[ChannelGrads, ...]
    W: np.ndarray
    b: np.ndarray
    target_embedding: np.ndarray | None = None

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        for k, ch in zip(self.kernels, self.channels):
            yield f"conv{k}.w1", ch.w1
            yield f"conv{k}.b1", ch.b1
            yield f"conv{k}.w2", ch.w2
            yield f"conv{k}.b2", ch.b2
        yield "W", self.W
        yield "b", self.b


def zero_grads(params: MhsParams) -> MhsGrads:
    return MhsGrads(
        kernels=params.config.kernels,
        channels=tuple(
            ChannelGrads(
                w1=np.zeros(ch.w1.shape, dtype=np.float64),
                b1=np.zeros(ch.b1.shape, dtype=np.float64),
                w2=np.zeros(ch.w2.shape, dtype=np.float64),
                b2=np.zeros(ch.b2.shape, dtype=np.float64),
            )
            for ch in params.channels
        ),
        W=np.zeros(params.W.shape, dtype=np.float64),
        b=np.zeros(params.b.shape, dtype=np.float64),
    )


def batch_backward(
    params: MhsParams,
    traces: Sequence[ForwardTrace],
    grad_logits: Sequence[np.ndarray],
    want_embedding_grads: bool = False,
    target_groups: Sequence[tuple[list[int], BatchedBranchTrace]] | None = None,
    _cosine_grad_corruption: float = 0.0,
) -> MhsGrads:
    """Exact gradients summed over a batch of forward traces.

    Symptom branches are backpropagated once per sentence with the cosine
    gradients accumulated across the whole batch (valid because the branch
    is linear in its output gradient), which is where most of the saving
    over per-sample backward comes from. ``_cosine_grad_corruption`` is a
    fault-injection hook used only by gradient-check diagnostics.

    Cosine gradients: d cos(x,y)/dx = y/(|x||y|) - cos(x,y) x/|x|^2, applied
    vectorized over the stacked sentence features per channel.
    """
    if not traces:
        raise MissingTrace("empty batch")
    if target_groups is not None and want_embedding_grads:
        raise MissingTrace("embedding gradients require the per-sample backward path")
    grads = zero_grads(params)
    cfg = params.config
    K = len(cfg.kernels)
    embedding_grads: list[np.ndarray] = []

    shared_symptoms: SymptomFeatures | None = None
    g_sentence: list[np.ndarray] | None = None  # per channel: (M, c2)
    g_feats_all = np.zeros((len(traces), K, cfg.c2), dtype=np.float64)

    for sample_idx, (trace, g_o) in enumerate(zip(traces, grad_logits)):
        g_o = np.asarray(g_o, dtype=np.float64)
        if trace.symptoms is None and cfg.variant != "cnn_only":
            raise MissingTrace("trace lacks symptom intermediates")

        if cfg.variant == "cnn_only":
            x = trace.D
            grads.W += np.outer(x, g_o)
            grads.b += g_o
            g_x = params.W.astype(np.float64) @ g_o
            g_feats = np.split(g_x, K)
        else:
            if shared_symptoms is None:
                shared_symptoms = trace.symptoms
                g_sentence = [
                    np.zeros((shared_symptoms.total_sentences, cfg.c2), dtype=np.float64)
                    for _ in range(K)
                ]
            elif trace.symptoms is not shared_symptoms:
                raise MissingTrace(
                    "batch_backward requires all traces to share one SymptomFeatures"
                )
            grads.W += np.outer(trace.D, g_o)
            grads.b += g_o
            g_D = params.W.astype(np.float64) @ g_o
            # d_i averages m_i sentence distances, each averaging K cosines
            coeff = np.empty(shared_symptoms.total_sentences, dtype=np.float64)
            for i, (start, end) in enumerate(shared_symptoms.head_slices):
                coeff[start:end] = g_D[i] / ((end - start) * K)
            g_feats = []
            target_feats = trace.target.features()
            for k in range(K):
                x = target_feats[k]
                nx = float(np.linalg.norm(x))
                degen = trace.degenerate_flat[:, k]
                if nx < NORM_EPS or degen.all():
                    g_feats.append(np.zeros(cfg.c2, dtype=np.float64))
                    continue
                c = np.where(degen, 0.0, coeff)
                ny = np.where(degen, 1.0, shared_symptoms.norms[k])
                cos_k = trace.cos_flat[:, k]
                Y = shared_symptoms.stacked[k]
                gx = (Y.T @ (c / ny)) / nx - (float(np.dot(c, cos_k)) / (nx * nx)) * x
                if _cosine_grad_corruption:
                    gx = gx * (1.0 + _cosine_grad_corruption)
                g_feats.append(gx)
                g_sentence[k] += (c / (nx * ny))[:, None] * x[None, :] \
                    - ((c * cos_k) / (ny * ny))[:, None] * Y

        g_feats_all[sample_idx] = np.stack(g_feats)
        if target_groups is not None:
            continue  # target branches run batched below
        g_E = None
        for k, (ch, ch_trace) in enumerate(zip(params.channels, trace.target.channels)):
            g = _channel_backward(
                ch, trace.target.E, ch_trace, g_feats[k], grads.channels[k],
                want_input_grad=want_embedding_grads,
            )
            if want_embedding_grads:
                g_E = g if g_E is None else g_E + g
        if want_embedding_grads:
            embedding_grads.append(g_E)

    if target_groups is not None:
        for members, group in target_groups:
            for k, ch in enumerate(params.channels):
                _channel_backward_batch(
                    ch, group.E, group.channels[k], g_feats_all[members, k],
                    grads.channels[k],
                )

    if shared_symptoms is not None:
        for members, btrace in shared_symptoms.groups:
            for k, ch in enumerate(params.channels):
                _channel_backward_batch(
                    ch, btrace.E, btrace.channels[k], g_sentence[k][members],
                    grads.channels[k],
                )

    if want_embedding_grads:
        grads.target_embedding = embedding_grads[0] if len(traces) == 1 else None
    return grads


def backward(
    params: MhsParams,
    trace: ForwardTrace,
    grad_logits: np.ndarray,
    want_embedding_grads: bool = False,
) -> MhsGrads:
    """Gradients of grad_logits . o with respect to every parameter tensor."""
    return batch_backward(
        params, [trace], [grad_logits], want_embedding_grads=want_embedding_grads
    )


# --- variants and parameter accounting ----------------------------------------


def variant_catalog(variant: str, catalog: SymptomCatalog) -> SymptomCatalog | None:
    """Effective head set a variant compares against (None for cnn_only)."""
    if variant == "full":
        return catalog
    if variant == "single_head":
        return merge_to_single_head(catalog)
    if variant == "one_description":
        return restrict_to_first_sentence(catalog)
    if variant == "cnn_only":
        return None
    raise ShapeError(f"unknown variant {variant!r}")


def build_variant(
    variant: str,
    catalog: SymptomCatalog,
    dim: int,
    c1: int = 100,
    c2: int = 100,
    seed: int = 0,
    kernels: tuple[int, ...] = KERNEL_SIZES,
) -> MhsParams:
    """Initialize parameters shaped for one of the ablation variants.

    The fingerprint always refers to the original catalog; together with the
    variant name it pins the effective head layout.
    """
    effective = variant_catalog(variant, catalog)
    config = ModelConfig(
        dim=dim,
        c1=c1,
        c2=c2,
        n_heads=effective.n_heads if effective is not None else 0,
        variant=variant,
        kernels=kernels,
        catalog_fingerprint=catalog.fingerprint(),
    )
    params = init_params(config, seed)
    params.catalog = catalog
    return params


def count_params(config: ModelConfig, variant: str | None = None) -> int:
    """Closed-form trainable parameter count."""
    if variant is not None and variant != config.variant:
        config = replace(config, variant=variant)
    conv = sum(
        (config.dim * k * config.c1 + config.c1) + (config.c1 * k * config.c2 + config.c2)
        for k in config.kernels
    )
    return conv + config.head_input_width * 2 + 2


# --- serialization -----------------------------------------------------------


def save_model(params: MhsParams, path: str) -> None:
    """Write the MHSM1 container: JSON header plus f32 little-endian blobs."""
    names = []
    blobs = []
    for name, tensor in params.tensors():
        arr = np.asarray(tensor, dtype="<f4")
        names.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes(order="C"))
    header = {
        "version": MODEL_VERSION,
        "config": {
            "dim": params.config.dim,
            "c1": params.config.c1,
            "c2": params.config.c2,
            "n_heads": params.config.n_heads,
            "variant": params.config.variant,
            "kernels": list(params.config.kernels),
        },
        "catalog_fingerprint": params.config.catalog_fingerprint,
        "catalog": params.catalog.to_dict() if params.catalog is not None else None,
        "tensors": names,
    }
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for blob in blobs:
            f.write(blob)


def load_model(path: str, catalog: SymptomCatalog | None = None) -> MhsParams:
    """Read an MHSM1 container; optionally enforce the catalog fingerprint."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise BadMagic(f"{path}: not an MHSM1 file")
    newline = blob.find(b"\n", len(MODEL_MAGIC))
    if newline < 0:
        raise CorruptRecord(f"{path}: missing header line")
    try:
        header = json.loads(blob[len(MODEL_MAGIC) : newline].decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise CorruptRecord(f"{path}: bad header: {exc}") from exc
    if header.get("version") != MODEL_VERSION:
        raise VersionMismatch(f"{path}: unsupported version {header.get('version')!r}")
    try:
        cfg_raw = header["config"]
        config = ModelConfig(
            dim=int(cfg_raw["dim"]),
            c1=int(cfg_raw["c1"]),
            c2=int(cfg_raw["c2"]),
            n_heads=int(cfg_raw["n_heads"]),
            variant=str(cfg_raw["variant"]),
            kernels=tuple(int(k) for k in cfg_raw["kernels"]),
            catalog_fingerprint=header.get("catalog_fingerprint"),
        )
        tensor_specs = header["tensors"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptRecord(f"{path}: malformed header fields: {exc}") from exc

    if catalog is not None:
        if config.catalog_fingerprint != catalog.fingerprint():
            raise CatalogMismatch(
                f"{path}: model was built for a different catalog"
            )

    params = init_params(config, seed=0)
    if header.get("catalog") is not None:
        params.catalog = catalog_from_dict(header["catalog"])
    expected = {name: tensor.shape for name, tensor in params.tensors()}
    offset = newline + 1
    for spec in tensor_specs:
        name = spec["name"]
        shape = tuple(spec["shape"])
        if name not in expected:
            raise CorruptRecord(f"{path}: unexpected tensor {name!r}")
        if shape != expected[name]:
            raise CorruptRecord(
                f"{path}: tensor {name!r} has shape {shape}, expected {expected[name]}"
            )
        size = 4 * int(np.prod(shape))
        if offset + size > len(blob):
            raise CorruptRecord(f"{path}: truncated tensor data for {name!r}")
        arr = np.frombuffer(blob, dtype="<f4", count=int(np.prod(shape)), offset=offset)
        params.set_tensor(name, arr.reshape(shape).copy())
        offset += size
        del expected[name]
    if expected:
        raise CorruptRecord(f"{path}: missing tensors {sorted(expected)}")
    if offset != len(blob):
        raise CorruptRecord(f"{path}: {len(blob) - offset} trailing bytes")
    return params
