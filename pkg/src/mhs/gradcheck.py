"""Finite-difference verification of the hand-written backward pass.

Runs the full loss (forward + softmax cross-entropy) at toy sizes, compares
the analytic gradient of every parameter tensor against central differences,
and reports the max relative error per tensor. Uses float64 parameters so
the comparison is limited only by the O(eps^2) truncation of the stencil.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .catalog import SymptomCatalog, SymptomHead
from .embedding import EmbeddedSequence
from .model import (
    ChannelParams,
    MhsParams,
    ModelConfig,
    batch_backward,
    encode_symptoms,
    forward,
)
from .train import cross_entropy


def random_params(config: ModelConfig, seed: int, scale: float = 0.5) -> MhsParams:
    """Dense random parameters (float64), including the final layer.

    Unlike init_params this also randomizes W and b: with the zero-initialized
    final layer no gradient reaches the convolutions, which would make a
    gradient check vacuous there.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    channels = tuple(
        ChannelParams(
            kernel_size=k,
            w1=rng.uniform(-scale, scale, (config.dim, k, config.c1)),
            b1=rng.uniform(-scale, scale, config.c1),
            w2=rng.uniform(-scale, scale, (config.c1, k, config.c2)),
            b2=rng.uniform(-scale, scale, config.c2),
        )
        for k in config.kernels
    )
    W = rng.uniform(-scale, scale, (config.head_input_width, 2))
    b = rng.uniform(-scale, scale, 2)
    return MhsParams(config=config, channels=channels, W=W, b=b)


def toy_catalog(n_heads: int, sentences_per_head: int) -> SymptomCatalog:
    heads = tuple(
        SymptomHead(
            id=f"T{i}",
            criterion=f"toy criterion {i}",
            questions=tuple(f"toy question {i} {j}" for j in range(sentences_per_head - 1)),
        )
        for i in range(n_heads)
    )
    return SymptomCatalog(disorder="TOY", heads=heads)


@dataclass
class GradCheckRow:
    tensor: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def run_gradcheck(
    seed: int = 0,
    dim: int = 8,
    c1: int = 4,
    c2: int = 4,
    n_heads: int = 2,
    sentences_per_head: int = 2,
    length: int = 16,
    variant: str = "full",
    eps: float = 1e-4,
    tolerance: float = 1e-3,
    corrupt_cosine_grad: float = 0.0,
) -> list[GradCheckRow]:
    """Compare analytic and finite-difference gradients tensor by tensor.

    ``corrupt_cosine_grad`` is a fault-injection knob for validating that the
    check itself can detect a broken gradient.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    config = ModelConfig(dim=dim, c1=c1, c2=c2, n_heads=n_heads, variant=variant)
    params = random_params(config, seed=seed + 1)

    target = EmbeddedSequence(values=rng.standard_normal((length, dim)), source_id="target")
    if variant == "cnn_only":
        symptom_embeddings = None
    else:
        symptom_embeddings = [
            [
                EmbeddedSequence(
                    values=rng.standard_normal((length, dim)), source_id=f"s{i}-{j}"
                )
                for j in range(sentences_per_head)
            ]
            for i in range(n_heads)
        ]
    label = int(rng.integers(0, 2))

    def loss_of(p: MhsParams) -> float:
        symptoms = (
            encode_symptoms(p, symptom_embeddings) if symptom_embeddings is not None else None
        )
        return cross_entropy(forward(p, target, symptoms).o, label)

    symptoms = (
        encode_symptoms(params, symptom_embeddings) if symptom_embeddings is not None else None
    )
    trace = forward(params, target, symptoms)
    g_logits = trace.p.copy()
    g_logits[label] -= 1.0
    grads = batch_backward(
        params, [trace], [g_logits], _cosine_grad_corruption=corrupt_cosine_grad
    )

    rows = []
    analytic = dict(grads.tensors())
    for name, tensor in params.tensors():
        g_fd = np.zeros_like(tensor)
        it = np.nditer(tensor, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            original = tensor[idx]
            tensor[idx] = original + eps
            up = loss_of(params)
            tensor[idx] = original - eps
            down = loss_of(params)
            tensor[idx] = original
            g_fd[idx] = (up - down) / (2.0 * eps)
            it.iternext()
        g_an = analytic[name]
        denom = np.maximum(np.maximum(np.abs(g_an), np.abs(g_fd)), 1e-6)
        max_rel = float(np.max(np.abs(g_an - g_fd) / denom))
        rows.append(GradCheckRow(tensor=name, max_rel_err=max_rel, tolerance=tolerance))
    return rows
