"""Labeled post corpora: JSONL ingestion, preprocessing filters, folds, synthetic data.

Preprocessing mirrors the data-cleaning rules used for the Reddit-style
corpora: drop posts with URLs or identifiable information, drop posts
shorter than ten tokens, keep English-looking text only, truncate at 512
tokens. Rejection is a value, not an error, so it composes with bulk
pipelines.
"""

from __future__ import annotations

import hashlib
import json
import re
import string
import unicodedata
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np

from .catalog import SymptomCatalog
from .errors import InsufficientData, ParseError, ValidationError

MAX_TOKENS = 512
MIN_TOKENS = 10

_URL_RE = re.compile(r"(?:https?://|www\.)", re.IGNORECASE)
_EMAIL_RE = re.compile(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}")
_USER_MENTION_RE = re.compile(r"(?:^|[^\w])/?u/[A-Za-z0-9_-]+")
_ENGLISH_TOKEN_RE = re.compile(r"^[A-Za-z0-9']+$")

Tokenizer = Callable[[str], list[str]]


@dataclass(frozen=True)
class Post:
    id: str
    title: str
    body: str
    label: int
    source: str = ""

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValidationError(f"post {self.id!r}: label must be 0 or 1")

    def text(self) -> str:
        return f"{self.title} {self.body}"


@dataclass(frozen=True)
class Corpus:
    posts: tuple[Post, ...]
    task_name: str = ""

    def __post_init__(self):
        seen = set()
        for post in self.posts:
            if post.id in seen:
                raise ValidationError(f"duplicate post id {post.id!r}")
            seen.add(post.id)

    def __len__(self) -> int:
        return len(self.posts)

    def labels(self) -> np.ndarray:
        return np.array([p.label for p in self.posts], dtype=np.int64)


@dataclass(frozen=True)
class TokenizedText:
    tokens: tuple[str, ...]
    truncated: bool = False


class RejectReason(Enum):
    CONTAINS_URL = "ContainsUrl"
    CONTAINS_PII = "ContainsPii"
    TOO_SHORT = "TooShort"
    NOT_ENGLISH = "NotEnglish"


@dataclass(frozen=True)
class Rejected:
    reason: RejectReason


def default_tokenizer(text: str) -> list[str]:
    """NFC-normalize, lowercase, whitespace split, strip edge punctuation."""
    normalized = unicodedata.normalize("NFC", text).lower()
    tokens = []
    for raw in normalized.split():
        token = raw.strip(string.punctuation)
        if token:
            tokens.append(token)
    return tokens


def _looks_english(tokens: Sequence[str]) -> bool:
    if not tokens:
        return False
    ascii_like = sum(1 for t in tokens if _ENGLISH_TOKEN_RE.match(t))
    return ascii_like / len(tokens) >= 0.8


def preprocess(post: Post, tokenizer: Tokenizer = default_tokenizer) -> TokenizedText | Rejected:
    """Apply the corpus filters to one post; returns tokens or a Rejected value."""
    text = post.text()
    if _URL_RE.search(text):
        return Rejected(RejectReason.CONTAINS_URL)
    if _EMAIL_RE.search(text) or _USER_MENTION_RE.search(text):
        return Rejected(RejectReason.CONTAINS_PII)
    tokens = tokenizer(text)
    if len(tokens) < MIN_TOKENS:
        return Rejected(RejectReason.TOO_SHORT)
    if not _looks_english(tokens):
        return Rejected(RejectReason.NOT_ENGLISH)
    truncated = len(tokens) > MAX_TOKENS
    return TokenizedText(tokens=tuple(tokens[:MAX_TOKENS]), truncated=truncated)


def load_corpus(path: str, task_name: str = "") -> Corpus:
    """Read a JSONL corpus: one {id, title, body, label, source} object per line."""
    posts = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                posts.append(
                    Post(
                        id=str(obj["id"]),
                        title=str(obj.get("title", "")),
                        body=str(obj.get("body", "")),
                        label=int(obj["label"]),
                        source=str(obj.get("source", "")),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: bad corpus record: {exc}") from exc
    return Corpus(posts=tuple(posts), task_name=task_name or path)


def save_corpus(corpus: Corpus, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for post in corpus.posts:
            record = {
                "id": post.id,
                "title": post.title,
                "body": post.body,
                "label": post.label,
                "source": post.source,
            }
            f.write(json.dumps(record, ensure_ascii=False))
            f.write("\n")


def stratified_folds_from_labels(
    labels: np.ndarray, k: int, seed: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """k disjoint stratified (train, test) index pairs; deterministic in the seed.

    Each label's indices are shuffled once and dealt round-robin to folds, so
    per-fold positive counts differ from the ideal by at most one post.
    """
    if k < 2:
        raise InsufficientData(f"need at least 2 folds, got {k}")
    rng = np.random.Generator(np.random.PCG64(seed))
    buckets: list[list[int]] = [[] for _ in range(k)]
    for label in (0, 1):
        idx = np.flatnonzero(labels == label)
        if len(idx) < k:
            raise InsufficientData(
                f"label {label} has {len(idx)} posts, fewer than {k} folds"
            )
        idx = rng.permutation(idx)
        for pos, sample in enumerate(idx):
            buckets[pos % k].append(int(sample))
    folds = []
    all_idx = set(range(len(labels)))
    for bucket in buckets:
        test = np.array(sorted(bucket), dtype=np.int64)
        train = np.array(sorted(all_idx - set(bucket)), dtype=np.int64)
        folds.append((train, test))
    return folds


def stratified_folds(
    corpus: Corpus, k: int, seed: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified folds over a corpus's posts (see stratified_folds_from_labels)."""
    return stratified_folds_from_labels(corpus.labels(), k, seed)


def subset(corpus: Corpus, indices: Iterable[int], task_name: str = "") -> Corpus:
    posts = tuple(corpus.posts[i] for i in indices)
    return Corpus(posts=posts, task_name=task_name or corpus.task_name)


# --- synthetic corpora -------------------------------------------------------

# Pronounceable pseudo-words built from fixed syllables: ASCII-only (passes
# the English heuristic) and disjoint from catalog wording by construction.
_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"]
_NUCLEI = ["a", "e", "i", "o", "u", "ai", "ei", "ou"]
_CODAS = ["", "n", "r", "s", "l", "m"]


def _filler_vocabulary(size: int = 600) -> list[str]:
    words = []
    for onset in _ONSETS:
        for nucleus in _NUCLEI:
            for coda in _CODAS:
                for onset2 in _ONSETS:
                    words.append(onset + nucleus + coda + onset2 + "o")
                    if len(words) >= size:
                        return words
    return words


def generate_synthetic(
    catalog: SymptomCatalog,
    n_pos: int,
    n_neg: int,
    overlap_rate: float,
    seed: int,
    min_len: int = 20,
    max_len: int = 28,
    noise_rate: float = 0.02,
    soup_rate: float = 0.25,
    len_step: int = 4,
    task_name: str = "",
) -> Corpus:
    """Deterministic desk-scale corpus.

    Each positive exhibits a random subset of 2..4 symptom heads: a fraction
    ``overlap_rate`` of its tokens are contiguous 6-16-gram slices of those
    heads' sentences (with light synonym-slot substitution noise); the rest
    is filler. Negatives are pure filler. Filler mixes catalog-word soup
    (rate ``soup_rate``) with pseudo-words, so the classes share vocabulary
    and phrase structure does the separating: word-order windows (what the
    conv channels see) carry the signal. Posts are short and dense so that a
    positive's windows genuinely resemble the matched sentences' windows.
    Lengths are drawn on a ``len_step`` grid, which lets equal-length posts
    share batched convolutions downstream. Every post passes ``preprocess``;
    output is byte-identical for identical inputs.
    """
    if n_pos < 1 or n_neg < 1:
        raise ValidationError("need at least one positive and one negative post")
    if not 0.0 <= overlap_rate <= 1.0:
        raise ValidationError("overlap_rate must be in [0, 1]")
    rng = np.random.Generator(np.random.PCG64(seed))
    pseudo = _filler_vocabulary()
    head_sentences = [
        [default_tokenizer(s) for s in head.sentences()] for head in catalog.heads
    ]
    catalog_words = sorted({t for head in head_sentences for s in head for t in s})
    if not catalog_words:
        raise ValidationError("catalog sentences produced no tokens")
    # synonym-slot noise: every catalog word owns two fixed pseudo-word
    # "synonyms", substituted in place so perturbed slots stay consistent
    # (and hence learnable) across the corpus

    def _synonyms(word: str) -> tuple[str, str]:
        digest = hashlib.blake2b(word.encode("utf-8"), digest_size=4).digest()
        base = int.from_bytes(digest, "little")
        return (
            pseudo[base % len(pseudo)] + "n",
            pseudo[(base // len(pseudo)) % len(pseudo)] + "n",
        )

    def filler_chunk() -> list[str]:
        size = int(rng.integers(2, 6))
        if rng.random() < soup_rate:
            return [catalog_words[int(i)] for i in rng.integers(0, len(catalog_words), size)]
        return [pseudo[int(i)] for i in rng.integers(0, len(pseudo), size)]

    def symptom_chunk(head_pool: np.ndarray, chunk_index: int) -> list[str]:
        # rotate through the post's exhibited heads so no single head soaks
        # up the whole overlap budget
        head = head_sentences[int(head_pool[chunk_index % len(head_pool)])]
        sentence = head[int(rng.integers(0, len(head)))]
        if chunk_index == 0:
            # every positive opens with one coherent sentence span
            size = min(len(sentence), 10)
            start = 0
        else:
            size = min(int(rng.integers(4, 11)), len(sentence))
            start = int(rng.integers(0, len(sentence) - size + 1))
        gram = list(sentence[start : start + size])
        for i in range(len(gram)):
            if rng.random() < noise_rate:
                gram[i] = _synonyms(gram[i])[int(rng.integers(0, 2))]
        return gram

    step = max(1, len_step)
    length_grid = list(range(min_len, max_len + 1, step))

    def build_post(i: int, label: int) -> Post:
        target_len = int(length_grid[int(rng.integers(0, len(length_grid)))])
        overlap_budget = int(round(overlap_rate * target_len)) if label == 1 else 0
        n_exhibited = min(int(rng.integers(2, 5)), catalog.n_heads)
        head_pool = rng.choice(catalog.n_heads, size=n_exhibited, replace=False)
        chunks: list[tuple[float, list[str]]] = []
        used_overlap = 0
        used_total = 0
        chunk_index = 0
        while used_overlap < overlap_budget:
            chunk = symptom_chunk(head_pool, chunk_index)
            chunk_index += 1
            chunks.append((rng.random(), chunk))
            used_overlap += len(chunk)
            used_total += len(chunk)
        while used_total < target_len:
            chunk = filler_chunk()
            chunks.append((rng.random(), chunk))
            used_total += len(chunk)
        chunks.sort(key=lambda item: item[0])
        tokens = [t for _, chunk in chunks for t in chunk][:target_len]
        title = " ".join(tokens[:4])
        body = " ".join(tokens[4:])
        tag = "pos" if label == 1 else "neg"
        return Post(id=f"syn-{tag}-{i:05d}", title=title, body=body, label=label,
                    source="synthetic")

    posts = [build_post(i, 1) for i in range(n_pos)]
    posts += [build_post(i, 0) for i in range(n_neg)]
    name = task_name or f"synthetic-{catalog.disorder.lower()}"
    return Corpus(posts=tuple(posts), task_name=name)
