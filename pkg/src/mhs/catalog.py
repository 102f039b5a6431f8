"""Symptom catalogs: per-disorder heads of diagnostic criteria and self-test questions.

A catalog fixes the head set of a model: head order defines the head index,
and each head carries one criterion sentence plus zero or more question
sentences. Four catalogs (MDD, BIPOLAR, GAD, BPD) ship with the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

from .errors import ParseError, ValidationError
from .util import canonical_json, sha256_text

BUILTIN_DISORDERS = ("mdd", "bipolar", "gad", "bpd")


@dataclass(frozen=True)
class SymptomHead:
    """One symptom: a short id, its diagnostic criterion, and related questions."""

    id: str
    criterion: str
    questions: tuple[str, ...] = ()

    def sentences(self) -> list[str]:
        """Criterion first, then questions, in file order."""
        return [self.criterion, *self.questions]


@dataclass(frozen=True)
class SymptomCatalog:
    """Ordered head set for one disorder. Immutable after construction."""

    disorder: str
    heads: tuple[SymptomHead, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.heads:
            raise ValidationError(f"catalog {self.disorder!r} has zero heads")
        seen = set()
        for head in self.heads:
            if not head.id:
                raise ValidationError("head with empty id")
            if head.id in seen:
                raise ValidationError(f"duplicate head id {head.id!r}")
            seen.add(head.id)
            if not head.criterion.strip():
                raise ValidationError(f"head {head.id!r} has an empty criterion")

    @property
    def n_heads(self) -> int:
        return len(self.heads)

    def head_index(self, head_id: str) -> int:
        for i, head in enumerate(self.heads):
            if head.id == head_id:
                return i
        raise KeyError(head_id)

    def sentence_count(self) -> int:
        return sum(len(h.sentences()) for h in self.heads)

    def to_dict(self) -> dict:
        return {
            "disorder": self.disorder,
            "heads": [
                {"id": h.id, "criterion": h.criterion, "questions": list(h.questions)}
                for h in self.heads
            ],
        }

    def fingerprint(self) -> str:
        """Content hash used to bind saved models to their catalog."""
        return sha256_text(canonical_json(self.to_dict()))


def catalog_from_dict(data: dict) -> SymptomCatalog:
    if not isinstance(data, dict) or "heads" not in data:
        raise ParseError("catalog object must have 'disorder' and 'heads' fields")
    heads = []
    raw_heads = data["heads"]
    if not isinstance(raw_heads, list):
        raise ParseError("'heads' must be a list")
    for raw in raw_heads:
        try:
            heads.append(
                SymptomHead(
                    id=str(raw["id"]),
                    criterion=str(raw["criterion"]),
                    questions=tuple(str(q) for q in raw.get("questions", [])),
                )
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed head entry: {raw!r}") from exc
    return SymptomCatalog(disorder=str(data.get("disorder", "unknown")), heads=tuple(heads))


def load_catalog(path: str) -> SymptomCatalog:
    """Load and validate a catalog JSON file. Head order equals file order."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON: {exc}") from exc
    return catalog_from_dict(data)


def load_builtin_catalog(name: str) -> SymptomCatalog:
    """Load one of the shipped catalogs by disorder name (case-insensitive)."""
    key = name.lower()
    if key not in BUILTIN_DISORDERS:
        raise ValidationError(f"no builtin catalog {name!r}; choose from {BUILTIN_DISORDERS}")
    text = resources.files("mhs").joinpath(f"catalogs/{key}.json").read_text("utf-8")
    return catalog_from_dict(json.loads(text))


def save_catalog(catalog: SymptomCatalog, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(catalog.to_dict(), f, ensure_ascii=False, indent=2)
        f.write("\n")


def head_sentences(catalog: SymptomCatalog, i: int) -> list[str]:
    """Sentences of head i: [criterion, q_1, ..., q_{m-1}]."""
    if not 0 <= i < catalog.n_heads:
        raise IndexError(f"head index {i} out of range for {catalog.n_heads} heads")
    return catalog.heads[i].sentences()


def restrict_to_first_sentence(catalog: SymptomCatalog) -> SymptomCatalog:
    """Ablation helper: keep only the criterion sentence of every head."""
    return SymptomCatalog(
        disorder=catalog.disorder,
        heads=tuple(
            SymptomHead(id=h.id, criterion=h.criterion, questions=()) for h in catalog.heads
        ),
    )


def merge_to_single_head(catalog: SymptomCatalog) -> SymptomCatalog:
    """Ablation helper: pool all sentences from all heads into one head."""
    if catalog.n_heads == 1:
        return catalog
    sentences: list[str] = []
    for head in catalog.heads:
        sentences.extend(head.sentences())
    merged = SymptomHead(id="ALL", criterion=sentences[0], questions=tuple(sentences[1:]))
    return SymptomCatalog(disorder=catalog.disorder, heads=(merged,))
