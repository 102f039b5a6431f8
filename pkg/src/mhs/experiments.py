"""Experiment grids: symptom-description swapping and cross-domain transfer.

Grids are declared as JSON specs (see run_experiment_spec) so new disorders
or corpora plug in without code changes. Cells are keyed, never positional,
and may run concurrently; each cell is internally deterministic.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from .catalog import SymptomCatalog, load_catalog
from .corpus import Corpus, load_corpus, stratified_folds_from_labels
from .embedding import FileEmbeddingProvider, HashEmbeddingProvider
from .errors import ValidationError
from .evaluate import EvalReport, evaluate_prepared
from .train import PreparedCorpus, TrainConfig, prepare_corpus, train
from .util import thread_limit


@dataclass
class Task:
    """One named (corpus, catalog, provider) triple."""

    name: str
    corpus: Corpus
    catalog: SymptomCatalog
    provider: object


def _holdout(prepared: PreparedCorpus, folds: int, seed: int) -> tuple[PreparedCorpus, PreparedCorpus]:
    """First stratified fold as test split, remainder as train split."""
    train_idx, test_idx = stratified_folds_from_labels(prepared.labels, folds, seed)[0]
    pick = lambda idx: PreparedCorpus(
        sequences=[prepared.sequences[i] for i in idx], labels=prepared.labels[idx]
    )
    return pick(train_idx), pick(test_idx)


def run_symptom_swap(
    tasks: list[Task],
    catalogs: list[tuple[str, SymptomCatalog]],
    config: TrainConfig,
    folds: int = 5,
    split_seed: int = 0,
) -> dict[tuple[str, str], EvalReport]:
    """Train/evaluate every task with every catalog's symptom descriptions.

    Returns a dict keyed (task_name, catalog_name); the diagonal holds the
    matched-description cells.
    """
    prepared_cache = {
        task.name: prepare_corpus(task.corpus, task.provider) for task in tasks
    }

    def one_cell(task: Task, catalog_name: str, catalog: SymptomCatalog):
        train_prep, test_prep = _holdout(prepared_cache[task.name], folds, split_seed)
        result = train(task.corpus, catalog, task.provider, config, prepared=train_prep)
        report = evaluate_prepared(result.params, test_prep, catalog, task.provider)
        return (task.name, catalog_name), report

    jobs = [(task, name, catalog) for task in tasks for name, catalog in catalogs]
    workers = min(thread_limit(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(lambda job: one_cell(*job), jobs))
    else:
        cells = [one_cell(*job) for job in jobs]
    return dict(cells)


def run_transfer(
    source: Task,
    cells: list[Task],
    config: TrainConfig,
) -> dict[str, EvalReport]:
    """Train on the source corpus, evaluate each cell on its own corpus.

    A cell whose catalog differs from the source's triggers a separate
    training run on the source corpus with that catalog (the
    replaced-descriptions setting); models are trained once per distinct
    (source corpus, catalog) pair.
    """
    source_prep = prepare_corpus(source.corpus, source.provider)
    models: dict[str, object] = {}

    def model_for(catalog: SymptomCatalog):
        key = catalog.fingerprint()
        if key not in models:
            result = train(source.corpus, catalog, source.provider, config,
                           prepared=source_prep)
            models[key] = result.params
        return models[key]

    reports: dict[str, EvalReport] = {}
    for cell in cells:
        catalog = cell.catalog if cell.catalog is not None else source.catalog
        params = model_for(catalog)
        cell_prep = prepare_corpus(cell.corpus, cell.provider)
        reports[cell.name] = evaluate_prepared(params, cell_prep, catalog, cell.provider)
    return reports


# --- declarative spec ----------------------------------------------------------


def _provider_from_spec(spec: dict | None, embeddings_path: str | None):
    if embeddings_path:
        return FileEmbeddingProvider.open(embeddings_path)
    spec = spec or {}
    mode = spec.get("mode", "hash")
    if mode != "hash":
        raise ValidationError("global provider spec must be hash mode or per-task embeddings")
    return HashEmbeddingProvider(dim=int(spec.get("dim", 64)), seed=int(spec.get("seed", 0)))


def _train_config_from_spec(spec: dict | None) -> TrainConfig:
    spec = dict(spec or {})
    known = {f for f in TrainConfig.__dataclass_fields__}
    unknown = set(spec) - known
    if unknown:
        raise ValidationError(f"unknown train config fields: {sorted(unknown)}")
    return replace(TrainConfig(), **spec)


def _load_task(obj: dict, provider_spec: dict | None) -> Task:
    provider = _provider_from_spec(provider_spec, obj.get("embeddings"))
    return Task(
        name=str(obj["name"]),
        corpus=load_corpus(obj["corpus"], task_name=str(obj["name"])),
        catalog=load_catalog(obj["catalog"]) if obj.get("catalog") else None,
        provider=provider,
    )


def run_experiment_spec(spec: dict) -> dict:
    """Execute a JSON experiment spec; returns a JSON-serializable grid."""
    kind = spec.get("experiment")
    provider_spec = spec.get("provider")
    config = _train_config_from_spec(spec.get("train"))

    if kind == "symptom-swap":
        tasks = [_load_task(obj, provider_spec) for obj in spec["tasks"]]
        for task in tasks:
            if task.catalog is None:
                raise ValidationError(f"task {task.name!r} needs a catalog")
        catalogs = [(task.name, task.catalog) for task in tasks]
        grid = run_symptom_swap(
            tasks, catalogs, config,
            folds=int(spec.get("folds", 5)), split_seed=int(spec.get("split_seed", 0)),
        )
        return {
            "experiment": "symptom-swap",
            "cells": [
                {"task": task_name, "catalog": catalog_name, "metrics": report.to_dict()}
                for (task_name, catalog_name), report in sorted(grid.items())
            ],
        }

    if kind == "transfer":
        source = _load_task(spec["source"], provider_spec)
        if source.catalog is None:
            raise ValidationError("transfer source needs a catalog")
        cells = [_load_task(obj, provider_spec) for obj in spec["cells"]]
        reports = run_transfer(source, cells, config)
        return {
            "experiment": "transfer",
            "source": source.name,
            "cells": [
                {"name": name, "metrics": report.to_dict()}
                for name, report in sorted(reports.items())
            ],
        }

    raise ValidationError(f"unknown experiment kind {kind!r}")
