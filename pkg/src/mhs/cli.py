"""Command-line entry point.

Subcommands: gen-synth, train, crossval, eval, experiment, explain, heatmap,
thresholds, gradcheck, params, catalog-validate. Exit codes: 0 success,
1 domain error, 2 usage error. Diagnostics go to stderr; data artifacts go
to files (or stdout). All artifacts are deterministic given the flags and
inputs, and JSON artifacts embed a provenance block.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .catalog import load_catalog
from .corpus import generate_synthetic, load_corpus, save_corpus
from .embedding import FileEmbeddingProvider, HashEmbeddingProvider
from .errors import MhsError
from .evaluate import evaluate
from .experiments import run_experiment_spec
from .gradcheck import run_gradcheck
from .interpret import (
    compute_thresholds,
    explain,
    head_heatmap,
    load_thresholds,
    render_heatmap_png,
    salient_count_distribution,
    save_thresholds,
    write_heatmap_csv,
)
from .model import KERNEL_SIZES, ModelConfig, count_params, load_model, save_model
from .train import DEFAULT_SEEDS, TrainConfig, cross_validate, train
from .util import provenance

VARIANT_FLAGS = {
    "full": "full",
    "single-head": "single_head",
    "one-desc": "one_description",
    "cnn-only": "cnn_only",
}


def _add_provider_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--embeddings", help="EMB1 file with precomputed embeddings")
    p.add_argument("--hash-encoder", action="store_true",
                   help="use the deterministic hash encoder instead of a store")
    p.add_argument("--dim", type=int, default=512, help="hash encoder width")
    p.add_argument("--embedding-seed", type=int, default=0)


def _provider_from_args(args) -> object:
    if args.embeddings and args.hash_encoder:
        raise MhsError("--embeddings and --hash-encoder are mutually exclusive")
    if args.embeddings:
        return FileEmbeddingProvider.open(args.embeddings)
    if args.hash_encoder:
        return HashEmbeddingProvider(dim=args.dim, seed=args.embedding_seed)
    raise MhsError("choose an embedding source: --embeddings <path> or --hash-encoder")


def _write_json(path: str | None, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)


def _cfg(args, drop=("out", "report", "func", "command")) -> dict:
    return {k: v for k, v in vars(args).items() if k not in drop and not callable(v)}


# --- subcommand handlers --------------------------------------------------------


def cmd_gen_synth(args) -> int:
    catalog = load_catalog(args.catalog)
    corpus = generate_synthetic(
        catalog, n_pos=args.n_pos, n_neg=args.n_neg,
        overlap_rate=args.overlap, seed=args.seed,
    )
    save_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} posts to {args.out}", file=sys.stderr)
    return 0


def _train_config_from_args(args) -> TrainConfig:
    return TrainConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        learning_rate=args.lr,
        seed=args.seed,
        variant=VARIANT_FLAGS[args.variant],
        dim=args.dim,
        c1=args.c1,
        c2=args.c2,
    )


def cmd_train(args) -> int:
    catalog = load_catalog(args.catalog)
    corpus = load_corpus(args.corpus)
    provider = _provider_from_args(args)
    config = _train_config_from_args(args)
    result = train(corpus, catalog, provider, config)
    save_model(result.params, args.out)
    print(
        f"trained {config.variant} model on {len(corpus)} posts "
        f"({result.n_rejected} rejected); losses {['%.4f' % l for l in result.epoch_losses]}",
        file=sys.stderr,
    )
    return 0


def cmd_crossval(args) -> int:
    catalog = load_catalog(args.catalog)
    corpus = load_corpus(args.corpus)
    provider = _provider_from_args(args)
    config = _train_config_from_args(args)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    result = cross_validate(corpus, catalog, provider, config, folds=args.folds, seeds=seeds)
    payload = result.to_dict()
    payload["provenance"] = provenance(
        _cfg(args), {"catalog": args.catalog, "corpus": args.corpus}
    )
    _write_json(args.report, payload)
    print(f"F1 {result.f1_mean:.4f} (+/- {result.f1_std:.4f}) over "
          f"{len(result.records)} runs", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    params = load_model(args.model)
    corpus = load_corpus(args.corpus)
    provider = _provider_from_args(args)
    catalog = load_catalog(args.catalog) if args.catalog else None
    report = evaluate(params, corpus, catalog, provider)
    payload = report.to_dict()
    payload["provenance"] = provenance(
        _cfg(args), {"model": args.model, "corpus": args.corpus}
    )
    _write_json(args.out, payload)
    headline = report.weighted_f1 if args.weighted_f1 else report.f1
    metric = "weighted F1" if args.weighted_f1 else "F1"
    print(f"{metric} {headline:.4f}, AUC {report.auc}", file=sys.stderr)
    return 0


def cmd_experiment(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as f:
        spec = json.load(f)
    payload = run_experiment_spec(spec)
    payload["provenance"] = provenance(_cfg(args), {"spec": args.spec})
    _write_json(args.out, payload)
    return 0


def cmd_thresholds(args) -> int:
    params = load_model(args.model)
    corpus = load_corpus(args.corpus)
    provider = _provider_from_args(args)
    thresholds = compute_thresholds(
        params, corpus, None, provider, percentile=args.percentile,
        reference_descriptor=args.corpus,
    )
    save_thresholds(
        thresholds, args.out,
        provenance=provenance(_cfg(args), {"model": args.model, "corpus": args.corpus}),
    )
    print(f"thresholds over {thresholds.n_reference} true positives", file=sys.stderr)
    return 0


def cmd_explain(args) -> int:
    params = load_model(args.model)
    provider = _provider_from_args(args)
    thresholds = load_thresholds(args.thresholds)
    if (args.text is None) == (args.corpus is None):
        raise MhsError("pass exactly one of --text or --corpus")
    if args.text is not None:
        result = explain(params, args.text, None, provider, thresholds, text_id="cli-text")
        payload = result.to_dict()
    else:
        corpus = load_corpus(args.corpus)
        explanations = []
        for post in corpus.posts:
            explanations.append(
                explain(params, post.text(), None, provider, thresholds,
                        text_id=post.id).to_dict()
            )
        payload = {"explanations": explanations}
    payload["provenance"] = provenance(_cfg(args), {"model": args.model})
    _write_json(args.out, payload)
    return 0


def cmd_heatmap(args) -> int:
    params = load_model(args.model)
    corpus = load_corpus(args.corpus)
    provider = _provider_from_args(args)
    head_ids, matrix = head_heatmap(params, corpus, None, provider)
    write_heatmap_csv(args.out, head_ids, matrix)
    # CSV column layout is pinned, so provenance rides in a sidecar file
    _write_json(args.out + ".prov.json",
                provenance(_cfg(args), {"model": args.model, "corpus": args.corpus}))
    if args.png:
        render_heatmap_png(args.png, head_ids, matrix)
    return 0


def cmd_salient(args) -> int:
    params = load_model(args.model)
    corpus = load_corpus(args.corpus)
    provider = _provider_from_args(args)
    thresholds = load_thresholds(args.thresholds)
    dist = salient_count_distribution(params, corpus, None, provider, thresholds)
    payload = {
        "buckets": [
            {"count": count, "frequency": freq, "mean_positive_probability": prob}
            for count, (freq, prob) in sorted(dist.items())
        ],
        "provenance": provenance(_cfg(args), {"model": args.model, "corpus": args.corpus}),
    }
    _write_json(args.out, payload)
    return 0


def cmd_gradcheck(args) -> int:
    failures = 0
    for seed in range(args.seed, args.seed + args.repeats):
        rows = run_gradcheck(
            seed=seed, dim=args.d, c1=args.c1, c2=args.c2,
            n_heads=args.heads, sentences_per_head=args.sentences,
        )
        for row in rows:
            status = "PASS" if row.passed else "FAIL"
            print(f"seed={seed} {row.tensor:<12} max_rel_err={row.max_rel_err:.3e} {status}")
            failures += 0 if row.passed else 1
    if failures:
        print(f"{failures} tensor(s) failed", file=sys.stderr)
        return 1
    return 0


def cmd_params(args) -> int:
    config = ModelConfig(
        dim=args.dim, c1=args.c1, c2=args.c2, n_heads=args.heads,
        variant=VARIANT_FLAGS[args.variant], kernels=KERNEL_SIZES,
    )
    print(count_params(config))
    return 0


def cmd_catalog_validate(args) -> int:
    catalog = load_catalog(args.path)
    print(f"{catalog.n_heads} heads, OK")
    return 0


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mhs",
        description="Symptom-grounded siamese text classifier: train, evaluate, interpret.",
    )
    parser.add_argument("--version", action="version", version=f"mhs {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a deterministic synthetic corpus")
    p.add_argument("--catalog", required=True)
    p.add_argument("--n-pos", type=int, required=True)
    p.add_argument("--n-neg", type=int, required=True)
    p.add_argument("--overlap", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)

    def add_train_flags(p):
        p.add_argument("--catalog", required=True)
        p.add_argument("--corpus", required=True)
        _add_provider_flags(p)
        p.add_argument("--variant", choices=sorted(VARIANT_FLAGS), default="full")
        p.add_argument("--epochs", type=int, default=5)
        p.add_argument("--lr", type=float, default=1e-5)
        p.add_argument("--batch-size", type=int, default=8)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--c1", type=int, default=100)
        p.add_argument("--c2", type=int, default=100)

    p = sub.add_parser("train", help="train one model")
    add_train_flags(p)
    p.add_argument("--out", required=True, help="output model path (.mhsm)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("crossval", help="k-fold x multi-seed evaluation")
    add_train_flags(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seeds", default=",".join(str(s) for s in DEFAULT_SEEDS))
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("eval", help="evaluate a saved model on a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--catalog", help="override the catalog stored in the model")
    _add_provider_flags(p)
    p.add_argument("--weighted-f1", action="store_true",
                   help="report weighted F1 as the headline metric")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run a declarative experiment grid")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("thresholds", help="salient-symptom thresholds from true positives")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    _add_provider_flags(p)
    p.add_argument("--percentile", type=float, default=70.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_thresholds)

    p = sub.add_parser("explain", help="per-text symptom explanation")
    p.add_argument("--model", required=True)
    p.add_argument("--thresholds", required=True)
    p.add_argument("--text")
    p.add_argument("--corpus")
    _add_provider_flags(p)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("heatmap", help="per-class mean head distances as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    _add_provider_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--png", help="optionally also render an image (needs matplotlib)")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("salient", help="salient-count distribution over true positives")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--thresholds", required=True)
    _add_provider_flags(p)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_salient)

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--c1", type=int, default=4)
    p.add_argument("--c2", type=int, default=4)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--sentences", type=int, default=2)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="closed-form trainable parameter count")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--c1", type=int, required=True)
    p.add_argument("--c2", type=int, required=True)
    p.add_argument("--heads", type=int, required=True)
    p.add_argument("--variant", choices=sorted(VARIANT_FLAGS), default="full")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("catalog-validate", help="validate a catalog JSON file")
    p.add_argument("path")
    p.set_defaults(func=cmd_catalog_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MhsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
