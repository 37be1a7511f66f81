"""Command-line interface: ingest, translate, caption, evaluate."""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .errors import SkycapError
from .run import (
    MODE_ALIASES,
    RunConfig,
    load_store,
    run_caption,
    run_evaluate,
    run_translate,
)
from .store import build_datastore


def _add_store_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--images", help="image vector file (EVEC)")
    parser.add_argument("--captions", help="caption vector file (EVEC)")
    parser.add_argument("--metadata", help="metadata file (JSON Lines)")
    parser.add_argument("--translations", help="translations file (JSON Lines)")


def _add_backend_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend-url", default="", help="chat-completion service base URL")
    parser.add_argument("--model", default="", help="model name sent to the backend")
    parser.add_argument("--embedding-model", default="", help="embedding model name")
    parser.add_argument("--api-key-env", default="", help="env var holding the bearer token")
    parser.add_argument(
        "--mock", action="store_true", help="use the deterministic offline mocks"
    )


def _split_languages(values: list[str] | None) -> list[str]:
    languages: list[str] = []
    for value in values or []:
        languages.extend(part for part in value.split(",") if part)
    return languages


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skycap",
        description=(
            "Training-free retrieval-augmented captioning for aerial imagery: "
            "ingest an embedding datastore, translate gold captions, run "
            "captioning with graph re-ranking, and evaluate the results."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="validate and summarize a datastore")
    _add_store_args(p_ingest)

    p_translate = sub.add_parser("translate", help="populate a translation table")
    _add_store_args(p_translate)
    _add_backend_args(p_translate)
    p_translate.add_argument(
        "--language", action="append", help="target language code (repeatable or comma-separated)"
    )
    p_translate.add_argument("--out", required=True, help="output translations JSONL")
    p_translate.add_argument("--split", default=None, help="restrict to one split")

    p_caption = sub.add_parser("caption", help="caption the query-split images")
    _add_store_args(p_caption)
    _add_backend_args(p_caption)
    p_caption.add_argument("--config", help="TOML config file (flags override it)")
    p_caption.add_argument("--out", help="output run directory")
    p_caption.add_argument("--pool-size", type=int, help="retrieval pool size")
    p_caption.add_argument("--n", type=int, help="few-shot examples per prompt")
    p_caption.add_argument("--k", type=int, help="captions per example and input")
    p_caption.add_argument("--alpha", type=float, help="walk damping factor")
    p_caption.add_argument("--mode", choices=sorted(MODE_ALIASES), help="prompt mode")
    p_caption.add_argument(
        "--no-pagerank",
        action="store_true",
        help="keep pure similarity ordering (skip graph re-ranking)",
    )
    p_caption.add_argument(
        "--language", action="append", help="target language code (repeatable or comma-separated)"
    )
    p_caption.add_argument(
        "--generate-then-translate",
        action="store_true",
        help="generate English captions and translate them afterwards",
    )
    p_caption.add_argument("--query-split", help="split holding the query images")
    p_caption.add_argument("--max-images", type=int, help="cap the number of query images")
    p_caption.add_argument("--max-workers", type=int, help="parallel per-image pipelines")

    p_eval = sub.add_parser("evaluate", help="score a finished captioning run")
    _add_store_args(p_eval)
    _add_backend_args(p_eval)
    p_eval.add_argument("--run", required=True, help="run directory with captions.jsonl")
    p_eval.add_argument("--overlap", action="store_true", help="add prompt-reference overlap")
    p_eval.add_argument(
        "--attribution", action="store_true", help="add generated 1-gram attribution"
    )
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    config = (
        RunConfig.from_toml(args.config)
        if getattr(args, "config", None)
        else RunConfig()
    )
    overrides = {
        "image_vectors": getattr(args, "images", None),
        "caption_vectors": getattr(args, "captions", None),
        "metadata": getattr(args, "metadata", None),
        "translations": getattr(args, "translations", None),
        "backend_url": getattr(args, "backend_url", None) or None,
        "model": getattr(args, "model", None) or None,
        "embedding_model": getattr(args, "embedding_model", None) or None,
        "api_key_env": getattr(args, "api_key_env", None) or None,
        "pool_size": getattr(args, "pool_size", None),
        "n_examples": getattr(args, "n", None),
        "k_captions": getattr(args, "k", None),
        "alpha": getattr(args, "alpha", None),
        "mode": getattr(args, "mode", None),
        "output_dir": getattr(args, "out", None),
        "query_split": getattr(args, "query_split", None),
        "max_images": getattr(args, "max_images", None),
        "max_workers": getattr(args, "max_workers", None),
    }
    for name, value in overrides.items():
        if value is not None:
            setattr(config, name, value)
    if getattr(args, "mock", False):
        config.mock = True
    if getattr(args, "no_pagerank", False):
        config.pagerank_enabled = False
    if getattr(args, "generate_then_translate", False):
        config.generate_then_translate = True
    languages = _split_languages(getattr(args, "language", None))
    if languages:
        config.languages = languages
    return config


def _require_store_paths(config: RunConfig) -> None:
    missing = [
        flag
        for flag, value in (
            ("--images", config.image_vectors),
            ("--captions", config.caption_vectors),
            ("--metadata", config.metadata),
        )
        if not value
    ]
    if missing:
        raise SkycapError(f"missing required store files: {', '.join(missing)}")


def cmd_ingest(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    _require_store_paths(config)
    store = build_datastore(
        config.image_vectors,
        config.caption_vectors,
        config.metadata,
        config.translations or None,
    )
    counts = store.split_counts()
    print(f"dim: {store.dim}")
    print(
        f"images: {store.image_count} "
        f"(train {counts['images']['train']}, val {counts['images']['val']}, "
        f"test {counts['images']['test']})"
    )
    print(
        f"captions: {store.caption_count} "
        f"(train {counts['captions']['train']}, val {counts['captions']['val']}, "
        f"test {counts['captions']['test']})"
    )
    if len(store.translations):
        print(
            f"translations: {len(store.translations)} entries, "
            f"{len(store.translations.languages())} languages"
        )
    return 0


def cmd_translate(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    _require_store_paths(config)
    languages = _split_languages(args.language)
    if not languages:
        raise SkycapError("at least one --language is required")
    summary = run_translate(config, languages, args.out, split=args.split)
    print(
        f"translations written: {summary.rows_written} "
        f"(skipped {summary.rows_skipped}, failed {summary.failures})"
    )
    return 0 if summary.failures == 0 else 1


def cmd_caption(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    _require_store_paths(config)
    summary = run_caption(config)
    print(
        f"captioned {summary.images} images -> {summary.captions_written} captions "
        f"({summary.failures} failures) in {summary.output_dir}"
    )
    return 0 if summary.failures == 0 else 1


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    _require_store_paths(config)
    store = load_store(config)
    report = run_evaluate(
        config,
        args.run,
        store=store,
        with_overlap=args.overlap,
        with_attribution=args.attribution,
    )
    print(report.render_table(), end="")
    return 0


_COMMANDS = {
    "ingest": cmd_ingest,
    "translate": cmd_translate,
    "caption": cmd_caption,
    "evaluate": cmd_evaluate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: no such file", file=sys.stderr)
        return 2
    except (SkycapError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
