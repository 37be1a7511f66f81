"""End-to-end captioning, translation, and evaluation runs.

A run writes one directory: ``config.json``, ``manifest.jsonl``,
``captions.jsonl``, and (after evaluation) ``metrics.json`` and
``report.txt``. Every output embeds the resolved configuration, and the
manifest carries enough state (pool, walk scores, prompt spec, raw backend
response) to replay any prompt byte-identically.

Per-image failures are recorded and skipped rather than aborting the run;
long runs against hosted models must survive transient errors.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable

from . import graph as graph_mod
from .errors import SkycapError, UnknownIdError
from .gateway import (
    DecodeParams,
    GenerationRequest,
    HttpGateway,
    ImagePayload,
    MockGateway,
)
from .languages import SUPPORTED_LANGUAGES, check_language, language_name
from .metrics import (
    AttributionCounts,
    LanguageMetrics,
    MetricReport,
    OverlapStats,
    bleu,
    cider_d,
    ngram_overlap,
    prompt_attribution,
    ref_siglip_score,
    tokenize,
)
from .pool import CandidatePool, PoolCaption, assemble_pool
from .prompts import (
    MODE_IMAGE_AWARE,
    MODE_IMAGE_BLIND,
    MODE_NO_RETRIEVAL,
    PromptSpec,
    SelectionResult,
    english_gold_resolver,
    make_prompt_spec,
    render_translation_prompt,
    select_prompt_content,
)
from .store import Datastore, build_datastore

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

MODE_ALIASES = {
    "blind": MODE_IMAGE_BLIND,
    "aware": MODE_IMAGE_AWARE,
    "baseline": MODE_NO_RETRIEVAL,
}


@dataclass
class RunConfig:
    """Resolved settings for a captioning or evaluation run."""

    image_vectors: str = ""
    caption_vectors: str = ""
    metadata: str = ""
    translations: str = ""
    pool_size: int = 10
    n_examples: int = 3
    k_captions: int = 3
    alpha: float = 0.9
    mode: str = "blind"
    pagerank_enabled: bool = True
    languages: list[str] = field(default_factory=lambda: ["en"])
    backend_url: str = ""
    model: str = ""
    embedding_model: str = ""
    api_key_env: str = ""
    mock: bool = False
    output_dir: str = "run"
    generate_then_translate: bool = False
    query_split: str = "test"
    retrieval_splits: list[str] = field(default_factory=lambda: ["train"])
    num_beams: int = 3
    max_new_tokens: int = 60
    max_images: int = 0          # 0 = no limit
    max_workers: int = 1
    timeout: float = 60.0

    def validate(self) -> "RunConfig":
        if self.mode not in MODE_ALIASES:
            raise ValueError(f"mode must be one of {sorted(MODE_ALIASES)}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.n_examples > self.pool_size:
            raise ValueError("n_examples cannot exceed pool_size")
        if self.k_captions > self.pool_size:
            raise ValueError("k_captions cannot exceed pool_size")
        unknown = set(self.languages) - SUPPORTED_LANGUAGES
        if unknown:
            raise ValueError(f"unsupported languages: {sorted(unknown)}")
        if not self.mock and not self.backend_url:
            raise ValueError("either --mock or --backend-url is required")
        return self

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_toml(cls, path: str | Path) -> "RunConfig":
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def load_store(config: RunConfig) -> Datastore:
    return build_datastore(
        config.image_vectors,
        config.caption_vectors,
        config.metadata,
        config.translations or None,
    )


def make_gateway(config: RunConfig, store_dim: int):
    if config.mock:
        return MockGateway(dim=store_dim)
    return HttpGateway(
        base_url=config.backend_url,
        model=config.model,
        embedding_model=config.embedding_model,
        api_key_env=config.api_key_env,
        timeout=config.timeout,
    )


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


# -- captioning ---------------------------------------------------------------


def _gold_resolver(store: Datastore, language: str):
    if language == "en":
        return english_gold_resolver

    def resolver(candidate: PoolCaption):
        translated = store.translations.get(candidate.caption_id, language)
        if translated is None:
            return None
        return (candidate.text, translated)

    return resolver


def _image_payload(store: Datastore, image_id: str) -> ImagePayload:
    ref = store.images[image_id].image_ref
    path = Path(ref)
    if not path.is_file():
        raise SkycapError(f"image file not found: {ref!r}")
    media_type = mimetypes.guess_type(ref)[0] or "image/png"
    return ImagePayload(media_type=media_type, data=path.read_bytes())


def _scores_json(scores, node_map) -> dict:
    return {
        f"{namespace}:{source_id}": float(scores.values[idx])
        for (namespace, source_id), idx in node_map.items()
    }


@dataclass
class ImageOutcome:
    image_id: str
    language: str
    record: dict
    caption: str | None
    error: str | None = None


def caption_image(
    store: Datastore,
    gateway,
    config: RunConfig,
    image_id: str,
    language: str,
) -> ImageOutcome:
    """Run the full per-image pipeline for one (image, language) pair."""
    mode = MODE_ALIASES[config.mode]
    prompt_language = (
        "en" if (config.generate_then_translate and language != "en") else language
    )
    query = store.image_embedding(image_id)
    record: dict = {"query_image_id": image_id, "language": language, "mode": mode}

    pool_json = None
    rank_json = None
    selection_json = None
    if mode == MODE_NO_RETRIEVAL:
        spec = make_prompt_spec(mode, prompt_language)
    else:
        pool = assemble_pool(
            store,
            query,
            pool_size=config.pool_size,
            split_filter=tuple(config.retrieval_splits),
            query_image_id=image_id,
        )
        if config.pagerank_enabled:
            nodes, node_map = graph_mod.pool_nodes(store, query, pool)
            rank_graph = graph_mod.build_rank_graph(nodes, config.alpha)
            scores = graph_mod.pagerank(rank_graph)
            pool = graph_mod.rerank_pool(pool, scores, node_map)
            rank_json = {
                "scores": _scores_json(scores, node_map),
                "iterations": scores.iterations,
                "residual": scores.residual,
            }
        selection = select_prompt_content(
            pool,
            config.n_examples,
            config.k_captions,
            _gold_resolver(store, prompt_language),
        )
        spec = make_prompt_spec(mode, prompt_language, selection)
        pool_json = pool.to_json()
        selection_json = {
            "combination": list(selection.combination),
            "n_requested": selection.n_requested,
            "n_effective": selection.n_effective,
            "degraded": selection.degraded,
        }

    decode = DecodeParams(
        num_beams=config.num_beams,
        max_new_tokens=config.max_new_tokens,
        deterministic=True,
    )
    request = GenerationRequest(
        prompt=spec.rendered,
        model_name=config.model,
        target_language=prompt_language,
        image_payload=(
            _image_payload(store, image_id) if mode != MODE_IMAGE_BLIND else None
        ),
        decode=decode,
    )
    result = (
        gateway.complete(request)
        if mode == MODE_IMAGE_BLIND
        else gateway.complete_multimodal(request)
    )
    caption = result.text

    translation_json = None
    if config.generate_then_translate and language != "en":
        translation_prompt = render_translation_prompt(
            caption, language_name(language)
        )
        translation = gateway.complete(
            GenerationRequest(
                prompt=translation_prompt,
                model_name=config.model,
                target_language=language,
                decode=decode,
            )
        )
        translation_json = {
            "english_caption": caption,
            "prompt": translation_prompt,
            "text": translation.text,
            "backend_id": translation.backend_id,
            "attempts": translation.attempts,
        }
        caption = translation.text

    record.update(
        {
            "pool": pool_json,
            "pagerank": rank_json,
            "selection": selection_json,
            "prompt": spec.to_json(),
            "generation": {
                "text": result.text,
                "backend_id": result.backend_id,
                "latency_ms": result.latency_ms,
                "attempts": result.attempts,
                "raw_response": result.raw_response,
            },
            "translation": translation_json,
            "caption": caption,
        }
    )
    return ImageOutcome(image_id=image_id, language=language, record=record, caption=caption)


@dataclass
class RunSummary:
    output_dir: str
    images: int
    captions_written: int
    failures: int


def run_caption(config: RunConfig, store: Datastore | None = None) -> RunSummary:
    """Caption every query-split image in every configured language."""
    config.validate()
    store = store if store is not None else load_store(config)
    gateway = make_gateway(config, store.dim)

    image_ids = store.image_ids(split=config.query_split)
    if config.max_images:
        image_ids = image_ids[: config.max_images]
    tasks = [(iid, lang) for iid in image_ids for lang in config.languages]

    def work(task: tuple[str, str]) -> ImageOutcome:
        image_id, language = task
        try:
            return caption_image(store, gateway, config, image_id, language)
        except SkycapError as exc:
            logger.warning("captioning failed for %s/%s: %s", image_id, language, exc)
            return ImageOutcome(
                image_id=image_id,
                language=language,
                record={
                    "query_image_id": image_id,
                    "language": language,
                    "error": str(exc),
                },
                caption=None,
                error=str(exc),
            )

    if config.max_workers > 1:
        with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
            outcomes = list(pool.map(work, tasks))
    else:
        outcomes = [work(task) for task in tasks]
    outcomes.sort(key=lambda o: (o.image_id, o.language))

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_json = config.to_json()
    (out_dir / "config.json").write_text(_dump(config_json) + "\n", encoding="utf-8")

    with open(out_dir / "manifest.jsonl", "w", encoding="utf-8") as fh:
        fh.write(_dump({"config": config_json}) + "\n")
        for outcome in outcomes:
            fh.write(_dump(outcome.record) + "\n")
    written = 0
    with open(out_dir / "captions.jsonl", "w", encoding="utf-8") as fh:
        fh.write(_dump({"config": config_json}) + "\n")
        for outcome in outcomes:
            if outcome.caption is None:
                continue
            fh.write(
                _dump(
                    {
                        "image_id": outcome.image_id,
                        "language": outcome.language,
                        "caption": outcome.caption,
                    }
                )
                + "\n"
            )
            written += 1
    failures = sum(1 for o in outcomes if o.error is not None)
    return RunSummary(
        output_dir=str(out_dir),
        images=len(image_ids),
        captions_written=written,
        failures=failures,
    )


# -- translation --------------------------------------------------------------


@dataclass
class TranslateSummary:
    rows_written: int
    rows_skipped: int
    failures: int


def run_translate(
    config: RunConfig,
    languages: Iterable[str],
    out_path: str | Path,
    store: Datastore | None = None,
    split: str | None = None,
) -> TranslateSummary:
    """Populate a translations JSONL for the requested languages.

    Resumable: rows already present in ``out_path`` are skipped, so an
    interrupted run can simply be restarted.
    """
    config.validate()
    store = store if store is not None else load_store(config)
    gateway = make_gateway(config, store.dim)
    targets = [check_language(lang) for lang in languages]
    if "en" in targets:
        raise ValueError("datastore captions are already English")

    out_path = Path(out_path)
    existing: set[tuple[str, str]] = set()
    if out_path.exists():
        with open(out_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                existing.add((row["caption_id"], row["language"]))

    decode = DecodeParams(num_beams=config.num_beams, max_new_tokens=config.max_new_tokens)
    written = skipped = failures = 0
    with open(out_path, "a", encoding="utf-8") as fh:
        for caption_id in sorted(store.captions):
            record = store.captions[caption_id]
            if split is not None and record.split != split:
                continue
            for lang in targets:
                if (caption_id, lang) in existing:
                    skipped += 1
                    continue
                prompt = render_translation_prompt(record.text, language_name(lang))
                try:
                    result = gateway.complete(
                        GenerationRequest(
                            prompt=prompt, model_name=config.model,
                            target_language=lang, decode=decode,
                        )
                    )
                except SkycapError as exc:
                    logger.warning(
                        "translation failed for %s/%s: %s", caption_id, lang, exc
                    )
                    failures += 1
                    continue
                fh.write(
                    _dump(
                        {
                            "caption_id": caption_id,
                            "language": lang,
                            "text": result.text,
                        }
                    )
                    + "\n"
                )
                fh.flush()
                written += 1
    return TranslateSummary(rows_written=written, rows_skipped=skipped, failures=failures)


# -- evaluation ---------------------------------------------------------------


def _load_run_records(run_dir: Path, name: str) -> tuple[dict, list[dict]]:
    path = run_dir / name
    records = []
    config: dict = {}
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            if i == 0 and "config" in row:
                config = row["config"]
                continue
            records.append(row)
    return config, records


def _reference_texts(store: Datastore, image_id: str, language: str) -> list[str]:
    try:
        image = store.images[image_id]
    except KeyError:
        raise UnknownIdError(
            f"captions file references unknown image_id {image_id!r}"
        ) from None
    texts = []
    for caption_id in image.caption_ids:
        if language == "en":
            texts.append(store.captions[caption_id].text)
        else:
            translated = store.translations.get(caption_id, language)
            if translated is None:
                raise SkycapError(
                    f"missing {language} reference translation for {caption_id!r}"
                )
            texts.append(translated)
    return texts


def _prompt_caption_texts(prompt_json: dict) -> list[str]:
    texts = list(prompt_json.get("input_captions", []))
    for example in prompt_json.get("examples", []):
        texts.extend(example.get("retrieved_captions", []))
        gold = example.get("gold_caption")
        if gold:
            texts.append(gold)
    return texts


def run_evaluate(
    config: RunConfig,
    run_dir: str | Path,
    store: Datastore | None = None,
    with_overlap: bool = False,
    with_attribution: bool = False,
) -> MetricReport:
    """Score a finished captioning run and write metrics.json + report.txt."""
    store = store if store is not None else load_store(config)
    run_dir = Path(run_dir)
    _, caption_rows = _load_run_records(run_dir, "captions.jsonl")
    if not caption_rows:
        raise SkycapError(f"{run_dir}/captions.jsonl holds no captions")

    gateway = None
    if config.mock or config.backend_url:
        gateway = make_gateway(config, store.dim)

    manifest_by_key: dict[tuple[str, str], dict] = {}
    if with_overlap or with_attribution:
        _, manifest_rows = _load_run_records(run_dir, "manifest.jsonl")
        for row in manifest_rows:
            if "prompt" in row:
                manifest_by_key[(row["query_image_id"], row["language"])] = row

    by_language: dict[str, list[dict]] = {}
    for row in caption_rows:
        by_language.setdefault(row["language"], []).append(row)

    per_language: dict[str, LanguageMetrics] = {}
    overlap_stats: dict[str, OverlapStats] = {}
    attribution_stats: dict[str, AttributionCounts] = {}
    for language, rows in sorted(by_language.items()):
        rows = sorted(rows, key=lambda r: r["image_id"])
        candidates = []
        references = []
        for row in rows:
            candidates.append(tokenize(row["caption"], language).tokens)
            references.append(
                [
                    tokenize(text, language).tokens
                    for text in _reference_texts(store, row["image_id"], language)
                ]
            )
        bleu1 = bleu(candidates, references, max_n=1)
        bleu4 = bleu(candidates, references, max_n=4)
        cider = cider_d(candidates, references)

        siglip = None
        if gateway is not None:
            caption_embs = gateway.embed_remote([row["caption"] for row in rows])
            values = []
            for row, caption_emb in zip(rows, caption_embs):
                image_emb = store.image_embedding(row["image_id"])
                reference_embs = [
                    store.caption_embedding(cid)
                    for cid in store.images[row["image_id"]].caption_ids
                ]
                values.append(
                    ref_siglip_score(caption_emb, image_emb, reference_embs)
                )
            siglip = sum(values) / len(values)
        per_language[language] = LanguageMetrics(
            bleu1=bleu1, bleu4=bleu4, cider_d=cider, ref_siglip=siglip
        )

        if with_overlap or with_attribution:
            p1s, p4s, r1s, r4s = [], [], [], []
            attribution_total = AttributionCounts()
            for row in rows:
                manifest = manifest_by_key.get((row["image_id"], language))
                if manifest is None:
                    continue
                prompt_texts = _prompt_caption_texts(manifest["prompt"])
                prompt_tokens = [
                    tokenize(text, language).tokens for text in prompt_texts
                ]
                reference_tokens = [
                    tokenize(text, language).tokens
                    for text in _reference_texts(store, row["image_id"], language)
                ]
                if with_overlap:
                    p1, r1 = ngram_overlap(prompt_tokens, reference_tokens, 1)
                    p4, r4 = ngram_overlap(prompt_tokens, reference_tokens, 4)
                    p1s.append(p1)
                    p4s.append(p4)
                    r1s.append(r1)
                    r4s.append(r4)
                if with_attribution:
                    attribution_total = attribution_total + prompt_attribution(
                        tokenize(row["caption"], language).tokens,
                        reference_tokens,
                        prompt_tokens,
                    )
            if with_overlap and p1s:
                overlap_stats[language] = OverlapStats(
                    p1=sum(p1s) / len(p1s),
                    p4=sum(p4s) / len(p4s),
                    r1=sum(r1s) / len(r1s),
                    r4=sum(r4s) / len(r4s),
                )
            if with_attribution:
                attribution_stats[language] = attribution_total

    report = MetricReport(
        per_language=per_language,
        overlap=overlap_stats if with_overlap else None,
        attribution=attribution_stats if with_attribution else None,
    )
    config_json = config.to_json()
    metrics_payload = {"config": config_json, "metrics": report.to_json()}
    (run_dir / "metrics.json").write_text(
        _dump(metrics_payload) + "\n", encoding="utf-8"
    )
    table = report.render_table()
    header = "# config: " + _dump(config_json) + "\n"
    (run_dir / "report.txt").write_text(header + table, encoding="utf-8")
    return report
