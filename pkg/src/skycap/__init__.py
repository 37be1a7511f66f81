"""Training-free retrieval-augmented captioning for aerial imagery.

Given a query image embedding, retrieve related captions and few-shot
examples from an embedding datastore, re-rank them with a personalized
damped random walk over a similarity graph, assemble a repetition-free
multilingual prompt, obtain a caption from a chat-completion backend (or a
deterministic mock), and evaluate outputs with BLEU, CIDEr-D,
RefSigLIPScore, and prompt-overlap diagnostics.
"""

from .errors import SkycapError
from .gateway import (
    DecodeParams,
    EchoCaptionBackend,
    GenerationRequest,
    GenerationResult,
    HashEmbedderBackend,
    HttpGateway,
    ImagePayload,
    MockGateway,
)
from .graph import (
    GraphNode,
    RankGraph,
    RankScores,
    build_rank_graph,
    pagerank,
    pagerank_oracle,
    pool_nodes,
    rerank_pool,
)
from .metrics import (
    AttributionCounts,
    MetricReport,
    TokenizedCaption,
    bleu,
    cider_d,
    ngram_overlap,
    prompt_attribution,
    ref_siglip_score,
    tokenize,
)
from .pool import CandidatePool, PoolCaption, PoolImage, assemble_pool
from .prompts import (
    FewShotExample,
    PromptSpec,
    SelectionResult,
    make_prompt_spec,
    render_baseline_prompt,
    render_caption_prompt,
    render_translation_prompt,
    select_prompt_content,
)
from .run import RunConfig, run_caption, run_evaluate, run_translate
from .scan import SCAN_BACKEND
from .store import (
    Datastore,
    EmbeddingVector,
    RetrievalHit,
    TranslationTable,
    build_datastore,
    cosine_similarity,
)

__version__ = "0.1.0"

__all__ = [
    "AttributionCounts",
    "CandidatePool",
    "Datastore",
    "DecodeParams",
    "EchoCaptionBackend",
    "EmbeddingVector",
    "FewShotExample",
    "GenerationRequest",
    "GenerationResult",
    "GraphNode",
    "HashEmbedderBackend",
    "HttpGateway",
    "ImagePayload",
    "MetricReport",
    "MockGateway",
    "PoolCaption",
    "PoolImage",
    "PromptSpec",
    "RankGraph",
    "RankScores",
    "RetrievalHit",
    "RunConfig",
    "SCAN_BACKEND",
    "SelectionResult",
    "SkycapError",
    "TokenizedCaption",
    "TranslationTable",
    "assemble_pool",
    "bleu",
    "build_datastore",
    "build_rank_graph",
    "cider_d",
    "cosine_similarity",
    "make_prompt_spec",
    "ngram_overlap",
    "pagerank",
    "pagerank_oracle",
    "pool_nodes",
    "prompt_attribution",
    "ref_siglip_score",
    "render_baseline_prompt",
    "render_caption_prompt",
    "render_translation_prompt",
    "rerank_pool",
    "run_caption",
    "run_evaluate",
    "run_translate",
    "select_prompt_content",
    "tokenize",
]
