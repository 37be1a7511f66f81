"""Graph-based re-ranking of retrieved elements.

Every pool element (retrieved caption, similar image, gold caption, or a
similar image's own retrieved captions) becomes a node in a fully connected
graph. Edge weights are clipped cosines between node embeddings, normalized
per row; a personalization vector derived from query similarities biases a
damped random walk whose stationary scores re-rank the pool.

The walk solves ``r = alpha * W^T r + (1 - alpha) * v`` by power iteration;
:func:`pagerank_oracle` solves the same fixed point directly with a dense
linear solve and exists to cross-check the iteration in tests.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import ConvergenceError, DegenerateEmbeddingError, PoolMappingError
from .pool import CandidatePool, PoolCaption, PoolImage
from .store import Datastore, EmbeddingVector, cosine_similarity

KIND_RETRIEVED_CAPTION = "retrieved_caption"
KIND_SIMILAR_IMAGE = "similar_image"
KIND_GOLD_CAPTION = "gold_caption"


@dataclass(frozen=True)
class GraphNode:
    node_id: int
    kind: str
    source_id: str
    embedding: np.ndarray       # float64, read-only
    query_similarity: float


@dataclass(frozen=True)
class RankGraph:
    nodes: tuple[GraphNode, ...]
    weights: np.ndarray         # row-stochastic, (n, n)
    personalization: np.ndarray  # probability vector, (n,)
    alpha: float

    @property
    def size(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class RankScores:
    values: np.ndarray
    iterations: int
    residual: float


def _unit_rows(embeddings: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(embeddings, axis=1)
    if np.any(norms <= 0.0):
        raise DegenerateEmbeddingError("degenerate embedding: zero-norm graph node")
    return embeddings / norms[:, None]


def build_rank_graph(
    nodes: Sequence[GraphNode],
    alpha: float,
    self_loops: bool = True,
) -> RankGraph:
    """Build the weight matrix and personalization vector over ``nodes``.

    ``W[i, j]`` is the clipped cosine between node embeddings normalized by
    the row sum. With ``self_loops`` (the default) the diagonal term enters
    the sum with self-cosine 1, so rows are always well defined; without it,
    a row whose off-diagonal cosines are all non-positive falls back to
    uniform. The personalization vector normalizes clipped query
    similarities, falling back to uniform when all are non-positive.
    """
    n = len(nodes)
    if n == 0:
        raise ValueError("graph needs at least one node")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")

    unit = _unit_rows(np.stack([node.embedding for node in nodes]).astype(np.float64))
    cos = unit @ unit.T
    clipped = np.maximum(cos, 0.0)
    if self_loops:
        np.fill_diagonal(clipped, 1.0)
    else:
        np.fill_diagonal(clipped, 0.0)
    row_sums = clipped.sum(axis=1)
    weights = np.empty_like(clipped)
    zero_rows = row_sums <= 0.0
    nonzero = ~zero_rows
    weights[nonzero] = clipped[nonzero] / row_sums[nonzero, None]
    if np.any(zero_rows):
        weights[zero_rows] = 1.0 / n

    sims = np.array([node.query_similarity for node in nodes], dtype=np.float64)
    clipped_sims = np.maximum(sims, 0.0)
    total = clipped_sims.sum()
    if total > 0.0:
        personalization = clipped_sims / total
    else:
        personalization = np.full(n, 1.0 / n)

    weights.setflags(write=False)
    personalization.setflags(write=False)
    return RankGraph(
        nodes=tuple(nodes),
        weights=weights,
        personalization=personalization,
        alpha=float(alpha),
    )


def pagerank(graph: RankGraph, tol: float = 1e-10, max_iter: int = 1000) -> RankScores:
    """Power iteration from ``r0 = v`` until the L1 step difference is below
    ``tol``; raises :class:`ConvergenceError` if the budget runs out."""
    wt = graph.weights.T
    v = graph.personalization
    alpha = graph.alpha
    r = v.copy()
    residual = 0.0
    for iteration in range(1, max_iter + 1):
        r_next = alpha * (wt @ r) + (1.0 - alpha) * v
        residual = float(np.abs(r_next - r).sum())
        r = r_next
        if residual < tol:
            r.setflags(write=False)
            return RankScores(values=r, iterations=iteration, residual=residual)
    raise ConvergenceError(
        f"pagerank did not converge in {max_iter} iterations (residual {residual:.3e})",
        residual=residual,
        iterations=max_iter,
    )


def pagerank_oracle(graph: RankGraph) -> RankScores:
    """Exact fixed point via dense linear solve; for tests and fixtures only.

    Solves ``(I - alpha * W^T) r = (1 - alpha) * v``, which is nonsingular
    for alpha < 1 with row-stochastic W.
    """
    n = graph.size
    if n > 200:
        raise ValueError("dense solve limited to 200 nodes")
    system = np.eye(n) - graph.alpha * graph.weights.T
    rhs = (1.0 - graph.alpha) * graph.personalization
    values = np.linalg.solve(system, rhs)
    values.setflags(write=False)
    return RankScores(values=values, iterations=0, residual=0.0)


# -- bridging pools and graphs -----------------------------------------------


def node_key(kind: str, source_id: str) -> tuple[str, str]:
    """Map key for pool elements: caption and image ids live in separate
    namespaces."""
    namespace = "image" if kind == KIND_SIMILAR_IMAGE else "caption"
    return (namespace, source_id)


def pool_nodes(
    store: Datastore,
    query: EmbeddingVector,
    pool: CandidatePool,
) -> tuple[tuple[GraphNode, ...], dict[tuple[str, str], int]]:
    """Collect the graph nodes for a pool, deduplicated by element id.

    The query itself is not a node; it acts only through the query
    similarities. A caption appearing in several pool lists maps to a single
    node whose kind reflects its first role in pool order.
    """
    nodes: list[GraphNode] = []
    node_map: dict[tuple[str, str], int] = {}

    def add(kind: str, source_id: str, embedding: EmbeddingVector) -> None:
        key = node_key(kind, source_id)
        if key in node_map:
            return
        node_map[key] = len(nodes)
        nodes.append(
            GraphNode(
                node_id=len(nodes),
                kind=kind,
                source_id=source_id,
                embedding=embedding.values,
                query_similarity=cosine_similarity(query, embedding),
            )
        )

    for cap in pool.retrieved_captions:
        add(KIND_RETRIEVED_CAPTION, cap.caption_id, store.caption_embedding(cap.caption_id))
    for image in pool.similar_images:
        add(KIND_SIMILAR_IMAGE, image.image_id, store.image_embedding(image.image_id))
        for cap in image.gold_captions:
            add(KIND_GOLD_CAPTION, cap.caption_id, store.caption_embedding(cap.caption_id))
        for cap in image.similar_captions:
            add(KIND_RETRIEVED_CAPTION, cap.caption_id, store.caption_embedding(cap.caption_id))
    return tuple(nodes), node_map


def _score_of(
    scores: RankScores,
    node_map: Mapping[tuple[str, str], int],
    kind: str,
    source_id: str,
) -> float:
    try:
        return float(scores.values[node_map[node_key(kind, source_id)]])
    except KeyError:
        raise PoolMappingError(
            f"pool element {source_id!r} ({kind}) has no graph node"
        ) from None


def rerank_pool(
    pool: CandidatePool,
    scores: RankScores,
    node_map: Mapping[tuple[str, str], int],
) -> CandidatePool:
    """Reorder the pool by descending walk score.

    Retrieved captions, similar images, and each image's similar captions are
    re-sorted (ties keep the prior similarity order); gold-caption order
    within each image is preserved. Element scores are replaced by their walk
    scores so downstream selection ranks by the new hierarchy.
    """

    def rescore(items: Sequence[PoolCaption], kind: str) -> tuple[PoolCaption, ...]:
        rescored = [
            replace(c, score=_score_of(scores, node_map, kind, c.caption_id))
            for c in items
        ]
        return tuple(sorted(rescored, key=lambda c: -c.score))

    captions = rescore(pool.retrieved_captions, KIND_RETRIEVED_CAPTION)
    images = [
        PoolImage(
            image_id=img.image_id,
            score=_score_of(scores, node_map, KIND_SIMILAR_IMAGE, img.image_id),
            gold_captions=tuple(
                replace(c, score=_score_of(scores, node_map, KIND_GOLD_CAPTION, c.caption_id))
                for c in img.gold_captions
            ),
            similar_captions=rescore(img.similar_captions, KIND_RETRIEVED_CAPTION),
        )
        for img in pool.similar_images
    ]
    images.sort(key=lambda img: -img.score)
    return CandidatePool(
        query_image_id=pool.query_image_id,
        retrieved_captions=captions,
        similar_images=tuple(images),
    )


def graph_debug_dump(
    query_image_id: str,
    graph: RankGraph,
    scores: RankScores,
) -> dict:
    """JSON-serializable dump of (nodes, W, v, r) for inspection."""
    return {
        "query_image_id": query_image_id,
        "alpha": graph.alpha,
        "nodes": [
            {
                "node_id": node.node_id,
                "kind": node.kind,
                "source_id": node.source_id,
                "query_similarity": node.query_similarity,
            }
            for node in graph.nodes
        ],
        "weights": graph.weights.tolist(),
        "personalization": graph.personalization.tolist(),
        "scores": scores.values.tolist(),
        "iterations": scores.iterations,
        "residual": scores.residual,
    }
