"""Candidate pool assembly.

For a query embedding, the pool holds the top retrieved captions plus the
most similar images, each image carrying its own ranked gold captions and
ranked similar captions. Gold candidates whose text duplicates one of the
query's retrieved captions are filtered out at assembly time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .store import DEFAULT_RETRIEVAL_SPLITS, Datastore, EmbeddingVector


def normalize_caption_text(text: str) -> str:
    """Canonical form for duplicate detection: trimmed, internal whitespace
    collapsed, case preserved."""
    return " ".join(text.split())


@dataclass(frozen=True)
class PoolCaption:
    caption_id: str
    text: str
    score: float


@dataclass(frozen=True)
class PoolImage:
    image_id: str
    score: float
    gold_captions: tuple[PoolCaption, ...]
    similar_captions: tuple[PoolCaption, ...]


@dataclass(frozen=True)
class CandidatePool:
    query_image_id: str
    retrieved_captions: tuple[PoolCaption, ...]
    similar_images: tuple[PoolImage, ...]

    def to_json(self) -> dict:
        return {
            "query_image_id": self.query_image_id,
            "retrieved_captions": [
                {"caption_id": c.caption_id, "text": c.text, "score": c.score}
                for c in self.retrieved_captions
            ],
            "similar_images": [
                {
                    "image_id": img.image_id,
                    "score": img.score,
                    "gold_captions": [
                        {"caption_id": c.caption_id, "text": c.text, "score": c.score}
                        for c in img.gold_captions
                    ],
                    "similar_captions": [
                        {"caption_id": c.caption_id, "text": c.text, "score": c.score}
                        for c in img.similar_captions
                    ],
                }
                for img in self.similar_images
            ],
        }


def assemble_pool(
    store: Datastore,
    query: EmbeddingVector,
    pool_size: int = 10,
    split_filter: Iterable[str] = DEFAULT_RETRIEVAL_SPLITS,
    query_image_id: str = "",
) -> CandidatePool:
    """Build the candidate pool for one query embedding.

    Lists come back similarity-ordered and may be shorter than ``pool_size``
    when the filtered store is small; that is not an error.
    """
    splits = tuple(split_filter)
    caption_hits = store.retrieve_captions(query, pool_size, splits)
    retrieved = tuple(
        PoolCaption(h.target_id, store.caption_text(h.target_id), h.score)
        for h in caption_hits
    )
    retrieved_texts = {normalize_caption_text(c.text) for c in retrieved}

    images = []
    for hit in store.retrieve_images(query, pool_size, splits):
        gold = tuple(
            PoolCaption(g.target_id, store.caption_text(g.target_id), g.score)
            for g in store.rank_captions_of_image(hit.target_id)
            if normalize_caption_text(store.caption_text(g.target_id))
            not in retrieved_texts
        )
        image_emb = store.image_embedding(hit.target_id)
        similar = tuple(
            PoolCaption(s.target_id, store.caption_text(s.target_id), s.score)
            for s in store.retrieve_captions(image_emb, pool_size, splits)
        )
        images.append(
            PoolImage(
                image_id=hit.target_id,
                score=hit.score,
                gold_captions=gold,
                similar_captions=similar,
            )
        )
    return CandidatePool(
        query_image_id=query_image_id,
        retrieved_captions=retrieved,
        similar_images=tuple(images),
    )
