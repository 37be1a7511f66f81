"""Image/caption embedding datastore and exact cosine retrieval.

The datastore is immutable after :func:`build_datastore` returns; any number
of threads may query it concurrently. Retrieval is an exact scan: every
eligible row is scored and the top results are returned with a total,
deterministic ordering (score descending, then id ascending).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import vecio
from .errors import (
    DanglingRowError,
    DatastoreError,
    DegenerateEmbeddingError,
    DimensionMismatchError,
    DuplicateIdError,
    EmptyDatastoreError,
    UnknownIdError,
)
from .languages import check_language
from .scan import cosine_scores

SPLITS = ("train", "val", "test")
DEFAULT_RETRIEVAL_SPLITS = ("train",)


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-dimension real vector with a cached Euclidean norm."""

    values: np.ndarray
    norm: float

    @classmethod
    def from_values(cls, values: Sequence[float] | np.ndarray) -> "EmbeddingVector":
        arr = np.array(values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"expected a 1-D vector, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DegenerateEmbeddingError("embedding contains non-finite values")
        arr.setflags(write=False)
        return cls(values=arr, norm=float(np.linalg.norm(arr)))

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def require_nonzero(self) -> "EmbeddingVector":
        if self.norm <= 0.0:
            raise DegenerateEmbeddingError("degenerate embedding: zero norm")
        return self


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine of the angle between two embeddings, in [-1, 1] up to rounding."""
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimension mismatch: {a.dim} vs {b.dim}")
    a.require_nonzero()
    b.require_nonzero()
    dot = float(np.dot(a.values, b.values))
    return dot / (a.norm * b.norm)


@dataclass(frozen=True)
class CaptionRecord:
    caption_id: str
    image_id: str
    text: str
    split: str
    embedding_row: int


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    image_ref: str
    split: str
    embedding_row: int
    caption_ids: tuple[str, ...]


@dataclass(frozen=True)
class RetrievalHit:
    """One retrieval result; lists of hits are sorted by score descending,
    ties broken by ascending id."""

    target_id: str
    score: float
    rank: int


class TranslationTable:
    """Per-language translations of datastore captions, keyed by caption id."""

    def __init__(self, entries: Mapping[tuple[str, str], str] | None = None):
        self._entries: dict[tuple[str, str], str] = dict(entries or {})

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: tuple[str, str]) -> bool:
        return key in self._entries

    def get(self, caption_id: str, language: str) -> str | None:
        return self._entries.get((caption_id, language))

    def languages(self) -> frozenset[str]:
        return frozenset(lang for _, lang in self._entries)

    @classmethod
    def load_jsonl(cls, path: str | Path) -> "TranslationTable":
        entries: dict[tuple[str, str], str] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DatastoreError(f"{path}:{lineno}: invalid JSON") from exc
                try:
                    caption_id = row["caption_id"]
                    language = check_language(row["language"])
                    text = row["text"]
                except KeyError as exc:
                    raise DatastoreError(f"{path}:{lineno}: missing field {exc}") from exc
                if not text:
                    raise DatastoreError(f"{path}:{lineno}: empty translation text")
                entries[(caption_id, language)] = text
        return cls(entries)


class _Index:
    """Immutable scan index over one embedding matrix (captions or images)."""

    def __init__(
        self,
        vectors: np.ndarray,
        ids: Sequence[str],
        rows: Sequence[int],
        splits: Sequence[str],
        what: str,
    ):
        count = vectors.shape[0]
        rows_arr = np.asarray(rows, dtype=np.int64)
        if rows_arr.size and (rows_arr.min() < 0 or rows_arr.max() >= count):
            bad = int(rows_arr[(rows_arr < 0) | (rows_arr >= count)][0])
            raise DanglingRowError(
                f"dangling embedding_row: {what} row {bad} outside 0..{count - 1}"
            )
        if not np.all(np.isfinite(vectors)):
            raise DatastoreError(f"{what} vectors contain non-finite values")
        # Norms accumulate in float64, blockwise to avoid a full-matrix copy.
        all_norms = np.empty(count, dtype=np.float64)
        for start in range(0, count, 65536):
            block = vectors[start : start + 65536].astype(np.float64)
            all_norms[start : start + block.shape[0]] = np.sqrt(
                np.einsum("ij,ij->i", block, block)
            )
        norms = all_norms[rows_arr]
        if np.any(norms <= 0.0):
            pos = int(np.flatnonzero(norms <= 0.0)[0])
            raise DegenerateEmbeddingError(
                f"degenerate embedding: {what} {ids[pos]!r} has zero norm"
            )
        vectors.setflags(write=False)

        self.vectors = vectors
        self.norms = norms                      # per record, index-aligned with ids
        self.ids = tuple(ids)
        self.ids_arr = np.asarray(ids)
        self.rows = rows_arr
        # Kernel wants a norm per vector row; rows never referenced by a
        # record get a harmless positive placeholder.
        self.row_norms = np.ones(count, dtype=np.float64)
        self.row_norms[rows_arr] = norms
        splits_arr = np.asarray(splits)
        self.split_indices = {s: np.flatnonzero(splits_arr == s) for s in SPLITS}
        self.pos = {rec_id: i for i, rec_id in enumerate(self.ids)}

    def eligible(self, split_filter: Iterable[str]) -> np.ndarray:
        wanted = frozenset(split_filter)
        unknown = wanted.difference(SPLITS)
        if unknown:
            raise ValueError(f"unknown splits: {sorted(unknown)}")
        parts = [self.split_indices[s] for s in SPLITS if s in wanted]
        if not parts:
            return np.empty(0, dtype=np.int64)
        return parts[0] if len(parts) == 1 else np.concatenate(parts)


class Datastore:
    """Immutable index of image/caption records with paired embeddings."""

    def __init__(
        self,
        dim: int,
        images: dict[str, ImageRecord],
        captions: dict[str, CaptionRecord],
        image_index: _Index,
        caption_index: _Index,
        translations: TranslationTable,
    ):
        self.dim = dim
        self.images = images
        self.captions = captions
        self._image_index = image_index
        self._caption_index = caption_index
        self.translations = translations

    # -- basic accessors -------------------------------------------------

    @property
    def caption_count(self) -> int:
        return len(self.captions)

    @property
    def image_count(self) -> int:
        return len(self.images)

    def split_counts(self) -> dict[str, dict[str, int]]:
        counts = {"images": {s: 0 for s in SPLITS}, "captions": {s: 0 for s in SPLITS}}
        for rec in self.images.values():
            counts["images"][rec.split] += 1
        for rec in self.captions.values():
            counts["captions"][rec.split] += 1
        return counts

    def image_ids(self, split: str | None = None) -> list[str]:
        return sorted(
            rec.image_id
            for rec in self.images.values()
            if split is None or rec.split == split
        )

    def caption_text(self, caption_id: str) -> str:
        try:
            return self.captions[caption_id].text
        except KeyError:
            raise UnknownIdError(f"unknown caption_id: {caption_id!r}") from None

    def _embedding(self, index: _Index, record_pos: int) -> EmbeddingVector:
        row = int(index.rows[record_pos])
        values = index.vectors[row].astype(np.float64)
        values.setflags(write=False)
        return EmbeddingVector(values=values, norm=float(index.norms[record_pos]))

    def image_embedding(self, image_id: str) -> EmbeddingVector:
        try:
            pos = self._image_index.pos[image_id]
        except KeyError:
            raise UnknownIdError(f"unknown image_id: {image_id!r}") from None
        return self._embedding(self._image_index, pos)

    def caption_embedding(self, caption_id: str) -> EmbeddingVector:
        try:
            pos = self._caption_index.pos[caption_id]
        except KeyError:
            raise UnknownIdError(f"unknown caption_id: {caption_id!r}") from None
        return self._embedding(self._caption_index, pos)

    # -- retrieval -------------------------------------------------------

    def _check_query(self, query: EmbeddingVector) -> np.ndarray:
        if query.dim != self.dim:
            raise DimensionMismatchError(
                f"query dimension {query.dim} does not match datastore dimension {self.dim}"
            )
        query.require_nonzero()
        return np.ascontiguousarray(query.values, dtype=np.float64)

    def _scan(
        self,
        index: _Index,
        query: EmbeddingVector,
        m: int,
        split_filter: Iterable[str],
    ) -> list[RetrievalHit]:
        if m < 1:
            raise ValueError("m must be >= 1")
        qvals = self._check_query(query)
        eligible = index.eligible(split_filter)
        if eligible.size == 0:
            return []
        row_scores = cosine_scores(index.vectors, index.row_norms, qvals, query.norm)
        scores = row_scores[index.rows[eligible]]
        # Primary key: score descending; secondary: id ascending.
        order = np.lexsort((index.ids_arr[eligible], -scores))[:m]
        return [
            RetrievalHit(
                target_id=index.ids[int(eligible[i])],
                score=float(scores[int(i)]),
                rank=rank,
            )
            for rank, i in enumerate(order, start=1)
        ]

    def retrieve_captions(
        self,
        query: EmbeddingVector,
        m: int,
        split_filter: Iterable[str] = DEFAULT_RETRIEVAL_SPLITS,
    ) -> list[RetrievalHit]:
        """Exact top-``m`` captions by cosine similarity to ``query``."""
        return self._scan(self._caption_index, query, m, split_filter)

    def retrieve_images(
        self,
        query: EmbeddingVector,
        m: int,
        split_filter: Iterable[str] = DEFAULT_RETRIEVAL_SPLITS,
    ) -> list[RetrievalHit]:
        """Exact top-``m`` images by cosine similarity to ``query``."""
        return self._scan(self._image_index, query, m, split_filter)

    def rank_captions_of_image(self, image_id: str) -> list[RetrievalHit]:
        """The image's own captions ranked by cosine to the image embedding."""
        try:
            image = self.images[image_id]
        except KeyError:
            raise UnknownIdError(f"unknown image_id: {image_id!r}") from None
        image_emb = self.image_embedding(image_id)
        scored = [
            (cid, cosine_similarity(image_emb, self.caption_embedding(cid)))
            for cid in image.caption_ids
        ]
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return [
            RetrievalHit(target_id=cid, score=score, rank=rank)
            for rank, (cid, score) in enumerate(scored, start=1)
        ]


def _parse_metadata(path: str | Path):
    captions: dict[str, CaptionRecord] = {}
    image_fields: dict[str, dict] = {}
    image_caption_ids: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatastoreError(f"{path}:{lineno}: invalid JSON") from exc
            try:
                caption_id = row["caption_id"]
                image_id = row["image_id"]
                split = row["split"]
                text = row["text"]
                caption_row = int(row["caption_row"])
            except (KeyError, TypeError, ValueError) as exc:
                raise DatastoreError(f"{path}:{lineno}: malformed record: {exc}") from exc
            if split not in SPLITS:
                raise DatastoreError(f"{path}:{lineno}: unknown split {split!r}")
            if not text:
                raise DatastoreError(f"{path}:{lineno}: empty caption text")
            if caption_id in captions:
                raise DuplicateIdError(f"duplicate caption_id: {caption_id!r}")
            captions[caption_id] = CaptionRecord(
                caption_id=caption_id,
                image_id=image_id,
                text=text,
                split=split,
                embedding_row=caption_row,
            )
            image_caption_ids.setdefault(image_id, []).append(caption_id)

            if "image_row" in row:
                fields = {
                    "image_row": int(row["image_row"]),
                    "image_ref": row.get("image_ref", ""),
                    "split": split,
                }
                seen = image_fields.get(image_id)
                if seen is None:
                    image_fields[image_id] = fields
                elif seen != fields:
                    raise DatastoreError(
                        f"{path}:{lineno}: image fields for {image_id!r} disagree "
                        f"with an earlier record"
                    )
    for image_id in image_caption_ids:
        if image_id not in image_fields:
            raise DatastoreError(f"image {image_id!r} never declares image_row")
    return captions, image_fields, image_caption_ids


def build_datastore(
    image_vector_file: str | Path,
    caption_vector_file: str | Path,
    metadata_file: str | Path,
    translations_file: str | Path | None = None,
) -> Datastore:
    """Load and validate a datastore from its on-disk files.

    Raises a distinct error per failure mode: malformed header, dimension
    mismatch, dangling embedding_row, duplicate ids, empty datastore,
    degenerate embedding.
    """
    image_vectors = vecio.read_vectors(image_vector_file)
    caption_vectors = vecio.read_vectors(caption_vector_file)
    if image_vectors.shape[1] != caption_vectors.shape[1]:
        raise DimensionMismatchError(
            f"dimension mismatch: image vectors are {image_vectors.shape[1]}-d, "
            f"caption vectors are {caption_vectors.shape[1]}-d"
        )
    dim = int(image_vectors.shape[1])

    captions, image_fields, image_caption_ids = _parse_metadata(metadata_file)
    if not captions:
        raise EmptyDatastoreError("empty datastore: no caption records")

    images = {
        image_id: ImageRecord(
            image_id=image_id,
            image_ref=fields["image_ref"],
            split=fields["split"],
            embedding_row=fields["image_row"],
            caption_ids=tuple(image_caption_ids[image_id]),
        )
        for image_id, fields in image_fields.items()
    }

    caption_ids = sorted(captions)
    caption_index = _Index(
        caption_vectors,
        caption_ids,
        [captions[c].embedding_row for c in caption_ids],
        [captions[c].split for c in caption_ids],
        "caption",
    )
    image_ids = sorted(images)
    image_index = _Index(
        image_vectors,
        image_ids,
        [images[i].embedding_row for i in image_ids],
        [images[i].split for i in image_ids],
        "image",
    )

    translations = (
        TranslationTable.load_jsonl(translations_file)
        if translations_file is not None
        else TranslationTable()
    )
    return Datastore(
        dim=dim,
        images=images,
        captions=captions,
        image_index=image_index,
        caption_index=caption_index,
        translations=translations,
    )
