"""Shared fixtures: synthetic datastores written in the on-disk formats."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest

from skycap import build_datastore, vecio

_WORDS = (
    "plane runway terminal tank river bank road car park forest field bridge "
    "harbor ship dock roof building court track farm lake shore sand hill"
).split()


@dataclass
class CaptionSpec:
    caption_id: str
    text: str
    vector: np.ndarray


@dataclass
class ImageSpec:
    image_id: str
    split: str
    vector: np.ndarray
    captions: list[CaptionSpec] = field(default_factory=list)
    image_ref: str = ""


@dataclass
class StoreFiles:
    images: Path
    captions: Path
    metadata: Path
    translations: Path | None = None

    def build(self):
        return build_datastore(
            self.images, self.captions, self.metadata, self.translations
        )


def write_store(
    directory: Path,
    images: list[ImageSpec],
    translations: list[tuple[str, str, str]] | None = None,
) -> StoreFiles:
    """Serialize image specs into EVEC + JSONL files under ``directory``."""
    directory.mkdir(parents=True, exist_ok=True)
    image_vectors = np.stack([img.vector for img in images]).astype(np.float32)
    caption_specs = [cap for img in images for cap in img.captions]
    caption_vectors = np.stack([cap.vector for cap in caption_specs]).astype(np.float32)

    images_path = directory / "images.evec"
    captions_path = directory / "captions.evec"
    metadata_path = directory / "metadata.jsonl"
    vecio.write_vectors(images_path, image_vectors)
    vecio.write_vectors(captions_path, caption_vectors)

    caption_row = 0
    with open(metadata_path, "w", encoding="utf-8") as fh:
        for image_row, img in enumerate(images):
            for j, cap in enumerate(img.captions):
                record = {
                    "caption_id": cap.caption_id,
                    "image_id": img.image_id,
                    "split": img.split,
                    "text": cap.text,
                    "caption_row": caption_row,
                }
                if j == 0:
                    record["image_row"] = image_row
                    record["image_ref"] = img.image_ref or f"{img.image_id}.png"
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
                caption_row += 1

    translations_path = None
    if translations is not None:
        translations_path = directory / "translations.jsonl"
        with open(translations_path, "w", encoding="utf-8") as fh:
            for caption_id, language, text in translations:
                fh.write(
                    json.dumps(
                        {"caption_id": caption_id, "language": language, "text": text},
                        ensure_ascii=False,
                    )
                    + "\n"
                )
    return StoreFiles(
        images=images_path,
        captions=captions_path,
        metadata=metadata_path,
        translations=translations_path,
    )


def unit(vector) -> np.ndarray:
    arr = np.asarray(vector, dtype=np.float64)
    return arr / np.linalg.norm(arr)


def random_units(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    vectors = rng.standard_normal((count, dim))
    return vectors / np.linalg.norm(vectors, axis=1, keepdims=True)


def caption_text(rng: np.random.Generator, tag: str) -> str:
    words = rng.choice(_WORDS, size=5, replace=True)
    return f"a {words[0]} and a {words[1]} near the {words[2]} {tag}"


def make_synthetic_specs(
    rng: np.random.Generator,
    n_train: int = 10,
    n_test: int = 2,
    captions_per_image: int = 5,
    dim: int = 16,
) -> list[ImageSpec]:
    """Images with captions clustered around each image's direction."""
    specs = []
    splits = ["train"] * n_train + ["test"] * n_test
    for i, split in enumerate(splits):
        center = unit(rng.standard_normal(dim))
        captions = []
        for j in range(captions_per_image):
            jitter = unit(center + 0.35 * rng.standard_normal(dim))
            captions.append(
                CaptionSpec(
                    caption_id=f"c{i:03d}_{j}",
                    text=caption_text(rng, f"v{i:03d}{j}"),
                    vector=jitter,
                )
            )
        specs.append(
            ImageSpec(
                image_id=f"img{i:03d}",
                split=split,
                vector=center,
                captions=captions,
            )
        )
    return specs


@pytest.fixture
def synthetic_store(tmp_path):
    rng = np.random.default_rng(20240811)
    specs = make_synthetic_specs(rng)
    files = write_store(tmp_path / "store", specs)
    return files.build()


@pytest.fixture
def synthetic_store_files(tmp_path):
    rng = np.random.default_rng(20240811)
    specs = make_synthetic_specs(rng)
    return write_store(tmp_path / "store", specs)
