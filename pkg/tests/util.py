"""Shared helpers for building random test inputs."""

from __future__ import annotations

import numpy as np

from cbirkit.boxes import BoundingBox, ScoredBox
from cbirkit.embeddings import EmbeddingMatrix, IdRecord


def rng_for(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def random_box(rng, lo=0.0, hi=100.0, min_side=2.0, max_side=40.0) -> BoundingBox:
    w = rng.uniform(min_side, max_side)
    h = rng.uniform(min_side, max_side)
    x1 = rng.uniform(lo, hi - w)
    y1 = rng.uniform(lo, hi - h)
    return BoundingBox(x1, y1, x1 + w, y1 + h)


def random_scored_boxes(rng, n, n_models=3, n_categories=2, image_id="img0") -> list[ScoredBox]:
    out = []
    for _ in range(n):
        out.append(ScoredBox(
            box=random_box(rng),
            score=float(rng.uniform(0.05, 1.0)),
            category_id=int(rng.integers(1, n_categories + 1)),
            image_id=image_id,
            model_id=f"m{int(rng.integers(0, n_models))}",
        ))
    return out


def unit_rows(rng, n, dim) -> np.ndarray:
    data = rng.normal(size=(n, dim))
    return data / np.linalg.norm(data, axis=1, keepdims=True)


def gallery_ids(n, categories=None, prefix="g") -> list[IdRecord]:
    return [
        IdRecord(item_id=f"{prefix}{i:05d}", image_id="gallery", box_id=f"{prefix}{i:05d}",
                 category_id=1 if categories is None else int(categories[i]),
                 source="gallery")
        for i in range(n)
    ]


def query_ids(n, categories=None) -> list[IdRecord]:
    return [
        IdRecord(item_id=f"q{i:05d}", image_id=f"img{i:05d}", box_id=f"img{i:05d}:b0",
                 category_id=1 if categories is None else int(categories[i]),
                 source="query")
        for i in range(n)
    ]


def unit_matrix(rng, n, dim, categories=None, prefix="g") -> EmbeddingMatrix:
    ids = gallery_ids(n, categories, prefix) if prefix == "g" else query_ids(n, categories)
    return EmbeddingMatrix(unit_rows(rng, n, dim), ids)


def query_matrix(rng, n, dim, categories=None) -> EmbeddingMatrix:
    return EmbeddingMatrix(unit_rows(rng, n, dim), query_ids(n, categories))


def boxes_to_dicts(boxes) -> list[dict]:
    return [
        {"box": b.box.as_tuple(), "score": b.score, "category_id": b.category_id,
         "model_id": b.model_id}
        for b in boxes
    ]
