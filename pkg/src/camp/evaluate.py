"""Retrieval metrics and embedding helpers for evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from camp import tensor as T
from camp.data import Sample
from camp.model import DualEncoder


@dataclass
class RetrievalReport:
    direction: str
    r1: float
    r5: float
    r10: float
    n_queries: int

    def row(self) -> str:
        return f"{self.direction}\t{self.r1:.4f}\t{self.r5:.4f}\t{self.r10:.4f}\t{self.n_queries}"


REPORT_HEADER = "direction\tR@1\tR@5\tR@10\tn_queries"


def ranks(query: np.ndarray, gallery: np.ndarray, truth: Sequence[int]) -> np.ndarray:
    """0-based rank of each query's true gallery item; ties go to the lower gallery index."""
    sims = np.asarray(query, np.float64) @ np.asarray(gallery, np.float64).T
    truth = np.asarray(truth, dtype=np.int64)
    true_sim = sims[np.arange(len(truth)), truth][:, None]
    idx = np.arange(sims.shape[1])[None, :]
    ahead = (sims > true_sim) | ((sims == true_sim) & (idx < truth[:, None]))
    return ahead.sum(axis=1)


def recall_at_k(query: np.ndarray, gallery: np.ndarray, truth: Sequence[int], k: int) -> float:
    gallery = np.asarray(gallery)
    if k > len(gallery):
        raise ValueError(f"k={k} exceeds gallery size {len(gallery)}")
    if len(truth) != len(query):
        raise ValueError("truth must map every query to a gallery index")
    return float((ranks(query, gallery, truth) < k).mean())


def report(direction: str, query: np.ndarray, gallery: np.ndarray, truth: Sequence[int]) -> RetrievalReport:
    r = ranks(query, gallery, truth)
    g = len(gallery)
    return RetrievalReport(
        direction,
        float((r < 1).mean()),
        float((r < min(5, g)).mean()),
        float((r < min(10, g)).mean()),
        len(query),
    )


def embed_samples(model: DualEncoder, samples: Sequence[Sample], chunk: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """(text embeddings, image embeddings), each (N, D) float64 with unit rows."""
    texts, images = [], []
    with T.no_grad():
        for i in range(0, len(samples), chunk):
            part = samples[i : i + chunk]
            texts.append(model.encode_text([s.caption for s in part]).p.data)
            images.append(model.encode_images(np.stack([s.image for s in part])).data)
    return np.concatenate(texts).astype(np.float64), np.concatenate(images).astype(np.float64)


def evaluate(model: DualEncoder, samples: Sequence[Sample]) -> list[RetrievalReport]:
    p, q = embed_samples(model, samples)
    truth = np.arange(len(samples))
    return [report("text-to-image", p, q, truth), report("image-to-text", q, p, truth)]


def mean_segment_cosine(model: DualEncoder, samples: Sequence[Sample]) -> float:
    """Mean pairwise cosine among the K projected prompt vectors, over ``samples``."""
    from camp.losses import diversity_loss

    with T.no_grad():
        out = model.encode_text([s.caption for s in samples])
        return float(diversity_loss(out.segments.projected[:, : model.cfg.K]).item())
