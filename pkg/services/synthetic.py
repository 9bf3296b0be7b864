"""Planted-cluster corpus with a Zipf entity profile.

Each entity gets a Zipf weight (rank order randomly permuted over ids) and a
cluster. A page picks a cluster in proportion to its total weight; each slot
then draws from that cluster with probability ``cluster_affinity`` and from
the whole vocabulary otherwise. Cluster choice is weight-proportional, so the
marginal of every slot is exactly the Zipf distribution.
"""

from dataclasses import dataclass
from typing import List

import numpy as np

from utils.log import logger
from utils.rng import SeedLike, make_rng

from .corpus import Page


@dataclass
class SyntheticCorpus:
    pages: List[Page]
    weights: np.ndarray  # Zipf probability of every entity
    clusters: np.ndarray  # planted cluster of every entity


def zipf_weights(n_entities: int, zipf_s: float) -> np.ndarray:
    """Normalised 1 / rank^s for ranks 1..N."""
    weights = 1.0 / np.arange(1, n_entities + 1, dtype=np.float64) ** zipf_s
    return weights / weights.sum()


def generate_synthetic_corpus(
    n_entities: int,
    n_pages: int,
    n_clusters: int,
    zipf_s: float = 1.0,
    seed: SeedLike = 0,
    min_len: int = 8,
    max_len: int = 48,
    cluster_affinity: float = 0.8,
) -> SyntheticCorpus:
    if n_entities < 1 or n_pages < 0 or n_clusters < 1:
        raise ValueError("need at least one entity and one cluster")
    if not 1 <= min_len <= max_len:
        raise ValueError(f"page lengths must satisfy 1 <= min_len <= max_len, got {min_len}, {max_len}")
    rng = make_rng(seed)

    weights = np.empty(n_entities)
    weights[rng.permutation(n_entities)] = zipf_weights(n_entities, zipf_s)
    clusters = rng.integers(0, n_clusters, size=n_entities)

    members = [np.flatnonzero(clusters == c) for c in range(n_clusters)]
    member_cdf = [np.cumsum(weights[ids]) for ids in members]
    cluster_mass = np.array([cdf[-1] if cdf.size else 0.0 for cdf in member_cdf])
    global_cdf = np.cumsum(weights)

    def draw(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), cdf.size - 1)

    pages = []
    page_clusters = rng.choice(n_clusters, size=n_pages, p=cluster_mass / cluster_mass.sum())
    lengths = rng.integers(min_len, max_len + 1, size=n_pages)
    for cluster, length in zip(page_clusters, lengths):
        local = rng.random(length) < cluster_affinity
        u = rng.random(length)
        entities = draw(global_cdf, u)
        entities[local] = members[cluster][draw(member_cdf[cluster], u[local])]
        pages.append(Page(entities.astype(np.int64)))

    logger.info(
        f"synthetic corpus: {n_pages} pages, N={n_entities}, {n_clusters} clusters, zipf_s={zipf_s}, "
        f"{int(lengths.sum())} entity mentions"
    )
    return SyntheticCorpus(pages=pages, weights=weights, clusters=clusters)


def fit_zipf_exponent(counts: np.ndarray, top: int = 100) -> float:
    """Slope of log count against log rank over the ``top`` most frequent entities."""
    ranked = np.sort(np.asarray(counts, dtype=np.float64))[::-1][:top]
    ranked = ranked[ranked > 0]
    if ranked.size < 2:
        raise ValueError("need at least two observed entities to fit an exponent")
    slope, _ = np.polyfit(np.log(np.arange(1, ranked.size + 1)), np.log(ranked), 1)
    return float(-slope)
