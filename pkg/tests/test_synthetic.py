import numpy as np
import pytest

from services.corpus import entity_frequencies
from services.synthetic import fit_zipf_exponent, generate_synthetic_corpus, zipf_weights


def test_zipf_weights_are_normalised():
    weights = zipf_weights(100, 1.0)
    assert weights.sum() == pytest.approx(1.0)
    assert weights[0] / weights[9] == pytest.approx(10.0)


def test_page_shape_and_range():
    corpus = generate_synthetic_corpus(500, 100, 20, seed=1, min_len=4, max_len=9)
    assert len(corpus.pages) == 100
    for page in corpus.pages:
        assert 4 <= len(page) <= 9
        assert page.entities.min() >= 0 and page.entities.max() < 500
    assert corpus.clusters.shape == (500,)


def test_same_seed_same_corpus():
    a = generate_synthetic_corpus(300, 50, 10, seed=4)
    b = generate_synthetic_corpus(300, 50, 10, seed=4)
    c = generate_synthetic_corpus(300, 50, 10, seed=5)
    assert all(np.array_equal(x.entities, y.entities) for x, y in zip(a.pages, b.pages))
    assert not all(np.array_equal(x.entities, y.entities) for x, y in zip(a.pages, c.pages))


def test_frequency_profile_follows_zipf():
    corpus = generate_synthetic_corpus(1000, 2000, 50, zipf_s=1.0, seed=0)
    counts = entity_frequencies(corpus.pages, 1000)
    assert fit_zipf_exponent(counts, top=100) == pytest.approx(1.0, rel=0.1)


def test_pages_concentrate_on_one_cluster():
    corpus = generate_synthetic_corpus(2000, 200, 40, seed=2, cluster_affinity=0.9)
    shares = []
    for page in corpus.pages:
        clusters = corpus.clusters[page.entities]
        shares.append(np.bincount(clusters).max() / clusters.size)
    assert np.mean(shares) > 0.7


def test_invalid_lengths():
    with pytest.raises(ValueError):
        generate_synthetic_corpus(10, 5, 2, min_len=5, max_len=3)
