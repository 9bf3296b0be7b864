import itertools

import numpy as np
import pytest

from services.hashing import (
    MASK,
    PAD,
    HashScheme,
    VocabSpec,
    bloom_digest,
    bucket_histogram,
    build_coherent_scheme,
    build_random_scheme,
    colliding_ids,
    hash_entity,
    hash_size_for,
    inverse_lookup,
    load_scheme,
    save_scheme,
    scheme_bytes,
    scheme_fingerprint,
    scheme_from_bytes,
)
from services.hashing.permutation import equal_buckets
from utils.errors import ArtifactError, InfeasibleSchemeError


def _no_complete_collisions(scheme: HashScheme) -> bool:
    digests = {tuple(scheme.forward[:, s]) for s in range(scheme.n_entities)}
    return len(digests) == scheme.n_entities


def test_hash_size_arithmetic():
    assert hash_size_for(5_300_000, 50) == 106_000
    assert hash_size_for(1000, 20) == 50
    assert hash_size_for(1001, 20) == 51


def test_six_entities_three_per_bucket():
    scheme = build_random_scheme(VocabSpec(6), m=2, alpha=3, seed=1, require_unique_digests=False)
    assert scheme.hash_size == 2
    for j in range(2):
        for token in range(2):
            bucket = inverse_lookup(scheme, j, token)
            assert bucket.size == 3
            assert np.all(scheme.forward[j, bucket] == token)


def test_eight_entities_have_distinct_digests():
    scheme = build_random_scheme(VocabSpec(8), m=2, alpha=2, seed=7)
    for a, b in itertools.combinations(range(8), 2):
        assert tuple(scheme.forward[:, a]) != tuple(scheme.forward[:, b])


@pytest.mark.parametrize("combo", range(50))
def test_random_scheme_invariants(combo):
    rng = np.random.default_rng(combo)
    m = int(rng.integers(1, 4))
    n = int(rng.integers(20, 2000))
    # Keep hash_size ** m comfortably above N so a collision-free scheme exists.
    max_alpha = 1 if m == 1 else max(1, int(n / max(2, int(np.ceil((4 * n) ** (1 / m))))))
    alpha = int(rng.integers(1, max_alpha + 1))
    _assert_scheme_invariants(build_random_scheme(VocabSpec(n), m=m, alpha=alpha, seed=combo), rng)


@pytest.mark.parametrize("m, alpha", [(2, 20), (3, 50)])
def test_random_scheme_invariants_at_ten_thousand(m, alpha):
    scheme = build_random_scheme(VocabSpec(10_000), m=m, alpha=alpha, seed=m)
    assert scheme.hash_size == 10_000 // alpha
    _assert_scheme_invariants(scheme, np.random.default_rng(m))


def _assert_scheme_invariants(scheme, rng):
    n, alpha = scheme.n_entities, scheme.alpha
    for j, function in enumerate(scheme.functions):
        sizes = function.bucket_sizes()
        assert sizes.sum() == n
        assert sizes.max() - sizes.min() <= 1
        assert sizes.max() <= alpha
        if n % alpha == 0:
            assert np.all(sizes == alpha)
        members = np.concatenate([inverse_lookup(scheme, j, t) for t in range(scheme.hash_size)])
        np.testing.assert_array_equal(np.sort(members), np.arange(n))
        for s in rng.choice(n, size=10):
            assert s in inverse_lookup(scheme, j, int(scheme.forward[j, s]))
    assert _no_complete_collisions(scheme)


def test_equal_buckets_of_a_permutation():
    forward = equal_buckets(np.array([3, 0, 4, 1, 2]), 2)
    # Positions 0..4 map to floor(p * 2 / 5) = 0, 0, 0, 1, 1.
    np.testing.assert_array_equal(forward, [0, 1, 1, 0, 0])


def test_building_is_deterministic():
    a = build_random_scheme(VocabSpec(500), m=2, alpha=10, seed=4)
    b = build_random_scheme(VocabSpec(500), m=2, alpha=10, seed=4)
    c = build_random_scheme(VocabSpec(500), m=2, alpha=10, seed=5)
    assert scheme_bytes(a) == scheme_bytes(b)
    assert a == b and a != c


def test_alpha_larger_than_vocabulary_fails():
    with pytest.raises(InfeasibleSchemeError):
        build_random_scheme(VocabSpec(1000), m=2, alpha=2000, seed=0)


def test_too_few_tokens_to_separate_entities():
    # hash_size 2, two functions: only 4 distinct digests for 10 entities.
    with pytest.raises(InfeasibleSchemeError):
        build_random_scheme(VocabSpec(10), m=2, alpha=5, seed=0)


def test_global_token_layout(small_scheme):
    h = small_scheme.hash_size
    tokens = hash_entity(small_scheme, 17)
    np.testing.assert_array_equal(tokens, [small_scheme.forward[0, 17], h + small_scheme.forward[1, 17]])
    mask = hash_entity(small_scheme, MASK)
    pad = hash_entity(small_scheme, PAD)
    np.testing.assert_array_equal(mask, [2 * h, 2 * h + 1])
    np.testing.assert_array_equal(pad, [2 * h + 2, 2 * h + 3])
    assert small_scheme.n_tokens == 2 * h + 4
    assert all(small_scheme.is_special(int(t)) for t in np.concatenate([mask, pad]))
    assert small_scheme.split_token(int(tokens[1])) == (1, int(small_scheme.forward[1, 17]))


def test_hash_entity_rejects_unknown_inputs(small_scheme):
    with pytest.raises(IndexError):
        hash_entity(small_scheme, 60)
    with pytest.raises(KeyError):
        hash_entity(small_scheme, "CLS")
    with pytest.raises(IndexError):
        inverse_lookup(small_scheme, 2, 0)
    with pytest.raises(IndexError):
        inverse_lookup(small_scheme, 0, small_scheme.hash_size)


def test_alpha_one_is_a_relabelling():
    scheme = build_random_scheme(VocabSpec(30), m=1, alpha=1, seed=2)
    assert scheme.hash_size == 30
    np.testing.assert_array_equal(np.sort(scheme.forward[0]), np.arange(30))


def test_bloom_digest_layout(small_scheme):
    digest = bloom_digest(small_scheme, [5, 9, 2])
    assert digest.shape == (6,)
    np.testing.assert_array_equal(digest.reshape(3, 2)[1], hash_entity(small_scheme, 9))


def test_bucket_histogram(small_scheme):
    assert bucket_histogram(small_scheme) == [{6: 10}, {6: 10}]


def test_colliding_ids_reports_later_duplicates():
    forward = np.array([[0, 1, 0, 1], [1, 0, 1, 1]])
    np.testing.assert_array_equal(colliding_ids(forward, 2), [2])


def test_from_functions_validates():
    with pytest.raises(InfeasibleSchemeError, match="collision"):
        HashScheme.from_functions([np.array([0, 0, 1, 1]), np.array([0, 0, 1, 1])], alpha=2)
    with pytest.raises(InfeasibleSchemeError, match="size"):
        HashScheme.from_functions([np.array([0, 0, 0, 1])], alpha=2)


def test_scheme_file_round_trip(tmp_path, small_scheme):
    first, second = str(tmp_path / "a.sbhs"), str(tmp_path / "b.sbhs")
    save_scheme(small_scheme, first)
    save_scheme(small_scheme, second)
    with open(first, "rb") as f, open(second, "rb") as g:
        assert f.read() == g.read()
    loaded = load_scheme(first)
    assert loaded == small_scheme
    assert scheme_fingerprint(loaded) == scheme_fingerprint(small_scheme)
    for j in range(loaded.m):
        np.testing.assert_array_equal(loaded.functions[j].order, small_scheme.functions[j].order)


def test_truncated_scheme_file(tmp_path, small_scheme):
    data = scheme_bytes(small_scheme)
    with pytest.raises(ArtifactError):
        scheme_from_bytes(data[: len(data) // 2])


def test_coherent_points_on_a_line():
    embeddings = np.array([[0.0, 1.0], [0.1, 1.0], [5.0, 1.0], [5.1, 1.0]])
    frequencies = np.ones(4)
    first = build_coherent_scheme(embeddings, frequencies, alpha=2)
    assert first.forward[0] == first.forward[1]
    assert first.forward[2] == first.forward[3]
    assert first.forward[0] != first.forward[2]

    second = build_coherent_scheme(embeddings, frequencies, alpha=2, constraint=first.forward)
    assert second.forward[0] != second.forward[1]
    assert second.forward[2] != second.forward[3]
    scheme = HashScheme.from_functions([first, second], alpha=2)
    assert _no_complete_collisions(scheme)


def _greedy_reference(unit, frequencies, alpha):
    n = unit.shape[0]
    order = sorted(range(n), key=lambda s: (-frequencies[s], s))
    free = set(range(n))
    buckets = []
    for s in order:
        if s not in free:
            continue
        free.discard(s)
        ranked = sorted(free, key=lambda c: (-float(unit[c] @ unit[s]), c))
        members = [s] + ranked[: alpha - 1]
        free.difference_update(members)
        buckets.append(members)
    return buckets


def test_coherent_matches_greedy_reference():
    rng = np.random.default_rng(0)
    embeddings = rng.standard_normal((100, 5))
    unit = embeddings / np.linalg.norm(embeddings, axis=1, keepdims=True)
    frequencies = rng.integers(1, 50, size=100).astype(float)
    function = build_coherent_scheme(embeddings, frequencies, alpha=10)
    sizes = function.bucket_sizes()
    assert sizes.size == 10 and np.all(sizes == 10)
    for token, members in enumerate(_greedy_reference(unit, frequencies, 10)):
        np.testing.assert_array_equal(function.bucket(token), sorted(members))


def test_coherent_constraint_separates_every_pair():
    rng = np.random.default_rng(1)
    embeddings = rng.standard_normal((60, 4))
    frequencies = rng.random(60)
    first = build_coherent_scheme(embeddings, frequencies, alpha=6)
    second = build_coherent_scheme(embeddings, frequencies, alpha=6, constraint=first.forward)
    for token in range(second.hash_size):
        members = second.bucket(token)
        assert len(set(first.forward[members].tolist())) == members.size


def test_coherent_constraint_can_be_infeasible():
    # One constraint bucket holds everything, so no two entities may share a bucket.
    embeddings = np.eye(4)
    with pytest.raises(InfeasibleSchemeError, match="bucket 0"):
        build_coherent_scheme(embeddings, np.ones(4), alpha=2, constraint=np.zeros(4, dtype=np.int64))
