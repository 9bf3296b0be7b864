import math
import time

import numpy as np
import pytest

from schemas.config import InferConfig
from services.hashing import HashFunction, VocabSpec, build_random_scheme
from services.inference import (
    BeamParams,
    CustomScore,
    LogSumScore,
    MaxScore,
    MinScore,
    RankedResult,
    beam_search,
    certificate_check,
    check_increasing,
    exhaustive_rank,
    format_ranked,
    gamma,
    get_score_function,
    rank_queries,
)

SCORES = [LogSumScore(), MinScore(), MaxScore()]


def _random_probs(rng, scheme, temperature=3.0):
    logits = rng.standard_normal((scheme.m, scheme.hash_size)) * temperature
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    return probs / probs.sum(axis=1, keepdims=True)


def _assert_same_ranking(result, reference):
    np.testing.assert_array_equal(result.items, reference.items)
    np.testing.assert_array_equal(result.scores, reference.scores)


@pytest.mark.parametrize("alpha", [5, 10, 20])
@pytest.mark.parametrize("k", [1, 10])
def test_certified_beam_matches_exhaustive(alpha, k):
    scheme = build_random_scheme(VocabSpec(1000), m=2, alpha=alpha, seed=alpha)
    rng = np.random.default_rng(alpha * 100 + k)
    for _ in range(12):
        probs = _random_probs(rng, scheme)
        for score_fn in SCORES:
            result = beam_search(score_fn, probs, scheme, BeamParams(beam=k, iters=None, k=k))
            assert result.exact
            _assert_same_ranking(result, exhaustive_rank(score_fn, probs, scheme, k))


@pytest.mark.parametrize("iters", [1, 2])
def test_exact_flag_is_sound(iters):
    scheme = build_random_scheme(VocabSpec(500), m=3, alpha=10, seed=1)
    rng = np.random.default_rng(iters)
    certified = 0
    for _ in range(60):
        probs = _random_probs(rng, scheme, temperature=float(rng.uniform(0.5, 4.0)))
        for score_fn in SCORES:
            result = beam_search(score_fn, probs, scheme, BeamParams(beam=5, iters=iters, k=5))
            assert certificate_check(result, probs, scheme, score_fn)
            if result.exact:
                certified += 1
                _assert_same_ranking(result, exhaustive_rank(score_fn, probs, scheme, 5))
    assert certified > 0


def test_gamma_by_hand(tiny_scheme):
    s = 5
    probs = np.full((2, 4), 0.125)
    probs[0] = [0.5 / 3] * 4
    probs[1] = [0.25] * 4
    probs[0, tiny_scheme.forward[0, s]] = 0.5
    assert gamma(LogSumScore(), probs, tiny_scheme, s) == pytest.approx(math.log(0.125))
    assert gamma(MinScore(), probs, tiny_scheme, s) == pytest.approx(0.25)
    assert gamma(MaxScore(), probs, tiny_scheme, s) == pytest.approx(0.5)
    with pytest.raises(IndexError):
        gamma(MinScore(), probs, tiny_scheme, 8)
    with pytest.raises(ValueError):
        gamma(MinScore(), probs[:, :3], tiny_scheme, s)


def test_full_width_beam_is_exhaustive(small_scheme):
    rng = np.random.default_rng(2)
    probs = _random_probs(rng, small_scheme)
    result = beam_search(LogSumScore(), probs, small_scheme, BeamParams(beam=small_scheme.hash_size, iters=1, k=7))
    assert result.exact and result.candidates_scored == 60
    _assert_same_ranking(result, exhaustive_rank(LogSumScore(), probs, small_scheme, 7))


def test_unhashed_ranking_is_a_sort():
    scheme = build_random_scheme(VocabSpec(30), m=1, alpha=1, seed=2)
    probs = _random_probs(np.random.default_rng(3), scheme)
    result = beam_search(LogSumScore(), probs, scheme, BeamParams(beam=3, iters=None, k=10))
    by_probability = np.argsort(-probs[0][scheme.forward[0]], kind="stable")[:10]
    np.testing.assert_array_equal(result.items, by_probability)
    # The first three tokens already certify the top three.
    top3 = beam_search(LogSumScore(), probs, scheme, BeamParams(beam=3, iters=1, k=3))
    assert top3.exact and top3.candidates_scored == 3


def test_k_equal_to_vocabulary(tiny_scheme):
    probs = _random_probs(np.random.default_rng(4), tiny_scheme)
    result = beam_search(MinScore(), probs, tiny_scheme, BeamParams(beam=1, iters=None, k=8))
    assert result.exact
    np.testing.assert_array_equal(np.sort(result.items), np.arange(8))
    with pytest.raises(ValueError):
        beam_search(MinScore(), probs, tiny_scheme, BeamParams(beam=1, k=9))
    with pytest.raises(ValueError):
        exhaustive_rank(MinScore(), probs, tiny_scheme, 0)


def test_candidates_are_bounded_by_the_beam():
    scheme = build_random_scheme(VocabSpec(1000), m=2, alpha=10, seed=5)
    rng = np.random.default_rng(5)
    for _ in range(20):
        probs = _random_probs(rng, scheme)
        result = beam_search(LogSumScore(), probs, scheme, BeamParams(beam=4, iters=3, k=5))
        assert result.candidates_scored <= scheme.m * result.iterations_used * 4 * scheme.alpha


def test_ties_with_the_threshold_are_expanded(small_scheme):
    probs = np.full((2, small_scheme.hash_size), 0.1)
    result = beam_search(MaxScore(), probs, small_scheme, BeamParams(beam=1, iters=1, k=3))
    assert result.candidates_scored == 60
    np.testing.assert_array_equal(result.items, [0, 1, 2])


def test_zero_probability_ranks_last(tiny_scheme):
    probs = np.full((2, 4), 0.25)
    token = tiny_scheme.forward[0, 0]
    probs[0] = 1.0 / 3
    probs[0, token] = 0.0
    result = exhaustive_rank(LogSumScore(), probs, tiny_scheme, 8)
    losers = np.sort(np.flatnonzero(tiny_scheme.forward[0] == token))
    np.testing.assert_array_equal(result.items[-2:], losers)
    assert np.all(np.isneginf(result.scores[-2:]))


def test_large_vocabulary_scores_a_small_fraction():
    scheme = build_random_scheme(VocabSpec(100_000), m=2, alpha=50, seed=0)
    rng = np.random.default_rng(6)
    for _ in range(3):
        probs = _random_probs(rng, scheme)
        result = beam_search(LogSumScore(), probs, scheme, BeamParams(beam=20, iters=None, k=10))
        assert result.exact
        assert result.candidates_scored <= 0.05 * scheme.n_entities
        _assert_same_ranking(result, exhaustive_rank(LogSumScore(), probs, scheme, 10))


def test_rank_queries_stack(small_scheme):
    rng = np.random.default_rng(7)
    stack = np.stack([_random_probs(rng, small_scheme) for _ in range(4)])
    params = BeamParams(beam=2, iters=None, k=3)
    beams = rank_queries(MinScore(), stack, small_scheme, params)
    scans = rank_queries(MinScore(), stack, small_scheme, params, exhaustive=True)
    assert len(beams) == len(scans) == 4
    for beam, scan in zip(beams, scans):
        _assert_same_ranking(beam, scan)


def test_score_functions():
    assert isinstance(get_score_function("min"), MinScore)
    with pytest.raises(ValueError):
        get_score_function("median")
    for score_fn in SCORES:
        assert check_increasing(score_fn, 3)
    assert not check_increasing(CustomScore(lambda rho: -rho.sum(axis=-1), "negated"), 2)


def test_custom_score_drives_the_search(small_scheme):
    product = CustomScore(lambda rho: np.prod(rho, axis=-1), "product")
    probs = _random_probs(np.random.default_rng(8), small_scheme)
    result = beam_search(product, probs, small_scheme, BeamParams(beam=2, iters=None, k=4))
    np.testing.assert_array_equal(result.items, exhaustive_rank(LogSumScore(), probs, small_scheme, 4).items)


def test_beam_params_validation():
    with pytest.raises(ValueError):
        BeamParams(beam=0)
    with pytest.raises(ValueError):
        BeamParams(iters=0)
    assert BeamParams.from_config(InferConfig(iters=0, beam=3, k=2)) == BeamParams(beam=3, iters=None, k=2)


def test_format_ranked():
    result = RankedResult(items=np.array([3, 1]), scores=np.array([-0.5, -1.25]), exact=True, candidates_scored=9, iterations_used=1)
    assert format_ranked(result, 7) == ["7 1 3 -0.500000 1", "7 2 1 -1.250000 1"]
    names = ["zero", "one", "two", "three"]
    assert format_ranked(result, 0, names)[0] == "0 1 three -0.500000 1"
    assert result.rank_of(1) == 2 and result.rank_of(2) is None


def test_wider_beam_never_lowers_the_kth_score():
    scheme = build_random_scheme(VocabSpec(1000), m=2, alpha=10, seed=9)
    rng = np.random.default_rng(9)
    for _ in range(10):
        probs = _random_probs(rng, scheme)
        previous = -np.inf
        for width in (1, 2, 5, 10, 20, 50, 100):
            result = beam_search(LogSumScore(), probs, scheme, BeamParams(beam=width, iters=1, k=10))
            kth = result.scores[-1] if result.items.size == 10 else -np.inf
            assert kth >= previous
            previous = kth


def test_each_bucket_is_expanded_once(monkeypatch):
    scheme = build_random_scheme(VocabSpec(1000), m=2, alpha=10, seed=11)
    rng = np.random.default_rng(11)
    seen = []
    original = HashFunction.bucket

    def recording(function, token):
        seen.append((id(function), token))
        return original(function, token)

    monkeypatch.setattr(HashFunction, "bucket", recording)
    for _ in range(10):
        seen.clear()
        probs = _random_probs(rng, scheme, temperature=0.5)
        result = beam_search(MinScore(), probs, scheme, BeamParams(beam=1, iters=None, k=10))
        assert result.iterations_used > 1
        assert len(seen) == len(set(seen))
        _assert_same_ranking(result, exhaustive_rank(MinScore(), probs, scheme, 10))


@pytest.mark.slow
def test_single_iteration_is_faster_than_scanning():
    scheme = build_random_scheme(VocabSpec(100_000), m=2, alpha=50, seed=1)
    rng = np.random.default_rng(10)
    stack = np.stack([_random_probs(rng, scheme) for _ in range(20)])
    params = BeamParams(beam=20, iters=1, k=20)
    start = time.perf_counter()
    beams = rank_queries(LogSumScore(), stack, scheme, params)
    beam_seconds = time.perf_counter() - start
    start = time.perf_counter()
    rank_queries(LogSumScore(), stack, scheme, params, exhaustive=True)
    scan_seconds = time.perf_counter() - start
    assert max(r.candidates_scored for r in beams) <= 0.05 * scheme.n_entities
    assert scan_seconds >= 2 * beam_seconds
