import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from commlab.core import (InputPartition, builtin_function, measure_error, run_protocol,
                          run_transcript)
from commlab.errors import EmptyPrimeRangeError, EnumerationCapError, OutsideRegimeWarning, \
    PreconditionError, WidthOverflowError
from commlab.numeric import is_prime, lcm_upto
from commlab.sumequal import (AugIndexSample, DirectSumSample, augindex_distribution,
                              default_magnitude, direct_sum_F, direct_sum_distribution,
                              equality_exact_error, equality_fingerprint_protocol,
                              equality_prime_range, fingerprint_exact_error,
                              rectangle_conditional_probe, rectangle_probe_bruteforce,
                              sumequal_exact_protocol, sumequal_fingerprint_protocol,
                              viola_product_distribution)


@pytest.fixture(autouse=True)
def _quiet_regime_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OutsideRegimeWarning)
        yield


# ---------------------------------------------------------------------------
# equality


def test_equality_accepts_equal_inputs():
    p = equality_fingerprint_protocol(257, 0.1)
    part = InputPartition.singletons(2)
    for seed in range(300):
        assert run_protocol(p, part, (200, 200), seed=seed)[0] == 1


def test_equality_message_length():
    p = equality_fingerprint_protocol(257, 0.1)
    assert equality_prime_range(257, 0.1) == (6410, 12818)
    part = InputPartition.singletons(2)
    for seed in range(50):
        _, (msg,) = run_transcript(p, part, (5, 9), seed=seed)
        q = int(msg[0], 2)
        assert is_prime(q) and 6410 <= q <= 12818
        _, rep = run_protocol(p, part, (5, 9), seed=seed)
        assert rep.per_message_bits == [2 * math.ceil(math.log2(q))]


def test_equality_divisor_example():
    p = equality_fingerprint_protocol(257, 0.1, prime_range=(10, 30))
    assert equality_exact_error(p, 20, 8) == 0
    part = InputPartition.singletons(2)
    assert all(run_protocol(p, part, (20, 8), seed=s)[0] == 0 for s in range(200))


def test_equality_empty_prime_range():
    with pytest.raises(EmptyPrimeRangeError):
        equality_fingerprint_protocol(257, 0.1, prime_range=(24, 28))


def test_equality_error_matches_divisor_count():
    p = equality_fingerprint_protocol(257, 0.1, prime_range=(2, 40))
    x, y = 2 * 3 * 5 * 7 + 11, 11
    exact = equality_exact_error(p, x, y)
    assert exact == Fraction(4, 12)
    part = InputPartition.singletons(2)
    n = 6000
    hits = sum(run_protocol(p, part, (x, y), seed=s)[0] for s in range(n))
    sigma = math.sqrt(exact * (1 - exact) / n)
    assert abs(hits / n - exact) <= 4 * sigma


# ---------------------------------------------------------------------------
# exact Sum-Equal


def test_exact_protocol_examples():
    p = sumequal_exact_protocol(3, 5)
    part = InputPartition.singletons(3)
    out, rep = run_protocol(p, part, (1, 2, 2))
    assert out == 1
    assert rep.per_message_bits == [3, 3]
    assert run_protocol(p, part, (1, 2, 1))[0] == 0


def test_exact_protocol_zero_error():
    f = builtin_function("sum-equal-mod-m", 4, m=3)
    assert measure_error(sumequal_exact_protocol(4, 3), f,
                         InputPartition.singletons(4)).error_estimate == 0


# ---------------------------------------------------------------------------
# fingerprint Sum-Equal


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.sampled_from([5, 7, 257]), st.integers(0, 10**6), st.data())
def test_fingerprint_one_sided(k, m, seed, data):
    p = sumequal_fingerprint_protocol(k, 0.1, modulus=m)
    xs = data.draw(st.lists(st.integers(0, m - 1), min_size=k - 1, max_size=k - 1))
    xs = tuple(xs) + ((-sum(xs)) % m,)
    assert run_protocol(p, InputPartition.singletons(k), xs, seed=seed)[0] == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(1, 50), st.integers(0, 10**6), st.data())
def test_fingerprint_one_sided_integers(k, bound, seed, data):
    p = sumequal_fingerprint_protocol(k, 0.1, bound=bound, crs=data.draw(st.booleans()))
    xs = data.draw(st.lists(st.integers(-bound, bound), min_size=k - 1, max_size=k - 1))
    xs = tuple(xs) + (-sum(xs),)
    assert run_protocol(p, InputPartition.singletons(k), xs, seed=seed)[0] == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.sampled_from([5, 7, 257]), st.data())
def test_fingerprint_error_bounded_by_delta(k, m, data):
    p = sumequal_fingerprint_protocol(k, 0.1, modulus=m)
    xs = tuple(data.draw(st.lists(st.integers(0, m - 1), min_size=k, max_size=k)))
    assert fingerprint_exact_error(p, xs) <= 0.1


def test_fingerprint_integer_example_840():
    k, delta = 16, 0.05
    p = sumequal_fingerprint_protocol(k, delta, bound=840)
    assert p.info["prime_range"] == (4096, 8192)
    xs = (840,) + (0,) * (k - 1)
    exact = fingerprint_exact_error(p, xs)
    assert exact <= delta
    part = InputPartition.singletons(k)
    n = 10**5
    accepts = 0
    for s in range(n):
        accepts += run_protocol(p, part, xs, seed=s)[0]
    assert accepts / n <= delta
    sigma = math.sqrt(max(float(exact), 1 / n) * (1 - float(exact)) / n)
    assert abs(accepts / n - float(exact)) <= 3 * sigma + 1 / n


def test_fingerprint_message_bits():
    p = sumequal_fingerprint_protocol(6, 0.1, modulus=7)
    width = math.ceil(math.log2(p.info["prime_range"][1]))
    for s in range(50):
        _, rep = run_protocol(p, InputPartition.singletons(6), (1, 2, 3, 4, 5, 6), seed=s)
        assert rep.max_message_bits <= width


def test_fingerprint_private_mode_carries_prime():
    p = sumequal_fingerprint_protocol(4, 0.1, modulus=7, crs=False)
    crs = sumequal_fingerprint_protocol(4, 0.1, modulus=7)
    _, rep = run_protocol(p, InputPartition.singletons(4), (1, 2, 3, 1), seed=1)
    _, rep_crs = run_protocol(crs, InputPartition.singletons(4), (1, 2, 3, 1), seed=1)
    assert rep.max_message_bits == 2 * rep_crs.max_message_bits


def test_fingerprint_parameter_errors():
    with pytest.raises(PreconditionError):
        sumequal_fingerprint_protocol(4, 0.6, modulus=7)
    with pytest.raises(PreconditionError):
        sumequal_fingerprint_protocol(4, 0.1)
    with pytest.raises(EmptyPrimeRangeError):
        sumequal_fingerprint_protocol(4, 0.1, modulus=7, prime_range=(24, 28))


# ---------------------------------------------------------------------------
# product distribution


def test_viola_marginals_uniform():
    mu = viola_product_distribution(5, 7, seed=1)
    X = mu.sample_batch(10**5, seed=2)
    for j in range(5):
        counts = np.bincount(X[:, j], minlength=7)
        chi2 = ((counts - 10**5 / 7) ** 2 / (10**5 / 7)).sum()
        assert chi2 < 30
    rate = float(np.mean(X.sum(axis=1) % 7 == 0))
    assert abs(rate - 1 / 7) <= 3 * math.sqrt((1 / 7) * (6 / 7) / 10**5)


def test_viola_seed_determinism():
    a = viola_product_distribution(4, 5, seed=3).sample_batch(50, seed=9)
    b = viola_product_distribution(4, 5, seed=3).sample_batch(50, seed=9)
    assert np.array_equal(a, b)


def test_viola_requires_prime():
    with pytest.raises(PreconditionError):
        viola_product_distribution(4, 6)


# ---------------------------------------------------------------------------
# direct sum distribution


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 20), st.integers(1, 50), st.sampled_from([2, 3, 5, 7]), st.integers(0, 10**6))
def test_direct_sum_rows_match_labels(k, m, p, seed):
    s = direct_sum_distribution(k, m, p, seed=seed)
    assert np.array_equal(direct_sum_F(s.X, p), s.V)
    sums = s.X.sum(axis=1) % p
    assert np.all(sums[s.V == 0] == 1 % p)


def test_direct_sum_flip_changes_one_row():
    s = direct_sum_distribution(16, 10, 3, seed=1)
    X = s.X.copy()
    X[4, -1] = (X[4, -1] + (1 if s.V[4] else -1)) % 3
    F = direct_sum_F(X, 3)
    assert np.sum(F != s.V) == 1 and F[4] != s.V[4]


def test_direct_sum_prefix_uniform_and_coins_fair():
    s = direct_sum_distribution(16, 60000, 3, seed=7)
    assert abs(s.V.mean() - 0.5) < 4 * math.sqrt(0.25 / 60000)
    for j in range(15):
        counts = np.bincount(s.X[:, j], minlength=3)
        assert ((counts - 20000) ** 2 / 20000).sum() < 25


def test_direct_sum_regime_warning():
    with pytest.warns(OutsideRegimeWarning):
        direct_sum_distribution(16, 2, 7)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert direct_sum_distribution(16, 2, 3).in_regime


def test_direct_sum_json_round_trip():
    s = direct_sum_distribution(4, 3, 5, seed=2)
    t = DirectSumSample.from_json(s.to_json())
    assert np.array_equal(s.X, t.X) and np.array_equal(s.V, t.V)


# ---------------------------------------------------------------------------
# augmented index distribution


def test_augindex_a3_example():
    s = augindex_distribution(3, 40, a=3, seed=1)
    assert s.M == 6
    for row, v in zip(s.X, s.V):
        assert row.sum() == (0 if v else 6)


def test_augindex_a5_scale_note():
    assert lcm_upto(5) == 60
    assert 60**8 > 10**14


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 64), st.integers(1, 30), st.integers(1, 12), st.integers(0, 10**6))
def test_augindex_invariants(k, m, a, seed):
    s = augindex_distribution(k, m, a=a, seed=seed)
    assert set(np.unique(s.X.sum(axis=1))) <= {0, s.M}
    assert all(s.M % d == 0 for d in range(1, a + 1))
    assert 1 <= s.n <= m
    assert set(s.Y) == set(range(s.n + 1, m + 1))
    assert np.all((s.X[:, :-1] >= 1) & (s.X[:, :-1] <= a))
    assert s.last_within_bound == bool(np.all(np.abs(s.X[:, -1]) <= k * a))


def test_augindex_default_last_coordinate_bound():
    for k in (16, 256, 4096):
        a = default_magnitude(k)
        s = augindex_distribution(k, 20, seed=k)
        assert abs(lcm_upto(a) - (k - 1)) <= k * a
        assert s.last_within_bound


def test_augindex_width_refusal():
    with pytest.raises(WidthOverflowError, match="try a <="):
        augindex_distribution(4, 2, a=60)


def test_augindex_json_round_trip():
    s = augindex_distribution(5, 6, a=3, seed=4)
    t = AugIndexSample.from_json(s.to_json())
    assert np.array_equal(s.X, t.X) and s.Y == t.Y and s.n == t.n


# ---------------------------------------------------------------------------
# rectangle probe


def test_rectangle_full_space():
    res = rectangle_conditional_probe(3, 2, 3, [None, None], [0, 1])
    assert res["sd"] == 0 and res["mass"] == 1


def test_rectangle_single_value_example():
    rect = [[(2,)], None]
    a = rectangle_conditional_probe(3, 1, 3, rect, [0])
    b = rectangle_probe_bruteforce(3, 1, 3, rect, [0])
    assert a["sd"] == b["sd"]
    assert a["mass"] == Fraction(1, 3) == b["mass"]


def _random_rect(rng, k, m, p):
    rect = []
    for _ in range(k - 1):
        if rng.random() < 0.3:
            rect.append(None)
            continue
        vecs = [tuple(int(v) for v in rng.integers(0, p, size=m))
                for _ in range(int(rng.integers(1, p**m + 1)))]
        rect.append(vecs)
    return rect


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 4), st.integers(1, 3), st.sampled_from([2, 3, 5]), st.integers(0, 10**6))
def test_rectangle_matches_bruteforce(k, m, p, seed):
    if p ** (m * (k - 1)) > 10**4:
        return
    rng = np.random.default_rng(seed)
    rect = _random_rect(rng, k, m, p)
    L = sorted(rng.choice(m, size=int(rng.integers(1, m + 1)), replace=False).tolist())
    a = rectangle_conditional_probe(k, m, p, rect, L)
    b = rectangle_probe_bruteforce(k, m, p, rect, L)
    assert a["sd"] == b["sd"]
    assert a["mass"] == b["mass"]
    expected_mass = Fraction(1)
    for r in rect:
        if r is not None:
            expected_mass *= Fraction(len(set(r)), p**m)
    assert a["mass"] == expected_mass


def test_rectangle_cap_refusal():
    with pytest.raises(EnumerationCapError):
        rectangle_conditional_probe(6, 4, 5, [None] * 5, [0])
