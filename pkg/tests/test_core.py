import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from commlab.core import (CRS, DETERMINISTIC, PRIVATE, Coins, CostReport, FunctionTable,
                          InputPartition, Message, OneWayProtocol, ProductDistribution,
                          builtin_function, derive_seed, disjointness_demo,
                          disjointness_instance, measure_error, oneway_dcc2_oracle,
                          optimal_oneway_protocol, row_classes, run_protocol, run_transcript)
from commlab.errors import (ConfigurationError, EngineViolation, EnumerationCapError)
from commlab.numeric import ExactDist
from commlab.sumequal import equality_fingerprint_protocol, sumequal_exact_protocol


def xor_chain(t):
    def message_fn(j, block, incoming, coins):
        acc = 0 if incoming is None else int(incoming)
        return str((acc + sum(block)) % 2)

    def output_fn(block, incoming, coins):
        return (int(incoming) + sum(block)) % 2

    return OneWayProtocol(t, message_fn, output_fn, DETERMINISTIC, "xor")


def constant(t, c):
    return OneWayProtocol(t, lambda j, b, m, coins: "", lambda b, m, coins: c)


# ---------------------------------------------------------------------------
# run_protocol


def test_parity_chain_example():
    out, rep = run_protocol(xor_chain(3), InputPartition.singletons(3), (1, 0, 1))
    assert out == 0
    assert rep.per_message_bits == [1, 1]


def test_constant_protocol_sends_nothing():
    out, rep = run_protocol(constant(4, 7), InputPartition.singletons(4), (1, 2, 3, 4))
    assert out == 7
    assert rep.per_message_bits == [0, 0, 0]
    assert rep.total_bits == 0


def test_equality_fingerprint_accepts_equal_inputs_every_seed():
    p = equality_fingerprint_protocol(257, 0.1)
    part = InputPartition.singletons(2)
    for seed in range(200):
        out, _ = run_protocol(p, part, (123, 123), seed=seed)
        assert out == 1


def test_arity_mismatch():
    with pytest.raises(ConfigurationError):
        run_protocol(xor_chain(3), InputPartition.singletons(3), (1, 0))
    with pytest.raises(ConfigurationError):
        run_protocol(xor_chain(2), InputPartition.singletons(3), (1, 0, 1))


def test_wrong_sender_is_engine_violation():
    p = OneWayProtocol(2, lambda j, b, m, c: Message(j + 1, "1"), lambda b, m, c: 0)
    with pytest.raises(EngineViolation):
        run_protocol(p, InputPartition.singletons(2), (0, 0))


def test_message_fn_sees_only_its_block():
    seen = []

    def message_fn(j, block, incoming, coins):
        seen.append((j, block))
        return "0"

    p = OneWayProtocol(3, message_fn, lambda b, m, c: 0)
    run_protocol(p, InputPartition.from_cuts([0, 2, 3, 5]), ("a", "b", "c", "d", "e"))
    assert seen == [(1, ("a", "b")), (2, ("c",))]


def test_coins_access_is_enforced():
    det = Coins(DETERMINISTIC, 1, 1)
    with pytest.raises(EngineViolation):
        det.private_rng()
    with pytest.raises(EngineViolation):
        det.crs_rng()
    priv = Coins(PRIVATE, 1, 1)
    with pytest.raises(EngineViolation):
        priv.crs_rng()
    crs1, crs2 = Coins(CRS, 5, 1), Coins(CRS, 5, 2)
    assert crs1.crs_seed == crs2.crs_seed
    assert Coins(PRIVATE, 5, 1).private_rng().random() != Coins(PRIVATE, 5, 2).private_rng().random()


def test_replay_determinism():
    p = equality_fingerprint_protocol(257, 0.1)
    part = InputPartition.singletons(2)
    assert run_transcript(p, part, (3, 9), seed=11) == run_transcript(p, part, (3, 9), seed=11)


def test_derive_seed_is_stable():
    assert derive_seed(42, "coins", 3) == derive_seed(42, "coins", 3)
    assert derive_seed(42, "coins", 3) != derive_seed(42, "coins", 4)
    assert derive_seed(42, "coins", 3) != derive_seed(42, "input", 3)


# ---------------------------------------------------------------------------
# partitions and cost reports


@given(st.lists(st.integers(0, 4), min_size=1, max_size=6))
def test_partition_from_cuts_covers_inputs(steps):
    cuts = [0]
    for s in steps:
        cuts.append(cuts[-1] + s)
    part = InputPartition.from_cuts(cuts)
    flat = [i for b in part.blocks for i in b]
    assert sorted(flat) == list(range(1, cuts[-1] + 1))
    assert part.t == len(steps)


def test_partition_rejects_overlap():
    with pytest.raises(ConfigurationError):
        InputPartition(3, ((1, 2), (2, 3)))
    with pytest.raises(ConfigurationError):
        InputPartition(3, ((1,), (3, 2)), contiguous=True)


@given(st.lists(st.integers(0, 500), max_size=10))
def test_cost_report_identities(bits):
    rep = CostReport.from_bits(bits)
    assert rep.total_bits == sum(bits)
    assert rep.max_message_bits == max(bits, default=0)
    assert json.loads(rep.to_json())["total_bits"] == sum(bits)


def test_cost_report_rejects_bad_error():
    with pytest.raises(AssertionError):
        CostReport([1], 1, 1, error_estimate=1.5)


# ---------------------------------------------------------------------------
# measure_error


def test_exact_sumequal_protocol_has_zero_error_exhaustively():
    f = builtin_function("sum-equal-mod-m", 3, m=5)
    rep = measure_error(sumequal_exact_protocol(3, 5), f, InputPartition.singletons(3))
    assert rep.error_kind == "exact-enumeration"
    assert rep.error_estimate == 0
    assert rep.worst_case_error == 0


def test_always_wrong_protocol_has_error_one():
    f = builtin_function("parity", 3)
    wrong = OneWayProtocol(3, xor_chain(3).message_fn,
                           lambda b, m, c: 1 - xor_chain(3).output_fn(b, m, c))
    rep = measure_error(wrong, f, InputPartition.singletons(3))
    assert rep.error_estimate == 1.0


def test_equality_fingerprint_monte_carlo_error():
    p = equality_fingerprint_protocol(257, 0.1)
    f = FunctionTable(2, [tuple(range(257))] * 2, lambda xs: int(xs[0] == xs[1]))

    def unequal(rng):
        x = rng.randrange(257)
        return x, (x + rng.randrange(1, 257)) % 257

    rep = measure_error(p, f, InputPartition.singletons(2), unequal, trials=20000, seed=3)
    assert rep.error_kind == "monte-carlo"
    assert rep.trials == 20000
    assert rep.error_estimate <= 0.1


def test_parallel_equals_sequential():
    p = equality_fingerprint_protocol(257, 0.1)
    f = FunctionTable(2, [tuple(range(257))] * 2, lambda xs: int(xs[0] == xs[1]))
    mu = ProductDistribution([ExactDist.uniform(range(257))] * 2)
    part = InputPartition.singletons(2)
    a = measure_error(p, f, part, mu, trials=3000, seed=9)
    b = measure_error(p, f, part, mu, trials=3000, seed=9, workers=4)
    assert a.to_json() == b.to_json()


def test_exhaustive_refuses_large_domain():
    f = builtin_function("sum-equal-mod-m", 8, m=10)
    with pytest.raises(EnumerationCapError):
        measure_error(sumequal_exact_protocol(8, 10), f, InputPartition.singletons(8), cap=1000)


def test_distribution_input_source():
    f = builtin_function("parity", 2)
    d = ExactDist.from_mapping({(0, 0): 1, (1, 1): 3}, normalize=True)
    rep = measure_error(constant(2, 1), f, InputPartition.singletons(2), d)
    assert rep.distributional_error == 1.0


# ---------------------------------------------------------------------------
# one-way deterministic oracle


def test_dcc_equality_on_four():
    assert oneway_dcc2_oracle(builtin_function("equality", 2, n=4), 1) == 2


def test_dcc_constant_function():
    f = FunctionTable(3, [(0, 1, 2)] * 3, lambda xs: 5)
    assert oneway_dcc2_oracle(f, 1) == 0
    assert oneway_dcc2_oracle(f, 2) == 0


def test_dcc_parity_cut_two():
    assert oneway_dcc2_oracle(builtin_function("parity", 4), 2) == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 3), st.integers(2, 3), st.integers(0, 2**32 - 1))
def test_dcc_monotone_under_coarsening(k, a, seed):
    rng = random.Random(seed)
    alph = [tuple(range(a))] * k
    table = {}
    f0 = FunctionTable(k, alph, lambda xs: 0)
    for xs in f0.domain():
        table[xs] = rng.randrange(4)
    f = FunctionTable.from_table(alph, table)
    g = f.coarsen(lambda v: v % 2)
    for cut in range(1, k):
        assert oneway_dcc2_oracle(g, cut) <= oneway_dcc2_oracle(f, cut)


def test_optimal_protocol_is_exact():
    f = builtin_function("equality", 3, n=3)
    for cut in (1, 2):
        p = optimal_oneway_protocol(f, cut)
        rep = measure_error(p, f, InputPartition.two_party(3, cut))
        assert rep.error_estimate == 0
        assert rep.max_message_bits == oneway_dcc2_oracle(f, cut)
        assert len(row_classes(f, cut)[1]) >= 1


# ---------------------------------------------------------------------------
# function tables


def test_function_table_json_round_trip():
    obj = {"arity": 2, "alphabets": [[0, 1], [0, 1]],
           "rows": [[0, 0, 1], [0, 1, 0], [1, 0, 0], [1, 1, 1]]}
    f = FunctionTable.from_json(json.dumps(obj))
    assert [f(xs) for xs in f.domain()] == [1, 0, 0, 1]


def test_builtin_symmetry_spot_check():
    for f in (builtin_function("parity", 4), builtin_function("sum-equal-mod-m", 3, m=4)):
        assert f.spot_check_symmetry(random.Random(0))


def test_unknown_builtin():
    with pytest.raises(ConfigurationError):
        builtin_function("nope", 2)


# ---------------------------------------------------------------------------
# disjointness


@pytest.mark.parametrize("t", [2, 3, 5, 8])
def test_disjointness_disjoint_case(t):
    demo = disjointness_demo(t, 12 * t, "disjoint", seed=t)
    assert demo.output == 0
    assert demo.report.per_message_bits == [1] * (t - 2)
    assert demo.total_with_output == t - 2 + 1


@pytest.mark.parametrize("t", [2, 3, 5, 8])
def test_disjointness_intersecting_case(t):
    assert disjointness_demo(t, 12 * t, "unique-intersection", seed=t).output == 1


@given(st.integers(2, 6), st.integers(1, 5), st.sampled_from(["disjoint", "unique-intersection"]),
       st.integers(0, 10**6))
def test_disjointness_instance_promise(t, u, case, seed):
    inst = disjointness_instance(t, t * u, case, random.Random(seed))
    counts = [sum(col) for col in zip(*inst)]
    shared = [c for c in counts if c > 1]
    if case == "disjoint":
        assert not shared
    else:
        assert shared == [t]
