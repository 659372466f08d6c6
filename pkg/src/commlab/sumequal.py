"""Sum-Equal and Equality protocols, and hard input distributions.

Output convention everywhere: 1 means "the sum equals the target" (or x = y).
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from .core import (
    CRS,
    DETERMINISTIC,
    PRIVATE,
    OneWayProtocol,
    ProductDistribution,
    decode_uint,
    derive_seed,
    encode_uint,
)
from .errors import (
    EmptyPrimeRangeError,
    EnumerationCapError,
    OutsideRegimeWarning,
    PreconditionError,
    WidthOverflowError,
)
from .numeric import ExactDist, ceil_log2, is_prime, lcm_upto, primes_in_range


# ---------------------------------------------------------------------------
# prime selection


def _primes_or_raise(lo: int, hi: int) -> tuple[int, ...]:
    primes = primes_in_range(lo, hi) if hi >= max(lo, 2) and lo >= 2 else ()
    if not primes:
        raise EmptyPrimeRangeError(
            f"no primes in [{lo}, {hi}]; widen the range (smaller delta or larger modulus)")
    return primes


@lru_cache(maxsize=1 << 16)
def _draw_prime(seed: int, lo: int, hi: int) -> int:
    primes = primes_in_range(lo, hi)
    return primes[seed % len(primes)]


def _prime_from_rng_seed(seed: int, lo: int, hi: int) -> int:
    q = _draw_prime(seed, lo, hi)
    assert lo <= q <= hi
    return q


def equality_prime_range(p_modulus: int, delta: float) -> tuple[int, int]:
    """[L, 2L] with L = delta^-2 * log2(p)^2, rounded inward to integers."""
    lo_real = math.log2(p_modulus) ** 2 / delta**2
    return max(2, math.ceil(lo_real)), math.floor(2 * lo_real)


def fingerprint_prime_range(discrepancy: int, delta: float, candidates: int = 1,
                            c: float = 1.0) -> tuple[int, int]:
    """Smallest doubling L with at least ceil(c*candidates*log2(D)/delta) primes in [L, 2L].

    A nonzero integer of absolute value at most D has fewer than log2(D)
    prime divisors >= 2, so this many primes make a false accept at most delta.
    """
    need = max(1, math.ceil(c * candidates * max(1.0, math.log2(max(discrepancy, 2))) / delta))
    lo = 2
    while len(primes_in_range(lo, 2 * lo)) < need:
        lo *= 2
    return lo, 2 * lo


# ---------------------------------------------------------------------------
# equality (two players)


def equality_fingerprint_protocol(p_modulus: int, delta: float,
                                  prime_range: tuple[int, int] | None = None) -> OneWayProtocol:
    """Alice sends (q, x mod q) for a CRS prime q; Bob accepts iff y mod q matches.

    Each field takes q.bit_length() bits, which is ceil(log2 q) for odd primes.
    """
    if not 0 < delta < 0.5:
        raise PreconditionError("delta must lie in (0, 1/2)")
    if p_modulus < 2:
        raise PreconditionError("modulus must be >= 2")
    lo, hi = prime_range if prime_range is not None else equality_prime_range(p_modulus, delta)
    primes = _primes_or_raise(lo, hi)

    def draw(coins):
        return _prime_from_rng_seed(coins.crs_seed, lo, hi)

    def message_fn(j, block, incoming, coins):
        q = draw(coins)
        w = q.bit_length()
        return (encode_uint(q, w), encode_uint(block[0] % q, w))

    def output_fn(block, incoming, coins):
        q = decode_uint(incoming[0])
        return int(block[0] % q == decode_uint(incoming[1]))

    width = primes[-1].bit_length()
    return OneWayProtocol(2, message_fn, output_fn, CRS, "equality-fingerprint",
                          static_bits=2 * width,
                          info={"prime_range": (lo, hi), "primes": primes})


def equality_exact_error(protocol: OneWayProtocol, x: int, y: int) -> Fraction:
    """Exact false-accept probability over the prime for a fixed pair."""
    primes = protocol.info["primes"]
    if x == y:
        return Fraction(0)
    return Fraction(sum(1 for q in primes if (x - y) % q == 0), len(primes))


# ---------------------------------------------------------------------------
# Sum-Equal


def sumequal_exact_protocol(k: int, m_modulus: int, target: int = 0,
                            t: int | None = None) -> OneWayProtocol:
    """Forward the running sum mod m; zero error, ceil(log2 m) bits per message."""
    if k < 2:
        raise PreconditionError("Sum-Equal needs k >= 2")
    m = int(m_modulus)
    w = ceil_log2(m)
    target %= m

    def message_fn(j, block, incoming, coins):
        s = decode_uint(incoming) if incoming is not None else 0
        return encode_uint((s + sum(block)) % m, w)

    def output_fn(block, incoming, coins):
        s = decode_uint(incoming) if incoming is not None else 0
        return int((s + sum(block)) % m == target)

    return OneWayProtocol(k if t is None else t, message_fn, output_fn, DETERMINISTIC,
                          f"sumequal-exact-mod-{m}", static_bits=w,
                          summary=lambda block: sum(block) % m,
                          info={"modulus": m, "target": target})


def sumequal_fingerprint_protocol(k: int, delta: float, *, modulus: int | None = None,
                                  bound: int | None = None, target: int = 0,
                                  t: int | None = None, crs: bool = True,
                                  prime_range: tuple[int, int] | None = None,
                                  c: float = 1.0) -> OneWayProtocol:
    """Running-sum fingerprint modulo a random prime q.

    Exactly one of ``modulus`` (inputs in Z_m) or ``bound`` (integers with
    |x_j| <= bound for j < k and |x_k| <= k*bound) must be given. Players
    forward the integer running sum mod q; the last player accepts iff the
    total is congruent mod q to some admissible value of the sum (the target
    itself, or every integer in [0, k(m-1)] congruent to it mod m). Never
    rejects a true instance. With ``crs=False`` player 1 draws q privately
    and every message carries q as well.
    """
    if not 0 < delta < 0.5:
        raise PreconditionError("delta must lie in (0, 1/2)")
    if (modulus is None) == (bound is None):
        raise PreconditionError("give exactly one of modulus or bound")
    if k < 2:
        raise PreconditionError("Sum-Equal needs k >= 2")
    if modulus is not None:
        m = int(modulus)
        tgt = target % m
        candidates = tuple(range(tgt, k * (m - 1) + 1, m))
        discrepancy = k * (m - 1)
        reduce_input = lambda x: x % m  # noqa: E731
    else:
        m = None
        candidates = (int(target),)
        discrepancy = (2 * k - 1) * int(bound) + abs(int(target))
        reduce_input = int
    lo, hi = prime_range if prime_range is not None else \
        fingerprint_prime_range(discrepancy, delta, len(candidates), c)
    primes = _primes_or_raise(lo, hi)
    width = primes[-1].bit_length()

    @lru_cache(maxsize=4096)
    def accept_residues(q: int) -> frozenset:
        return frozenset(cand % q for cand in candidates)

    def prime_for(coins):
        if crs:
            return _prime_from_rng_seed(coins.crs_seed, lo, hi)
        return primes[coins.private_rng().randrange(len(primes))]

    def unpack(incoming, coins):
        if incoming is None:
            return prime_for(coins), 0
        if crs:
            return prime_for(coins), decode_uint(incoming)
        return decode_uint(incoming[0]), decode_uint(incoming[1])

    def message_fn(j, block, incoming, coins):
        q, s = unpack(incoming, coins)
        s = (s + sum(map(reduce_input, block))) % q
        w = q.bit_length()
        return format(s, f"0{w}b") if crs else (format(q, f"0{w}b"), format(s, f"0{w}b"))

    def output_fn(block, incoming, coins):
        q, s = unpack(incoming, coins)
        s = (s + sum(map(reduce_input, block))) % q
        return int(s in accept_residues(q))

    return OneWayProtocol(
        k if t is None else t, message_fn, output_fn, CRS if crs else PRIVATE,
        "sumequal-fingerprint", static_bits=width if crs else 2 * width,
        summary=lambda block: sum(reduce_input(x) for x in block),
        info={"prime_range": (lo, hi), "primes": primes, "candidates": candidates,
              "modulus": m, "bound": bound, "target": target, "delta": delta})


def sumequal_truth(protocol: OneWayProtocol, inputs: Sequence[int]) -> int:
    info = protocol.info
    if info.get("modulus") is not None:
        return int(sum(inputs) % info["modulus"] == info["target"] % info["modulus"])
    return int(sum(inputs) == info["target"])


def fingerprint_exact_error(protocol: OneWayProtocol, inputs: Sequence[int]) -> Fraction:
    """Exact probability over the prime that the fingerprint protocol errs on ``inputs``.

    Counts primes in the range for which the total is congruent to an
    admissible value although the true answer is "not equal".
    """
    info = protocol.info
    primes = info["primes"]
    if sumequal_truth(protocol, inputs):
        return Fraction(0)
    if info.get("modulus") is not None:
        s = sum(x % info["modulus"] for x in inputs)
    else:
        s = sum(inputs)
    bad = sum(1 for q in primes if any((s - c) % q == 0 for c in info["candidates"]))
    return Fraction(bad, len(primes))


# ---------------------------------------------------------------------------
# hard distributions


def viola_product_distribution(k: int, p: int, seed: int = 0) -> ProductDistribution:
    """Uniform distribution over Z_p^k (independent coordinates)."""
    if not is_prime(p):
        raise PreconditionError(f"{p} is not prime")
    return ProductDistribution([ExactDist.uniform(range(p))] * k, seed=seed)


def _hard_regime_p(k: int, p: int) -> bool:
    r = k ** 0.25
    return r < p < 2 * r


@dataclass
class DirectSumSample:
    """m copies: row i of X sums to 0 mod p iff V[i] == 1."""

    m: int
    p: int
    X: np.ndarray
    V: np.ndarray
    in_regime: bool = True

    def to_json(self) -> str:
        return json.dumps({"m": self.m, "p": self.p, "X": self.X.tolist(),
                           "V": self.V.tolist(), "in_regime": self.in_regime})

    @classmethod
    def from_json(cls, text: str) -> "DirectSumSample":
        o = json.loads(text)
        return cls(o["m"], o["p"], np.asarray(o["X"], dtype=np.int64),
                   np.asarray(o["V"], dtype=np.int64), o["in_regime"])


def direct_sum_F(X: np.ndarray, p: int) -> np.ndarray:
    """Per-row Sum-Equal answer (1 = row sums to 0 mod p)."""
    return (X.sum(axis=1) % p == 0).astype(np.int64)


def direct_sum_distribution(k: int, m: int, p: int, seed: int = 0) -> DirectSumSample:
    """m copies of H = G/2 + B/2 over Z_p^k.

    G is uniform conditioned on summing to 0; B adds 1 to G's last
    coordinate. V records the coin (1 for G).
    """
    if not is_prime(p):
        raise PreconditionError(f"{p} is not prime")
    in_regime = _hard_regime_p(k, p)
    if not in_regime:
        warnings.warn(f"p={p} outside ({k}^(1/4), 2*{k}^(1/4))", OutsideRegimeWarning,
                      stacklevel=2)
    rng = np.random.default_rng(derive_seed(seed, "direct-sum", 0))
    X = rng.integers(0, p, size=(m, k), dtype=np.int64)
    V = rng.integers(0, 2, size=m, dtype=np.int64)
    X[:, k - 1] = (-X[:, : k - 1].sum(axis=1) + (1 - V)) % p
    return DirectSumSample(m, p, X, V, in_regime)


@dataclass
class AugIndexSample:
    """m integer Sum-Equal copies with sums in {0, M}, an index n and later answers."""

    k: int
    m: int
    a: int
    M: int
    X: np.ndarray
    V: np.ndarray
    n: int
    Y: dict
    last_within_bound: bool
    c_prime_needed: float

    def answers_after(self) -> dict:
        return dict(self.Y)

    def to_json(self) -> str:
        return json.dumps({"k": self.k, "m": self.m, "a": self.a, "M": self.M,
                           "X": self.X.tolist(), "V": self.V.tolist(), "n": self.n,
                           "Y": {str(j): v for j, v in self.Y.items()},
                           "last_within_bound": self.last_within_bound,
                           "c_prime_needed": self.c_prime_needed})

    @classmethod
    def from_json(cls, text: str) -> "AugIndexSample":
        o = json.loads(text)
        return cls(o["k"], o["m"], o["a"], o["M"], np.asarray(o["X"], dtype=np.int64),
                   np.asarray(o["V"], dtype=np.int64), o["n"],
                   {int(j): v for j, v in o["Y"].items()}, o["last_within_bound"],
                   o["c_prime_needed"])


def default_magnitude(k: int) -> int:
    return max(1, int(math.log2(k) // 8)) if k >= 1 else 1


def augindex_distribution(k: int, m: int, a: int | None = None, seed: int = 0,
                          max_bits: int = 62) -> AugIndexSample:
    """Integer hard distribution: per copy G (sum 0) or B (sum M = lcm(1..a)).

    G_j, B_j are uniform in [1..a] for j < k; the last coordinate closes the
    sum to 0 (G) or M (B). V[i] = 1 marks a G copy. The index n is uniform in
    [1..m] and Y holds the answers of copies n+1..m.
    """
    if k < 2 or m < 1:
        raise PreconditionError("need k >= 2 and m >= 1")
    a = default_magnitude(k) if a is None else int(a)
    if a < 1:
        raise PreconditionError("a >= 1")
    try:
        M = lcm_upto(a, max_bits=max_bits)
    except WidthOverflowError as exc:
        ok = a
        while ok > 1 and lcm_upto(ok).bit_length() > max_bits:
            ok -= 1
        raise WidthOverflowError(f"{exc}; try a <= {ok}") from None
    if (k * max(a, M)).bit_length() > max_bits:
        raise WidthOverflowError(f"row sums with k={k}, a={a} exceed {max_bits} bits")
    rng = np.random.default_rng(derive_seed(seed, "augindex", 0))
    X = rng.integers(1, a + 1, size=(m, k), dtype=np.int64)
    V = rng.integers(0, 2, size=m, dtype=np.int64)
    X[:, k - 1] = -X[:, : k - 1].sum(axis=1) + (1 - V) * M
    n = int(rng.integers(1, m + 1))
    Y = {j: int(V[j - 1]) for j in range(n + 1, m + 1)}
    last_ok = bool(np.all(np.abs(X[:, k - 1]) <= k * a))
    return AugIndexSample(k, m, a, M, X, V, n, Y, last_ok,
                          math.log2(M) / a if M > 1 else 0.0)


# ---------------------------------------------------------------------------
# rectangle probe


def _vec_index(vec: Sequence[int], p: int) -> int:
    idx = 0
    for v in vec:
        idx = idx * p + (v % p)
    return idx


def _projected_counts(allowed, m: int, p: int, L: Sequence[int]) -> np.ndarray:
    d = len(L)
    if allowed is None:
        counts = np.zeros(p**d, dtype=np.int64)
        counts[:] = p ** (m - d)
        return counts
    counts = np.zeros(p**d, dtype=np.int64)
    for vec in allowed:
        counts[_vec_index([vec[i] for i in L], p)] += 1
    return counts


def _group_convolve(a: np.ndarray, b: np.ndarray, p: int, d: int) -> np.ndarray:
    A = a.reshape((p,) * d) if d else a.reshape(())
    B = b.reshape((p,) * d) if d else b.reshape(())
    if d == 0:
        return (a * b).reshape(1)
    out = np.zeros_like(A)
    for idx in zip(*np.nonzero(A)):
        out += A[idx] * np.roll(B, shift=idx, axis=tuple(range(d)))
    return out.reshape(-1)


def _negate_index_map(p: int, d: int) -> np.ndarray:
    grid = np.indices((p,) * d).reshape(d, -1) if d else np.zeros((0, 1), dtype=np.int64)
    neg = (-grid) % p
    if d == 0:
        return np.zeros(1, dtype=np.int64)
    return np.ravel_multi_index(tuple(neg), (p,) * d)


def _sd_to_uniform(counts: np.ndarray) -> Fraction:
    total = int(counts.sum())
    size = counts.size
    return Fraction(sum(abs(int(c) * size - total) for c in counts), 2 * size * total)


def rectangle_conditional_probe(k: int, m: int, p: int, rectangle: Sequence,
                                L: Sequence[int], cap: int = 10**7) -> dict:
    """SD from uniform of G_k restricted to copies L, given G_{-k} lies in a rectangle.

    ``rectangle`` lists, for players 1..k-1, either ``None`` (no restriction)
    or the allowed vectors in Z_p^m. Copies in L are 0-based. Returns the
    exact SD, the rectangle's mass and the conditional counts.
    """
    if len(rectangle) != k - 1:
        raise PreconditionError("rectangle needs one entry per player 1..k-1")
    total_points = p ** (m * (k - 1))
    if total_points > cap:
        raise EnumerationCapError(total_points, cap, "rectangle probe")
    L = list(L)
    d = len(L)
    acc = None
    mass = Fraction(1)
    for allowed in rectangle:
        if allowed is not None:
            allowed = [tuple(v) for v in dict.fromkeys(tuple(v) for v in allowed)]
            if any(len(v) != m for v in allowed):
                raise PreconditionError("rectangle vectors must have length m")
        counts = _projected_counts(allowed, m, p, L)
        mass *= Fraction(p**m if allowed is None else len(allowed), p**m)
        acc = counts if acc is None else _group_convolve(acc, counts, p, d)
    if mass == 0:
        raise PreconditionError("empty rectangle")
    cond = acc[_negate_index_map(p, d)]
    return {"sd": _sd_to_uniform(cond), "mass": mass, "counts": cond}


def rectangle_probe_bruteforce(k: int, m: int, p: int, rectangle: Sequence,
                               L: Sequence[int], cap: int = 10**5) -> dict:
    """Independent enumeration oracle for :func:`rectangle_conditional_probe`."""
    total_points = p ** (m * (k - 1))
    if total_points > cap:
        raise EnumerationCapError(total_points, cap, "brute-force rectangle probe")
    sets = [None if r is None else {tuple(v) for v in r} for r in rectangle]
    d = len(L)
    counts = np.zeros(p**d, dtype=np.int64)
    inside = 0
    vectors = list(itertools.product(range(p), repeat=m))
    for rows in itertools.product(vectors, repeat=k - 1):
        if any(s is not None and r not in s for s, r in zip(sets, rows)):
            continue
        inside += 1
        last = [(-sum(r[i] for r in rows)) % p for i in range(m)]
        counts[_vec_index([last[i] for i in L], p)] += 1
    return {"sd": _sd_to_uniform(counts), "mass": Fraction(inside, total_points),
            "counts": counts}
