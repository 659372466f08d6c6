"""Exact finite-distribution analytics, number theory and hashing.

This is the oracle layer: everything here is either exact (rational mode,
big integers) or a plain float evaluation of a closed formula.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Any, Hashable, Iterable, Mapping, Sequence

from .errors import EnumerationCapError, PreconditionError, WidthOverflowError

FLOAT_TOL = 1e-12

# ---------------------------------------------------------------------------
# primes, lcm

# Deterministic for every n < 3.3e24, in particular all 64-bit integers.
_MR_WITNESSES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, exact for all 64-bit inputs."""
    if n < 2:
        return False
    for p in _MR_WITNESSES:
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_WITNESSES:
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@lru_cache(maxsize=256)
def _primes_in_range(lo: int, hi: int) -> tuple[int, ...]:
    out = []
    if lo <= 2 <= hi:
        out.append(2)
    start = max(3, lo | 1)
    for n in range(start, hi + 1, 2):
        if is_prime(n):
            out.append(n)
    return tuple(out)


def primes_in_range(lo: int, hi: int) -> tuple[int, ...]:
    """All primes in the closed interval [lo, hi]."""
    if lo < 2 or hi < lo:
        raise PreconditionError(f"need hi >= lo >= 2, got [{lo}, {hi}]")
    return _primes_in_range(int(lo), int(hi))


def lcm_upto(a: int, max_bits: int | None = None) -> int:
    """Smallest positive integer divisible by every integer in [1, a].

    With ``max_bits`` set, refuses results that do not fit a signed integer
    of that width instead of silently returning a big integer.
    """
    if a < 1:
        raise PreconditionError("lcm_upto needs a >= 1")
    m = 1
    for i in range(2, a + 1):
        m = m * i // math.gcd(m, i)
    if max_bits is not None and m.bit_length() > max_bits:
        raise WidthOverflowError(
            f"lcm_upto({a}) = {m} needs {m.bit_length()} bits > {max_bits}"
        )
    return m


def ceil_log2(x: int) -> int:
    """Bits needed to write one of ``x`` distinct values (0 for x <= 1)."""
    if x <= 1:
        return 0
    return (int(x) - 1).bit_length()


# ---------------------------------------------------------------------------
# distributions


def _sort_key(v):
    return (type(v).__name__, v) if not isinstance(v, (int, float, Fraction)) else ("", v)


def _sorted_support(values: Iterable[Hashable]) -> list:
    values = list(values)
    try:
        return sorted(values)
    except TypeError:
        return sorted(values, key=lambda v: (type(v).__name__, repr(v)))


@dataclass(frozen=True)
class ExactDist:
    """Finite probability vector over an explicit, sorted support.

    ``rational=True`` stores :class:`fractions.Fraction` probabilities and
    requires total mass exactly one; float mode tolerates 1e-12.
    """

    support: tuple
    probs: tuple
    rational: bool = True

    def __post_init__(self):
        if len(self.support) != len(self.probs):
            raise PreconditionError("support and probs differ in length")
        if len(set(self.support)) != len(self.support):
            raise PreconditionError("duplicate support values")
        if any(p < 0 for p in self.probs):
            raise PreconditionError("negative probability")
        mass = sum(self.probs)
        if self.rational:
            if mass != 1:
                raise PreconditionError(f"mass is {mass}, expected exactly 1")
        elif abs(mass - 1.0) > FLOAT_TOL * max(1, len(self.probs)):
            raise PreconditionError(f"mass is {mass!r}, expected 1")

    @classmethod
    def from_mapping(cls, weights: Mapping[Hashable, Any], rational: bool | None = None,
                     normalize: bool = False) -> "ExactDist":
        if rational is None:
            rational = all(isinstance(w, (int, Fraction)) for w in weights.values())
        conv = Fraction if rational else float
        items = {k: conv(w) for k, w in weights.items()}
        if normalize:
            total = sum(items.values())
            items = {k: w / total for k, w in items.items()}
        items = {k: w for k, w in items.items() if w != 0}
        support = _sorted_support(items)
        return cls(tuple(support), tuple(items[s] for s in support), rational)

    @classmethod
    def uniform(cls, values: Iterable[Hashable]) -> "ExactDist":
        values = list(dict.fromkeys(values))
        return cls.from_mapping({v: Fraction(1, len(values)) for v in values})

    @classmethod
    def point(cls, value: Hashable) -> "ExactDist":
        return cls((value,), (Fraction(1),))

    @classmethod
    def binomial(cls, t: int) -> "ExactDist":
        """Bin(t, 1/2) in rational mode."""
        den = 1 << t
        return cls.from_mapping({s: Fraction(math.comb(t, s), den) for s in range(t + 1)})

    def prob(self, value) -> Any:
        try:
            return self.probs[self.support.index(value)]
        except ValueError:
            return Fraction(0) if self.rational else 0.0

    def as_dict(self) -> dict:
        return dict(zip(self.support, self.probs))

    def map(self, fn) -> "ExactDist":
        out: dict = {}
        for v, p in zip(self.support, self.probs):
            key = fn(v)
            out[key] = out.get(key, 0) + p
        return ExactDist.from_mapping(out, rational=self.rational)

    def to_float(self) -> "ExactDist":
        return ExactDist(self.support, tuple(float(p) for p in self.probs), rational=False)

    def marginal(self, axis: int) -> "ExactDist":
        return self.map(lambda v: v[axis])

    def to_json(self) -> str:
        probs = [str(p) if self.rational else p for p in self.probs]
        return json.dumps({"support": list(self.support), "probs": probs,
                           "rational": self.rational})

    @classmethod
    def from_json(cls, text: str) -> "ExactDist":
        obj = json.loads(text)
        rational = obj.get("rational", True)
        support = [tuple(s) if isinstance(s, list) else s for s in obj["support"]]
        probs = [Fraction(p) if rational else float(p) for p in obj["probs"]]
        return cls.from_mapping(dict(zip(support, probs)), rational=rational)


def convolve(a: ExactDist, b: ExactDist, op=lambda x, y: x + y) -> ExactDist:
    """Distribution of op(X, Y) for independent X ~ a, Y ~ b."""
    out: dict = {}
    for x, p in zip(a.support, a.probs):
        for y, q in zip(b.support, b.probs):
            key = op(x, y)
            out[key] = out.get(key, 0) + p * q
    return ExactDist.from_mapping(out, rational=a.rational and b.rational)


def statistical_distance(a: ExactDist, b: ExactDist):
    """Half the L1 distance; exact Fraction when both inputs are rational."""
    da, db = a.as_dict(), b.as_dict()
    total = sum(abs(da.get(v, 0) - db.get(v, 0)) for v in set(da) | set(db))
    if a.rational and b.rational:
        return Fraction(total) / 2
    return float(total) / 2


def entropy(d: ExactDist) -> float:
    """Shannon entropy in bits."""
    return -sum(float(p) * math.log2(float(p)) for p in d.probs if p > 0) + 0.0


def min_entropy(d: ExactDist) -> float:
    return -math.log2(float(max(d.probs))) + 0.0


def mutual_information(joint: ExactDist) -> float:
    """I(A;B) = H(A) + H(B) - H(A,B) for a distribution over pairs."""
    return max(0.0, entropy(joint.marginal(0)) + entropy(joint.marginal(1)) - entropy(joint))


# ---------------------------------------------------------------------------
# two-point decomposition


def two_point_decompose(d: ExactDist) -> list[tuple[Any, frozenset]]:
    """Write ``d`` as a convex combination of uniform distributions on pairs.

    Requires max probability <= 1/2 (min-entropy >= 1). Greedy: repeatedly
    pair the two heaviest values and remove as much mass t from each as keeps
    the remaining max at most half the remaining mass.
    """
    if len(d.support) < 2 or max(d.probs) * 2 > 1:
        raise PreconditionError("two_point_decompose needs support >= 2 and max prob <= 1/2")
    zero = Fraction(0) if d.rational else 0.0
    eps = 0 if d.rational else 1e-15
    mass = {v: p for v, p in zip(d.support, d.probs)}
    remaining = sum(mass.values())
    parts: list[tuple[Any, frozenset]] = []
    for _ in range(2 * len(d.support)):
        live = sorted((v for v in mass if mass[v] > eps), key=lambda v: mass[v], reverse=True)
        if len(live) < 2:
            break
        x, y = live[0], live[1]
        p3 = mass[live[2]] if len(live) > 2 else zero
        t = min(mass[y], remaining / 2 - p3)
        if t <= eps:
            break
        mass[x] -= t
        mass[y] -= t
        remaining -= 2 * t
        parts.append((2 * t, frozenset((x, y))))
    recon = reconstruct_mixture(parts, rational=d.rational)
    err = statistical_distance(recon, d) if parts else 1
    if (d.rational and err != 0) or (not d.rational and err > 1e-9):
        raise AssertionError(f"two-point decomposition failed to reconstruct (SD={err})")
    return parts


def reconstruct_mixture(parts: Sequence[tuple[Any, frozenset]], rational=True) -> ExactDist:
    out: dict = {}
    for w, pair in parts:
        for v in pair:
            out[v] = out.get(v, 0) + w / 2
    return ExactDist.from_mapping(out, rational=rational, normalize=not rational)


# ---------------------------------------------------------------------------
# smoothing and binomial identities


def smoothing_check(t: int, pairs: Sequence[Sequence[int]], p: int,
                    cap: int = 10**7) -> Fraction:
    """Exact SD between (sum of t independent uniform{a_i, b_i}) mod p and uniform(Z_p).

    A single pair is reused for all t summands; otherwise ``len(pairs)`` must be t.
    """
    if len(pairs) == 1:
        pairs = [pairs[0]] * t
    if len(pairs) != t:
        raise PreconditionError("need one pair, or exactly t pairs")
    if t * p > cap:
        raise EnumerationCapError(t * p, cap, "smoothing convolution")
    counts = [0] * p
    counts[0] = 1
    for a, b in pairs:
        a, b = a % p, b % p
        if a == b:
            raise PreconditionError("each pair needs a != b mod p")
        counts = [counts[(x - a) % p] + counts[(x - b) % p] for x in range(p)]
    den = 1 << t
    return Fraction(sum(abs(p * c - den) for c in counts), 2 * p * den)


def binomial_shift_sd(t: int) -> Fraction:
    """SD(S, S+1) for S ~ Bin(t, 1/2), which equals C(t, floor(t/2)) / 2^t."""
    if t < 1:
        raise PreconditionError("t >= 1")
    return Fraction(math.comb(t, t // 2), 1 << t)


def majority_error(copies: int, delta) -> Fraction | float:
    """Exact Pr[majority of ``copies`` i.i.d. Bernoulli(delta) equals 1] (copies odd)."""
    if copies % 2 == 0:
        raise PreconditionError("majority needs an odd number of copies")
    need = copies // 2 + 1
    if isinstance(delta, float):
        if delta <= 0.0:
            return 0.0
        if delta >= 1.0:
            return 1.0
        la, lb = math.log(delta), math.log1p(-delta)
        return math.fsum(math.exp(math.lgamma(copies + 1) - math.lgamma(j + 1)
                                  - math.lgamma(copies - j + 1) + j * la + (copies - j) * lb)
                         for j in range(need, copies + 1))
    return sum(math.comb(copies, j) * delta**j * (1 - delta) ** (copies - j)
               for j in range(need, copies + 1))


def majority_disagreement_bias(n: int) -> Fraction:
    """Pr[MAJ of n fair bits equals a fixed one of them], n odd.

    This is the sum over s <= (n-1)/2 of 2^(1-n) C(n-1, s).
    """
    if n % 2 == 0 or n < 1:
        raise PreconditionError("odd n >= 1 required")
    return sum((Fraction(math.comb(n - 1, s), 1 << (n - 1)) for s in range((n - 1) // 2 + 1)),
               Fraction(0))


# ---------------------------------------------------------------------------
# hash families


def zigzag(x: int) -> int:
    return 2 * x if x >= 0 else -2 * x - 1


def encode_for_inner_product(x: int) -> int:
    """Injective map Z -> positive integers with lowest bit 1.

    The fixed low bit keeps every encoding nonzero, so h(x) is a fair bit for
    every x, not only for pairs x != y.
    """
    return (zigzag(int(x)) << 1) | 1


@dataclass(frozen=True)
class HashFamily:
    """Hash families used by the protocols and reductions.

    ``kind="mod-random-prime"``: h(x) = x mod q for q uniform over the primes
    in ``prime_range``. ``kind="inner-product-gf2"``: h(x) = <enc(x), a> mod 2
    for a uniform ``width``-bit mask a, where ``width`` covers encoded inputs.
    """

    kind: str
    prime_range: tuple[int, int] | None = None
    width: int | None = None

    def __post_init__(self):
        if self.kind == "mod-random-prime":
            if self.prime_range is None:
                raise PreconditionError("mod-random-prime needs prime_range")
            if not self.primes():
                raise PreconditionError(f"no primes in {self.prime_range}")
        elif self.kind == "inner-product-gf2":
            if not self.width or self.width < 1:
                raise PreconditionError("inner-product-gf2 needs width >= 1")
        else:
            raise PreconditionError(f"unknown hash kind {self.kind!r}")

    @classmethod
    def inner_product_for_range(cls, max_abs: int) -> "HashFamily":
        return cls("inner-product-gf2", width=encode_for_inner_product(-abs(max_abs) - 1).bit_length())

    def primes(self) -> tuple[int, ...]:
        return primes_in_range(*self.prime_range)

    def draw(self, rng: random.Random) -> int:
        """Draw a key: a prime modulus, or a bit mask."""
        if self.kind == "mod-random-prime":
            primes = self.primes()
            q = primes[rng.randrange(len(primes))]
            assert is_prime(q) and self.prime_range[0] <= q <= self.prime_range[1]
            return q
        return rng.getrandbits(self.width)

    def apply(self, key: int, x: int) -> int:
        if self.kind == "mod-random-prime":
            return x % key
        enc = encode_for_inner_product(x)
        if enc.bit_length() > self.width:
            raise PreconditionError(f"input {x} exceeds hash width {self.width}")
        return bin(enc & key).count("1") & 1

    def collision_probability(self, x: int, y: int) -> Fraction:
        """Exact Pr over the key that h(x) == h(y)."""
        if x == y:
            return Fraction(1)
        if self.kind == "mod-random-prime":
            primes = self.primes()
            diff = abs(x - y)
            return Fraction(sum(1 for q in primes if diff % q == 0), len(primes))
        return Fraction(1, 2)
