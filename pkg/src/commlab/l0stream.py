"""Strict-turnstile streams, an L0 sketch and the layered GHSE embedding."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .core import derive_seed
from .errors import ConfigurationError, PreconditionError, StrictTurnstileViolation
from .numeric import ceil_log2, primes_in_range

# ---------------------------------------------------------------------------
# streams


class TurnstileStream:
    """Ordered updates (i, v) over coordinates 1..N with |v| <= M.

    In strict mode every prefix must keep all coordinates nonnegative;
    this is validated on construction.
    """

    def __init__(self, N: int, M: int, idx, val, strict: bool = True):
        self.N = int(N)
        self.M = int(M)
        self.strict = bool(strict)
        self.idx = np.asarray(idx, dtype=np.int64).reshape(-1)
        self.val = np.asarray(val, dtype=np.int64).reshape(-1)
        if self.idx.shape != self.val.shape:
            raise ConfigurationError("index and value arrays differ in length")
        if self.idx.size:
            if self.idx.min() < 1 or self.idx.max() > self.N:
                raise ConfigurationError(f"indices must lie in [1, {self.N}]")
            if np.abs(self.val).max() > self.M:
                raise ConfigurationError(f"update magnitude exceeds M={self.M}")
        if self.strict:
            self._check_strict()

    @classmethod
    def from_updates(cls, N: int, M: int, updates: Sequence, strict: bool = True):
        updates = list(updates)
        idx = [i for i, _ in updates]
        val = [v for _, v in updates]
        return cls(N, M, idx, val, strict)

    def __len__(self) -> int:
        return int(self.idx.size)

    def _check_strict(self):
        if not self.idx.size:
            return
        order = np.argsort(self.idx, kind="stable")
        sidx = self.idx[order]
        run = np.cumsum(self.val[order])
        starts = np.flatnonzero(np.r_[True, sidx[1:] != sidx[:-1]])
        base = np.repeat(np.r_[0, run[starts[1:] - 1]], np.diff(np.r_[starts, sidx.size]))
        prefix = run - base
        bad = np.flatnonzero(prefix < 0)
        if bad.size:
            pos = int(order[bad].min())
            k = int(np.flatnonzero(order == pos)[0])
            raise StrictTurnstileViolation(pos + 1, int(sidx[k]), int(prefix[k]))

    def final_vector(self) -> np.ndarray:
        """Final x as an array indexed 0..N (entry 0 unused)."""
        x = np.zeros(self.N + 1, dtype=np.int64)
        np.add.at(x, self.idx, self.val)
        return x

    def to_text(self) -> str:
        lines = [f"{self.N} {self.M} {int(self.strict)}"]
        lines += [f"{i} {v}" for i, v in zip(self.idx.tolist(), self.val.tolist())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TurnstileStream":
        rows = text.split("\n")
        head = rows[0].split()
        if len(head) != 3:
            raise ConfigurationError("header must be 'N M strict'")
        N, M, strict = int(head[0]), int(head[1]), head[2] not in ("0", "false", "False")
        body = [r.split() for r in rows[1:] if r.strip()]
        idx = [int(a) for a, _ in body]
        val = [int(b) for _, b in body]
        return cls(N, M, idx, val, strict)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "TurnstileStream":
        with open(path) as fh:
            return cls.from_text(fh.read())


def exact_l0(s: TurnstileStream) -> int:
    """Number of nonzero final coordinates."""
    return int(np.count_nonzero(s.final_vector()[1:]))


def random_strict_stream(N: int, m: int, M: int, l0: int, seed: int = 0) -> TurnstileStream:
    """Random strict stream of exactly m updates whose final L0 is l0.

    Support coordinates receive pairs (+a, -b) with b < a and possibly a
    final +a; other touched coordinates receive pairs (+a, -a) and, if a
    single update is left over, a 0 update. Per-coordinate sequences are
    interleaved uniformly at random.
    """
    if not 0 <= l0 <= N or m < l0 or M < 2:
        raise PreconditionError("need 0 <= l0 <= N, m >= l0 and M >= 2")
    rng = np.random.default_rng(derive_seed(seed, "strict-stream", 0))
    coords = rng.permutation(N) + 1
    support, rest = coords[:l0], coords[l0:]
    extra = m - l0
    if l0 == 0:
        n_zero = min(rest.size, max(1, extra // 2)) if extra else 0
    else:
        n_zero = min(rest.size, extra // 4)
    zero = rest[:n_zero]
    counts_s = np.ones(l0, dtype=np.int64)
    counts_z = np.full(n_zero, 2, dtype=np.int64)
    if 2 * n_zero > extra:
        counts_z[-1] = 1
    extra -= int(counts_z.sum())
    if extra < 0:
        raise PreconditionError("m too small")
    if l0 > 0:
        counts_s += rng.multinomial(extra, np.full(l0, 1.0 / l0))
    elif n_zero > 0:
        counts_z += rng.multinomial(extra, np.full(n_zero, 1.0 / n_zero))
    elif extra:
        raise PreconditionError("cannot place updates without any coordinate")
    owners = np.r_[support, zero]
    counts = np.r_[counts_s, counts_z]
    is_support = np.r_[np.ones(l0, bool), np.zeros(n_zero, bool)]
    order_c = np.argsort(owners)
    owners, counts, is_support = owners[order_c], counts[order_c], is_support[order_c]
    labels = np.repeat(owners, counts)
    total = labels.size
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    pos = np.arange(total) - starts
    cnt = np.repeat(counts, counts)
    sup = np.repeat(is_support, counts)
    pair_a = rng.integers(2, M + 1, size=total)
    vals = np.empty(total, dtype=np.int64)
    even = pos % 2 == 0
    lone = even & (pos == cnt - 1)
    a_first = np.where(sup, pair_a, rng.integers(1, M + 1, size=total))
    vals[even] = a_first[even]
    prev = np.r_[0, a_first[:-1]]
    odd = ~even
    b = np.minimum(prev - 1, rng.integers(1, M, size=total))
    vals[odd & sup] = -np.maximum(b[odd & sup], 1)
    vals[odd & ~sup] = -prev[odd & ~sup]
    vals[lone & ~sup] = 0
    shuffled = rng.permutation(labels)
    where = np.argsort(shuffled, kind="stable")
    stream_vals = np.empty(total, dtype=np.int64)
    stream_vals[where] = vals
    return TurnstileStream(N, M, shuffled, stream_vals, strict=True)


# ---------------------------------------------------------------------------
# sketch


def _bit_length32(v: np.ndarray) -> np.ndarray:
    return np.frexp(v.astype(np.float64))[1].astype(np.int64)


def sketch_buckets(epsilon: float) -> int:
    return 1 << ceil_log2(math.ceil(2 / epsilon**2))


def counter_width(epsilon: float, mM: int) -> int:
    return ceil_log2(math.ceil(1 / epsilon)) + \
        max(1, math.ceil(math.log2(math.log2(max(mM, 2)) + 1))) + 6


def repetitions(delta: float) -> int:
    return max(1, math.ceil(48 * math.log(1 / delta)))


class L0Sketch:
    """Median of R independent level-sampling sketches.

    Each element gets a 64-bit simple tabulation hash (two 16-bit chars).
    Its level is the number of leading zeros of the top 32 bits (capped at
    L-1, so Pr[level >= l] = 2^-l) and its bucket is given by the low bits.
    Counter (level, bucket) holds the sum of x_i over its elements modulo a
    random w-bit prime per level; with nonnegative x a bucket is nonempty
    iff its sum is nonzero, up to rare prime-divisor collisions.

    Level l's count is estimated by linear counting,
    ln(1 - T/B) / ln(1 - 1/B) for T nonempty buckets of B. A level is
    saturated when T > B/2. With j the smallest level such that no level
    >= j is saturated, one repetition returns 2^j times the summed counts of
    levels >= j.
    """

    def __init__(self, universe: int, epsilon: float, seed: int = 0, reps: int = 1,
                 mM: int | None = None):
        if not 0 < epsilon < 1:
            raise PreconditionError("epsilon must lie in (0, 1)")
        if universe < 1 or universe >= 1 << 32:
            raise PreconditionError("universe must lie in [1, 2^32)")
        self.universe = int(universe)
        self.epsilon = epsilon
        self.seed = seed
        self.R = int(reps)
        self.B = sketch_buckets(epsilon)
        self.L = ceil_log2(self.universe) + 1
        self.w = counter_width(epsilon, mM if mM is not None else self.universe)
        rng = np.random.default_rng(derive_seed(seed, "l0-sketch", 0))
        size0 = min(self.universe + 1, 1 << 16)
        size1 = (self.universe >> 16) + 1
        self.T0 = rng.integers(0, 2**64, size=(self.R, size0), dtype=np.uint64)
        self.T1 = rng.integers(0, 2**64, size=(self.R, size1), dtype=np.uint64)
        pool = np.asarray(primes_in_range(1 << (self.w - 1), (1 << self.w) - 1), dtype=np.int64)
        self.primes = pool[rng.integers(0, pool.size, size=(self.R, self.L))]
        self.counters = np.zeros((self.R, self.L, self.B), dtype=np.int64)

    # hashing -------------------------------------------------------------
    def _hash(self, x: np.ndarray) -> np.ndarray:
        x = x.astype(np.int64)
        return self.T0[:, x & 0xFFFF] ^ self.T1[:, x >> 16]

    def _levels(self, h: np.ndarray) -> np.ndarray:
        top = (h >> np.uint64(32)).astype(np.uint32)
        return np.minimum(32 - _bit_length32(top), self.L - 1)

    def _buckets(self, h: np.ndarray) -> np.ndarray:
        return (h & np.uint64(self.B - 1)).astype(np.int64)

    # updates -------------------------------------------------------------
    def _accumulate(self, x: np.ndarray, v: np.ndarray, counters: np.ndarray,
                    rep_rows=None):
        if not x.size:
            return
        rows = np.arange(self.R) if rep_rows is None else np.asarray(rep_rows)
        h = self._hash(x)[rows]
        lev = self._levels(h)
        buck = self._buckets(h)
        primes = self.primes[rows]
        mods = np.take_along_axis(primes, lev, axis=1)
        contrib = np.mod(v[None, :], mods)
        flat = (np.arange(rows.size)[:, None] * self.L + lev) * self.B + buck
        add = np.bincount(flat.ravel(), weights=contrib.ravel().astype(np.float64),
                          minlength=rows.size * self.L * self.B)
        add = np.rint(add).astype(np.int64).reshape(rows.size, self.L, self.B)
        counters[...] = (counters + add) % primes[:, :, None]

    def update_vector(self, idx, vals):
        """Apply updates (idx[n], vals[n]); the order does not matter (linearity)."""
        idx = np.asarray(idx, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.int64)
        if idx.size and (idx.min() < 1 or idx.max() > self.universe):
            raise ConfigurationError("index outside the sketch universe")
        self._accumulate(idx, vals, self.counters)

    def update(self, s: TurnstileStream):
        if s.N > self.universe:
            raise ConfigurationError("stream dimension exceeds the sketch universe")
        if not len(s):
            return
        uniq, inv = np.unique(s.idx, return_inverse=True)
        agg = np.zeros(uniq.size, dtype=np.int64)
        np.add.at(agg, inv, s.val)
        keep = agg != 0
        self.update_vector(uniq[keep], agg[keep])

    def merge(self, other: "L0Sketch") -> "L0Sketch":
        if (other.seed, other.universe, other.epsilon, other.R, other.w) != \
                (self.seed, self.universe, self.epsilon, self.R, self.w):
            raise ConfigurationError("only sketches with identical parameters merge")
        out = self.copy()
        out.counters = (self.counters + other.counters) % self.primes[:, :, None]
        return out

    def copy(self) -> "L0Sketch":
        out = object.__new__(L0Sketch)
        out.__dict__.update(self.__dict__)
        out.counters = self.counters.copy()
        return out

    # estimation ----------------------------------------------------------
    def _estimate_from_counts(self, T: np.ndarray) -> float:
        B = self.B
        sat = np.flatnonzero(T * 2 > B)
        j = int(sat[-1]) + 1 if sat.size else 0
        tail = T[j:].astype(np.float64)
        nhat = np.log1p(-tail / B) / math.log1p(-1 / B)
        return float(2.0**j * nhat.sum())

    def rep_estimates(self) -> np.ndarray:
        T = np.count_nonzero(self.counters, axis=2)
        return np.array([self._estimate_from_counts(T[r]) for r in range(self.R)])

    def estimate(self) -> float:
        return float(np.median(self.rep_estimates()))

    def space_bits(self) -> int:
        """Counters, per-level primes and one 64-bit seed per repetition."""
        return self.R * (self.L * self.B * self.w + self.L * self.w + 64)

    # structured path -----------------------------------------------------
    def _sorted_t0(self, r: int) -> np.ndarray:
        # sorting full words also sorts every top-bit prefix
        cache = self.__dict__.setdefault("_t0_order", {})
        if r not in cache:
            cache[r] = np.argsort(self.T0[r], kind="stable")
        return cache[r]

    def _elements_at_least(self, r: int, level: int) -> np.ndarray:
        if level <= 0:
            return np.arange(1, self.universe + 1, dtype=np.int64)
        shift = np.uint64(64 - level)
        order = self._sorted_t0(r)
        sk = self.T0[r][order] >> shift
        key1 = self.T1[r] >> shift
        lo = np.searchsorted(sk, key1, "left")
        hi = np.searchsorted(sk, key1, "right")
        parts = [(c1 << 16) + order[a:b] for c1, (a, b) in enumerate(zip(lo, hi)) if b > a]
        if not parts:
            return np.zeros(0, dtype=np.int64)
        x = np.concatenate(parts).astype(np.int64)
        return x[(x >= 1) & (x <= self.universe)]

    def rep_estimates_from_oracle(self, value_fn: Callable) -> np.ndarray:
        """Per-repetition estimates for the vector given by ``value_fn(x)``.

        Only elements at high levels are enumerated, top-down until a
        saturated level is found; the counters of the levels used are the
        same as after feeding the whole vector, so the result equals
        :meth:`rep_estimates` for a sketch updated with that vector.
        """
        out = np.empty(self.R)
        for r in range(self.R):
            level = self.L - 1
            while True:
                x = self._elements_at_least(r, level)
                v = np.asarray(value_fn(x), dtype=np.int64) if x.size else x
                keep = v != 0
                counters = np.zeros((1, self.L, self.B), dtype=np.int64)
                self._accumulate(x[keep], v[keep], counters, rep_rows=[r])
                T = np.count_nonzero(counters[0], axis=1)
                T[:level] = 0
                if level == 0 or T[level] * 2 > self.B:
                    break
                level = max(0, level - 2)
            out[r] = self._estimate_from_counts(T)
        return out


def l0_estimate(s: TurnstileStream, epsilon: float, delta: float, seed: int = 0,
                reps: int | None = None):
    """(estimate, space_bits) from a median of ceil(48 ln(1/delta)) sketches."""
    if not 0 < delta < 0.5:
        raise PreconditionError("delta must lie in (0, 1/2)")
    sk = L0Sketch(s.N, epsilon, seed, reps or repetitions(delta),
                  mM=max(1, len(s)) * max(1, s.M))
    sk.update(s)
    return sk.estimate(), sk.space_bits()


# ---------------------------------------------------------------------------
# layered embedding


@dataclass(frozen=True)
class EmbeddingPlan:
    """t layers of n coordinates; layer i counted 100^(i-1) times."""

    t: int
    n: int
    epsilon: float

    def __post_init__(self):
        if self.t < 1 or self.n < 1:
            raise PreconditionError("t and n must be positive")
        if Fraction(self.N) > Fraction(100**self.t * self.n, 99):
            raise AssertionError("N exceeds 100^t n / 99")

    def frequency(self, i: int) -> int:
        return 100 ** (i - 1)

    def n_upto(self, i: int) -> int:
        """Copies in layers 1..i: n (100^i - 1) / 99."""
        return self.n * (100**i - 1) // 99

    @property
    def N(self) -> int:
        return self.n_upto(self.t)

    @property
    def dimension(self) -> int:
        return 2 * self.N

    @property
    def sketch_epsilon(self) -> float:
        """The stream's L0 is N + F' <= 2N, so halving eps keeps |F~ - F| <= 2 eps N."""
        return self.epsilon / 2


class EmbeddedLayers:
    """Final vector of the embedding, computed coordinate-wise.

    Copy g of a layer coordinate owns elements 2g+1 (e) and 2g+2 (e').
    Alice adds 1 to e if her bit is 1 and to e' otherwise; Bob does the same
    with his bit. The pair ends as (2, 0) or (0, 2) when the bits agree and
    (1, 1) when they differ, so L0 = N + F'.
    """

    def __init__(self, layers: Sequence, plan: EmbeddingPlan):
        if len(layers) != plan.t:
            raise ConfigurationError(f"expected {plan.t} layers, got {len(layers)}")
        self.plan = plan
        self.alice = []
        self.bob = []
        for a, b in layers:
            a = np.asarray(a, dtype=np.int64)
            b = np.asarray(b, dtype=np.int64)
            if a.shape != (plan.n,) or b.shape != (plan.n,):
                raise ConfigurationError(f"every layer needs two bit vectors of length {plan.n}")
            self.alice.append(a)
            self.bob.append(b)
        self._a = np.concatenate(self.alice)
        self._b = np.concatenate(self.bob)
        self._offsets = np.array([plan.n_upto(i) for i in range(plan.t + 1)], dtype=np.int64)
        self._freq = np.array([plan.frequency(i) for i in range(1, plan.t + 1)], dtype=np.int64)

    def f_prime(self, i: int) -> int:
        return int(np.count_nonzero(self.alice[i - 1] != self.bob[i - 1]))

    def f(self, i: int) -> int:
        return 2 * self.f_prime(i) - self.plan.n

    @property
    def F_prime(self) -> int:
        return sum(self.plan.frequency(i) * self.f_prime(i) for i in range(1, self.plan.t + 1))

    @property
    def F(self) -> int:
        return 2 * self.F_prime - self.plan.N

    def exact_l0(self) -> int:
        return self.plan.N + self.F_prime

    def values(self, x: np.ndarray) -> np.ndarray:
        z = np.asarray(x, dtype=np.int64) - 1
        g, side = z // 2, z % 2
        layer = np.searchsorted(self._offsets[1:], g, side="right")
        coord = (g - self._offsets[layer]) // self._freq[layer]
        pos = layer * self.plan.n + coord
        s = self._a[pos] + self._b[pos]
        return np.where(side == 0, s, 2 - s)

    def stream(self) -> TurnstileStream:
        return embed_ghse_layers(list(zip(self.alice, self.bob)), self.plan)


def embed_ghse_layers(layers: Sequence, plan: EmbeddingPlan) -> TurnstileStream:
    """Strict stream over 2N elements: all of Alice's +1 updates, then Bob's."""
    if len(layers) != plan.t:
        raise ConfigurationError(f"expected {plan.t} layers, got {len(layers)}")
    sides = ([], [])
    for i, (a, b) in enumerate(layers, start=1):
        freq = plan.frequency(i)
        base = plan.n_upto(i - 1)
        for side, bits in zip(sides, (a, b)):
            bits = np.asarray(bits, dtype=np.int64)
            if bits.shape != (plan.n,):
                raise ConfigurationError(f"layer {i} vectors must have length {plan.n}")
            g = base + np.arange(plan.n * freq, dtype=np.int64)
            side.append(2 * g + 1 + (1 - np.repeat(bits, freq)))
    idx = np.concatenate(sides[0] + sides[1])
    return TurnstileStream(plan.dimension, 1, idx, np.ones(idx.size, dtype=np.int64), True)


@dataclass
class DecodeResult:
    label: int
    advantage: float
    threshold: float
    ambiguous: bool


def decode_top_layer(estimate: float, plan: EmbeddingPlan, upper_f: Sequence[int],
                     i: int | None = None) -> DecodeResult:
    """Decode layer i from an L0 estimate and the exact advantages f_{i+1..t}.

    Removes the constant N and the upper layers' contribution, converts to
    the advantage F~ of layers 1..i and compares with +-eps N_{<=i}. Inside
    the band the label follows the sign of F~ and ``ambiguous`` is set.
    """
    i = plan.t if i is None else i
    if len(upper_f) != plan.t - i:
        raise ConfigurationError(f"need f for layers {i + 1}..{plan.t}")
    f_prime_upper = sum(plan.frequency(j) * Fraction(plan.n + fj, 2)
                        for j, fj in zip(range(i + 1, plan.t + 1), upper_f))
    f_prime_low = Fraction(estimate) - plan.N - f_prime_upper
    n_low = plan.n_upto(i)
    adv = 2 * f_prime_low - n_low
    thr = Fraction(plan.epsilon) * n_low
    if adv > thr:
        return DecodeResult(1, float(adv), float(thr), False)
    if adv < -thr:
        return DecodeResult(0, float(adv), float(thr), False)
    return DecodeResult(int(adv > 0), float(adv), float(thr), True)
