"""One-way number-in-hand protocol engine.

Players 1..t hold disjoint blocks of the k logical inputs. Player j < t sees
only its own block, the message from player j-1 and the coins it is allowed
to read, and sends one message to player j+1. Player t announces the output,
which is not counted as communication.

Messages are bit strings (``str`` over ``"0"``/``"1"``) or nested tuples of
bit strings. Tuples are framing only: the cost of a message is the total
number of bits in its leaves.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Any, Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    EngineViolation,
    EnumerationCapError,
    PreconditionError,
)
from .numeric import ExactDist, ceil_log2

DETERMINISTIC = "deterministic"
PRIVATE = "private-coins"
CRS = "crs"
MODES = (DETERMINISTIC, PRIVATE, CRS)

DEFAULT_ENUM_CAP = 1 << 24


def enum_cap(cap: int | None = None) -> int:
    """Resolve an enumeration cap: explicit value, else COMMLAB_ENUM_CAP, else 2^24."""
    if cap is not None:
        return int(cap)
    env = os.environ.get("COMMLAB_ENUM_CAP")
    return int(env) if env else DEFAULT_ENUM_CAP


@lru_cache(maxsize=1 << 16)
def derive_seed(master, role: str, index=0) -> int:
    """64-bit seed from a keyed hash of (master, role, index)."""
    h = hashlib.blake2b(repr((master, role, index)).encode(), digest_size=8,
                        key=b"commlab-seed")
    return int.from_bytes(h.digest(), "big")


# ---------------------------------------------------------------------------
# messages


class Message(NamedTuple):
    """Optional wrapper naming the sender; the engine checks it."""

    sender: int
    bits: Any


def message_bits(msg) -> int:
    """Exact payload length in bits; framing is free."""
    if msg is None:
        return 0
    if isinstance(msg, Message):
        return message_bits(msg.bits)
    if isinstance(msg, str):
        if msg.strip("01"):
            raise EngineViolation(f"message contains non-bit characters: {msg!r}")
        return len(msg)
    if isinstance(msg, tuple):
        total = 0
        for m in msg:
            if type(m) is str and not m.strip("01"):
                total += len(m)
            else:
                total += message_bits(m)
        return total
    raise EngineViolation(f"messages must be bit strings or tuples of them, got {type(msg).__name__}")


def encode_uint(value: int, width: int) -> str:
    if value < 0 or (width == 0 and value != 0) or value.bit_length() > width:
        raise EngineViolation(f"{value} does not fit in {width} bits")
    return format(value, f"0{width}b") if width else ""


def decode_uint(bits: str) -> int:
    return int(bits, 2) if bits else 0


# ---------------------------------------------------------------------------
# randomness


class Coins:
    """The randomness view handed to one player.

    ``crs_rng()`` returns a fresh stream seeded from the shared string, so every
    player reads the same bits. ``private_rng()`` is seeded per player.
    ``fork(label)`` gives an independent view, used for parallel copies.
    """

    __slots__ = ("mode", "master", "player", "path", "_crs")

    def __init__(self, mode: str, master, player: int, path: tuple = ()):
        self.mode = mode
        self.master = master
        self.player = player
        self.path = path
        self._crs = None

    def fork(self, label) -> "Coins":
        return Coins(self.mode, self.master, self.player, self.path + (label,))

    @property
    def crs_seed(self) -> int:
        if self.mode != CRS:
            raise EngineViolation(f"{self.mode} protocol read the common random string")
        if self._crs is None:
            self._crs = derive_seed(self.master, "crs", self.path)
        return self._crs

    def crs_rng(self) -> random.Random:
        return random.Random(self.crs_seed)

    def private_rng(self) -> random.Random:
        if self.mode == DETERMINISTIC:
            raise EngineViolation("deterministic protocol read random coins")
        return random.Random(derive_seed(self.master, "private", (self.player,) + self.path))


# ---------------------------------------------------------------------------
# partitions and protocols


@dataclass(frozen=True)
class InputPartition:
    """Assignment of logical inputs 1..k to players 1..t (blocks may be empty)."""

    k: int
    blocks: tuple
    contiguous: bool = False

    def __post_init__(self):
        blocks = tuple(tuple(int(i) for i in b) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        flat = [i for b in blocks for i in b]
        if len(flat) != len(set(flat)) or set(flat) != set(range(1, self.k + 1)):
            raise ConfigurationError(f"blocks do not partition {{1..{self.k}}}: {blocks}")
        if self.contiguous:
            pos = 0
            for b in blocks:
                if b != tuple(range(pos + 1, pos + 1 + len(b))):
                    raise ConfigurationError(f"block {b} is not the next interval")
                pos += len(b)

    @property
    def t(self) -> int:
        return len(self.blocks)

    @classmethod
    def from_cuts(cls, cuts: Sequence[int]) -> "InputPartition":
        """Blocks (i_{j-1}, i_j] for a nondecreasing cut sequence 0 = i_0 <= ... <= i_t = k."""
        cuts = list(cuts)
        if cuts[0] != 0 or any(b < a for a, b in zip(cuts, cuts[1:])):
            raise ConfigurationError(f"cuts must start at 0 and be nondecreasing: {cuts}")
        blocks = [tuple(range(a + 1, b + 1)) for a, b in zip(cuts, cuts[1:])]
        return cls(cuts[-1], tuple(blocks), contiguous=True)

    @classmethod
    def singletons(cls, k: int) -> "InputPartition":
        return cls.from_cuts(range(k + 1))

    @classmethod
    def two_party(cls, k: int, cut: int) -> "InputPartition":
        return cls.from_cuts([0, cut, k])


@dataclass(frozen=True, eq=False)
class OneWayProtocol:
    """A t-player one-way protocol.

    ``message_fn(j, block, incoming, coins)`` runs for j = 1..t-1 and
    ``output_fn(block, incoming, coins)`` for player t. ``summary(block)``,
    when given, is a statistic of a block that determines every message the
    protocol can send for it; the simulations use it to group prefixes.
    ``static_bits`` is an optional declared upper bound on any message.
    """

    t: int
    message_fn: Callable
    output_fn: Callable
    randomness: str = DETERMINISTIC
    name: str = "protocol"
    static_bits: int | None = None
    summary: Callable | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.randomness not in MODES:
            raise ConfigurationError(f"unknown randomness mode {self.randomness!r}")
        if self.t < 1:
            raise ConfigurationError("a protocol needs at least one player")


def _execute(p: OneWayProtocol, partition: InputPartition, inputs: Sequence, seed):
    if len(inputs) != partition.k:
        raise ConfigurationError(f"{len(inputs)} inputs for a partition of {partition.k}")
    if partition.t != p.t:
        raise ConfigurationError(f"protocol has {p.t} players, partition has {partition.t}")
    messages = []
    incoming = None
    for j, block in enumerate(partition.blocks, start=1):
        view = tuple(inputs[i - 1] for i in block)
        coins = Coins(p.randomness, seed, j)
        if j == p.t:
            return p.output_fn(view, incoming, coins), messages
        msg = p.message_fn(j, view, incoming, coins)
        if isinstance(msg, Message):
            if msg.sender != j:
                raise EngineViolation(f"player {j} emitted a message signed by {msg.sender}")
            msg = msg.bits
        message_bits(msg)
        messages.append(msg)
        incoming = msg
    raise AssertionError("unreachable")


def run_transcript(p: OneWayProtocol, partition: InputPartition, inputs: Sequence, seed=0):
    """Run once and return (output, list of messages)."""
    return _execute(p, partition, inputs, seed)


@dataclass
class CostReport:
    per_message_bits: list
    max_message_bits: int
    total_bits: int
    error_estimate: float | None = None
    error_kind: str = "not-measured"
    trials: int | None = None
    seed: Any = None
    worst_case_error: float | None = None
    distributional_error: float | None = None
    static_max_bits: int | None = None
    failures: int | None = None

    def __post_init__(self):
        if self.total_bits != sum(self.per_message_bits):
            raise AssertionError("total_bits must equal the sum of per_message_bits")
        if self.max_message_bits != max(self.per_message_bits, default=0):
            raise AssertionError("max_message_bits must equal the largest message")
        for v in (self.error_estimate, self.worst_case_error, self.distributional_error):
            if v is not None and not 0 <= v <= 1:
                raise AssertionError(f"error value {v} outside [0, 1]")

    @classmethod
    def from_bits(cls, bits: Sequence[int], **kw) -> "CostReport":
        bits = list(bits)
        return cls(bits, max(bits, default=0), sum(bits), **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("error_estimate", "worst_case_error", "distributional_error"):
            if d[key] is not None:
                d[key] = float(d[key])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def run_protocol(p: OneWayProtocol, partition: InputPartition, inputs: Sequence, seed=0):
    """Run once; returns (output, CostReport with exact per-message bit counts)."""
    out, messages = _execute(p, partition, inputs, seed)
    return out, CostReport.from_bits([message_bits(m) for m in messages], seed=seed,
                                     static_max_bits=p.static_bits)


# ---------------------------------------------------------------------------
# functions


@dataclass(frozen=True, eq=False)
class FunctionTable:
    """A k-ary function over finite per-coordinate alphabets."""

    k: int
    alphabets: tuple
    fn: Callable
    symmetric: bool = False
    name: str = "f"

    def __post_init__(self):
        object.__setattr__(self, "alphabets", tuple(tuple(a) for a in self.alphabets))
        if len(self.alphabets) != self.k:
            raise ConfigurationError("need one alphabet per coordinate")

    def __call__(self, xs: Sequence):
        if len(xs) != self.k:
            raise ConfigurationError(f"{self.name} takes {self.k} inputs, got {len(xs)}")
        return self.fn(tuple(xs))

    def domain_size(self) -> int:
        return math.prod(len(a) for a in self.alphabets)

    def domain(self, cap: int | None = None) -> Iterable[tuple]:
        size = self.domain_size()
        if size > enum_cap(cap):
            raise EnumerationCapError(size, enum_cap(cap), f"domain of {self.name}")
        return itertools.product(*self.alphabets)

    def coarsen(self, mapping: Callable) -> "FunctionTable":
        """Compose the output with ``mapping`` (merging output values)."""
        return FunctionTable(self.k, self.alphabets, lambda xs: mapping(self.fn(xs)),
                             self.symmetric, f"{self.name}'")

    def spot_check_symmetry(self, rng: random.Random, samples: int = 200) -> bool:
        if len(set(self.alphabets)) != 1:
            return False
        for _ in range(samples):
            xs = [rng.choice(a) for a in self.alphabets]
            ys = xs[:]
            rng.shuffle(ys)
            if self.fn(tuple(xs)) != self.fn(tuple(ys)):
                return False
        return True

    @classmethod
    def from_table(cls, alphabets: Sequence, table: dict, symmetric=False, name="table"):
        alphabets = tuple(tuple(a) for a in alphabets)
        missing = [xs for xs in itertools.product(*alphabets) if xs not in table]
        if missing:
            raise ConfigurationError(f"table has no row for {missing[0]}")
        table = dict(table)
        return cls(len(alphabets), alphabets, table.__getitem__, symmetric, name)

    @classmethod
    def from_json(cls, obj) -> "FunctionTable":
        """Load {arity, alphabets, rows}; each row lists the k inputs then the output."""
        if isinstance(obj, str):
            obj = json.loads(obj)
        k = obj["arity"]
        table = {}
        for row in obj["rows"]:
            if len(row) != k + 1:
                raise ConfigurationError(f"row {row} should have {k} inputs and one output")
            table[tuple(row[:k])] = row[k]
        return cls.from_table(obj["alphabets"], table, obj.get("symmetric", False),
                              obj.get("name", "table"))


def builtin_function(name: str, k: int, **params) -> FunctionTable:
    """Named builtins: parity, equality (alphabet [n]), sum-equal-mod-m (1 = equal)."""
    if name == "parity":
        return FunctionTable(k, [(0, 1)] * k, lambda xs: sum(xs) % 2, True, "parity")
    if name == "equality":
        n = params.get("n", 2)
        return FunctionTable(k, [tuple(range(1, n + 1))] * k,
                             lambda xs: int(all(x == xs[0] for x in xs)), True, "equality")
    if name == "sum-equal-mod-m":
        m = params["m"]
        target = params.get("target", 0) % m
        return FunctionTable(k, [tuple(range(m))] * k,
                             lambda xs: int(sum(xs) % m == target), True, "sum-equal-mod-m")
    raise ConfigurationError(f"unknown builtin function {name!r}")


# ---------------------------------------------------------------------------
# distributions over inputs


class ProductDistribution:
    """Independent per-coordinate distributions; the structural product marker."""

    def __init__(self, marginals: Sequence[ExactDist], seed: int = 0):
        self.marginals = tuple(marginals)
        self.seed = seed
        self._uniform = [all(q == d.probs[0] for q in d.probs) for d in self.marginals]
        self._weights = [[float(q) for q in d.probs] for d in self.marginals]

    @property
    def k(self) -> int:
        return len(self.marginals)

    def sample(self, rng: random.Random) -> tuple:
        out = []
        for d, uni, w in zip(self.marginals, self._uniform, self._weights):
            if uni:
                out.append(d.support[rng.randrange(len(d.support))])
            else:
                out.append(rng.choices(d.support, weights=w)[0])
        return tuple(out)

    __call__ = sample

    def prob(self, xs: Sequence):
        return math.prod((d.prob(x) for d, x in zip(self.marginals, xs)), start=Fraction(1))

    def sample_batch(self, n: int, seed: int | None = None) -> np.ndarray:
        rng = np.random.default_rng(self.seed if seed is None else seed)
        cols = []
        for d, w in zip(self.marginals, self._weights):
            idx = rng.choice(len(d.support), size=n, p=np.asarray(w) / sum(w))
            cols.append(np.asarray(d.support)[idx])
        return np.stack(cols, axis=1)

    def iter_samples(self, seed: int | None = None):
        rng = random.Random(self.seed if seed is None else seed)
        while True:
            yield self.sample(rng)


# ---------------------------------------------------------------------------
# error measurement


def _trial_outcome(p, f, partition, xs, coin_seed):
    out, messages = _execute(p, partition, xs, coin_seed)
    return out != f(xs), [message_bits(m) for m in messages]


def _merge_bits(acc: list, bits: list) -> list:
    if not acc:
        return list(bits)
    return [max(a, b) for a, b in zip(acc, bits)]


def measure_error(p: OneWayProtocol, f: FunctionTable, partition: InputPartition,
                  input_source="exhaustive", trials: int | None = None, seed=0,
                  cap: int | None = None, workers: int = 1,
                  coin_trials: int = 1) -> CostReport:
    """Error and cost of ``p`` against ``f``.

    ``input_source`` is ``"exhaustive"`` (every input, uniform weights), an
    :class:`ExactDist` over input tuples, a sampler (callable taking a
    :class:`random.Random`, or an object with ``.sample``) used for ``trials``
    Monte Carlo runs, or an explicit list of input tuples. Per-message bits
    are maxima over all runs. With ``workers > 1`` trials run in a thread
    pool; counts are aggregated so the result equals the sequential one.
    """
    if partition.k != f.k:
        raise ConfigurationError("partition and function disagree on k")
    randomized = p.randomness != DETERMINISTIC
    if not randomized:
        coin_trials = 1

    if isinstance(input_source, str) or isinstance(input_source, ExactDist):
        if isinstance(input_source, str):
            if input_source != "exhaustive":
                raise ConfigurationError(f"unknown input source {input_source!r}")
            size = f.domain_size()
            points = None
        else:
            size = len(input_source.support)
            points = list(zip(input_source.support, input_source.probs))
        cap = enum_cap(cap)
        if size * coin_trials > cap:
            raise EnumerationCapError(size * coin_trials, cap, "exhaustive error measurement")
        if points is None:
            w = Fraction(1, size)
            points = [(xs, w) for xs in f.domain(cap)]
        bits: list = []
        worst = Fraction(0)
        dist = Fraction(0)
        failures = 0
        for idx, (xs, w) in enumerate(points):
            wrong = 0
            for c in range(coin_trials):
                coin_seed = derive_seed(seed, "coins", (idx, c)) if randomized else seed
                bad, b = _trial_outcome(p, f, partition, tuple(xs), coin_seed)
                wrong += bad
                bits = _merge_bits(bits, b)
            rate = Fraction(wrong, coin_trials)
            failures += wrong
            worst = max(worst, rate)
            dist += Fraction(w) * rate
        kind = "monte-carlo" if randomized else "exact-enumeration"
        return CostReport.from_bits(
            bits, error_estimate=float(worst), error_kind=kind,
            trials=coin_trials if randomized else None, seed=seed,
            worst_case_error=float(worst), distributional_error=float(dist),
            static_max_bits=p.static_bits, failures=failures)

    if hasattr(input_source, "sample"):
        sampler = input_source.sample
        explicit = None
    elif callable(input_source):
        sampler, explicit = input_source, None
    else:
        explicit = [tuple(x) for x in input_source]
        sampler = None
        trials = len(explicit) if trials is None else min(trials, len(explicit))
    if trials is None or trials < 1:
        raise ConfigurationError("Monte Carlo measurement needs trials >= 1")

    def chunk(indices):
        wrong, bits = 0, []
        for i in indices:
            xs = explicit[i] if explicit is not None else \
                tuple(sampler(random.Random(derive_seed(seed, "input", i))))
            bad, b = _trial_outcome(p, f, partition, xs, derive_seed(seed, "coins", i))
            wrong += bad
            bits = _merge_bits(bits, b)
        return wrong, bits

    if workers > 1:
        ranges = [range(s, trials, workers) for s in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(chunk, ranges))
    else:
        parts = [chunk(range(trials))]
    wrong = sum(w for w, _ in parts)
    bits: list = []
    for _, b in parts:
        if b or not bits:
            bits = _merge_bits(bits, b)
    rate = wrong / trials
    return CostReport.from_bits(bits, error_estimate=rate, error_kind="monte-carlo",
                                trials=trials, seed=seed, distributional_error=rate,
                                static_max_bits=p.static_bits, failures=wrong)


# ---------------------------------------------------------------------------
# one-way deterministic oracle


def row_classes(f: FunctionTable, cut: int, cap: int | None = None):
    """Group prefixes x_1..x_cut by their row of the communication matrix.

    Returns (class_of, representatives): ``class_of[prefix]`` is the index of
    the prefix's row among distinct rows, in order of first appearance.
    """
    if not 0 <= cut <= f.k:
        raise ConfigurationError(f"cut {cut} outside [0, {f.k}]")
    size = f.domain_size()
    if size > enum_cap(cap):
        raise EnumerationCapError(size, enum_cap(cap), "row enumeration")
    suffixes = list(itertools.product(*f.alphabets[cut:]))
    seen: dict = {}
    class_of: dict = {}
    reps: list = []
    for prefix in itertools.product(*f.alphabets[:cut]):
        row = tuple(f(prefix + s) for s in suffixes)
        if row not in seen:
            seen[row] = len(reps)
            reps.append(prefix)
        class_of[prefix] = seen[row]
    return class_of, reps


def oneway_dcc2_oracle(f: FunctionTable, cut: int, cap: int | None = None) -> int:
    """Optimal one-way deterministic cost for the split after ``cut`` inputs.

    This is ceil(log2(number of distinct rows)); 0 with a single row.
    """
    _, reps = row_classes(f, cut, cap)
    return ceil_log2(len(reps))


def optimal_oneway_protocol(f: FunctionTable, cut: int, cap: int | None = None) -> OneWayProtocol:
    """Two-player protocol sending the index of the sender's row class."""
    class_of, reps = row_classes(f, cut, cap)
    width = ceil_log2(len(reps))

    def message_fn(j, block, incoming, coins):
        return encode_uint(class_of[tuple(block)], width)

    def output_fn(block, incoming, coins):
        return f(reps[decode_uint(incoming)] + tuple(block))

    return OneWayProtocol(2, message_fn, output_fn, DETERMINISTIC, f"row-class[{cut}]",
                          static_bits=width, summary=lambda block: class_of[tuple(block)],
                          info={"cut": cut, "rows": len(reps)})


# ---------------------------------------------------------------------------
# promise disjointness


@dataclass
class DisjointnessDemo:
    instance: tuple
    case: str
    holder: int
    output: int
    report: CostReport
    announced_bits: int = 1

    @property
    def total_with_output(self) -> int:
        return self.report.total_bits + self.announced_bits


def disjointness_instance(t: int, n: int, case: str, rng: random.Random) -> tuple:
    """t indicator vectors over [n/t]: pairwise disjoint, or sharing exactly one element."""
    if t < 2:
        raise ConfigurationError("disjointness needs t >= 2 sets")
    if n % t or n < t:
        raise ConfigurationError(f"universe size {n} must be a positive multiple of t={t}")
    if case not in ("disjoint", "unique-intersection"):
        raise ConfigurationError(f"unknown case {case!r}")
    u = n // t
    sets = [[0] * u for _ in range(t)]
    common = rng.randrange(u) if case == "unique-intersection" else None
    for e in range(u):
        if e == common:
            for s in sets:
                s[e] = 1
        else:
            owner = rng.randrange(t + 1)
            if owner < t:
                sets[owner][e] = 1
    inst = tuple(tuple(s) for s in sets)
    _check_disjointness_promise(inst, case)
    return inst


def _check_disjointness_promise(inst: tuple, case: str):
    counts = [sum(col) for col in zip(*inst)]
    shared = [c for c in counts if c > 1]
    if case == "disjoint":
        ok = not shared
    else:
        ok = len(shared) == 1 and shared[0] == len(inst)
    if not ok:
        raise AssertionError("generated disjointness instance violates the promise")


def disjointness_protocol(t: int) -> OneWayProtocol:
    """(t-1)-player protocol: the player holding two sets decides, others forward 1 bit."""

    def decide(block):
        return int(any(a and b for a, b in zip(block[0], block[1])))

    def message_fn(j, block, incoming, coins):
        if len(block) == 2:
            return str(decide(block))
        return incoming if incoming is not None else "0"

    def output_fn(block, incoming, coins):
        if len(block) == 2:
            return decide(block)
        return int(incoming)

    return OneWayProtocol(t - 1, message_fn, output_fn, DETERMINISTIC, "disjointness",
                          static_bits=1)


def disjointness_demo(t: int, n: int, case: str, seed=0) -> DisjointnessDemo:
    """Generate a promise instance and run the pigeonhole protocol on t-1 players."""
    rng = random.Random(derive_seed(seed, "disjointness", 0))
    inst = disjointness_instance(t, n, case, rng)
    holder = rng.randrange(1, t)
    cuts = [0] + [j + (1 if j >= holder else 0) for j in range(1, t)]
    partition = InputPartition.from_cuts(cuts)
    out, report = run_protocol(disjointness_protocol(t), partition, inst, seed)
    return DisjointnessDemo(inst, case, holder, out, report)
