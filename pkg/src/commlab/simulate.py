"""Protocol transformations.

* a streaming automaton built from per-cut two-player deterministic protocols,
* majority amplification of a randomized protocol,
* a k-player protocol built from a two-player one under a product distribution.
"""

from __future__ import annotations

import bisect
import itertools
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Any, Callable, Sequence

from .core import (
    CRS,
    DETERMINISTIC,
    PRIVATE,
    Coins,
    FunctionTable,
    InputPartition,
    OneWayProtocol,
    ProductDistribution,
    decode_uint,
    encode_uint,
    enum_cap,
    message_bits,
)
from .errors import (
    ConfigurationError,
    EngineViolation,
    EnumerationCapError,
    PreconditionError,
    ProtocolInconsistencyError,
)
from .numeric import ceil_log2, majority_error


# ---------------------------------------------------------------------------
# streaming automata


@dataclass(eq=False)
class StreamingAutomaton:
    """Single-pass automaton over a stream of ``length`` items.

    ``update_fn(state, item, position)`` consumes items 1..length-1 and
    ``output_fn(state, last_item)`` produces the answer from the state and the
    final item. States are messages (bit strings or tuples of them); their
    width is checked against ``memory_bits`` after every step.
    """

    length: int
    update_fn: Callable
    output_fn: Callable
    memory_bits: int
    initial_state: Any = ()

    def step(self, state, item, position):
        new = self.update_fn(state, item, position)
        width = message_bits(new)
        if width > self.memory_bits:
            raise EngineViolation(f"state uses {width} bits > declared {self.memory_bits}")
        return new

    def run(self, items: Sequence):
        if len(items) != self.length:
            raise ConfigurationError(f"stream of length {len(items)}, expected {self.length}")
        state = self.initial_state
        for pos, item in enumerate(items[:-1], start=1):
            state = self.step(state, item, pos)
        return self.output_fn(state, items[-1])


def _two_party_message(p: OneWayProtocol, prefix: tuple):
    return p.message_fn(1, prefix, None, Coins(DETERMINISTIC, 0, 1))


def det_stream_from_two_party(f: FunctionTable, protocols, store_index: bool = True,
                              cap: int | None = None) -> StreamingAutomaton:
    """Streaming automaton from zero-error two-player deterministic protocols.

    ``protocols`` is a list whose entry i-1 solves f for the split after i
    items (i = 1..m-1), or a single protocol valid for every split. The state
    after i items is (message m_i, index i). On item i+1 the automaton takes
    the first prefix that induces m_i, appends the item and emits m_{i+1}.
    ``store_index=False`` drops the index; it needs a single protocol.
    """
    m = f.k
    if m < 2:
        raise ConfigurationError("streams of length >= 2 are required")
    single = isinstance(protocols, OneWayProtocol)
    if not single and len(protocols) != m - 1:
        raise ConfigurationError(f"need {m - 1} per-split protocols, got {len(protocols)}")
    if not store_index and not single:
        raise ConfigurationError("dropping the index needs one protocol for all splits")
    per_cut = [protocols] * (m - 1) if single else list(protocols)
    for p in per_cut:
        if p.randomness != DETERMINISTIC or p.t != 2:
            raise ProtocolInconsistencyError("per-split protocols must be 2-player deterministic")
    total = sum(math.prod(len(a) for a in f.alphabets[:i]) for i in range(1, m))
    if total > enum_cap(cap):
        raise EnumerationCapError(total, enum_cap(cap), "prefix enumeration")

    compat: list[dict] = []
    max_bits = 0
    shared: dict = {}
    for i in range(1, m):
        table: dict = {}
        for prefix in itertools.product(*f.alphabets[:i]):
            msg = _two_party_message(per_cut[i - 1], prefix)
            max_bits = max(max_bits, message_bits(msg))
            table.setdefault(msg, prefix)
            shared.setdefault(msg, prefix)
        compat.append(table)
    w = ceil_log2(m) if store_index else 0

    def lookup(msg, i):
        table = compat[i - 1] if store_index else shared
        try:
            return table[msg]
        except KeyError:
            raise ProtocolInconsistencyError(
                f"no prefix of length {i} induces message {msg!r}") from None

    def update_fn(state, item, position):
        if position == 1:
            prefix = (item,)
        else:
            msg = state[0] if store_index else state
            prefix = lookup(msg, position - 1) + (item,)
        msg = _two_party_message(per_cut[position - 1], prefix)
        return (msg, encode_uint(position, w)) if store_index else msg

    def output_fn(state, item):
        msg = state[0] if store_index else state
        return per_cut[-1].output_fn((item,), msg, Coins(DETERMINISTIC, 0, 2))

    return StreamingAutomaton(m, update_fn, output_fn, max_bits + w)


def verify_automaton(a: StreamingAutomaton, f: FunctionTable, cap: int | None = None) -> bool:
    """True iff the automaton computes f on the whole domain."""
    return all(a.run(xs) == f(xs) for xs in f.domain(cap))


def automaton_to_protocol(a: StreamingAutomaton, partition: InputPartition) -> OneWayProtocol:
    """Players run the automaton on their blocks and forward the state."""
    if not partition.contiguous or partition.k != a.length:
        raise ConfigurationError("need a contiguous partition of the stream")
    if not partition.blocks[-1]:
        raise ConfigurationError("the last player must hold the final item")
    blocks = partition.blocks

    def advance(j, block, incoming):
        state = a.initial_state if incoming is None else incoming
        for pos, item in zip(blocks[j - 1], block):
            if pos < a.length:
                state = a.step(state, item, pos)
        return state

    def message_fn(j, block, incoming, coins):
        return advance(j, block, incoming)

    def output_fn(block, incoming, coins):
        state = advance(partition.t, block[:-1], incoming)
        return a.output_fn(state, block[-1])

    return OneWayProtocol(partition.t, message_fn, output_fn, DETERMINISTIC,
                          "streaming-simulation", static_bits=a.memory_bits)


# ---------------------------------------------------------------------------
# majority amplification


@dataclass(frozen=True)
class AmplifierPlan:
    """M = 1 + 2t copies, t = ceil(log(eps/delta) / log(4 delta (1 - delta)))."""

    delta: float
    epsilon: float
    t: int
    M: int

    @classmethod
    def build(cls, delta: float, epsilon: float) -> "AmplifierPlan":
        if not 0 <= delta < 0.5:
            raise PreconditionError("majority amplification needs delta < 1/2")
        if epsilon <= 0:
            raise PreconditionError("epsilon must be positive")
        if delta <= epsilon:
            return cls(delta, epsilon, 0, 1)
        t = math.ceil(math.log(epsilon / delta) / math.log(4 * delta * (1 - delta)))
        t = max(t, 0)
        return cls(delta, epsilon, t, 1 + 2 * t)

    @classmethod
    def for_simulation(cls, delta: float, k: int) -> "AmplifierPlan":
        """Target eps = delta^2 / (16 k^2), so eps/delta = delta / (16 k^2)."""
        return cls.build(delta, delta**2 / (16 * k * k))

    def exact_error(self, base_error=None):
        """Exact probability that the majority of M independent copies is wrong."""
        return majority_error(self.M, self.delta if base_error is None else base_error)

    def bound(self) -> float:
        return (4 * self.delta * (1 - self.delta)) ** self.t * self.delta

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _copy_label(c: int):
    return ("copy", c)


def _majority(values: list):
    counts = Counter(values)
    best = max(counts.values())
    winners = [v for v in values if counts[v] == best]
    return winners[0]


def amplify_majority(p: OneWayProtocol, delta: float, epsilon: float,
                     plan: AmplifierPlan | None = None):
    """Run M independent copies side by side and output their majority.

    Copy c uses ``coins.fork(("copy", c))``. Ties (possible only for
    non-binary outputs) go to the value whose first vote comes earliest.
    """
    plan = plan or AmplifierPlan.build(delta, epsilon)
    M = plan.M

    def message_fn(j, block, incoming, coins):
        return tuple(p.message_fn(j, block, None if incoming is None else incoming[c],
                                  coins.fork(_copy_label(c))) for c in range(M))

    def output_fn(block, incoming, coins):
        votes = [p.output_fn(block, None if incoming is None else incoming[c],
                             coins.fork(_copy_label(c))) for c in range(M)]
        return _majority(votes)

    amp = OneWayProtocol(p.t, message_fn, output_fn, p.randomness, f"maj{M}({p.name})",
                         static_bits=None if p.static_bits is None else M * p.static_bits,
                         summary=p.summary,
                         info={"base": p, "copies": M, "plan": plan})
    return amp, plan


# ---------------------------------------------------------------------------
# k players from two players


@dataclass
class _PrefixClass:
    rep: tuple
    weight: float
    prefixes: list
    cumulative: list


def _prefix_classes(pi2: OneWayProtocol, mu: ProductDistribution, length: int) -> list:
    groups: dict = {}
    for prefix in itertools.product(*(d.support for d in mu.marginals[:length])):
        key = pi2.summary(prefix) if pi2.summary is not None else prefix
        w = float(mu.prob(prefix))
        if w == 0:
            continue
        groups.setdefault(key, []).append((prefix, w))
    out = []
    for items in groups.values():
        cum, acc = [], 0.0
        for _, w in items:
            acc += w
            cum.append(acc)
        out.append(_PrefixClass(items[0][0], acc, [q for q, _ in items], cum))
    return out


def _copy_views(pi2: OneWayProtocol, received, coins: Coins):
    """Per-copy coin views when ``pi2`` is a majority amplifier, else None."""
    if pi2.info.get("base") is not None and isinstance(received, tuple) \
            and len(received) == pi2.info["copies"]:
        return [coins.fork(_copy_label(c)) for c in range(len(received))]
    return None


def _consistent(pi2: OneWayProtocol, rep: tuple, received, coins: Coins, views=None) -> bool:
    if views is not None:
        base = pi2.info["base"]
        return all(base.message_fn(1, rep, None, v) == part for v, part in zip(views, received))
    return pi2.message_fn(1, rep, None, coins) == received


def k_from_two_simulation(pi2: OneWayProtocol, f: FunctionTable, mu, k: int | None = None,
                          delta: float | None = None, store_index: bool = True,
                          cap: int | None = None) -> OneWayProtocol:
    """k-player protocol from a two-player protocol valid at every split.

    Player i receives Alice's message m_{i-1} for some prefix and the index
    i-1. It samples a prefix from the exact posterior of ``mu`` given that
    message, appends its own input and sends Alice's message for the longer
    prefix. The last player runs Bob's output function. Messages for split i
    use ``coins.fork(("cut", i))`` so consecutive players agree on the shared
    string. ``pi2`` must be deterministic or use the common random string:
    the receiver has to recompute the sender's messages. ``delta`` is
    recorded for reporting only.
    """
    if not isinstance(mu, ProductDistribution):
        raise PreconditionError("the simulation requires a product distribution")
    k = f.k if k is None else k
    if k != f.k or mu.k != k:
        raise ConfigurationError("k, the function arity and the distribution disagree")
    if pi2.t != 2:
        raise ConfigurationError("pi2 must be a two-player protocol")
    if pi2.randomness == PRIVATE:
        raise PreconditionError("pi2 must be deterministic or use the common random string")
    total = sum(math.prod(len(d.support) for d in mu.marginals[:c]) for c in range(1, k - 1))
    if total > enum_cap(cap):
        raise EnumerationCapError(total, enum_cap(cap), "posterior enumeration")
    classes = {c: _prefix_classes(pi2, mu, c) for c in range(1, k - 1)}
    w = ceil_log2(k) if store_index else 0
    mode = CRS if pi2.randomness == CRS else PRIVATE

    def split_coins(coins: Coins, cut: int) -> Coins:
        return coins.fork(("cut", cut))

    def message_fn(j, block, incoming, coins):
        (x,) = block
        if j == 1:
            prefix = (x,)
        else:
            received = incoming[0] if store_index else incoming
            view = split_coins(coins, j - 1)
            views = _copy_views(pi2, received, view)
            live = [cl for cl in classes[j - 1]
                    if _consistent(pi2, cl.rep, received, view, views)]
            if not live:
                raise ProtocolInconsistencyError("no prefix is consistent with the message")
            rng = coins.fork(("step", j)).private_rng()
            if len(live) == 1:
                chosen = live[0]
            else:
                r = rng.random() * sum(cl.weight for cl in live)
                acc = 0.0
                chosen = live[-1]
                for cl in live:
                    acc += cl.weight
                    if r < acc:
                        chosen = cl
                        break
            if len(chosen.prefixes) == 1:
                y = chosen.prefixes[0]
            else:
                u = rng.random() * chosen.cumulative[-1]
                y = chosen.prefixes[min(bisect.bisect_right(chosen.cumulative, u),
                                        len(chosen.prefixes) - 1)]
            prefix = y + (x,)
        msg = pi2.message_fn(1, prefix, None, split_coins(coins, j))
        return (msg, encode_uint(j, w)) if store_index else msg

    def output_fn(block, incoming, coins):
        received = incoming[0] if store_index else incoming
        return pi2.output_fn(block, received, split_coins(coins, k - 1))

    static = None if pi2.static_bits is None else pi2.static_bits + w
    return OneWayProtocol(k, message_fn, output_fn, mode, f"sim{k}({pi2.name})",
                          static_bits=static,
                          info={"pi2": pi2, "index_bits": w, "delta": delta})
