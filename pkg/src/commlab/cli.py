"""Batch experiment runner.

Every subcommand writes JSON lines (or CSV with ``--format csv``). Each
record carries the configuration, the master seed and the build id, so a run
can be replayed; identical argv produce byte-identical output.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import random
import sys
import warnings
from fractions import Fraction

import numpy as np

from . import __version__
from .core import (InputPartition, builtin_function, derive_seed, enum_cap, measure_error,
                   oneway_dcc2_oracle, optimal_oneway_protocol, run_protocol)
from .errors import CommLabError, OutsideRegimeWarning
from .l0stream import (EmbeddedLayers, EmbeddingPlan, L0Sketch, TurnstileStream,
                       decode_top_layer, exact_l0, l0_estimate, random_strict_stream)
from .numeric import (ExactDist, binomial_shift_sd, majority_error, min_entropy,
                      reconstruct_mixture, smoothing_check, statistical_distance,
                      two_point_decompose)
from .reductions import (augindex_to_ghse, ghse_decide_from_reduction, majority_bias,
                         majority_bias_closed_form)
from .simulate import (AmplifierPlan, amplify_majority, det_stream_from_two_party,
                       k_from_two_simulation, verify_automaton)
from .sumequal import (augindex_distribution, fingerprint_exact_error,
                       rectangle_conditional_probe, sumequal_fingerprint_protocol,
                       viola_product_distribution)

BUILD_ID = f"commlab-{__version__}"


def _num(x):
    """JSON-friendly number: Fractions become floats, numpy scalars become Python."""
    if isinstance(x, Fraction):
        return float(x)
    if isinstance(x, np.generic):
        return x.item()
    return x


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return _num(obj)


class Output:
    """Collects records and writes them as JSON lines or CSV."""

    def __init__(self, args):
        self.args = args
        self.records = []
        self.config = {k: v for k, v in sorted(vars(args).items())
                       if k not in ("func", "out", "format") and v is not None}

    def emit(self, record: dict):
        self.records.append(_clean(record))

    def render(self) -> str:
        meta = {"build": BUILD_ID, "config": _clean(self.config), "seed": self.args.seed}
        if self.args.format == "csv":
            keys = []
            for r in self.records:
                keys.extend(k for k in r if k not in keys)
            buf = io.StringIO()
            w = csv.DictWriter(buf, fieldnames=keys + ["seed", "build"], lineterminator="\n")
            w.writeheader()
            for r in self.records:
                row = {k: json.dumps(v) if isinstance(v, (list, dict)) else v
                       for k, v in r.items()}
                w.writerow({**row, "seed": self.args.seed, "build": BUILD_ID})
            return buf.getvalue()
        return "".join(json.dumps({**r, **meta}, sort_keys=True) + "\n" for r in self.records)


# ---------------------------------------------------------------------------
# verify


def _checks(seed: int):
    """Self-contained property checks; yields (name, passed, detail)."""
    yield ("binomial-shift t=100", abs(float(binomial_shift_sd(100)) - 0.0795892) < 1e-6,
           float(binomial_shift_sd(100)))
    yield ("majority bias n''=9", majority_bias(9) == Fraction(163, 256), str(majority_bias(9)))
    yield ("bias closed form", all(majority_bias(n) == majority_bias_closed_form(n)
                                   for n in range(1, 52, 2)), None)
    plan = AmplifierPlan.for_simulation(1 / 3, 4)
    yield ("amplifier plan delta=1/3 k=4", (plan.t, plan.M) == (57, 115), [plan.t, plan.M])
    yield ("majority tail bound", all(
        majority_error(1 + 2 * t, d) <= (4 * d * (1 - d)) ** t * d * (1 + 1e-9)
        for t in range(0, 31) for d in (0.05, 0.15, 0.25, 0.35, 0.45)), None)
    rng = random.Random(derive_seed(seed, "verify", 0))
    ok = True
    for _ in range(50):
        w = {v: rng.randint(1, 9) for v in range(rng.randint(2, 8))}
        d = ExactDist.from_mapping(w, normalize=True)
        if min_entropy(d) < 1:
            continue
        ok &= statistical_distance(reconstruct_mixture(two_point_decompose(d)), d) == 0
    yield ("two-point decomposition", ok, None)
    p = sumequal_fingerprint_protocol(4, 0.1, modulus=7)
    yield ("fingerprint one-sided", all(
        fingerprint_exact_error(p, (a, b, c, (-a - b - c) % 7)) == 0
        for a in range(7) for b in range(7) for c in range(7)), None)
    f = builtin_function("sum-equal-mod-m", 4, m=3)
    auto = det_stream_from_two_party(f, [optimal_oneway_protocol(f, c) for c in range(1, 4)])
    yield ("streaming automaton", verify_automaton(auto, f), auto.memory_bits)
    s = TurnstileStream.from_updates(5, 2, [(1, 2), (2, 1), (1, -2)])
    yield ("exact l0", exact_l0(s) == 1, exact_l0(s))
    s = random_strict_stream(2000, 8000, 100, 700, seed=seed)
    est, _ = l0_estimate(s, 0.1, 0.05, seed=seed)
    yield ("l0 estimate", abs(est - 700) <= 70, est)


def cmd_verify(args, out: Output) -> int:
    failed = 0
    for name, passed, detail in _checks(args.seed):
        failed += not passed
        out.emit({"check": name, "passed": bool(passed), "detail": detail})
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# sumequal


def cmd_sumequal(args, out: Output) -> int:
    k = args.k
    if args.bound is not None:
        p = sumequal_fingerprint_protocol(k, args.delta, bound=args.bound, t=args.players)
        bound = args.bound
        args.modulus = None

        def sampler(rng):
            xs = [rng.randint(-bound, bound) for _ in range(k - 1)]
            last = -sum(xs) if rng.random() < 0.5 else rng.randint(-k * bound, k * bound)
            return tuple(xs) + (last,)

        f = None
    else:
        m = args.modulus
        p = sumequal_fingerprint_protocol(k, args.delta, modulus=m, t=args.players)
        f = builtin_function("sum-equal-mod-m", k, m=m)

        def sampler(rng):
            xs = [rng.randrange(m) for _ in range(k - 1)]
            last = (-sum(xs)) % m if rng.random() < 0.5 else rng.randrange(m)
            return tuple(xs) + (last,)

    rng = random.Random(derive_seed(args.seed, "sumequal-inputs", 0))
    false_rej = false_acc = unequal = 0
    bits = 0
    part = InputPartition.from_cuts(_even_cuts(k, p.t))
    for i in range(args.trials):
        xs = sampler(rng)
        truth = int(sum(xs) % args.modulus == 0) if f is not None else int(sum(xs) == 0)
        res, rep = run_protocol(p, part, xs, seed=derive_seed(args.seed, "coins", i))
        bits = max(bits, rep.max_message_bits)
        if truth:
            false_rej += res != 1
        else:
            unequal += 1
            false_acc += res == 1
    lo, hi = p.info["prime_range"]
    out.emit({"k": k, "players": p.t, "delta": args.delta, "modulus": args.modulus,
              "bound": args.bound, "trials": args.trials, "false_rejections": false_rej,
              "unequal": unequal, "false_accepts": false_acc,
              "false_accept_rate": false_acc / unequal if unequal else 0.0,
              "max_message_bits": bits, "prime_lo": lo, "prime_hi": hi,
              "primes": len(p.info["primes"])})
    return 0


def _even_cuts(k: int, t: int) -> list[int]:
    """Cut sequence 0 = i_0 < ... < i_t = k splitting k inputs evenly."""
    return [round(k * j / t) for j in range(t + 1)]


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate_stream(args, out: Output) -> int:
    if args.function == "sum-equal":
        f = builtin_function("sum-equal-mod-m", args.m, m=args.modulus)
    else:
        f = builtin_function(args.function, args.m)
    cuts = range(1, args.m)
    auto = det_stream_from_two_party(f, [optimal_oneway_protocol(f, c) for c in cuts])
    dcc = max(oneway_dcc2_oracle(f, c) for c in cuts)
    out.emit({"function": f.name, "m": args.m, "correct": verify_automaton(auto, f),
              "memory_bits": auto.memory_bits, "max_cut_dcc": dcc,
              "index_bits": math.ceil(math.log2(args.m)) if args.m > 1 else 0})
    return 0


def cmd_simulate_amplify(args, out: Output) -> int:
    plan = AmplifierPlan.build(args.delta, args.epsilon) if args.epsilon is not None \
        else AmplifierPlan.for_simulation(args.delta, args.k)
    out.emit({"delta": plan.delta, "epsilon": plan.epsilon, "t": plan.t, "M": plan.M,
              "exact_error": plan.exact_error(), "bound": plan.bound()})
    return 0


def cmd_simulate_kfrom2(args, out: Output) -> int:
    k, p = args.k, args.p
    f = builtin_function("sum-equal-mod-m", k, m=p)
    mu = viola_product_distribution(k, p, seed=args.seed)
    base = sumequal_fingerprint_protocol(k, args.delta, modulus=p, t=2)
    plan = AmplifierPlan.for_simulation(args.delta, k)
    amp, _ = amplify_majority(base, args.delta, plan.epsilon, plan)
    sim = k_from_two_simulation(amp, f, mu, delta=args.delta)
    rep = measure_error(sim, f, InputPartition.singletons(k), mu, trials=args.trials,
                        seed=args.seed)
    out.emit({"k": k, "p": p, "delta": args.delta, "copies": plan.M, **rep.to_dict()})
    return 0


# ---------------------------------------------------------------------------
# ghse


def cmd_ghse_bias(args, out: Output) -> int:
    for n in range(1, args.max_n2 + 1, 2):
        b = majority_bias(n)
        claim = 0.5 + 1 / (2 * math.sqrt(n))
        out.emit({"n2": n, "bias": str(b), "bias_float": float(b), "claimed_lower": claim,
                  "exact_below_claim": float(b) < claim})
    return 0


def cmd_ghse_reduce(args, out: Output) -> int:
    correct = {True: 0, False: 0}
    seen = {True: 0, False: 0}
    gap = math.sqrt(args.n1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OutsideRegimeWarning)
        for i in range(args.trials):
            smp = augindex_distribution(args.k, args.n2, a=args.a, seed=(args.seed, i))
            r = augindex_to_ghse(smp, args.n1, args.n2, seed=(args.seed, i))
            label = ghse_decide_from_reduction(r.alice, r.bob, gap)
            seen[r.equal] += 1
            correct[r.equal] += label == int(r.equal)
    b = majority_bias(args.n2)
    out.emit({"n1": args.n1, "n2": args.n2, "k": args.k, "trials": args.trials,
              "bias": str(b), "equal_trials": seen[True], "equal_correct": correct[True],
              "unequal_trials": seen[False], "unequal_correct": correct[False]})
    return 0


# ---------------------------------------------------------------------------
# l0


def cmd_l0_estimate(args, out: Output) -> int:
    s = TurnstileStream.load(args.stream)
    est, bits = l0_estimate(s, args.epsilon, args.delta, seed=args.seed)
    out.emit({"estimate": est, "space_bits": bits, "exact": exact_l0(s)})
    return 0


def cmd_l0_generate(args, out: Output) -> int:
    s = random_strict_stream(args.N, args.m, args.M, args.l0, seed=args.seed)
    s.save(args.stream)
    out.emit({"stream": args.stream, "N": args.N, "m": len(s), "M": args.M,
              "l0": exact_l0(s)})
    return 0


def embedding_layers(t: int, n: int, k: int, a: int, seed):
    """t reduction-derived layers with n'=n and n''=1; returns (bit pairs, equal flags)."""
    layers, flags = [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OutsideRegimeWarning)
        for i in range(t):
            smp = augindex_distribution(k, 1, a=a, seed=(seed, i))
            r = augindex_to_ghse(smp, n, 1, seed=(seed, i))
            layers.append((r.alice, r.bob))
            flags.append(r.equal)
    return layers, flags


def cmd_l0_embed(args, out: Output) -> int:
    plan = EmbeddingPlan(args.t, args.n, args.epsilon)
    exact_ok = sketch_ok = 0
    for i in range(args.trials):
        layers, flags = embedding_layers(args.t, args.n, args.k, args.a, (args.seed, i))
        emb = EmbeddedLayers(layers, plan)
        truth = int(emb.f(plan.t) > 0)
        exact_ok += decode_top_layer(emb.exact_l0(), plan, []).label == truth
        sk = L0Sketch(plan.dimension, plan.sketch_epsilon, seed=derive_seed(args.seed, "sk", i),
                      reps=1, mM=2 * plan.N)
        est = float(sk.rep_estimates_from_oracle(emb.values)[0])
        sketch_ok += decode_top_layer(est, plan, []).label == truth
    out.emit({"t": args.t, "n": args.n, "epsilon": args.epsilon, "N": plan.N,
              "trials": args.trials, "exact_correct": exact_ok, "sketch_correct": sketch_ok})
    return 0


# ---------------------------------------------------------------------------
# probe


def cmd_probe_binomial_shift(args, out: Output) -> int:
    v = binomial_shift_sd(args.t)
    out.emit({"t": args.t, "sd": float(v), "exact": str(v)})
    return 0


def cmd_probe_smoothing(args, out: Output) -> int:
    pairs = [tuple(int(v) for v in pr.split(",")) for pr in args.pairs]
    v = smoothing_check(args.t, pairs, args.p)
    out.emit({"t": args.t, "p": args.p, "sd": float(v), "exact": str(v)})
    return 0


def cmd_probe_decompose(args, out: Output) -> int:
    weights = {i: Fraction(w) for i, w in enumerate(args.probs)}
    d = ExactDist.from_mapping(weights, normalize=True)
    parts = two_point_decompose(d)
    for w, pair in parts:
        out.emit({"weight": str(w), "pair": sorted(pair)})
    return 0


def cmd_probe_sd(args, out: Output) -> int:
    a = ExactDist.from_mapping({i: Fraction(w) for i, w in enumerate(args.a)}, normalize=True)
    b = ExactDist.from_mapping({i: Fraction(w) for i, w in enumerate(args.b)}, normalize=True)
    v = statistical_distance(a, b)
    out.emit({"sd": float(v), "exact": str(v)})
    return 0


def cmd_probe_rectangle(args, out: Output) -> int:
    rng = np.random.default_rng(derive_seed(args.seed, "rectangle", 0))
    rect = []
    for _ in range(args.k - 1):
        size = int(rng.integers(1, args.p ** args.m + 1))
        pick = rng.choice(args.p ** args.m, size=size, replace=False)
        rect.append([tuple((int(c) // args.p**j) % args.p for j in range(args.m)) for c in pick])
    res = rectangle_conditional_probe(args.k, args.m, args.p, rect, args.L, cap=enum_cap())
    out.emit({"k": args.k, "m": args.m, "p": args.p, "L": args.L, "sd": float(res["sd"]),
              "mass": float(res["mass"])})
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--trials", type=int, default=100000)
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--out", default=None, help="output path (default stdout)")

    parser = argparse.ArgumentParser(prog="commlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def leaf(group, name, func, help_text):
        p = group.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        return p

    leaf(sub, "verify", cmd_verify, "run the built-in property checks")

    p = leaf(sub, "sumequal", cmd_sumequal, "fingerprint protocol error and cost")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--modulus", type=int, default=7)
    p.add_argument("--bound", type=int, default=None, help="integer mode magnitude bound")
    p.add_argument("--players", type=int, default=None)

    sim = sub.add_parser("simulate", help="streaming and k-from-2 simulations")
    ssub = sim.add_subparsers(dest="action", required=True)
    p = leaf(ssub, "stream", cmd_simulate_stream, "streaming automaton from two-party protocols")
    p.add_argument("--function", choices=("parity", "sum-equal"), default="sum-equal")
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--modulus", type=int, default=3)
    p = leaf(ssub, "amplify", cmd_simulate_amplify, "majority amplification plan")
    p.add_argument("--delta", type=float, default=1 / 3)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--epsilon", type=float, default=None)
    p = leaf(ssub, "k-from-2", cmd_simulate_kfrom2, "k-player simulation of a two-player protocol")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--p", type=int, default=3)
    p.add_argument("--delta", type=float, default=0.1)

    gh = sub.add_parser("ghse", help="reduction pipeline and bias reports")
    gsub = gh.add_subparsers(dest="action", required=True)
    p = leaf(gsub, "bias", cmd_ghse_bias, "exact majority bias against the claimed bound")
    p.add_argument("--max-n2", type=int, default=21)
    p = leaf(gsub, "reduce", cmd_ghse_reduce, "end-to-end reduction accuracy")
    p.add_argument("--n1", type=int, default=8100)
    p.add_argument("--n2", type=int, default=9)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--a", type=int, default=4)

    l0 = sub.add_parser("l0", help="L0 estimation and the layered embedding")
    lsub = l0.add_subparsers(dest="action", required=True)
    p = leaf(lsub, "estimate", cmd_l0_estimate, "estimate L0 of a stream file")
    p.add_argument("--stream", required=True)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--delta", type=float, default=1 / 3)
    p = leaf(lsub, "generate", cmd_l0_generate, "write a random strict stream")
    p.add_argument("--stream", required=True)
    p.add_argument("--N", type=int, default=10000)
    p.add_argument("--m", type=int, default=50000)
    p.add_argument("--M", type=int, default=100)
    p.add_argument("--l0", type=int, default=5000)
    p = leaf(lsub, "embed", cmd_l0_embed, "decode the top layer from an L0 estimate")
    p.add_argument("--t", type=int, default=3)
    p.add_argument("--n", type=int, default=900)
    p.add_argument("--epsilon", type=float, default=1 / 30)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--a", type=int, default=4)

    pr = sub.add_parser("probe", help="numeric oracles")
    psub = pr.add_subparsers(dest="action", required=True)
    p = leaf(psub, "binomial-shift", cmd_probe_binomial_shift, "SD of Bin(t) and its shift")
    p.add_argument("--t", type=int, default=100)
    p = leaf(psub, "smoothing", cmd_probe_smoothing, "SD from uniform of a sum of pairs mod p")
    p.add_argument("--t", type=int, default=100)
    p.add_argument("--p", type=int, default=5)
    p.add_argument("--pairs", nargs="+", default=["0,1"])
    p = leaf(psub, "decompose", cmd_probe_decompose, "two-point decomposition")
    p.add_argument("--probs", nargs="+", required=True)
    p = leaf(psub, "sd", cmd_probe_sd, "statistical distance of two weight vectors")
    p.add_argument("--a", nargs="+", required=True)
    p.add_argument("--b", nargs="+", required=True)
    p = leaf(psub, "rectangle", cmd_probe_rectangle, "conditional SD on a random rectangle")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--p", type=int, default=3)
    p.add_argument("--L", type=int, nargs="+", default=[0])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = Output(args)
    try:
        code = args.func(args, out)
    except CommLabError as exc:
        sys.stdout.write(json.dumps({"error": type(exc).__name__, "reason": exc.reason,
                                     "message": str(exc)}, sort_keys=True) + "\n")
        return 3
    text = out.render()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
