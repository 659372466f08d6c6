"""Gap-Hamming-of-Sum-Equal instances and reductions.

Z^(i) = +1 when coordinate i's Sum-Equal instance sums to its target,
-1 otherwise; HSE is the sum of the Z^(i).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .core import derive_seed
from .errors import OutsideRegimeWarning, PreconditionError, WidthOverflowError
from .numeric import majority_disagreement_bias
from .sumequal import AugIndexSample


@dataclass
class GhseInstance:
    """n Sum-Equal instances (rows of ``coords``) and a gap threshold."""

    coords: np.ndarray
    gap: Fraction
    modulus: int | None = None
    target: int = 0

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.int64)
        if self.coords.ndim != 2:
            raise PreconditionError("coords must be an (n, k) array")
        self.gap = Fraction(self.gap)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def k(self) -> int:
        return self.coords.shape[1]

    @classmethod
    def from_bits(cls, m: Sequence[int], m_prime: Sequence[int], gap) -> "GhseInstance":
        """Two-player bit instance: coordinate i counts +1 iff m_i != m'_i."""
        m = np.asarray(m, dtype=np.int64)
        m_prime = np.asarray(m_prime, dtype=np.int64)
        if m.shape != m_prime.shape:
            raise PreconditionError("bit vectors differ in length")
        return cls(np.stack([m, m_prime], axis=1), gap, modulus=2, target=1)

    def z(self) -> np.ndarray:
        s = self.coords.sum(axis=1)
        if self.modulus is not None:
            hit = (s - self.target) % self.modulus == 0
        else:
            hit = s == self.target
        return np.where(hit, 1, -1)

    def to_json(self) -> str:
        return json.dumps({"coords": self.coords.tolist(), "gap": str(self.gap),
                           "modulus": self.modulus, "target": self.target})


def hse_evaluate(g: GhseInstance):
    """(HSE, label): label 1 if HSE >= gap, 0 if HSE <= -gap, else None."""
    hse = int(g.z().sum())
    if hse >= g.gap:
        return hse, 1
    if hse <= -g.gap:
        return hse, 0
    return hse, None


def copy_amplify(g: GhseInstance, c, epsilon, n: int) -> GhseInstance:
    """Replicate every coordinate r = eps^2 n / c^2 times; HSE and gap scale by r.

    Requires the instance size n' = c^2 / eps^2.
    """
    c, epsilon = Fraction(c), Fraction(epsilon)
    n_prime = c * c / (epsilon * epsilon)
    if n_prime != g.n:
        raise PreconditionError(f"instance has n'={g.n}, expected c^2/eps^2 = {n_prime}")
    r = epsilon * epsilon * n / (c * c)
    if r.denominator != 1 or r < 1:
        unit = (c * c / (epsilon * epsilon))
        step = unit.numerator if unit.denominator == 1 else unit
        nearest = max(1, round(n / step)) * step
        raise PreconditionError(
            f"replication factor eps^2 n / c^2 = {r} is not a positive integer; try n = {nearest}")
    r = int(r)
    return GhseInstance(np.repeat(g.coords, r, axis=0), g.gap * r, g.modulus, g.target)


# ---------------------------------------------------------------------------
# Aug-Index-Sum-Equal -> 1-GHSE


def majority_bias(n_doubleprime: int) -> Fraction:
    """Pr[majority of n'' fair bits equals a fixed one of them] (exact)."""
    return majority_disagreement_bias(n_doubleprime)


def majority_bias_closed_form(n_doubleprime: int) -> Fraction:
    """1/2 + C(n''-1, (n''-1)/2) / 2^n''."""
    h = (n_doubleprime - 1) // 2
    return Fraction(1, 2) + Fraction(math.comb(n_doubleprime - 1, h), 1 << n_doubleprime)


def padding(n_prime: int) -> int:
    """ceil(10 sqrt(n')) padded coordinates."""
    r = math.isqrt(100 * n_prime)
    return r if r * r == 100 * n_prime else r + 1


def _zigzag_encode(values: np.ndarray) -> np.ndarray:
    v = values.astype(np.int64)
    z = np.where(v >= 0, 2 * v, -2 * v - 1).astype(np.uint64)
    return (z << np.uint64(1)) | np.uint64(1)


def _parity(x: np.ndarray) -> np.ndarray:
    return (np.bitwise_count(x) & 1).astype(np.uint8)


@dataclass
class ReductionResult:
    alice: np.ndarray
    bob: np.ndarray
    bias: Fraction
    pad: int
    query: int
    equal: bool
    expected_hse: Fraction
    width: int
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"alice": self.alice.tolist(), "bob": self.bob.tolist(),
                           "bias": str(self.bias), "pad": self.pad, "query": self.query,
                           "equal": self.equal, "expected_hse": str(self.expected_hse),
                           "width": self.width})


def alice_bob_values(sample: AugIndexSample):
    """Alice's value is column 0, Bob's is minus the sum of the other columns.

    A copy sums to 0 exactly when the two values are equal.
    """
    X = sample.X
    return X[:, 0].copy(), -X[:, 1:].sum(axis=1)


def augindex_to_ghse(sample: AugIndexSample, n_prime: int, n_doubleprime: int,
                     seed: int = 0, masks: np.ndarray | None = None) -> ReductionResult:
    """Hash-and-majority reduction to a 1-GHSE bit instance over n' coordinates.

    With inner-product hashes h_ij over GF(2): Alice sets
    m_i = MAJ_j h_ij(X^(j)) and Bob sets m'_i = 1 - h_ij*(Y^(j*)) for the
    queried copy j*, for i <= n' - P; both set the last P = ceil(10 sqrt n')
    coordinates to 0.
    """
    if n_doubleprime < 1 or n_doubleprime % 2 == 0:
        raise PreconditionError("n'' must be odd (majority undefined otherwise)")
    if sample.m != n_doubleprime:
        raise PreconditionError(f"sample has {sample.m} copies, expected n''={n_doubleprime}")
    if n_prime < 900 * n_doubleprime:
        warnings.warn(f"n'={n_prime} < 900 n''", OutsideRegimeWarning, stacklevel=2)
    pad = padding(n_prime)
    active = n_prime - pad
    if active < 0:
        raise PreconditionError(f"n'={n_prime} smaller than the padding {pad}")
    xa, yb = alice_bob_values(sample)
    enc_x = _zigzag_encode(xa)
    j_star = sample.n - 1
    enc_y = _zigzag_encode(np.asarray([yb[j_star]]))[0]
    width = int(max(int(enc_x.max()), int(enc_y))).bit_length()
    if width > 63:
        raise WidthOverflowError("hash inputs exceed 63 bits")
    if masks is None:
        rng = np.random.default_rng(derive_seed(seed, "hash-grid", 0))
        masks = rng.integers(0, 1 << width, size=(active, n_doubleprime), dtype=np.uint64)
    r = _parity(masks & enc_x[None, :])
    maj = (r.sum(axis=1) * 2 > n_doubleprime).astype(np.uint8)
    hy = _parity(masks[:, j_star] & enc_y)
    alice = np.zeros(n_prime, dtype=np.uint8)
    bob = np.zeros(n_prime, dtype=np.uint8)
    alice[:active] = maj
    bob[:active] = 1 - hy
    bias = majority_bias(n_doubleprime)
    equal = bool(xa[j_star] == yb[j_star])
    expected = (active * (2 * bias - 1) - pad) if equal else Fraction(-pad)
    return ReductionResult(alice, bob, bias, pad, sample.n, equal, Fraction(expected), width)


def hse_bits(m: np.ndarray, m_prime: np.ndarray) -> int:
    """HSE of a bit instance: +1 per differing coordinate, -1 per agreeing one."""
    m = np.asarray(m)
    m_prime = np.asarray(m_prime)
    if m.shape != m_prime.shape:
        raise PreconditionError("vectors must have equal length")
    diff = int(np.count_nonzero(m != m_prime))
    return 2 * diff - m.size


def ghse_decide_from_reduction(m, m_prime, gap=None) -> int:
    """1 if HSE >= gap, 0 if HSE <= -gap; inside the band, the sign of HSE.

    The default gap is sqrt(n').
    """
    hse = hse_bits(m, m_prime)
    gap = math.sqrt(len(m)) if gap is None else gap
    if hse >= gap:
        return 1
    if hse <= -gap:
        return 0
    return int(hse > 0)
