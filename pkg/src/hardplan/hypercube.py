"""Sign-vector algebra on {-1,1}^p and the abstract guessing game.

A sign vector is a 1-d integer numpy array with entries in {-1, +1}.  A weight
sequence is a list of sign vectors with an implicit all-ones vector in front
of it; it is admissible when consecutive members differ in at least p/4
positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

OUTPUT_LEN = 8


class InvalidSequenceError(ValueError):
    pass


def as_sign_vector(w) -> np.ndarray:
    arr = np.asarray(w, dtype=np.int64)
    if arr.ndim != 1 or arr.size < 1 or not np.all(np.abs(arr) == 1):
        raise ValueError(f"not a sign vector: {w!r}")
    return arr


def ones(p: int) -> np.ndarray:
    return np.ones(p, dtype=np.int64)


def hamming(w1, w2) -> int:
    a, b = as_sign_vector(w1), as_sign_vector(w2)
    if a.size != b.size:
        raise ValueError(f"dimension mismatch: {a.size} vs {b.size}")
    return int((a.size - int(a @ b)) // 2)


def is_close(w1, w2) -> bool:
    """diff(w1, w2) < p/4."""
    return 4 * hamming(w1, w2) < len(w1)


def g(x: int | float, p: int) -> float:
    """Second-order Taylor polynomial of (1 - 1/p)^x."""
    if not 0 <= x <= p:
        raise ValueError(f"g needs 0 <= x <= p, got x={x}, p={p}")
    return 1.0 - x / p + (x - 1) * x / (2.0 * p * p)


def g_exact(x: int, p: int) -> Fraction:
    if not 0 <= x <= p:
        raise ValueError(f"g needs 0 <= x <= p, got x={x}, p={p}")
    return 1 - Fraction(x, p) + Fraction((x - 1) * x, 2 * p * p)


def wcirc_check(seq: Sequence) -> bool:
    if len(seq) == 0:
        return True
    p = len(seq[0])
    prev = ones(p)
    for w in seq:
        if 4 * hamming(prev, w) < p:
            return False
        prev = w
    return True


def _validated(seq: Sequence, secret) -> tuple[list[np.ndarray], np.ndarray]:
    sec = as_sign_vector(secret)
    items = [as_sign_vector(w) for w in seq]
    for w in items:
        if w.size != sec.size:
            raise ValueError("sequence and secret dimensions differ")
    if not wcirc_check(items):
        raise InvalidSequenceError("consecutive weights closer than p/4")
    return items, sec


def f(seq: Sequence, secret) -> float:
    """Reward of a weight sequence: product of g over consecutive distances,
    times g of the distance from the last weight to the secret."""
    items, sec = _validated(seq, secret)
    p = sec.size
    prev = ones(p)
    val = 1.0
    for w in items:
        val *= g(hamming(prev, w), p)
        prev = w
    return val * g(hamming(prev, sec), p)


def f_exact(seq: Sequence, secret) -> Fraction:
    items, sec = _validated(seq, secret)
    p = sec.size
    if p > 8:
        raise ValueError("exact evaluation is limited to p <= 8")
    prev = ones(p)
    val = Fraction(1)
    for w in items:
        val *= g_exact(hamming(prev, w), p)
        prev = w
    return val * g_exact(hamming(prev, sec), p)


def in_wstar(w) -> bool:
    w = as_sign_vector(w)
    p = w.size
    dist = hamming(ones(p), w)
    return p <= 4 * dist <= 3 * p


def sample_wstar(p: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the admissible secrets by rejection."""
    if p < 2:
        raise ValueError("p must be at least 2")
    while True:
        w = np.where(rng.random(p) < 0.5, -1, 1).astype(np.int64)
        if in_wstar(w):
            return w


def all_sign_vectors(p: int) -> np.ndarray:
    """All 2^p sign vectors; row j has -1 exactly where bit j has a 1."""
    idx = np.arange(2**p)[:, None]
    bits = (idx >> np.arange(p)[None, :]) & 1
    return (1 - 2 * bits).astype(np.int64)


def enumerate_wstar(p: int) -> list[np.ndarray]:
    if p > 20:
        raise ValueError("enumeration limited to p <= 20")
    return [w for w in all_sign_vectors(p) if in_wstar(w)]


def wclose_count(w) -> int:
    """Number of hypercube points at distance < p/4 from ``w``."""
    p = as_sign_vector(w).size
    if p > 20:
        raise ValueError("exact count limited to p <= 20")
    return sum(math.comb(p, j) for j in range(p + 1) if 4 * j < p)


@dataclass(frozen=True)
class GameConstants:
    n: int
    eps: float

    @classmethod
    def for_game(cls, p: int, K: int) -> "GameConstants":
        eps = (25 / 32) ** (K + 1)
        n = math.floor(min(math.exp(p / 8) / 16 - 5, (1 / eps - 1) / 7.5))
        return cls(n, eps)


@dataclass(frozen=True)
class GameResponse:
    U: int
    V: int
    Z: int


@dataclass
class AbstractGame:
    """The abstract game with secret ``secret``; counts every query."""

    K: int
    p: int
    secret: np.ndarray
    queries: int = field(default=0)

    def __post_init__(self):
        self.secret = as_sign_vector(self.secret)
        if self.secret.size != self.p:
            raise ValueError("secret dimension does not match p")
        if not in_wstar(self.secret):
            raise ValueError("secret must satisfy p/4 <= diff(1, secret) <= 3p/4")

    def law(self, L: int, seq: Sequence) -> tuple[int, int, float]:
        """(U, V, P[Z=1]) for a query; does not count as a query."""
        if not 1 <= L <= self.K:
            raise ValueError(f"query length {L} outside [1, {self.K}]")
        if len(seq) != L:
            raise ValueError("sequence length must equal L")
        items, sec = _validated(seq, self.secret)
        before = items[L - 2] if L >= 2 else ones(self.p)
        U = int(is_close(before, sec))
        V = int(is_close(items[L - 1], sec))
        z = f(items, sec) if (V or L == self.K) else 0.0
        return U, V, z

    def step(self, L: int, seq: Sequence, rng: np.random.Generator) -> GameResponse:
        U, V, z = self.law(L, seq)
        self.queries += 1
        Z = int(rng.random() < z) if z > 0 else 0
        return GameResponse(U, V, Z)

    def finalize(self, output: Sequence) -> float:
        return game_finalize(self.secret, output)


def game_step(game: AbstractGame, L: int, seq: Sequence, rng: np.random.Generator) -> GameResponse:
    return game.step(L, seq, rng)


def truncate(secret, output: Sequence) -> list[np.ndarray]:
    """First k* items of an output, k* being the first item close to the secret (or 8)."""
    sec = as_sign_vector(secret)
    items = [as_sign_vector(w) for w in output]
    for k, w in enumerate(items, start=1):
        if k == OUTPUT_LEN or is_close(w, sec):
            return items[:k]
    raise InvalidSequenceError(f"output must have exactly {OUTPUT_LEN} items")


def game_finalize(secret, output: Sequence) -> float:
    """Expected payoff of a final output."""
    if len(output) != OUTPUT_LEN:
        raise InvalidSequenceError(f"output must have exactly {OUTPUT_LEN} items")
    if not wcirc_check([as_sign_vector(w) for w in output]):
        raise InvalidSequenceError("output is not admissible")
    return f(truncate(secret, output), secret)


def game0_step(L: int = 1, seq: Sequence = ()) -> GameResponse:
    return GameResponse(0, 0, 0)
