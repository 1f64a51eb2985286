"""The hypercube-guessing MDP family and its linear features.

A state is the tuple of actions taken since the start (actions are 0-based
component indices).  Actions are grouped into rounds of ``p`` steps; in each
round the agent flips components of the round-start weight, one per step.  A
repeated action within the first ``ceil(p/4)`` steps of a round is illegal
and ends the episode; a later repeat freezes the weight for the rest of the
round.

Internally weights are bit masks: bit ``j`` is set when component ``j`` is -1,
so Hamming distance is a popcount and the all-ones vector is mask 0.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass
from typing import Callable, Hashable

import numpy as np

from . import hypercube as hc
from .mdp import BOTTOM, FeatureKind, FeaturizedMDP, Outcome, TransitionSample, zero_features
from .tensor import flat_outer

THETA_SCALE = 63.0
B_HARD = 315.0
VARIANTS = ("v", "q", "vq")


class ThresholdError(ValueError):
    pass


# -- parameters ------------------------------------------------------------


@dataclass(frozen=True)
class HardMdpParams:
    d: int
    H: int
    p: int
    K: int
    variant: str = "v"
    B: float = B_HARD

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.p < 2 or self.K < 1:
            raise ValueError("need p >= 2 and K >= 1")
        if self.d < base_dim(self.p):
            raise ValueError(f"d={self.d} is below 1+p+p^2+p^3+p^4={base_dim(self.p)}")
        if self.K * self.p > self.H:
            raise ValueError("K*p exceeds the horizon")

    @property
    def H_eff(self) -> int:
        return self.K * self.p

    @property
    def r(self) -> int:
        return math.ceil(self.p / 4)


def base_dim(p: int) -> int:
    return 1 + p + p**2 + p**3 + p**4


def derive_params(
    d: int | None = None,
    H: int | None = None,
    variant: str = "v",
    strict: bool = True,
    p: int | None = None,
    K: int | None = None,
) -> HardMdpParams:
    """Choose (p, K) from (d, H), or accept explicit desk-scale overrides."""
    if strict:
        if d is None or H is None:
            raise ThresholdError("strict mode needs d and H")
        if d < 31 or H < 81:
            raise ThresholdError(f"strict mode needs d >= 31 and H >= 81, got d={d}, H={H}")
        x = 1
        while base_dim(x + 1) <= d:
            x += 1
        p_ = min(x, math.isqrt(H))
        K_ = H // p_
        if p_ < 2 or K_ < 9:
            raise ThresholdError(f"derived p={p_}, K={K_} violate p >= 2, K >= 9")
        return HardMdpParams(d, H, p_, K_, variant)
    if p is None or K is None:
        raise ValueError("desk mode needs explicit p and K")
    if K < 9:
        warnings.warn(f"K={K} < 9: the lower-bound reduction needs K >= 9", stacklevel=2)
    d_ = base_dim(p) if d is None else d
    H_ = K * p if H is None else H
    return HardMdpParams(d_, H_, p, K, variant)


# -- bit-mask helpers -------------------------------------------------------


def vec_to_mask(w) -> int:
    w = hc.as_sign_vector(w)
    return sum(1 << j for j in range(w.size) if w[j] < 0)


def mask_to_vec(mask: int, p: int) -> np.ndarray:
    return np.array([-1 if (mask >> j) & 1 else 1 for j in range(p)], dtype=np.int64)


def _bits(mask: int, p: int) -> np.ndarray:
    return np.array([(mask >> j) & 1 for j in range(p)], dtype=float)


def _g(x: int, p: int) -> float:
    return 1.0 - x / p + (x - 1) * x / (2.0 * p * p)


def _close(m1: int, m2: int, p: int) -> bool:
    return 4 * (m1 ^ m2).bit_count() < p


# -- round statistics -------------------------------------------------------


@dataclass(frozen=True)
class RoundStats:
    """Everything the dynamics and features need to know about a state."""

    p: int
    k: int
    i: int
    starts: tuple[int, ...]  # masks of w_1..w_k
    flips: int  # components flipped so far this round
    frozen: bool
    prefix: float

    @property
    def w_k0(self) -> int:
        return self.starts[-1] if self.starts else 0

    @property
    def w_ki(self) -> int:
        return self.w_k0 ^ self.flips

    @property
    def full(self) -> int:
        return (1 << self.p) - 1

    @property
    def fix(self) -> int:
        return self.full if self.frozen else self.flips

    @property
    def ct_flip(self) -> int:
        return self.flips.bit_count()

    def e_fix(self, secret: int) -> int:
        return (self.fix & (self.w_ki ^ secret)).bit_count()

    def e_notfix(self, secret: int) -> int:
        return (~self.fix & self.full & (self.w_ki ^ secret)).bit_count()

    def weight_sequence(self) -> list[np.ndarray]:
        return [mask_to_vec(m, self.p) for m in self.starts]


ROOT = ()


def _advance(st: RoundStats, a: int, r: int, K: int) -> tuple[str, int, RoundStats | None]:
    """Apply action ``a``; returns (kind, new weight mask, child stats).

    kind is "illegal", "step" (same round) or "round" (round completed).
    """
    p = st.p
    bit = 1 << a
    if st.frozen:
        w_new, flips, frozen = st.w_ki, st.flips, True
    elif st.flips & bit:
        if st.i < r:
            return "illegal", st.w_ki, None
        w_new, flips, frozen = st.w_ki, st.flips, True
    else:
        w_new, flips, frozen = st.w_ki ^ bit, st.flips | bit, False
    if st.i < p - 1:
        return "step", w_new, RoundStats(p, st.k, st.i + 1, st.starts, flips, frozen, st.prefix)
    prefix = st.prefix * _g((st.w_k0 ^ w_new).bit_count(), p)
    if st.k == K - 1:
        return "round", w_new, None
    return "round", w_new, RoundStats(p, st.k + 1, 0, st.starts + (w_new,), 0, False, prefix)


def _round_actions(flips: int, steps: int, p: int) -> list[int]:
    idx = [j for j in range(p) if (flips >> j) & 1]
    return idx + [idx[0]] * (steps - len(idx)) if steps > len(idx) else idx


def canonical_actions(st: RoundStats) -> tuple[int, ...]:
    """Smallest-representative action sequence with the same statistics."""
    acts: list[int] = []
    prev = 0
    for m in st.starts:
        acts += _round_actions(prev ^ m, st.p, st.p)
        prev = m
    acts += _round_actions(st.flips, st.i, st.p)
    return tuple(acts)


class HardStructure:
    """Secret-independent part of the MDP: the action tree and features.

    With ``quotient=True`` children are mapped to canonical representatives,
    so the enumeration visits one state per class of action sequences that
    share all round statistics.  Such states have identical transition laws
    and features for every secret.
    """

    def __init__(self, params: HardMdpParams, quotient: bool = False):
        self.params = params
        self.p, self.K, self.r = params.p, params.K, params.r
        self.quotient = quotient
        self._stats: dict = {ROOT: RoundStats(self.p, 0, 0, (), 0, False, 1.0)}
        self._steps: dict = {}
        self._zv: dict = {}
        self._states: list | None = None

    def stats(self, s) -> RoundStats:
        try:
            return self._stats[s]
        except KeyError:
            pass
        if not isinstance(s, tuple) or len(s) == 0:
            raise ValueError(f"not a state of this MDP: {s!r}")
        if len(s) >= self.K * self.p:
            raise ValueError(f"action sequence longer than K*p-1: {s!r}")
        parent = self.stats(s[:-1])
        a = s[-1]
        if not 0 <= a < self.p:
            raise ValueError(f"action {a} out of range")
        kind, _, st = _advance(parent, a, self.r, self.K)
        if kind == "illegal":
            raise ValueError(f"sequence {s!r} contains an illegal repeat")
        self._stats[s] = st
        return st

    def step(self, s, a: int) -> tuple[str, int, Hashable]:
        """(kind, new weight mask, child id or BOTTOM) for the action-tree edge."""
        key = (s, a)
        try:
            return self._steps[key]
        except KeyError:
            pass
        st = self.stats(s)
        kind, w_new, child_st = _advance(st, a, self.r, self.K)
        if child_st is None:
            child = BOTTOM
        elif self.quotient:
            child = canonical_actions(child_st)
            self._stats.setdefault(child, child_st)
        else:
            child = s + (a,)
            self._stats.setdefault(child, child_st)
        out = (kind, w_new, child)
        self._steps[key] = out
        return out

    def states(self) -> list:
        """All non-terminal states (or class representatives), by stage."""
        if self._states is None:
            seen = {ROOT}
            order = [ROOT]
            queue = deque([ROOT])
            while queue:
                s = queue.popleft()
                for a in range(self.p):
                    _, _, child = self.step(s, a)
                    if child is not BOTTOM and child not in seen:
                        seen.add(child)
                        order.append(child)
                        queue.append(child)
            self._states = order
        return self._states

    # -- features ---------------------------------------------------------

    def v_factor(self, s) -> tuple[float, tuple[int, int, int]]:
        """phi_v(s) = scale * v_blocks(*key), zero-padded."""
        st = self.stats(s)
        return st.prefix / THETA_SCALE, (st.ct_flip, st.fix, st.w_ki)

    def q_factor(self, s, a: int) -> tuple[float, int]:
        """At the last step of a round, phi_q(s, a) = scale * q_blocks(p, mask)."""
        st = self.stats(s)
        _, w_new, _ = self.step(s, a)
        return st.prefix * _g((st.w_k0 ^ w_new).bit_count(), self.p) / THETA_SCALE, w_new

    def z_blocks(self, ct: int, fix: int, w_ki: int) -> np.ndarray:
        key = (ct, fix, w_ki)
        z = self._zv.get(key)
        if z is None:
            z = v_blocks(self.p, ct, fix, w_ki)
            self._zv[key] = z
        return z

    def phi_v(self, s) -> np.ndarray:
        d = self.params.d
        out = np.zeros(d)
        if s is BOTTOM:
            return out
        st = self.stats(s)
        z = self.z_blocks(st.ct_flip, st.fix, st.w_ki)
        out[: z.size] = (st.prefix / THETA_SCALE) * z
        return out

    def phi_q(self, s, a: int) -> np.ndarray:
        d = self.params.d
        if s is BOTTOM:
            return np.zeros(d)
        st = self.stats(s)
        kind, w_new, child = self.step(s, a)
        if st.i < self.p - 1:
            return self.phi_v(child)
        out = np.zeros(d)
        c, _ = self.q_factor(s, a)
        x = q_blocks(self.p, w_new)
        out[: x.size] = c * x
        return out


def _g_blocks(p: int, t10: float, t11: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coefficients of g(t10 + <t11, u>) against [1, u, flat(u (x) u)]."""
    c1 = (-2.0 * p - 1.0) / (2.0 * p * p)
    c2 = 1.0 / (2.0 * p * p)
    g0 = np.array([1.0 + c1 * t10 + c2 * t10 * t10])
    g1 = c1 * t11 + c2 * 2.0 * t10 * t11
    g2 = c2 * flat_outer(t11, t11)
    return g0, g1, g2


def v_blocks(p: int, ct: int, fix: int, w_ki: int) -> np.ndarray:
    """[Z0, Z1, Z2, Z3, Z4]: coefficients of g(ct + e_notfix) g(e_fix) against
    the tensor powers 0..4 of the normalized secret."""
    sp = math.sqrt(p)
    w = mask_to_vec(w_ki, p).astype(float)
    fixv = _bits(fix, p)
    nfix = 1.0 - fixv
    X = _g_blocks(p, ct + 0.5 * nfix.sum(), -0.5 * sp * nfix * w)
    Y = _g_blocks(p, 0.5 * fixv.sum(), -0.5 * sp * fixv * w)
    k = np.kron
    z0 = X[0] * Y[0]
    z1 = k(X[0], Y[1]) + k(X[1], Y[0])
    z2 = k(X[0], Y[2]) + k(X[1], Y[1]) + k(X[2], Y[0])
    z3 = k(X[1], Y[2]) + k(X[2], Y[1])
    z4 = k(X[2], Y[2])
    return np.concatenate([z0, z1, z2, z3, z4])


def q_blocks(p: int, w_mask: int) -> np.ndarray:
    """[X0, X1, X2]: coefficients of g(diff(w, secret)) against tensor powers
    0..2 of the normalized secret."""
    w = mask_to_vec(w_mask, p).astype(float)
    X = _g_blocks(p, p / 2.0, -0.5 * math.sqrt(p) * w)
    return np.concatenate(X)


def theta_star(params: HardMdpParams, secret) -> np.ndarray:
    sec = hc.as_sign_vector(secret)
    p = params.p
    if sec.size != p:
        raise ValueError("secret dimension does not match p")
    u = sec / math.sqrt(p)
    blocks = [np.ones(1)] + [flat_outer(*([u] * j)) for j in range(1, 5)]
    out = np.zeros(params.d)
    body = THETA_SCALE * np.concatenate(blocks)
    out[: body.size] = body
    return out


# -- the MDP ---------------------------------------------------------------


class HardMDP(FeaturizedMDP):
    """One member of the family, fixed by its secret sign vector."""

    def __init__(self, params: HardMdpParams, secret, structure: HardStructure | None = None, quotient: bool = False):
        self.params = params
        self.secret_vec = hc.as_sign_vector(secret)
        if self.secret_vec.size != params.p:
            raise ValueError("secret dimension does not match p")
        if not hc.in_wstar(self.secret_vec):
            raise ValueError("secret must satisfy p/4 <= diff(1, secret) <= 3p/4")
        self.secret = vec_to_mask(self.secret_vec)
        if structure is None:
            structure = HardStructure(params, quotient)
        elif structure.params != params:
            raise ValueError("structure built for different parameters")
        self.structure = structure
        self.theta = theta_star(params, self.secret_vec)
        self._zdot: dict = {}
        self._qdot: dict = {}
        self.num_actions = params.p
        self.horizon = params.H_eff
        self.feature_dim = params.d
        self.initial_state = ROOT
        self.feature_kind = {"v": FeatureKind.STATE, "q": FeatureKind.ACTION, "vq": FeatureKind.BOTH}[params.variant]

    def stats(self, s) -> RoundStats:
        return self.structure.stats(s)

    def stage(self, s) -> int:
        if s is BOTTOM:
            return self.horizon
        self.stats(s)
        return len(s)

    def states(self):
        return self.structure.states()

    def phi_v(self, s):
        return self.structure.phi_v(s)

    def phi_q(self, s, a):
        self.check_action(a)
        return self.structure.phi_q(s, a)

    def case(self, s, a: int) -> int:
        """Which branch of the transition rule applies (1-4)."""
        self.check_action(a)
        st = self.stats(s)
        p = self.params.p
        if st.k > 0 and _close(st.w_k0, self.secret, p):
            return 1
        kind, w_new, _ = self.structure.step(s, a)
        if st.i == p - 1:
            if _close(w_new, self.secret, p):
                return 2
            if st.k == self.params.K - 1:
                return 3
        return 4

    def case1_reward(self, s, a: int) -> float:
        return self.q_linear(s, a) if self.params.variant == "q" else self.v_linear(s)

    def v_linear(self, s) -> float:
        """<phi_v(s), theta*> without materializing the feature vector."""
        if s is BOTTOM:
            return 0.0
        scale, key = self.structure.v_factor(s)
        dot = self._zdot.get(key)
        if dot is None:
            z = self.structure.z_blocks(*key)
            dot = self._zdot[key] = float(z @ self.theta[: z.size])
        return scale * dot

    def q_linear(self, s, a: int) -> float:
        """<phi_q(s, a), theta*> without materializing the feature vector."""
        self.check_action(a)
        if s is BOTTOM:
            return 0.0
        st = self.stats(s)
        if st.i < self.params.p - 1:
            return self.v_linear(self.structure.step(s, a)[2])
        scale, mask = self.structure.q_factor(s, a)
        dot = self._qdot.get(mask)
        if dot is None:
            x = q_blocks(self.params.p, mask)
            dot = self._qdot[mask] = float(x @ self.theta[: x.size])
        return scale * dot

    def round_reward_mean(self, s, a: int) -> float:
        """f of the round-start weights, including the one compiled by ``a``."""
        st = self.stats(s)
        p = self.params.p
        _, w_new, _ = self.structure.step(s, a)
        return st.prefix * _g((st.w_k0 ^ w_new).bit_count(), p) * _g((w_new ^ self.secret).bit_count(), p)

    def outcomes(self, s, a):
        self.check_action(a)
        if s is BOTTOM:
            return [Outcome(1.0, BOTTOM, 0.0)]
        c = self.case(s, a)
        if c == 1:
            return [Outcome(1.0, BOTTOM, self.case1_reward(s, a))]
        if c in (2, 3):
            return [Outcome(1.0, BOTTOM, self.round_reward_mean(s, a), bernoulli=True)]
        _, _, child = self.structure.step(s, a)
        return [Outcome(1.0, child, 0.0)]

    # -- closed forms -----------------------------------------------------

    def v_prime(self, s) -> float:
        return v_prime(self, s)

    def is_reach(self, s) -> bool:
        return reachable_class(self, s) == "reach"


def v_prime(mdp: HardMDP, s) -> float:
    """prefix * g(ct_flip + e_notfix) * g(e_fix)."""
    if s is BOTTOM:
        raise ValueError("v' is not defined at BOTTOM")
    st = mdp.stats(s)
    p, sec = mdp.params.p, mdp.secret
    return st.prefix * _g(st.ct_flip + st.e_notfix(sec), p) * _g(st.e_fix(sec), p)


def reachable_class(mdp: HardMDP, s) -> str:
    if s is BOTTOM:
        return "reach"
    st = mdp.stats(s)
    return "notreach" if _close(st.w_k0, mdp.secret, mdp.params.p) else "reach"


def pi_theta_star(mdp: HardMDP, s) -> int:
    """The greedy flip-then-freeze policy (0-based actions, ties to the smallest)."""
    if s is BOTTOM:
        return 0
    st = mdp.stats(s)
    if reachable_class(mdp, s) == "notreach":
        vals = [mdp.q_linear(s, a) for a in range(mdp.num_actions)]
        return int(np.argmax(vals))
    wrong_unfixed = ~st.fix & st.full & (st.w_ki ^ mdp.secret)
    if wrong_unfixed:
        return (wrong_unfixed & -wrong_unfixed).bit_length() - 1
    if st.fix:
        return (st.fix & -st.fix).bit_length() - 1
    return 0


# -- driving the MDP through the abstract game ----------------------------


def _game_route(mdp: HardMDP, s, a: int, ask: Callable) -> tuple[int, Outcome | tuple]:
    """Resolve a transition using at most one call ``ask(L, seq) -> (U, V, z)``.

    Returns (case, payload) where payload is ``(z, next_state)`` for the
    game-derived branches and the locally computed outcome otherwise.
    """
    st = mdp.stats(s)
    p, K = mdp.params.p, mdp.params.K
    kind, w_new, child = mdp.structure.step(s, a)
    if st.k == 0 and st.i < p - 1:
        return 4, (0.0, child)
    seq = list(st.starts)
    if st.i == p - 1:
        seq.append(w_new)
    L = len(seq)
    U, V, z = ask(L, [mask_to_vec(m, p) for m in seq])
    last_round_closed = U if st.i == p - 1 else V
    if st.k > 0 and last_round_closed:
        return 1, (mdp.case1_reward(s, a), BOTTOM)
    if st.i == p - 1 and (V or L == K):
        return (2 if V else 3), (z, BOTTOM)
    return 4, (0.0, child)


def game_transition_law(mdp: HardMDP, s, a: int, game: hc.AbstractGame) -> tuple[int, list[Outcome]]:
    """Transition law reconstructed from the game's exact response law."""
    mdp.check_action(a)
    if s is BOTTOM:
        return 4, [Outcome(1.0, BOTTOM, 0.0)]
    _check_game(mdp, game)
    case, (val, nxt) = _game_route(mdp, s, a, game.law)
    return case, [Outcome(1.0, nxt, val, bernoulli=case in (2, 3))]


def simulate_via_game(mdp: HardMDP, s, a: int, game: hc.AbstractGame, rng: np.random.Generator) -> TransitionSample:
    """Sample a transition issuing at most one abstract-game query."""
    mdp.check_action(a)
    if s is BOTTOM:
        return TransitionSample(0.0, BOTTOM, zero_features(mdp))
    _check_game(mdp, game)

    def ask(L, seq):
        resp = game.step(L, seq, rng)
        return resp.U, resp.V, float(resp.Z)

    case, (val, nxt) = _game_route(mdp, s, a, ask)
    feats = zero_features(mdp) if nxt is BOTTOM else mdp.features(nxt)
    return TransitionSample(float(val), nxt, feats)


def _check_game(mdp: HardMDP, game: hc.AbstractGame) -> None:
    if game.K != mdp.params.K or game.p != mdp.params.p or vec_to_mask(game.secret) != mdp.secret:
        raise ValueError("game parameters do not match the MDP")


# -- text ids ---------------------------------------------------------------


def state_to_text(s, p: int) -> str:
    if s is BOTTOM:
        return "BOTTOM"
    rounds = [s[j : j + p] for j in range(0, len(s), p)] or [()]
    return "|".join(".".join(str(a) for a in rnd) for rnd in rounds)


def text_to_state(text: str):
    if text == "BOTTOM":
        return BOTTOM
    acts = []
    for rnd in text.split("|"):
        if rnd:
            acts.extend(int(x) for x in rnd.split("."))
    return tuple(acts)


def count_states(p: int, K: int) -> int:
    """Number of non-terminal states of the full action tree."""
    r = math.ceil(p / 4)
    distinct = math.perm(p, r)

    def partial(i: int) -> int:
        return math.perm(p, i) if i <= r else distinct * p ** (i - r)

    full_round = distinct * p ** (p - r)
    per_round = sum(partial(i) for i in range(p))
    return sum(full_round**k for k in range(K)) * per_round
