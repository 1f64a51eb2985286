"""Small hand-checkable MDPs and random realizable fixtures."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable

import numpy as np

from .mdp import BOTTOM, FeatureKind, FeaturizedMDP, Outcome


class TabularMDP(FeaturizedMDP):
    """Explicit MDP given by tables.

    ``law[(s, a)]`` lists the outcomes; missing features default to zero.
    """

    def __init__(
        self,
        horizon: int,
        num_actions: int,
        stages: dict[Hashable, int],
        law: dict[tuple[Hashable, int], list[Outcome]],
        initial_state: Hashable,
        feature_dim: int = 1,
        phi_v: dict | None = None,
        phi_q: dict | None = None,
        feature_kind: FeatureKind = FeatureKind.STATE,
    ):
        self.horizon = horizon
        self.num_actions = num_actions
        self._stages = dict(stages)
        self.law = law
        self.initial_state = initial_state
        self.feature_dim = feature_dim
        self._phi_v = phi_v or {}
        self._phi_q = phi_q or {}
        self.feature_kind = FeatureKind(feature_kind)
        for s, h in self._stages.items():
            if not 0 <= h < horizon:
                raise ValueError(f"state {s!r} has stage {h} outside [0, {horizon})")
        for (s, a), outs in law.items():
            tot = sum(o.prob for o in outs)
            if abs(tot - 1.0) > 1e-12:
                raise ValueError(f"law at {(s, a)!r} sums to {tot}")
            for o in outs:
                if not 0.0 <= o.reward <= 1.0:
                    raise ValueError(f"reward {o.reward} outside [0, 1]")
                if o.next_state is not BOTTOM and self._stages[o.next_state] != self._stages[s] + 1:
                    raise ValueError(f"transition {(s, a)!r} -> {o.next_state!r} skips a stage")
                if o.next_state is not BOTTOM and self._stages[s] == horizon - 1:
                    raise ValueError("last-stage transitions must end in BOTTOM")

    def stage(self, s):
        if s is BOTTOM:
            return self.horizon
        return self._stages[s]

    def states(self):
        return sorted(self._stages, key=lambda s: (self._stages[s], repr(s)))

    def outcomes(self, s, a):
        self.check_action(a)
        if s is BOTTOM:
            return [Outcome(1.0, BOTTOM, 0.0)]
        return self.law[(s, a)]

    def phi_v(self, s):
        if s is BOTTOM:
            return np.zeros(self.feature_dim)
        return np.asarray(self._phi_v.get(s, np.zeros(self.feature_dim)), dtype=float)

    def phi_q(self, s, a):
        if s is BOTTOM:
            return np.zeros(self.feature_dim)
        return np.asarray(self._phi_q.get((s, a), np.zeros(self.feature_dim)), dtype=float)


def deterministic(next_state, reward: float = 0.0, bernoulli: bool = False) -> list[Outcome]:
    return [Outcome(1.0, next_state, reward, bernoulli)]


def two_state_fixture() -> TabularMDP:
    """H=2, two actions, one stochastic branch; values are tabulated in the tests."""
    law = {
        ("s0", 0): [Outcome(0.5, "x", 0.2), Outcome(0.5, "y", 0.2)],
        ("s0", 1): deterministic("y", 0.5),
        ("x", 0): deterministic(BOTTOM, 1.0),
        ("x", 1): deterministic(BOTTOM, 0.3, bernoulli=True),
        ("y", 0): deterministic(BOTTOM, 0.1),
        ("y", 1): deterministic(BOTTOM, 0.4, bernoulli=True),
    }
    return TabularMDP(2, 2, {"s0": 0, "x": 1, "y": 1}, law, "s0")


@dataclass
class RealizableTree:
    """A deterministic-transition tree MDP with linearly realizable values."""

    mdp: TabularMDP
    theta: np.ndarray
    v_star: dict = field(default_factory=dict)
    q_star: dict = field(default_factory=dict)


def _tree_states(H: int, A: int) -> list[tuple[int, ...]]:
    out = [()]
    frontier = [()]
    for _ in range(H - 1):
        frontier = [s + (a,) for s in frontier for a in range(A)]
        out.extend(frontier)
    return out


def _embed(value: float, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """A vector of norm <= 1 whose inner product with ``theta`` is ``value``."""
    d = theta.size
    nt = np.linalg.norm(theta)
    u = theta / nt
    alpha = value / nt
    room = np.sqrt(max(0.0, 1.0 - alpha**2))
    if d == 1:
        return alpha * u
    w = rng.normal(size=d)
    w -= w.dot(u) * u
    w /= np.linalg.norm(w)
    beta = rng.uniform(-0.9, 0.9) * room
    return alpha * u + beta * w


def _tree_values(H, A, rewards):
    states = _tree_states(H, A)
    v, q = {}, {}
    for s in sorted(states, key=len, reverse=True):
        for a in range(A):
            cont = v[s + (a,)] if len(s) < H - 1 else 0.0
            q[(s, a)] = rewards[(s, a)] + cont
        v[s] = max(q[(s, a)] for a in range(A))
    return states, v, q


def realizable_tree(
    d: int,
    H: int,
    A: int,
    B: float,
    rng: np.random.Generator,
    kind: str = "v",
    bernoulli: bool = False,
    theta_norm: float | None = None,
) -> RealizableTree:
    """Random full ``A``-ary tree of depth ``H`` with realizable optimal values.

    ``kind="v"`` realizes v* with state features, ``kind="q"`` realizes q*
    with state-action features.  Rewards are scaled so every value fits
    ``|<phi, theta>| <= ||theta||`` with ``||phi|| <= 1``.
    """
    if kind not in ("v", "q"):
        raise ValueError("kind must be 'v' or 'q'")
    tn = 0.9 * B if theta_norm is None else theta_norm
    if tn > B:
        raise ValueError("theta_norm exceeds B")
    theta = rng.normal(size=d)
    theta *= tn / np.linalg.norm(theta)
    cap = min(1.0, 0.95 * tn / H)
    states = _tree_states(H, A)
    rewards = {(s, a): float(rng.uniform(0.0, cap)) for s in states for a in range(A)}
    states, v, q = _tree_values(H, A, rewards)
    stages = {s: len(s) for s in states}
    law = {}
    for s in states:
        for a in range(A):
            nxt = s + (a,) if len(s) < H - 1 else BOTTOM
            law[(s, a)] = deterministic(nxt, rewards[(s, a)], bernoulli)
    if kind == "v":
        phi = {s: _embed(v[s], theta, rng) for s in states}
        mdp = TabularMDP(H, A, stages, law, (), d, phi_v=phi, feature_kind=FeatureKind.STATE)
    else:
        phi = {(s, a): _embed(q[(s, a)], theta, rng) for s in states for a in range(A)}
        mdp = TabularMDP(H, A, stages, law, (), d, phi_q=phi, feature_kind=FeatureKind.ACTION)
    return RealizableTree(mdp, theta, v, q)
