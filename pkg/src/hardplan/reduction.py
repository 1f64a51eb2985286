"""Turning q*-realizable deterministic MDPs into v*-realizable ones.

The delayed MDP postpones every action by one step: its states are pairs
``(s, a)`` meaning "at ``s`` with ``a`` chosen but not yet executed", plus a
single start state ``(s0, 0)``.  With features ``[0, phi_q(s, a)]`` on pairs
and ``[1, 0]`` on the start state, the optimal value function of the delayed
MDP is linear in ``[v*(s0), theta*]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Hashable

import numpy as np

from .mdp import (
    BOTTOM,
    FeatureKind,
    FeaturizedMDP,
    Outcome,
    Simulator,
    TransitionSample,
    dp_solve,
)
from .tensorplan import TensorPlan, TPConfig

START = "start"
PAIR = "pair"


def start_state(s0: Hashable) -> tuple:
    return (START, s0, 0)


def pair_state(s: Hashable, a: int) -> tuple:
    if s is BOTTOM:
        raise ValueError("pair states hold non-terminal base states only")
    return (PAIR, s, int(a))


def _q_row(features: Any, a: int) -> np.ndarray:
    """phi_q(s, a) from an ACTION or BOTH feature payload."""
    q = features[1] if isinstance(features, tuple) else features
    return np.asarray(q, dtype=float)[a]


class DelayedMDP(FeaturizedMDP):
    """The delayed MDP, built lazily on top of a base MDP with phi_q features."""

    feature_kind = FeatureKind.STATE

    def __init__(self, base: FeaturizedMDP):
        if base.feature_kind is FeatureKind.STATE:
            raise ValueError("the base MDP must expose phi_q features")
        self.base = base
        self.num_actions = base.num_actions
        self.horizon = base.horizon + 1
        self.feature_dim = base.feature_dim + 1
        self.initial_state = start_state(base.initial_state)

    def _unpack(self, x) -> tuple[str, Hashable, int]:
        if not (isinstance(x, tuple) and len(x) == 3 and x[0] in (START, PAIR)):
            raise ValueError(f"not a delayed state: {x!r}")
        return x

    def stage(self, x) -> int:
        if x is BOTTOM:
            return self.horizon
        tag, s, _ = self._unpack(x)
        return 0 if tag == START else self.base.stage(s) + 1

    def states(self):
        base_states = list(self.base.states())
        out = [start_state(self.base.initial_state)]
        out += [pair_state(s, a) for s in base_states for a in range(self.num_actions)]
        return sorted(out, key=self.stage)

    def outcomes(self, x, a):
        self.check_action(a)
        if x is BOTTOM:
            return [Outcome(1.0, BOTTOM, 0.0)]
        tag, s, pending = self._unpack(x)
        if tag == START:
            return [Outcome(1.0, pair_state(s, a), 0.0)]
        return [
            Outcome(o.prob, BOTTOM if o.next_state is BOTTOM else pair_state(o.next_state, a), o.reward, o.bernoulli)
            for o in self.base.outcomes(s, pending)
        ]

    def phi_v(self, x) -> np.ndarray:
        out = np.zeros(self.feature_dim)
        if x is BOTTOM:
            return out
        tag, s, pending = self._unpack(x)
        if tag == START:
            out[0] = 1.0
        else:
            out[1:] = self.base.phi_q(s, pending)
        return out


def bar_theta(v0: float, theta: np.ndarray) -> np.ndarray:
    return np.concatenate([[v0], np.asarray(theta, dtype=float)])


# -- the lazy simulator adapter ------------------------------------------------


class DelayedSimulator:
    """Simulation oracle for the delayed MDP that forwards to a base simulator.

    Pair states cost one base query per sample; the start state and BOTTOM
    cost none.
    """

    def __init__(self, base_sim: Simulator):
        self.base = base_sim
        self.mdp = DelayedMDP(base_sim.mdp)
        self.calls = 0
        self.pair_queries = 0
        self._feat_cache: dict = {}

    @property
    def num_actions(self) -> int:
        return self.base.num_actions

    @property
    def ledger(self):
        return self.base.ledger

    def features(self, x) -> np.ndarray:
        try:
            return self._feat_cache[x]
        except KeyError:
            pass
        d1 = self.mdp.feature_dim
        out = np.zeros(d1)
        if x is not BOTTOM:
            tag, s, pending = x
            if tag == START:
                out[0] = 1.0
            else:
                out[1:] = _q_row(self.base.features(s), pending)
        self._feat_cache[x] = out
        return out

    def query(self, x, a: int) -> TransitionSample:
        rewards, nexts = self.query_many(x, a, 1)
        return TransitionSample(float(rewards[0]), nexts[0], self.features(nexts[0]))

    def query_many(self, x, a: int, n: int) -> tuple[np.ndarray, list]:
        self.mdp.check_action(a)
        self.calls += n
        if x is BOTTOM:
            return np.zeros(n), [BOTTOM] * n
        tag, s, pending = x
        if tag == START:
            return np.zeros(n), [pair_state(s, a)] * n
        self.pair_queries += n
        rewards, nexts = self.base.query_many(s, pending, n)
        return rewards, [BOTTOM if y is BOTTOM else pair_state(y, a) for y in nexts]


def simulate_prime(x, a: int, adapter: DelayedSimulator) -> TransitionSample:
    return adapter.query(x, a)


class TPPrime:
    """TensorPlan run on the delayed MDP, driven from base-MDP calls.

    At base call ``t`` the delayed state is ``(S_{t-1}, A_{t-1})`` (``(s0, 0)``
    at ``t = 0``); the action returned there is the one to execute at ``S_t``.
    """

    def __init__(self, config: TPConfig, rng: np.random.Generator):
        self.base_config = config
        self.config = TPConfig(
            A=config.A, H=config.H + 1, d=config.d + 1, delta=config.delta, B=2 * config.B,
            scale_n1=config.scale_n1, scale_n2=config.scale_n2, scale_n3=config.scale_n3,
            ed_cap=config.ed_cap, slack=config.slack, random_starts=config.random_starts,
            ascent_steps=config.ascent_steps, max_combinations=config.max_combinations,
        )
        self.inner = TensorPlan(self.config, rng)
        self.adapter: DelayedSimulator | None = None
        self.prev: tuple[Hashable, int] | None = None
        self.bar_states: list = []

    def get_action(self, state, features, episode_start, simulator) -> int:
        if episode_start:
            self.adapter = DelayedSimulator(simulator)
            bar = start_state(state)
            self.bar_states = []
        else:
            if self.prev is None or self.adapter is None:
                raise RuntimeError("no stored action: the episode was not started")
            s_prev, a_prev = self.prev
            bar = BOTTOM if s_prev is BOTTOM else pair_state(s_prev, a_prev)
        self.bar_states.append(bar)
        a = self.inner.get_action(bar, self.adapter.features(bar), episode_start, self.adapter)
        self.prev = (state, a)
        return a


# -- exact check ---------------------------------------------------------------


@dataclass
class DelayedReport:
    pairs_checked: int
    max_pair_error: float
    start_error: float
    max_realizability_error: float
    theta_bar_norm: float
    norm_bound: float
    max_feature_norm: float
    tol: float

    @property
    def passed(self) -> bool:
        return (
            self.max_pair_error <= self.tol
            and self.start_error <= self.tol
            and self.max_realizability_error <= self.tol
            and self.theta_bar_norm <= self.norm_bound
            and self.max_feature_norm <= 1.0 + 1e-12
        )


def delayed_dp_check(base: FeaturizedMDP, theta: np.ndarray, B: float, tol: float = 1e-9) -> DelayedReport:
    """Solve base and delayed MDPs exactly and compare their values.

    ``theta`` is the base parameter realizing q*; ``B`` bounds its norm.
    """
    base_states = list(base.states())
    for s in base_states:
        for a in range(base.num_actions):
            if len(base.outcomes(s, a)) != 1:
                raise ValueError(f"base MDP has stochastic transitions at {(s, a)!r}")
    delayed = DelayedMDP(base)
    sol = dp_solve(base)
    bar = dp_solve(delayed)
    s0 = base.initial_state
    tb = bar_theta(sol.v[s0], theta)
    pair_err = 0.0
    n = 0
    for s in base_states:
        for a in range(base.num_actions):
            pair_err = max(pair_err, abs(bar.v[pair_state(s, a)] - sol.q[(s, a)]))
            n += 1
    start_err = abs(bar.v[start_state(s0)] - sol.v[s0])
    real_err = 0.0
    feat_norm = 0.0
    for x in delayed.states():
        phi = delayed.phi_v(x)
        feat_norm = max(feat_norm, float(np.linalg.norm(phi)))
        real_err = max(real_err, abs(float(phi @ tb) - bar.v[x]))
    real_err = max(real_err, abs(bar.v[BOTTOM]))
    return DelayedReport(n, pair_err, start_err, real_err, float(np.linalg.norm(tb)), 2 * B, feat_norm, tol)
