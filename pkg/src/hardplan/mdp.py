"""Fixed-horizon featurized MDPs, the online planning protocol and exact DP.

States are hashable ids; each MDP reports the stage of a state, and the
absorbing end state :data:`BOTTOM` is the only state at stage ``horizon``.
Transition laws are exposed as finite lists of :class:`Outcome` so that
dynamic programming works with exact expectations, while sampling draws
Bernoulli rewards from the same lists.
"""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Protocol

import numpy as np

from . import rng as rngmod


class _Bottom:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "BOTTOM"

    def __reduce__(self):
        return (_Bottom, ())


BOTTOM = _Bottom()


class FeatureKind(str, enum.Enum):
    STATE = "state"
    ACTION = "action"
    BOTH = "both"


class AccessMode(str, enum.Enum):
    LOCAL = "local"
    GLOBAL = "global"


class IllegalQueryError(RuntimeError):
    """Raised when a local-access simulator is queried at an unseen state."""


class InvalidActionError(ValueError):
    pass


class NotEnumerableError(TypeError):
    pass


@dataclass(frozen=True)
class Outcome:
    """One branch of a transition law.

    ``reward`` is the expected reward; when ``bernoulli`` is set the sampled
    reward is ``Ber(reward)``, otherwise it is ``reward`` itself.
    """

    prob: float
    next_state: Hashable
    reward: float
    bernoulli: bool = False


@dataclass
class TransitionSample:
    reward: float
    next_state: Hashable
    features: Any


class FeaturizedMDP:
    """Base class for finite fixed-horizon MDPs with linear features.

    Subclasses implement :meth:`stage`, :meth:`outcomes` and the feature maps
    they support.  Enumerable MDPs also implement :meth:`states`.
    """

    num_actions: int
    horizon: int
    feature_dim: int
    feature_kind: FeatureKind = FeatureKind.STATE
    initial_state: Hashable

    def stage(self, s: Hashable) -> int:
        raise NotImplementedError

    def outcomes(self, s: Hashable, a: int) -> list[Outcome]:
        raise NotImplementedError

    def phi_v(self, s: Hashable) -> np.ndarray:
        raise NotImplementedError

    def phi_q(self, s: Hashable, a: int) -> np.ndarray:
        raise NotImplementedError

    def states(self) -> Iterable[Hashable]:
        """All non-terminal states, in non-decreasing stage order."""
        raise NotEnumerableError(f"{type(self).__name__} does not enumerate its states")

    # -- derived helpers -------------------------------------------------

    def check_action(self, a: int) -> None:
        if not (isinstance(a, (int, np.integer)) and 0 <= a < self.num_actions):
            raise InvalidActionError(f"action {a!r} outside [0, {self.num_actions})")

    def features(self, s: Hashable) -> Any:
        """The feature payload the planner sees at ``s``."""
        if self.feature_kind is FeatureKind.STATE:
            return self.phi_v(s)
        q = np.stack([self.phi_q(s, a) for a in range(self.num_actions)])
        if self.feature_kind is FeatureKind.ACTION:
            return q
        return self.phi_v(s), q

    def sample(self, s: Hashable, a: int, rng: np.random.Generator) -> tuple[float, Hashable]:
        self.check_action(a)
        outs = self.outcomes(s, a)
        if len(outs) == 1:
            o = outs[0]
        else:
            o = outs[rng.choice(len(outs), p=[x.prob for x in outs])]
        if o.bernoulli:
            return float(rng.random() < o.reward), o.next_state
        return o.reward, o.next_state

    def sample_many(
        self, s: Hashable, a: int, n: int, rng: np.random.Generator
    ) -> tuple[np.ndarray, list[Hashable]]:
        """Draw ``n`` independent transitions from ``(s, a)``."""
        self.check_action(a)
        outs = self.outcomes(s, a)
        if len(outs) == 1:
            idx = np.zeros(n, dtype=np.int64)
        else:
            idx = rng.choice(len(outs), size=n, p=[x.prob for x in outs])
        means = np.array([o.reward for o in outs])[idx]
        bern = np.array([o.bernoulli for o in outs])[idx]
        u = rng.random(n)
        rewards = np.where(bern, (u < means).astype(float), means)
        return rewards, [outs[i].next_state for i in idx]


def zero_features(mdp: FeaturizedMDP) -> Any:
    d = mdp.feature_dim
    if mdp.feature_kind is FeatureKind.STATE:
        return np.zeros(d)
    q = np.zeros((mdp.num_actions, d))
    if mdp.feature_kind is FeatureKind.ACTION:
        return q
    return np.zeros(d), q


# -- query accounting ------------------------------------------------------


@dataclass
class QueryLedger:
    queries_this_call: int = 0
    queries_total: int = 0
    calls: int = 0
    per_call: list[int] = field(default_factory=list)

    def begin_call(self) -> None:
        self.calls += 1
        self.queries_this_call = 0
        self.per_call.append(0)

    def record(self, n: int = 1) -> None:
        if self.calls == 0:
            self.begin_call()
        self.queries_this_call += n
        self.queries_total += n
        self.per_call[-1] += n


class Simulator:
    """Simulation oracle handed to planners.

    Enforces the access mode, counts every query in ``ledger`` and draws all
    randomness from its own stream.
    """

    def __init__(
        self,
        mdp: FeaturizedMDP,
        rng: np.random.Generator,
        access: AccessMode = AccessMode.LOCAL,
        ledger: QueryLedger | None = None,
    ):
        self.mdp = mdp
        self.rng = rng
        self.access = AccessMode(access)
        self.ledger = ledger if ledger is not None else QueryLedger()
        self._seen: set = {BOTTOM}
        self._feat_cache: dict = {}

    @property
    def num_actions(self) -> int:
        return self.mdp.num_actions

    def observe(self, s: Hashable) -> None:
        self._seen.add(s)

    def is_legal(self, s: Hashable) -> bool:
        return self.access is AccessMode.GLOBAL or s in self._seen

    def features(self, s: Hashable) -> Any:
        try:
            return self._feat_cache[s]
        except KeyError:
            f = zero_features(self.mdp) if s is BOTTOM else self.mdp.features(s)
            self._feat_cache[s] = f
            return f

    def _check(self, s: Hashable, a: int) -> None:
        self.mdp.check_action(a)
        if not self.is_legal(s):
            raise IllegalQueryError(f"state {s!r} has not been observed (local access)")

    def query(self, s: Hashable, a: int) -> TransitionSample:
        self._check(s, a)
        self.ledger.record(1)
        r, nxt = simulate(self.mdp, s, a, self.rng)
        self._seen.add(nxt)
        return TransitionSample(r, nxt, self.features(nxt))

    def query_many(self, s: Hashable, a: int, n: int) -> tuple[np.ndarray, list[Hashable]]:
        """``n`` queries at ``(s, a)``; returns rewards and next states."""
        self._check(s, a)
        self.ledger.record(n)
        if s is BOTTOM:
            return np.zeros(n), [BOTTOM] * n
        rewards, nexts = self.mdp.sample_many(s, a, n, self.rng)
        self._seen.update(nexts)
        return rewards, nexts


def simulate(mdp: FeaturizedMDP, s: Hashable, a: int, rng: np.random.Generator) -> tuple[float, Hashable]:
    """One draw from the transition law at ``(s, a)``; BOTTOM is absorbing."""
    mdp.check_action(a)
    if s is BOTTOM:
        return 0.0, BOTTOM
    return mdp.sample(s, a, rng)


# -- episodes --------------------------------------------------------------


class Planner(Protocol):
    def get_action(self, state: Hashable, features: Any, episode_start: bool, simulator: Simulator) -> int: ...


@dataclass
class EpisodeResult:
    trajectory: list[tuple[Hashable, int, float]]
    total_reward: float
    ledger: QueryLedger
    env_transitions: int


def run_episode(
    planner: Planner,
    mdp: FeaturizedMDP,
    s0: Hashable,
    rng: np.random.Generator,
    access: AccessMode = AccessMode.LOCAL,
) -> EpisodeResult:
    """Interconnect planner, simulator and environment for ``horizon`` steps.

    Planner queries and the environment's own transitions use separate
    sub-streams of ``rng``; only the former are counted in the ledger.
    """
    if mdp.stage(s0) != 0:
        raise ValueError("episodes must start at a stage-0 state")
    sim = Simulator(mdp, rngmod.child(rng, rngmod.PLANNER), access)
    env_rng = rngmod.child(rng, rngmod.ENVIRONMENT)
    s = s0
    traj = []
    total = 0.0
    for t in range(mdp.horizon):
        sim.observe(s)
        sim.ledger.begin_call()
        a = planner.get_action(s, sim.features(s), t == 0, sim)
        mdp.check_action(a)
        r, nxt = simulate(mdp, s, int(a), env_rng)
        traj.append((s, int(a), r))
        total += r
        s = nxt
    return EpisodeResult(traj, total, sim.ledger, mdp.horizon)


class PolicyPlanner:
    """Planner that ignores the simulator and follows a fixed policy."""

    def __init__(self, policy: Callable[[Hashable], int]):
        self.policy = policy

    def get_action(self, state, features, episode_start, simulator) -> int:
        if state is BOTTOM:
            return 0
        return self.policy(state)


# -- exact dynamic programming --------------------------------------------


@dataclass
class DPSolution:
    v: dict
    q: dict

    def greedy(self, s: Hashable, num_actions: int) -> int:
        vals = [self.q[(s, a)] for a in range(num_actions)]
        return int(np.argmax(vals))


def _stages(mdp: FeaturizedMDP) -> dict[int, list]:
    by_stage: dict[int, list] = defaultdict(list)
    for s in mdp.states():
        if s is not BOTTOM:
            by_stage[mdp.stage(s)].append(s)
    return by_stage


def _backup(mdp: FeaturizedMDP, v: dict, s: Hashable, a: int) -> float:
    total = 0.0
    for o in mdp.outcomes(s, a):
        nxt = o.next_state
        if nxt is BOTTOM:
            cont = 0.0
        else:
            try:
                cont = v[nxt]
            except KeyError:
                raise NotEnumerableError(f"successor {nxt!r} of {s!r} missing from the enumeration") from None
        total += o.prob * (o.reward + cont)
    return total


def dp_solve(mdp: FeaturizedMDP) -> DPSolution:
    """Backward induction over an enumerable MDP."""
    by_stage = _stages(mdp)
    v: dict = {BOTTOM: 0.0}
    q: dict = {}
    A = mdp.num_actions
    for a in range(A):
        q[(BOTTOM, a)] = 0.0
    for h in sorted(by_stage, reverse=True):
        for s in by_stage[h]:
            best = -np.inf
            for a in range(A):
                val = _backup(mdp, v, s, a)
                q[(s, a)] = val
                best = max(best, val)
            v[s] = best
    return DPSolution(v, q)


def policy_values(policy: Callable[[Hashable], int], mdp: FeaturizedMDP) -> dict:
    """Exact value of a deterministic memoryless policy at every state."""
    by_stage = _stages(mdp)
    v: dict = {BOTTOM: 0.0}
    for h in sorted(by_stage, reverse=True):
        for s in by_stage[h]:
            a = policy(s)
            mdp.check_action(a)
            v[s] = _backup(mdp, v, s, a)
    return v


def policy_value(policy: Callable[[Hashable], int], mdp: FeaturizedMDP, s0: Hashable) -> float:
    return policy_values(policy, mdp)[s0]


def bellman_residual(mdp: FeaturizedMDP, sol: DPSolution) -> float:
    """Largest |q(s,a) - r(s,a) - E v(s')| over the enumeration."""
    worst = 0.0
    for s in mdp.states():
        for a in range(mdp.num_actions):
            worst = max(worst, abs(sol.q[(s, a)] - _backup(mdp, sol.v, s, a)))
    return worst
