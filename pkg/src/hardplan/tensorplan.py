"""TensorPlan: optimistic planning with tensorized Bellman-consistency constraints.

The planner keeps a list of constraints, one per consistency failure seen
during its initial rollouts.  Each constraint is the tensor product of ``A``
temporal-difference vectors; a parameter ``theta`` satisfies it when
``prod_a <Delta_a, [1, theta]>`` is (nearly) zero, i.e. when at least one
action looks Bellman-consistent under ``theta``.
"""

from __future__ import annotations

import decimal
import itertools
import math
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any, Hashable

import numpy as np

from . import rng as rngmod
from .mdp import FeatureKind, Simulator
from .tensor import flat_outer, tensor_power

MATERIALIZE_LIMIT = 10**6
MAX_FIXED_POINT_ITERS = 100
CONSTANT_DIGITS = 50


@dataclass(frozen=True)
class TPConfig:
    A: int
    H: int
    d: int
    delta: float
    B: float
    scale_n1: float = 1.0
    scale_n2: float = 1.0
    scale_n3: float = 1.0
    ed_cap: int | None = None
    slack: float = 0.0
    random_starts: int = 8
    ascent_steps: int = 150
    max_combinations: int = 4096

    def __post_init__(self):
        if self.A < 1 or self.H < 1 or self.d < 1:
            raise ValueError("A, H and d must be positive")
        if not self.delta > 0 or not self.B > 0:
            raise ValueError("delta and B must be positive")
        for name in ("scale_n1", "scale_n2", "scale_n3"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.ed_cap is not None and self.ed_cap < 0:
            raise ValueError("ed_cap must be non-negative")
        if self.slack < 0:
            raise ValueError("slack must be non-negative")


@dataclass(frozen=True)
class TPConstants:
    E_d: int  # iteration budget actually used (after ed_cap)
    E_d_formula: int
    zeta: float
    eps: float
    n1: int
    n2: int
    n3: int
    n1_formula: int
    n2_formula: int
    n3_formula: int
    sol_tol: float
    tol: float  # sol_tol * (1 + slack)


# -- constants ---------------------------------------------------------------


def _ctx() -> decimal.Context:
    return decimal.Context(prec=CONSTANT_DIGITS, Emax=decimal.MAX_EMAX, Emin=decimal.MIN_EMIN)


def _eps_of(E: int, A: int, H: int, delta: Decimal) -> Decimal:
    return (delta / (12 * H * H)) ** A / (1 + 1 / (2 * Decimal(E).sqrt()))


def _ed_of(eps: Decimal, A: int, H: int, d: int, B: Decimal) -> int:
    e = Decimal(1).exp()
    x = 2 * (B + 1) ** A * Decimal(3) ** A / (Decimal(H) ** A * eps)
    return int((3 * Decimal(d + 1) ** A * e / (e - 1) * (3 + 3 * x * x).ln() + 1).to_integral_value(decimal.ROUND_FLOOR))


def solve_ed_eps(A: int, H: int, d: int, delta: float, B: float) -> tuple[int, Decimal]:
    """E_d and eps refer to each other; iterate to the joint fixed point."""
    with decimal.localcontext(_ctx()):
        delta_, B_ = Decimal(delta), Decimal(B)
        E = 1
        seen = []
        for _ in range(MAX_FIXED_POINT_ITERS):
            eps = _eps_of(E, A, H, delta_)
            E_new = _ed_of(eps, A, H, d, B_)
            if E_new == E:
                return E, eps
            if E_new in seen:
                # two-cycle: take the larger budget, which is the conservative choice
                E = max(E, E_new)
                return E, _eps_of(E, A, H, delta_)
            seen.append(E)
            E = E_new
    raise RuntimeError("E_d / eps fixed point did not converge")


def _ceil(x: Decimal) -> int:
    return int(x.to_integral_value(decimal.ROUND_CEILING))


def tp_constants(config: TPConfig) -> TPConstants:
    """Sample sizes and budgets, evaluated in 50-digit decimal arithmetic so
    the integer constants are exact even beyond double precision."""
    A, H, d = config.A, config.H, config.d
    E_d, eps = solve_ed_eps(A, H, d, config.delta, config.B)
    with decimal.localcontext(_ctx()):
        delta, B = Decimal(config.delta), Decimal(config.B)
        zeta = delta / (4 * H)
        n1 = _ceil(32 * (1 + 2 * B) ** 2 / delta**2 * ((E_d + 1) / zeta).ln())
        n2 = _ceil(1867 * H**2 * (B + 1) ** 2 * (d + 1) / (2 * delta**2) * (4 * (E_d + 1) * n1 * H * A * (d + 1) / zeta).ln())
        n3 = _ceil(max(Decimal(n2), 32 * (H + 1) ** 2 * E_d / eps**2 * (2 * (E_d + 1) * n1 * H * A / zeta).ln()))
        sol_tol = H**A * eps / (2 * Decimal(E_d).sqrt())

        def scaled(n, scale):
            return max(1, int((n * Decimal(scale)).to_integral_value(decimal.ROUND_FLOOR)))

        n_scaled = [scaled(n, sc) for n, sc in ((n1, config.scale_n1), (n2, config.scale_n2), (n3, config.scale_n3))]
    if float(sol_tol) == 0.0:
        raise OverflowError("the solver tolerance underflows double precision")
    E_eff = E_d if config.ed_cap is None else min(E_d, config.ed_cap)
    return TPConstants(
        E_d=E_eff,
        E_d_formula=E_d,
        zeta=float(zeta),
        eps=float(eps),
        n1=n_scaled[0],
        n2=n_scaled[1],
        n3=n_scaled[2],
        n1_formula=n1,
        n2_formula=n2,
        n3_formula=n3,
        sol_tol=float(sol_tol),
        tol=float(sol_tol) * (1.0 + config.slack),
    )


# -- temporal differences and constraints ----------------------------------


def state_features(features: Any) -> np.ndarray:
    """The phi_v part of a feature payload."""
    if isinstance(features, tuple):
        return np.asarray(features[0], dtype=float)
    arr = np.asarray(features, dtype=float)
    if arr.ndim != 1:
        raise ValueError("TensorPlan needs state features phi_v")
    return arr


def approx_td(s: Hashable, features: Any, A: int, n: int, simulator: Simulator) -> np.ndarray:
    """Row a is the mean of n samples of [R, phi(S') - phi(s)] for action a."""
    if n < 1:
        raise ValueError("n must be at least 1")
    phi_s = state_features(features)
    out = np.empty((A, phi_s.size + 1))
    for a in range(A):
        rewards, nexts = simulator.query_many(s, a, n)
        counts: dict = {}
        for x in nexts:
            counts[x] = counts.get(x, 0) + 1
        mean_phi = sum(c * state_features(simulator.features(x)) for x, c in counts.items()) / n
        out[a, 0] = rewards.mean()
        out[a, 1:] = mean_phi - phi_s
    return out


def residuals(td: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """|<Delta_a, [1, theta]>| for every action."""
    return np.abs(td[:, 0] + td[:, 1:] @ theta)


def argmin_action(res: np.ndarray) -> int:
    return int(np.argmin(res))  # first index on ties


@dataclass
class Constraint:
    """A constraint tensor kept in factored form (one TD vector per action)."""

    factors: np.ndarray  # (A, d+1)

    def linear_terms(self, theta: np.ndarray) -> np.ndarray:
        return self.factors[:, 0] + self.factors[:, 1:] @ theta

    def evaluate(self, theta: np.ndarray) -> float:
        return float(np.prod(self.linear_terms(theta)))

    def flat(self) -> np.ndarray:
        A, m = self.factors.shape
        if m**A > MATERIALIZE_LIMIT:
            raise MemoryError(f"constraint tensor of size {m}^{A} exceeds the materialization limit")
        return flat_outer(*self.factors)

    def evaluate_flat(self, theta: np.ndarray) -> float:
        ext = np.concatenate([[1.0], theta])
        return float(self.flat() @ tensor_power(ext, self.factors.shape[0]))

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        terms = self.linear_terms(theta)
        g = np.zeros(theta.size)
        for a in range(terms.size):
            g += np.prod(np.delete(terms, a)) * self.factors[a, 1:]
        return g


def is_feasible(theta: np.ndarray, constraints: list[Constraint], B: float, tol: float) -> bool:
    if np.linalg.norm(theta) > B * (1 + 1e-12):
        return False
    return all(abs(c.evaluate(theta)) <= tol for c in constraints)


# -- optimistic selection -----------------------------------------------------


@dataclass
class OptResult:
    theta: np.ndarray
    value: float
    feasible: bool
    fallback: bool = False
    source: str = ""


def _project_ball(theta: np.ndarray, B: float) -> np.ndarray:
    n = np.linalg.norm(theta)
    return theta if n <= B else theta * (B / n)


def _ascend(thetas, objective, constraints, B, steps):
    """Normalized-gradient ascent on a quadratic-penalty objective.

    ``thetas`` is a batch of starting points, one per row.
    """
    if not constraints or steps <= 0:
        return thetas
    F = np.stack([c.factors for c in constraints])  # (m, A, d+1)
    A = F.shape[1]
    th = thetas.copy()
    for mu in (1e2, 1e4, 1e6):
        for t in range(steps):
            terms = F[None, :, :, 0] + np.einsum("mad,sd->sma", F[:, :, 1:], th)
            vals = np.prod(terms, axis=2)
            others = np.stack([np.prod(np.delete(terms, a, axis=2), axis=2) for a in range(A)], axis=2)
            grad = objective[None, :] - 2.0 * mu * np.einsum("sm,sma,mad->sd", vals, others, F[:, :, 1:])
            gn = np.linalg.norm(grad, axis=1, keepdims=True)
            gn[gn == 0] = 1.0
            lr = 0.1 * B * (0.01 ** (t / max(1, steps - 1)))
            th = th + lr * grad / gn
            norms = np.linalg.norm(th, axis=1, keepdims=True)
            th = np.where(norms > B, th * (B / np.maximum(norms, 1e-300)), th)
    return th


def _polish(theta, constraints, B, tol, iters=50):
    """Alternating projections onto the nearest zero-set factor of each violated constraint."""
    for _ in range(iters):
        moved = False
        for c in constraints:
            if abs(c.evaluate(theta)) <= tol:
                continue
            terms = c.linear_terms(theta)
            order = np.argsort(np.abs(terms))
            for a in order:
                u = c.factors[a, 1:]
                nu = u @ u
                if nu > 0:
                    theta = theta - terms[a] * u / nu
                    moved = True
                    break
        theta = _project_ball(theta, B)
        if not moved:
            break
    return theta


def _subspace_candidate(rows: np.ndarray, objective: np.ndarray, B: float) -> np.ndarray | None:
    """argmax <objective, theta> over {rows @ [1, theta] = 0} within the B-ball."""
    U, r = rows[:, 1:], rows[:, 0]
    theta0, *_ = np.linalg.lstsq(U, -r, rcond=None)
    if np.max(np.abs(U @ theta0 + r), initial=0.0) > 1e-9 * (1 + np.abs(r).max(initial=0.0)):
        return None
    n0 = np.linalg.norm(theta0)
    if n0 > B:
        return None
    _, sv, vt = np.linalg.svd(U)
    rank = int(np.sum(sv > 1e-12 * max(1.0, sv.max(initial=0.0))))
    null = vt[rank:]
    g = null.T @ (null @ objective) if null.size else np.zeros_like(objective)
    gn = np.linalg.norm(g)
    if gn == 0:
        return theta0
    return theta0 + math.sqrt(max(0.0, B * B - n0 * n0)) * g / gn


def _factor_combinations(constraints, cap, rng):
    sizes = [c.factors.shape[0] for c in constraints]
    total = math.prod(sizes)
    if total <= cap:
        return itertools.product(*[range(s) for s in sizes])
    return (tuple(int(rng.integers(s)) for s in sizes) for _ in range(cap))


def optimistic_select(
    constraints: list[Constraint],
    objective: np.ndarray,
    B: float,
    tol: float,
    rng: np.random.Generator,
    previous: np.ndarray | None = None,
    random_starts: int = 8,
    ascent_steps: int = 150,
    max_combinations: int = 4096,
) -> OptResult:
    """Approximately maximize <objective, theta> over the feasible set.

    Candidates: the unconstrained maximizer, the previous choice, random ball
    points (each refined by penalized ascent and then polished), plus the
    exact maximizers over intersections of one factor hyperplane per
    constraint.  The best feasible candidate wins; ties keep the earliest.
    """
    objective = np.asarray(objective, dtype=float)
    d = objective.size
    on = np.linalg.norm(objective)
    starts: list[tuple[str, np.ndarray]] = []
    starts.append(("objective", B * objective / on if on > 0 else np.zeros(d)))
    if previous is not None:
        starts.append(("previous", _project_ball(np.asarray(previous, dtype=float), B)))
    for _ in range(random_starts if constraints else 0):
        v = rng.normal(size=d)
        v *= B * rng.random() ** (1.0 / d) / np.linalg.norm(v)
        starts.append(("random", v))

    cands: list[tuple[str, np.ndarray]] = []
    todo = []
    for name, th in starts:
        if is_feasible(th, constraints, B, tol):
            cands.append((name, th))
        else:
            todo.append((name, th))
    if todo:
        refined = _ascend(np.stack([th for _, th in todo]), objective, constraints, B, ascent_steps)
        for (name, _), th in zip(todo, refined):
            cands.append((name, _polish(th, constraints, B, tol)))
    if constraints:
        for combo in _factor_combinations(constraints, max_combinations, rng):
            rows = np.stack([c.factors[a] for c, a in zip(constraints, combo)])
            th = _subspace_candidate(rows, objective, B)
            if th is not None:
                cands.append(("subspace", th))

    best = None
    for name, th in cands:
        if not is_feasible(th, constraints, B, tol):
            continue
        val = float(objective @ th)
        if best is None or val > best.value + 1e-15:
            best = OptResult(th, val, True, source=name)
    if best is not None:
        return best
    zero = np.zeros(d)
    return OptResult(zero, 0.0, is_feasible(zero, constraints, B, tol), fallback=True, source="zero")


# -- the planner ------------------------------------------------------------


@dataclass
class TPState:
    theta_plus: np.ndarray
    constraints: list[Constraint]
    constants: TPConstants
    clean: bool
    iterations: int
    optimistic_values: list[float] = field(default_factory=list)
    fallbacks: int = 0


def tp_init(
    s0: Hashable,
    features: Any,
    config: TPConfig,
    simulator: Simulator,
    rng: np.random.Generator,
    constants: TPConstants | None = None,
) -> TPState:
    """Alternate optimistic parameter choices with consistency-checking rollouts."""
    k = tp_constants(config) if constants is None else constants
    A, H = config.A, config.H
    phi0 = state_features(features)
    threshold = config.delta / (4.0 * H)
    constraints: list[Constraint] = []
    theta = None
    values = []
    fallbacks = 0
    clean = False
    tau = 0
    for tau in range(1, k.E_d + 3):
        res = optimistic_select(
            constraints, phi0, config.B, k.tol, rng, previous=theta,
            random_starts=config.random_starts, ascent_steps=config.ascent_steps,
            max_combinations=config.max_combinations,
        )
        theta = res.theta
        values.append(res.value)
        fallbacks += int(res.fallback)
        clean_test = True
        for _ in range(k.n1):
            s = s0
            for _ in range(H):
                feats = simulator.features(s)
                td = approx_td(s, feats, A, k.n2, simulator)
                res_a = residuals(td, theta)
                if clean_test and res_a.min() > threshold:
                    constraints.append(Constraint(approx_td(s, feats, A, k.n3, simulator)))
                    clean_test = False
                s = simulator.query(s, argmin_action(res_a)).next_state
        if clean_test:
            clean = True
            break
    return TPState(theta, constraints, k, clean, tau, values, fallbacks)


def tp_get_action(
    s: Hashable,
    features: Any,
    config: TPConfig,
    simulator: Simulator,
    state: TPState | None,
) -> int:
    if state is None:
        raise RuntimeError("no saved parameter: GetAction called before Init")
    td = approx_td(s, features, config.A, state.constants.n2, simulator)
    return argmin_action(residuals(td, state.theta_plus))


class TensorPlan:
    """Planner object usable with :func:`hardplan.mdp.run_episode`."""

    def __init__(self, config: TPConfig, rng: np.random.Generator):
        self.config = config
        self.constants = tp_constants(config)
        self.rng = rngmod.child(rng, rngmod.SOLVER)
        self.state: TPState | None = None
        self.init_queries = 0

    def get_action(self, state, features, episode_start, simulator) -> int:
        if simulator.mdp.feature_kind is FeatureKind.ACTION:
            raise ValueError("TensorPlan needs state features phi_v")
        if episode_start:
            before = simulator.ledger.queries_total
            self.state = tp_init(state, features, self.config, simulator, self.rng, self.constants)
            self.init_queries = simulator.ledger.queries_total - before
        return tp_get_action(state, features, self.config, simulator, self.state)
