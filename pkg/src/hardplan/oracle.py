"""Brute-force verifiers used to certify fixtures and invariants.

The lemma checkers carry their own implementations of g, f and Hamming
distance (on integer bit masks) so that they never share code with the
modules they check.  The hard-MDP sweeps compare closed forms against exact
dynamic programming.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_WITNESSES = 20


@dataclass
class LemmaReport:
    lemma: str
    instances: int = 0
    max_violation: float = 0.0
    witnesses: list = field(default_factory=list)
    tolerance: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.witnesses and self.max_violation <= self.tolerance

    def observe(self, violation: float, witness=None) -> None:
        """Record one checked instance with its (signed) violation."""
        self.instances += 1
        self.max_violation = max(self.max_violation, float(violation))
        if violation > self.tolerance and len(self.witnesses) < MAX_WITNESSES:
            self.witnesses.append(witness)

    def merge(self, other: "LemmaReport") -> "LemmaReport":
        if other.lemma != self.lemma:
            raise ValueError("cannot merge reports of different lemmas")
        room = MAX_WITNESSES - len(self.witnesses)
        return LemmaReport(
            self.lemma,
            self.instances + other.instances,
            max(self.max_violation, other.max_violation),
            self.witnesses + other.witnesses[:room],
            max(self.tolerance, other.tolerance),
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# -- independent arithmetic --------------------------------------------------


def _gv(x, p):
    """g on integer arrays: 1 - x/p + x(x-1)/(2p^2)."""
    x = np.asarray(x, dtype=float)
    return 1.0 - x / p + x * (x - 1.0) / (2.0 * p * p)


_POP = np.array([bin(i).count("1") for i in range(1 << 16)], dtype=np.int64)


def _popcount(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    if x.size and x.max(initial=0) >= (1 << 16):
        raise ValueError("popcount table covers p <= 16")
    return _POP[x]


def _in_wstar_mask(m: np.ndarray, p: int) -> np.ndarray:
    c = _popcount(m)
    return (4 * c >= p) & (4 * c <= 3 * p)


def _f_masks(seq: np.ndarray, secret: np.ndarray, p: int) -> np.ndarray:
    """f for a batch: ``seq`` has shape (n, k) of masks, ``secret`` shape (n,)."""
    n, k = seq.shape
    prev = np.zeros(n, dtype=np.int64)
    val = np.ones(n)
    for j in range(k):
        val *= _gv(_popcount(prev ^ seq[:, j]), p)
        prev = seq[:, j]
    return val * _gv(_popcount(prev ^ secret), p)


# -- lemma checkers ---------------------------------------------------------------


def check_optimise_ks(p_max: int = 6, l_max: int = 4, tol: float = 1e-12) -> LemmaReport:
    """prod_j g(x_j) <= g(c1 + c3) g(c2) under the five side conditions."""
    if p_max > 8 or l_max > 5:
        raise ValueError("enumeration budget: p_max <= 8 and l_max <= 5")
    rep = LemmaReport("optimise-ks", tolerance=tol)
    for p in range(2, p_max + 1):
        rng_ = np.arange(p + 1)
        C = np.array(list(itertools.product(rng_, repeat=3)))
        c1, c2, c3 = C[:, 0], C[:, 1], C[:, 2]
        keep = ((c2 <= c1) | (c3 == 0)) & (c1 + c3 <= p)
        C, c1, c2, c3 = C[keep], c1[keep], c2[keep], c3[keep]
        rhs = _gv(c1 + c3, p) * _gv(c2, p)
        for l in range(2, l_max + 1):
            X = np.array(list(itertools.product(rng_, repeat=l)))
            lhs = np.prod(_gv(X, p), axis=1)
            S, S2, x1 = X.sum(axis=1), X[:, 1:].sum(axis=1), X[:, 0]
            chunk = max(1, 2_000_000 // max(1, len(C)))
            for lo in range(0, len(X), chunk):
                sl = slice(lo, lo + chunk)
                ok = (
                    (c1 + c2 + c3)[None, :] <= S[sl, None]
                ) & (c2[None, :] <= S2[sl, None]) & (c1[None, :] <= x1[sl, None])
                viol = np.where(ok, lhs[sl, None] - rhs[None, :], -np.inf)
                cnt = int(ok.sum())
                if cnt == 0:
                    continue
                rep.instances += cnt
                worst = float(viol.max())
                rep.max_violation = max(rep.max_violation, worst)
                if worst > tol:
                    for i, j in zip(*np.nonzero(viol > tol)):
                        if len(rep.witnesses) >= MAX_WITNESSES:
                            break
                        rep.witnesses.append(
                            {"p": p, "x": X[lo + i].tolist(), "c": C[j].tolist(), "violation": float(viol[i, j])}
                        )
    return rep


def _random_wstar_masks(p: int, n: int, rng: np.random.Generator) -> np.ndarray:
    out = rng.integers(0, 1 << p, size=n)
    bad = ~_in_wstar_mask(out, p)
    while bad.any():
        out[bad] = rng.integers(0, 1 << p, size=int(bad.sum()))
        bad = ~_in_wstar_mask(out, p)
    return out


def _random_wcirc(p: int, n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    seq = np.zeros((n, k), dtype=np.int64)
    prev = np.zeros(n, dtype=np.int64)
    for j in range(k):
        col = rng.integers(0, 1 << p, size=n)
        bad = 4 * _popcount(prev ^ col) < p
        while bad.any():
            col[bad] = rng.integers(0, 1 << p, size=int(bad.sum()))
            bad = 4 * _popcount(prev ^ col) < p
        seq[:, j] = col
        prev = col
    return seq


def _all_wcirc(p: int, k: int) -> np.ndarray:
    seqs = [np.zeros((1, 0), dtype=np.int64)]
    cur = seqs[0]
    allw = np.arange(1 << p)
    for _ in range(k):
        prev = cur[:, -1] if cur.shape[1] else np.zeros(len(cur), dtype=np.int64)
        ok = 4 * _popcount(prev[:, None] ^ allw[None, :]) >= p
        rows, cols = np.nonzero(ok)
        cur = np.concatenate([cur[rows], allw[cols][:, None]], axis=1)
        seqs.append(cur)
    return seqs


def check_f_bounds(
    p_set: Iterable[int] = (4, 8),
    k_max: int = 3,
    samples: int = 100_000,
    rng: np.random.Generator | None = None,
    exhaustive_max_p: int = 4,
    tol: float = 1e-12,
) -> LemmaReport:
    """11/32 <= f(()) <= 25/32 and 0 < f(s) <= (25/32)^(k + [last weight far])."""
    rng = np.random.default_rng(0) if rng is None else rng
    rep = LemmaReport("f-bounds", tolerance=tol)

    def record(seq, sec, p):
        k = seq.shape[1]
        fv = _f_masks(seq, sec, p)
        if k == 0:
            viol = np.maximum(11 / 32 - fv, fv - 25 / 32)
        else:
            far = (4 * _popcount(seq[:, -1] ^ sec) >= p).astype(int)
            viol = np.maximum(-fv, fv - (25 / 32) ** (k + far))
            viol = np.where(fv <= 0, np.inf, viol)
        rep.instances += len(fv)
        rep.max_violation = max(rep.max_violation, float(viol.max(initial=-np.inf)))
        for i in np.nonzero(viol > tol)[0][: MAX_WITNESSES - len(rep.witnesses)]:
            rep.witnesses.append({"p": p, "seq": seq[i].tolist(), "secret": int(sec[i]), "f": float(fv[i])})

    for p in p_set:
        if not 2 <= p <= 12:
            raise ValueError("check_f_bounds needs 2 <= p <= 12")
        if p <= exhaustive_max_p:
            secrets = np.array([m for m in range(1 << p) if _in_wstar_mask(np.array([m]), p)[0]])
            for seqs in _all_wcirc(p, k_max):
                n = len(seqs)
                record(np.repeat(seqs, len(secrets), axis=0), np.tile(secrets, n), p)
        else:
            per_k = max(1, samples // (k_max + 1))
            for k in range(k_max + 1):
                sec = _random_wstar_masks(p, per_k, rng)
                record(_random_wcirc(p, per_k, k, rng), sec, p)
    return rep


def check_close_count(p_max: int = 16) -> LemmaReport:
    """|{w : diff(w, c) < p/4}| <= 2^p exp(-p/8), counted by brute force."""
    if p_max > 16:
        raise ValueError("check_close_count needs p_max <= 16")
    rep = LemmaReport("close-count", tolerance=0.0)
    for p in range(2, p_max + 1):
        allw = np.arange(1 << p)
        bound = 2.0**p * math.exp(-p / 8)
        centers = {0, int(allw[-1]), sum(1 << j for j in range(0, p, 2))}
        for c in sorted(centers):
            count = int(np.sum(4 * _popcount(allw ^ c) < p))
            rep.observe(count - bound, {"p": p, "center": c, "count": count, "bound": bound})
    return rep


# -- hardness smoke ------------------------------------------------------------


def _payoff(outputs: np.ndarray, secrets: np.ndarray, p: int) -> np.ndarray:
    """Expected game payoff of 8-item outputs (n, 8) against secrets (n,)."""
    n, L = outputs.shape
    close = 4 * _popcount(outputs ^ secrets[:, None]) < p
    close[:, -1] = True
    kstar = np.argmax(close, axis=1) + 1
    val = np.ones(n)
    prev = np.zeros(n, dtype=np.int64)
    last = np.zeros(n, dtype=np.int64)
    for j in range(L):
        active = j < kstar
        val = np.where(active, val * _gv(_popcount(prev ^ outputs[:, j]), p), val)
        last = np.where(active, outputs[:, j], last)
        prev = outputs[:, j]
    return val * _gv(_popcount(last ^ secrets), p)


@dataclass
class SmokeReport:
    p: int
    K: int
    planner: str
    trials: int
    mean_payoff: float = float("nan")
    mean_f_empty: float = float("nan")
    gap: float = float("nan")
    gap_se: float = float("nan")
    gap_lower95: float = float("nan")
    margin: float = 0.01
    payoffs: np.ndarray | None = field(default=None, repr=False)
    f_empty: np.ndarray | None = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return self.trials > 0 and self.gap_lower95 > self.margin

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k not in ("payoffs", "f_empty")}
        out["passed"] = self.passed
        return out


def fixed_output(p: int) -> np.ndarray:
    """Alternate the all-ones vector with one whose first ceil(p/2) signs are flipped."""
    v = (1 << math.ceil(p / 2)) - 1
    return np.array([v, 0] * 4, dtype=np.int64)


def hardness_smoke(
    p: int, K: int, planner: str, trials: int, rng: np.random.Generator, margin: float = 0.01
) -> SmokeReport:
    """Mean payoff of a query-free planner versus mean f(()) over random secrets."""
    if p < 8 or p > 16:
        raise ValueError("hardness_smoke needs 8 <= p <= 16")
    rep = SmokeReport(p, K, planner, trials, margin=margin)
    if trials == 0:
        return rep
    secrets = _random_wstar_masks(p, trials, rng)
    if planner == "fixed-output":
        outs = np.tile(fixed_output(p), (trials, 1))
    elif planner == "random-output":
        outs = _random_wcirc(p, trials, 8, rng)
    elif planner == "cheating":
        full = (1 << p) - 1
        outs = np.stack([secrets, secrets ^ full] * 4, axis=1)
    else:
        raise ValueError(f"unknown planner {planner!r}")
    pay = _payoff(outs, secrets, p)
    f0 = _gv(_popcount(secrets), p)
    diff = f0 - pay
    rep.payoffs, rep.f_empty = pay, f0
    rep.mean_payoff = float(pay.mean())
    rep.mean_f_empty = float(f0.mean())
    rep.gap = float(diff.mean())
    rep.gap_se = float(diff.std(ddof=1) / math.sqrt(trials)) if trials > 1 else float("inf")
    rep.gap_lower95 = rep.gap - 1.6448536269514722 * rep.gap_se
    return rep


# -- grid search reference for the optimistic choice ----------------------------


@dataclass
class GridResult:
    theta: np.ndarray | None
    value: float
    feasible_points: int


def grid_oracle_optimistic(
    objective: Sequence[float],
    constraints: Sequence,
    B: float,
    tol: float,
    resolution: float,
    max_points: int = 50_000_000,
) -> GridResult:
    """Dense-grid maximizer of <objective, theta> over the constrained ball.

    ``constraints`` holds (A, d+1) factor matrices (or objects with a
    ``factors`` attribute); a point is feasible when the product of its
    linear terms is at most ``tol`` in absolute value.
    """
    obj = np.asarray(objective, dtype=float)
    d = obj.size
    facs = [np.asarray(getattr(c, "factors", c), dtype=float) for c in constraints]
    if d > 3 or any(f.shape[0] > 2 for f in facs):
        raise ValueError("grid oracle limited to d <= 3 and A <= 2")
    axis = np.arange(-B, B + resolution / 2, resolution)
    if axis.size**d > max_points:
        raise ValueError("grid too large")
    best_val, best, count = -np.inf, None, 0
    # sweep the first coordinate in slabs to bound memory
    rest = np.array(list(itertools.product(axis, repeat=d - 1))) if d > 1 else np.zeros((1, 0))
    for x0 in axis:
        pts = np.concatenate([np.full((len(rest), 1), x0), rest], axis=1)
        ok = np.einsum("ij,ij->i", pts, pts) <= B * B
        for f in facs:
            terms = f[None, :, 0] + pts @ f[:, 1:].T
            ok &= np.abs(np.prod(terms, axis=1)) <= tol
        if not ok.any():
            continue
        count += int(ok.sum())
        vals = np.where(ok, pts @ obj, -np.inf)
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val, best = float(vals[i]), pts[i].copy()
    return GridResult(best, best_val if best is not None else float("nan"), count)


# -- sweeps over the hard MDP family ------------------------------------------


def hard_mdp_sweep(p: int, K: int, quotient: bool | None = None, tol: float = 1e-9) -> list[LemmaReport]:
    """Exact checks of the hard MDP against dynamic programming, all secrets.

    Covers realizability of v* and q*, optimality and closed-form value of
    the greedy policy, feature and parameter norm budgets, and the absence
    of edges from the reachable class into the unreachable one.
    """
    import warnings

    from . import hardmdp as hm
    from . import hypercube as hc
    from .mdp import BOTTOM, dp_solve, policy_values

    if quotient is None:
        quotient = p >= 4
    reps = {
        name: LemmaReport(name, tolerance=t)
        for name, t in [
            ("realizability-v", tol),
            ("realizability-q", tol),
            ("policy-optimal", tol),
            ("closed-form-value", tol),
            ("norm-phi-v", 0.0),
            ("norm-phi-q", 0.0),
            ("norm-q-blocks", 0.0),
            ("norm-theta", 0.0),
            ("unreachable", 0.0),
        ]
    }
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        base = {v: hm.derive_params(strict=False, p=p, K=K, variant=v) for v in ("v", "q")}
    structure = hm.HardStructure(base["v"], quotient)
    states = structure.states()

    def txt(s):
        return hm.state_to_text(s, p)

    for s in states:
        reps["norm-phi-v"].observe(float(np.linalg.norm(structure.phi_v(s))) - 1.0, txt(s))
        st = structure.stats(s)
        for a in range(p):
            reps["norm-phi-q"].observe(float(np.linalg.norm(structure.phi_q(s, a))) - 1.0, [txt(s), a])
            if st.i == p - 1:
                _, mask = structure.q_factor(s, a)
                reps["norm-q-blocks"].observe(float(np.linalg.norm(hm.q_blocks(p, mask))) - 8.0, [txt(s), a])

    for variant in ("v", "q"):
        params = base[variant]
        st_v = structure if variant == "v" else hm.HardStructure(params, quotient)
        for sec in hc.enumerate_wstar(p):
            m = hm.HardMDP(params, sec, structure=st_v)
            sec_txt = "".join("+" if x > 0 else "-" for x in sec)
            sol = dp_solve(m)
            pv = policy_values(lambda s: hm.pi_theta_star(m, s), m)
            if variant == "v":
                reps["norm-theta"].observe(float(np.linalg.norm(m.theta)) - hm.B_HARD, sec_txt)
            for s in states:
                reach = m.is_reach(s)
                if variant == "v" and reach:
                    reps["realizability-v"].observe(abs(m.v_linear(s) - sol.v[s]), [sec_txt, txt(s)])
                if variant == "q":
                    for a in range(p):
                        reps["realizability-q"].observe(abs(m.q_linear(s, a) - sol.q[(s, a)]), [sec_txt, txt(s), a])
                if reach:
                    reps["policy-optimal"].observe(abs(pv[s] - sol.v[s]), [variant, sec_txt, txt(s)])
                    reps["closed-form-value"].observe(abs(m.v_prime(s) - sol.v[s]), [variant, sec_txt, txt(s)])
                    if variant == "v":
                        for a in range(p):
                            for o in m.outcomes(s, a):
                                bad = o.next_state is not BOTTOM and not m.is_reach(o.next_state)
                                reps["unreachable"].observe(float(bad), [sec_txt, txt(s), a])
    return list(reps.values())


def game_equivalence_check(p: int, K: int) -> list[LemmaReport]:
    """Compare game-backed transitions with the direct law on every (s, a)."""
    import warnings

    from . import hardmdp as hm
    from . import hypercube as hc
    from . import rng as rngmod

    law_rep = LemmaReport("game-law", tolerance=0.0)
    query_rep = LemmaReport("game-queries", tolerance=0.0)
    for variant in ("v", "q", "vq"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            params = hm.derive_params(strict=False, p=p, K=K, variant=variant)
        structure = hm.HardStructure(params, quotient=False)
        for sidx, sec in enumerate(hc.enumerate_wstar(p)):
            m = hm.HardMDP(params, sec, structure=structure)
            sec_txt = "".join("+" if x > 0 else "-" for x in sec)
            for s in structure.states():
                st = m.stats(s)
                for a in range(p):
                    game = hc.AbstractGame(K, p, sec)
                    case, outs = hm.game_transition_law(m, s, a, game)
                    direct = m.outcomes(s, a)
                    same = (
                        case == m.case(s, a)
                        and len(outs) == len(direct) == 1
                        and outs[0].next_state == direct[0].next_state
                        and outs[0].reward == direct[0].reward
                        and outs[0].bernoulli == direct[0].bernoulli
                    )
                    law_rep.observe(0.0 if same else 1.0, [variant, sec_txt, hm.state_to_text(s, p), a])
                    hm.simulate_via_game(m, s, a, game, rngmod.stream(0, sidx, a))
                    expected = 0 if (st.k == 0 and st.i < p - 1) else 1
                    query_rep.observe(float(game.queries != expected), [variant, sec_txt, hm.state_to_text(s, p), a])
    return [law_rep, query_rep]
