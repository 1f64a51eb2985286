import decimal
import math
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hardplan import rng as rngmod
from hardplan import tensorplan as tp
from hardplan.mdp import BOTTOM, AccessMode, Outcome, Simulator, dp_solve, run_episode
from hardplan.oracle import grid_oracle_optimistic
from hardplan.toy import TabularMDP, deterministic, realizable_tree

DESK = dict(scale_n1=1e-9, scale_n2=1e-12, scale_n3=1e-30, ed_cap=20)


def test_constants_reference_case():
    # [DERIVED] from an independent high-precision evaluation, then frozen
    k = tp.tp_constants(tp.TPConfig(A=2, H=3, d=2, delta=0.1, B=1.0))
    assert k.E_d == k.E_d_formula == 1420
    assert (k.n1, k.n2, k.n3) == (346943, 293180658, 27712842291254887480)
    assert k.sol_tol == pytest.approx(1.01e-7, rel=0.01)
    assert k.tol == k.sol_tol


def test_zeta():
    k = tp.tp_constants(tp.TPConfig(A=1, H=10, d=1, delta=0.4, B=1.0))
    assert k.zeta == pytest.approx(0.01)


def test_fixed_point_is_consistent():
    E, eps = tp.solve_ed_eps(2, 3, 2, 0.1, 1.0)
    with decimal.localcontext(tp._ctx()):
        assert tp._ed_of(eps, 2, 3, 2, Decimal(1.0)) == E
        assert eps == tp._eps_of(E, 2, 3, Decimal(0.1))


def test_overrides():
    base = tp.tp_constants(tp.TPConfig(A=2, H=3, d=2, delta=0.1, B=1.0))
    k = tp.tp_constants(tp.TPConfig(A=2, H=3, d=2, delta=0.1, B=1.0, scale_n1=1e-3, slack=1.0, **{
        k: v for k, v in DESK.items() if k != "scale_n1"}))
    assert k.n1 == math.floor(base.n1 * 1e-3)
    assert k.n2 == 1 and k.n3 == 1
    assert k.E_d == 20 and k.E_d_formula == 1420
    assert k.sol_tol == base.sol_tol and k.tol == 2 * base.sol_tol


@pytest.mark.parametrize("bad", [dict(A=0), dict(delta=0.0), dict(B=-1.0), dict(scale_n2=0.0), dict(slack=-1)])
def test_config_validation(bad):
    kw = dict(A=2, H=3, d=2, delta=0.1, B=1.0) | bad
    with pytest.raises(ValueError):
        tp.TPConfig(**kw)


def test_huge_constants_stay_exact():
    k = tp.tp_constants(tp.TPConfig(A=40, H=50, d=50, delta=0.01, B=10.0))
    assert k.n3_formula > 10**500 and isinstance(k.n3_formula, int)
    assert k.n3 == k.n3_formula


def test_underflow_guard():
    with pytest.raises(OverflowError):
        tp.tp_constants(tp.TPConfig(A=200, H=50, d=50, delta=0.01, B=10.0))


def chain():
    """s0 -a-> s1 -> BOTTOM, rewards deterministic, phi scalar."""
    law = {
        ("s0", 0): deterministic("s1", 0.2),
        ("s0", 1): deterministic("t1", 0.0),
        ("s1", 0): deterministic(BOTTOM, 0.5),
        ("s1", 1): deterministic(BOTTOM, 0.1),
        ("t1", 0): deterministic(BOTTOM, 0.0),
        ("t1", 1): deterministic(BOTTOM, 0.3),
    }
    phi = {"s0": [0.7], "s1": [0.5], "t1": [0.3]}
    return TabularMDP(2, 2, {"s0": 0, "s1": 1, "t1": 1}, law, "s0", phi_v=phi)


def test_approx_td_exact_and_counted():
    sim = Simulator(chain(), rngmod.stream(0), AccessMode.GLOBAL)
    td = tp.approx_td("s0", sim.features("s0"), 2, 5, sim)
    assert np.allclose(td, [[0.2, -0.2], [0.0, -0.4]])
    assert sim.ledger.queries_total == 10
    # theta = 1 realizes v*: v(s0)=0.7, v(s1)=0.5, v(t1)=0.3
    assert np.allclose(tp.residuals(td, np.array([1.0])), [0.0, 0.4])


def test_approx_td_deterministic_under_seed():
    law = {("s", 0): [Outcome(1.0, BOTTOM, 0.3, True)]}
    m = TabularMDP(1, 1, {"s": 0}, law, "s")
    a = tp.approx_td("s", m.features("s"), 1, 50, Simulator(m, rngmod.stream(4), AccessMode.GLOBAL))
    b = tp.approx_td("s", m.features("s"), 1, 50, Simulator(m, rngmod.stream(4), AccessMode.GLOBAL))
    assert np.array_equal(a, b)


def test_approx_td_bernoulli_within_3_sigma():
    law = {("s", 0): [Outcome(1.0, BOTTOM, 0.3, True)]}
    m = TabularMDP(1, 1, {"s": 0}, law, "s")
    n = 20000
    td = tp.approx_td("s", m.features("s"), 1, n, Simulator(m, rngmod.stream(1), AccessMode.GLOBAL))
    assert abs(td[0, 0] - 0.3) <= 3 * math.sqrt(0.21 / n)


def test_tie_breaks_to_smallest():
    assert tp.argmin_action(np.array([0.2, 0.1, 0.1])) == 1


factor_mats = st.integers(1, 3).flatmap(
    lambda A: st.integers(1, 3).flatmap(
        lambda d: st.tuples(
            arrays(float, (A, d + 1), elements=st.floats(-2, 2, allow_nan=False)),
            arrays(float, d, elements=st.floats(-2, 2, allow_nan=False)),
        )
    )
)


@given(factor_mats)
@settings(max_examples=80)
def test_constraint_flat_matches_product(ft):
    f, theta = ft
    c = tp.Constraint(f)
    a, b = c.evaluate(theta), c.evaluate_flat(theta)
    assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


def test_constraint_gradient():
    r = np.random.default_rng(0)
    c = tp.Constraint(r.normal(size=(3, 3)))
    th = r.normal(size=2)
    h = 1e-6
    num = [(c.evaluate(th + h * e) - c.evaluate(th - h * e)) / (2 * h) for e in np.eye(2)]
    assert np.allclose(c.gradient(th), num, atol=1e-6)


def test_empty_constraint_maximizer():
    res = tp.optimistic_select([], np.array([3.0, 4.0]), 2.0, 1e-9, rngmod.stream(0))
    assert np.allclose(res.theta, [1.2, 1.6])
    assert res.value == pytest.approx(10.0)
    assert not res.fallback


@pytest.mark.parametrize("seed", range(6))
def test_optimistic_select_against_grid(seed):
    r = rngmod.stream(seed)
    obj = r.normal(size=2)
    cons = [tp.Constraint(r.normal(size=(2, 3))) for _ in range(2)]
    res = tp.optimistic_select(cons, obj, 1.0, 1e-9, rngmod.stream(seed, 1))
    grid = grid_oracle_optimistic(obj, cons, 1.0, 2e-3, 0.005)
    if res.fallback:
        assert grid.feasible_points == 0 or grid.value <= 0.05
        return
    assert tp.is_feasible(res.theta, cons, 1.0, 1e-9)
    assert res.value >= grid.value - 0.05


def test_infeasible_falls_back_to_zero():
    c = tp.Constraint(np.array([[1.0, 0.0], [1.0, 0.0]]))  # product is 1 everywhere
    res = tp.optimistic_select([c], np.array([1.0]), 1.0, 1e-9, rngmod.stream(0))
    assert res.fallback and not res.feasible and res.value == 0.0


def test_init_on_all_zero_mdp():
    law = {(s, a): deterministic(nxt, 0.0) for s, nxt in (("a", "b"), ("b", BOTTOM)) for a in range(2)}
    m = TabularMDP(2, 2, {"a": 0, "b": 1}, law, "a", feature_dim=2)
    cfg = tp.TPConfig(A=2, H=2, d=2, delta=0.3, B=1.0, **DESK)
    sim = Simulator(m, rngmod.stream(0))
    sim.observe("a")
    state = tp.tp_init("a", sim.features("a"), cfg, sim, rngmod.stream(1))
    assert state.clean and state.iterations == 1 and not state.constraints
    assert np.allclose(state.theta_plus, 0.0)


@pytest.fixture(scope="module")
def tree():
    return realizable_tree(2, 3, 2, 2.0, rngmod.stream(0, 9))


def test_optimistic_values_decrease(tree):
    cfg = tp.TPConfig(A=2, H=3, d=2, delta=0.3, B=2.0, **DESK)
    sim = Simulator(tree.mdp, rngmod.stream(0))
    sim.observe(())
    state = tp.tp_init((), sim.features(()), cfg, sim, rngmod.stream(2))
    v = state.optimistic_values
    assert state.clean
    assert all(b <= a + 1e-9 for a, b in zip(v, v[1:]))
    assert len(state.constraints) == state.iterations - 1
    assert v[-1] >= dp_solve(tree.mdp).v[()] - 1e-9  # optimism


def test_query_accounting(tree):
    cfg = tp.TPConfig(A=2, H=3, d=2, delta=0.3, B=2.0, **DESK)
    planner = tp.TensorPlan(cfg, rngmod.stream(3))
    ep = run_episode(planner, tree.mdp, (), rngmod.stream(3, 1))
    n2 = planner.constants.n2
    assert ep.ledger.per_call[0] == planner.init_queries + 2 * n2
    assert ep.ledger.per_call[1:] == [2 * n2] * 2
    assert ep.ledger.queries_total == sum(ep.ledger.per_call)


def test_get_action_with_true_parameter(tree):
    cfg = tp.TPConfig(A=2, H=3, d=2, delta=0.3, B=2.0, **DESK)
    sol = dp_solve(tree.mdp)
    sim = Simulator(tree.mdp, rngmod.stream(0), AccessMode.GLOBAL)
    state = tp.TPState(tree.theta, [], tp.tp_constants(cfg), True, 1)
    for s in tree.mdp.states():
        a = tp.tp_get_action(s, sim.features(s), cfg, sim, state)
        assert sol.q[(s, a)] == pytest.approx(sol.v[s], abs=1e-12)
        td = tp.approx_td(s, sim.features(s), 2, 1, sim)
        assert tp.residuals(td, tree.theta)[a] < 1e-12


def test_get_action_before_init():
    cfg = tp.TPConfig(A=2, H=3, d=2, delta=0.3, B=2.0)
    with pytest.raises(RuntimeError):
        tp.tp_get_action((), np.zeros(2), cfg, None, None)


def test_rejects_action_features():
    t = realizable_tree(2, 2, 2, 1.0, rngmod.stream(0), kind="q")
    planner = tp.TensorPlan(tp.TPConfig(A=2, H=2, d=2, delta=0.3, B=1.0, **DESK), rngmod.stream(0))
    with pytest.raises(ValueError):
        run_episode(planner, t.mdp, (), rngmod.stream(0))
