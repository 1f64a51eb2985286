"""End-to-end acceptance criteria, each at its stated tolerance.

Each criterion is one test named ``test_criterion_NN_*``; the conftest hook
prints one PASS/FAIL line per criterion at the end of the run.
"""

import json
import math
import time
import warnings

import mpmath
import numpy as np
import pytest

from hardplan import cli
from hardplan import hardmdp as hm
from hardplan import hypercube as hc
from hardplan import oracle
from hardplan.mdp import BOTTOM, FeatureKind
from hardplan.reduction import delayed_dp_check
from hardplan.tensorplan import TPConfig, tp_constants
from hardplan.toy import TabularMDP, deterministic

TOL = 1e-9


@pytest.fixture(scope="module")
def sweeps():
    out, elapsed = {}, 0.0
    for p in (2, 3, 4):
        t0 = time.perf_counter()
        out[p] = {r.lemma: r for r in oracle.hard_mdp_sweep(p, 3, tol=TOL)}
        elapsed += time.perf_counter() - t0
    return out, elapsed


# every CLI invocation used by the acceptance runs; criterion 11 repeats them all
CLI_RUNS = {
    "check_realizability": ["check", "realizability", "--p", "2", "--K", "3"],
    "check_lemmas": ["check", "lemmas"],
    "check_reduction": ["check", "reduction"],
    "run_tensorplan": ["run", "tensorplan", "--episodes", "200", "--seed", "0"],
    "run_reduction": ["run", "reduction", "--episodes", "200", "--seed", "0"],
    "run_game": ["run", "game", "--p", "12", "--K", "10", "--episodes", "10000", "--seed", "0"],
    "dump_hardmdp": ["dump", "hardmdp", "--p", "2", "--K", "3"],
}


def run_cli(name, directory):
    """Run one CLI command; return (exit code, {file name: bytes}, seconds)."""
    args = list(CLI_RUNS[name])
    json_path = directory / f"{name}.json"
    csv_path = directory / f"{name}.csv"
    if args[0] == "run":
        args += ["--out", str(csv_path), "--json-out", str(json_path)]
    elif args[0] == "check":
        args += ["--json-out", str(json_path)]
    else:
        args += ["--out", str(csv_path)]
    t0 = time.perf_counter()
    code = cli.main(args)
    secs = time.perf_counter() - t0
    files = {p.name: p.read_bytes() for p in (json_path, csv_path) if p.exists()}
    return code, files, secs


@pytest.fixture(scope="module")
def cli_runs(tmp_path_factory):
    d = tmp_path_factory.mktemp("first")
    return {name: run_cli(name, d) for name in CLI_RUNS}


def summary(runs, name):
    code, files, secs = runs[name]
    return code, json.loads(files[f"{name}.json"]), secs


def test_criterion_01_realizability_sweep(sweeps):
    reps, elapsed = sweeps
    for p in (2, 3, 4):
        for lemma in ("realizability-v", "realizability-q"):
            r = reps[p][lemma]
            assert r.instances > 0 and r.passed and r.max_violation <= TOL, (p, r)
    assert elapsed < 60.0, elapsed


def test_criterion_02_optimal_policy_identity(sweeps):
    reps, _ = sweeps
    for p in (2, 3, 4):
        for lemma in ("policy-optimal", "closed-form-value"):
            r = reps[p][lemma]
            assert r.instances > 0 and r.max_violation <= TOL, (p, r)


def test_criterion_03_norm_budgets(sweeps):
    reps, _ = sweeps
    for p in (2, 3, 4):
        for lemma in ("norm-phi-v", "norm-phi-q", "norm-theta"):
            r = reps[p][lemma]
            assert r.instances > 0 and not r.witnesses and r.max_violation <= 0.0, (p, r)


def test_criterion_04_game_backed_simulation():
    reps = {r.lemma: r for r in oracle.game_equivalence_check(2, 3)}
    assert reps["game-law"].passed and reps["game-law"].instances > 0
    assert reps["game-queries"].passed  # at most one query per transition


def test_criterion_05_unreachability(sweeps):
    reps, _ = sweeps
    for p in (2, 3):
        r = reps[p]["unreachable"]
        assert r.instances > 0 and not r.witnesses, r


def test_criterion_06_lemma_suites():
    t0 = time.perf_counter()
    reps = [
        oracle.check_optimise_ks(6, 4, tol=1e-12),
        oracle.check_f_bounds((4, 8), samples=100_000, tol=1e-12),
        oracle.check_close_count(16),
    ]
    elapsed = time.perf_counter() - t0
    for r in reps:
        assert r.instances > 0 and r.passed and not r.witnesses, r
    assert elapsed < 300.0, elapsed


def test_criterion_07_tensorplan_soundness(cli_runs):
    code, s, secs = summary(cli_runs, "run_tensorplan")
    assert code == 0
    cfg = s["config"]
    assert (cfg["d"], cfg["H"], cfg["A"], cfg["delta"]) == (2, 3, 2, 0.3) and cfg["B"] <= 2
    assert s["episodes"] == 200
    assert s["return_lower95"] >= s["v_star"] - 0.3 and s["sound_at_95"]
    assert secs < 600.0, secs


def reduction_fixture():
    law = {
        ("s0", 0): deterministic("x", 0.2),
        ("s0", 1): deterministic("y", 0.1),
        ("x", 0): deterministic(BOTTOM, 0.5),
        ("x", 1): deterministic(BOTTOM, 0.3),
        ("y", 0): deterministic(BOTTOM, 0.0),
        ("y", 1): deterministic(BOTTOM, 0.6),
    }
    q = {("s0", 0): 0.7, ("s0", 1): 0.7, ("x", 0): 0.5, ("x", 1): 0.3, ("y", 0): 0.0, ("y", 1): 0.6}
    m = TabularMDP(2, 2, {"s0": 0, "x": 1, "y": 1}, law, "s0", feature_dim=2,
                   phi_q={k: [v, 0.0] for k, v in q.items()}, feature_kind=FeatureKind.ACTION)
    return m, np.array([1.0, 0.0])


def test_criterion_08_reduction(cli_runs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        params = hm.derive_params(strict=False, p=2, K=3, variant="q")
    for sec in hc.enumerate_wstar(2):
        m = hm.HardMDP(params, sec)
        rep = delayed_dp_check(m, m.theta, hm.B_HARD, tol=TOL)
        assert rep.passed, rep
    m, theta = reduction_fixture()
    assert delayed_dp_check(m, theta, 1.0, tol=TOL).passed
    code, s, _ = summary(cli_runs, "run_reduction")
    assert code == 0 and s["episodes"] == 200
    assert s["return_lower95"] >= s["v_star"] - s["config"]["delta"] and s["sound_at_95"]


def audit_constants(A, H, d, delta, B):
    """Second evaluation of the TensorPlan constants in 60-digit mpmath."""
    with mpmath.workdps(60):
        delta, B = mpmath.mpf(delta), mpmath.mpf(B)
        E = 1
        for _ in range(100):
            eps = (delta / (12 * H**2)) ** A / (1 + 1 / (2 * mpmath.sqrt(E)))
            x = 2 * (B + 1) ** A * mpmath.mpf(3) ** A / (mpmath.mpf(H) ** A * eps)
            E_new = int(mpmath.floor(3 * (d + 1) ** A * mpmath.e / (mpmath.e - 1) * mpmath.log(3 + 3 * x**2) + 1))
            if E_new == E:
                break
            E = E_new
        zeta = delta / (4 * H)
        n1 = int(mpmath.ceil(32 * (1 + 2 * B) ** 2 / delta**2 * mpmath.log((E + 1) / zeta)))
        n2 = int(mpmath.ceil(1867 * H**2 * (B + 1) ** 2 * (d + 1) / (2 * delta**2)
                             * mpmath.log(4 * (E + 1) * n1 * H * A * (d + 1) / zeta)))
        n3 = int(mpmath.ceil(max(n2, 32 * (H + 1) ** 2 * E / eps**2 * mpmath.log(2 * (E + 1) * n1 * H * A / zeta))))
        sol_tol = mpmath.mpf(H) ** A * eps / (2 * mpmath.sqrt(E))
        return E, float(zeta), n1, n2, n3, float(sol_tol)


def test_criterion_09_constants_audit():
    k = tp_constants(TPConfig(A=2, H=3, d=2, delta=0.1, B=1.0))
    E, zeta, n1, n2, n3, sol_tol = audit_constants(2, 3, 2, 0.1, 1.0)
    assert (k.E_d_formula, k.n1_formula, k.n2_formula, k.n3_formula) == (E, n1, n2, n3)
    assert k.zeta == zeta and math.isclose(k.sol_tol, sol_tol, rel_tol=1e-15)


def test_criterion_10_hardness_smoke(cli_runs):
    code, s, _ = summary(cli_runs, "run_game")
    assert code == 0
    assert (s["p"], s["K"], s["trials"], s["planner"]) == (12, 10, 10_000, "fixed-output")
    assert s["mean_payoff"] < s["mean_f_empty"] - 0.01
    assert s["gap_lower95"] > 0.01 and s["passed"]


def test_criterion_11_determinism(cli_runs, tmp_path_factory):
    d = tmp_path_factory.mktemp("second")
    for name in CLI_RUNS:
        code, files, _ = run_cli(name, d)
        first_code, first_files, _ = cli_runs[name]
        assert code == first_code == 0, name
        assert files and files == first_files, name
