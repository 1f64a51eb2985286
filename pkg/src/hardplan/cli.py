"""Command-line entry point: exhaustive checks, planner runs and state dumps.

Exit codes: 0 when everything passes, 1 when a check fails, 2 on usage or
parameter errors.  Outputs are byte-for-byte reproducible for a given
configuration; wall-clock timings go to a separate sidecar file.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np

from . import hardmdp as hm
from . import hypercube as hc
from . import oracle
from . import rng as rngmod
from . import toy
from .mdp import dp_solve, run_episode
from .reduction import TPPrime, delayed_dp_check
from .tensorplan import TensorPlan, TPConfig, tp_constants

WORKERS_ENV = "HARDPLAN_WORKERS"
FIXTURE_TAG = 9
Z95 = 1.6448536269514722

RUN_COLUMNS = [
    "seed",
    "episode",
    "total_reward",
    "v_star",
    "suboptimality",
    "queries_init",
    "queries_total",
]

DEFAULTS: dict[str, dict[str, Any]] = {
    "check realizability": {"p": 2, "K": 3, "variant": "all", "tol": 1e-9, "strict": False},
    "check lemmas": {"lemma": "all", "p": 6, "l_max": 4, "tol": 1e-12, "samples": 100_000, "seed": 0},
    "check reduction": {"p": 2, "K": 3, "tol": 1e-9, "seed": 0, "strict": False},
    "run tensorplan": {
        "d": 2, "H": 3, "A": 2, "delta": 0.3, "B": 2.0, "episodes": 200, "seed": 0, "fixture_seed": 0,
        "scale_n1": 1e-9, "scale_n2": 1e-12, "scale_n3": 1e-30, "ed_cap": 20, "slack": 0.0,
    },
    "run reduction": {
        "d": 2, "H": 3, "A": 2, "delta": 0.3, "B": 2.0, "episodes": 200, "seed": 0, "fixture_seed": 0,
        "scale_n1": 1e-9, "scale_n2": 1e-12, "scale_n3": 1e-30, "ed_cap": 20, "slack": 0.0,
    },
    "run game": {"p": 12, "K": 10, "episodes": 10_000, "seed": 0, "planner": "fixed-output", "margin": 0.01},
    "dump hardmdp": {"p": 2, "K": 2, "secret_index": 0, "variant": "v", "quotient": False, "out": "-"},
}

DUMP_BUDGET = 2_000_000


class UsageError(Exception):
    pass


# -- formatting ----------------------------------------------------------------


def fmt(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def write_csv(rows: list[dict], columns: list[str], target) -> None:
    w = csv.writer(target, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r[c]) for c in columns])


def dump_json(obj: Any) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def sign_text(mask: int, p: int) -> str:
    return "".join("-" if (mask >> j) & 1 else "+" for j in range(p))


def bits_text(mask: int, p: int) -> str:
    return "".join("1" if (mask >> j) & 1 else "0" for j in range(p))


def workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


# -- checks ---------------------------------------------------------------------


def _desk_params_guard(cfg: dict) -> None:
    p, K = cfg["p"], cfg["K"]
    if not (2 <= p <= 4 and 1 <= K <= 4):
        raise UsageError("exhaustive checks need 2 <= p <= 4 and 1 <= K <= 4")
    if cfg.get("strict") and K < 9:
        raise UsageError("--strict requires K >= 9, beyond the exhaustive budget")


def check_realizability(cfg: dict) -> tuple[bool, dict]:
    _desk_params_guard(cfg)
    reports = oracle.hard_mdp_sweep(cfg["p"], cfg["K"], tol=cfg["tol"])
    skip = {"v": {"realizability-q"}, "q": {"realizability-v"}, "all": set()}[cfg["variant"]]
    reports = [r for r in reports if r.lemma not in skip]
    if cfg["p"] <= 3:
        reports += oracle.game_equivalence_check(cfg["p"], cfg["K"])
    ok = all(r.passed for r in reports)
    return ok, {"passed": ok, "reports": [r.to_dict() for r in reports]}


def check_lemmas(cfg: dict) -> tuple[bool, dict]:
    which = cfg["lemma"]
    reports = []
    if which in ("all", "optimiseks"):
        reports.append(oracle.check_optimise_ks(cfg["p"], cfg["l_max"], tol=cfg["tol"]))
    if which in ("all", "fbounds"):
        reports.append(
            oracle.check_f_bounds((4, 8), samples=cfg["samples"], rng=rngmod.stream(cfg["seed"]), tol=cfg["tol"])
        )
    if which in ("all", "closecount"):
        reports.append(oracle.check_close_count(16))
    if not reports:
        raise UsageError(f"unknown lemma {which!r}")
    ok = all(r.passed for r in reports)
    return ok, {"passed": ok, "reports": [r.to_dict() for r in reports]}


def check_reduction(cfg: dict) -> tuple[bool, dict]:
    _desk_params_guard(cfg)
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        params = hm.derive_params(strict=False, p=cfg["p"], K=cfg["K"], variant="q")
    structure = hm.HardStructure(params, quotient=cfg["p"] >= 4)
    for j, sec in enumerate(hc.enumerate_wstar(cfg["p"])):
        m = hm.HardMDP(params, sec, structure=structure)
        rep = delayed_dp_check(m, m.theta, hm.B_HARD, tol=cfg["tol"])
        out.append({"fixture": f"hard-q/secret{j}", "passed": rep.passed, **vars(rep)})
    tree = toy.realizable_tree(2, 3, 2, 2.0, rngmod.stream(cfg["seed"], FIXTURE_TAG), kind="q")
    rep = delayed_dp_check(tree.mdp, tree.theta, 2.0, tol=cfg["tol"])
    out.append({"fixture": "toy-q-tree", "passed": rep.passed, **vars(rep)})
    ok = all(r["passed"] for r in out)
    return ok, {"passed": ok, "reports": out}


# -- runs ------------------------------------------------------------------------


def tp_config(cfg: dict) -> TPConfig:
    return TPConfig(
        A=cfg["A"], H=cfg["H"], d=cfg["d"], delta=cfg["delta"], B=cfg["B"],
        scale_n1=cfg["scale_n1"], scale_n2=cfg["scale_n2"], scale_n3=cfg["scale_n3"],
        ed_cap=cfg["ed_cap"], slack=cfg["slack"],
    )


def _fixture(cfg: dict, kind: str):
    return toy.realizable_tree(
        cfg["d"], cfg["H"], cfg["A"], cfg["B"], rngmod.stream(cfg["fixture_seed"], FIXTURE_TAG), kind=kind
    )


def _run_one(args: tuple[str, dict, int]) -> dict:
    which, cfg, ep = args
    tree = _fixture(cfg, "v" if which == "tensorplan" else "q")
    v_star = dp_solve(tree.mdp).v[tree.mdp.initial_state]
    conf = tp_config(cfg)
    planner_rng = rngmod.stream(cfg["seed"], ep, rngmod.PLANNER)
    planner = TensorPlan(conf, planner_rng) if which == "tensorplan" else TPPrime(conf, planner_rng)
    res = run_episode(planner, tree.mdp, tree.mdp.initial_state, rngmod.stream(cfg["seed"], ep))
    inner = planner if which == "tensorplan" else planner.inner
    return {
        "seed": cfg["seed"],
        "episode": ep,
        "total_reward": res.total_reward,
        "v_star": v_star,
        "suboptimality": v_star - res.total_reward,
        "queries_init": inner.init_queries,
        "queries_total": res.ledger.queries_total,
        "_clean": inner.state.clean,
        "_fallbacks": inner.state.fallbacks,
        "_iterations": inner.state.iterations,
    }


def _map(fn, items: list) -> list:
    n = workers()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * n))))


def run_planner(which: str, cfg: dict) -> tuple[list[dict], dict]:
    if cfg["episodes"] < 1:
        raise UsageError("episodes must be at least 1")
    conf = tp_config(cfg)
    if which == "reduction":
        inner_conf = TPPrime(conf, rngmod.stream(0)).config
        constants = tp_constants(inner_conf)
    else:
        constants = tp_constants(conf)
    rows = _map(_run_one, [(which, cfg, ep) for ep in range(cfg["episodes"])])
    rows.sort(key=lambda r: (r["seed"], r["episode"]))
    sub = np.array([r["suboptimality"] for r in rows])
    ret = np.array([r["total_reward"] for r in rows])
    n = len(rows)
    se = float(sub.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    v_star = rows[0]["v_star"]
    summary = {
        "command": f"run {which}",
        "config": cfg,
        "constants": vars(constants),
        "episodes": n,
        "v_star": v_star,
        "mean_return": float(ret.mean()),
        "mean_suboptimality": float(sub.mean()),
        "suboptimality_se": se,
        "suboptimality_upper95": float(sub.mean()) + Z95 * se,
        "return_lower95": float(ret.mean()) - Z95 * se,
        "sound_at_95": bool(float(ret.mean()) - Z95 * se >= v_star - cfg["delta"]),
        "mean_queries_init": float(np.mean([r["queries_init"] for r in rows])),
        "mean_queries_total": float(np.mean([r["queries_total"] for r in rows])),
        "clean_fraction": float(np.mean([r["_clean"] for r in rows])),
        "solver_fallbacks": int(sum(r["_fallbacks"] for r in rows)),
        "max_init_iterations": int(max(r["_iterations"] for r in rows)),
    }
    return rows, summary


def run_game(cfg: dict) -> tuple[list[dict], dict]:
    rep = oracle.hardness_smoke(
        cfg["p"], cfg["K"], cfg["planner"], cfg["episodes"], rngmod.stream(cfg["seed"], rngmod.SECRET), cfg["margin"]
    )
    rows = []
    if rep.trials:
        for i, (pay, f0) in enumerate(zip(rep.payoffs, rep.f_empty)):
            rows.append({"seed": cfg["seed"], "trial": i, "payoff": float(pay), "f_empty": float(f0)})
    return rows, {"command": "run game", "config": cfg, **rep.to_dict()}


# -- dump --------------------------------------------------------------------------


DUMP_COLUMNS = ["id", "k", "i", "w_k0", "w_ki", "fix", "frozen", "reach", "v_star", "v_prime", "phi_v_theta"]


def dump_hardmdp(cfg: dict) -> list[dict]:
    p, K = cfg["p"], cfg["K"]
    if not (2 <= p <= 4 and 1 <= K <= 4):
        raise UsageError("dump needs 2 <= p <= 4 and 1 <= K <= 4")
    if not cfg["quotient"] and hm.count_states(p, K) > DUMP_BUDGET:
        raise UsageError(f"{hm.count_states(p, K)} states exceed the dump budget; use --quotient")
    secrets = hc.enumerate_wstar(p)
    if not 0 <= cfg["secret_index"] < len(secrets):
        raise UsageError(f"secret index must lie in [0, {len(secrets)})")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        params = hm.derive_params(strict=False, p=p, K=K, variant=cfg["variant"])
    m = hm.HardMDP(params, secrets[cfg["secret_index"]], quotient=cfg["quotient"])
    sol = dp_solve(m)
    rows = []
    for s in m.states():
        st = m.stats(s)
        rows.append({
            "id": hm.state_to_text(s, p),
            "k": st.k,
            "i": st.i,
            "w_k0": sign_text(st.w_k0, p),
            "w_ki": sign_text(st.w_ki, p),
            "fix": bits_text(st.fix, p),
            "frozen": st.frozen,
            "reach": hm.reachable_class(m, s),
            "v_star": sol.v[s],
            "v_prime": m.v_prime(s),
            "phi_v_theta": m.v_linear(s),
        })
    rows.append({
        "id": "BOTTOM", "k": "", "i": "", "w_k0": "", "w_ki": "", "fix": "", "frozen": "",
        "reach": "reach", "v_star": 0.0, "v_prime": "", "phi_v_theta": 0.0,
    })
    return rows


# -- argument handling ----------------------------------------------------------


def _common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="JSON file with option values; explicit flags win")
    sp.add_argument("--json-out", dest="json_out", help="also write the JSON report/summary to this path")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hardplan", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    chk = sub.add_parser("check", help="exhaustive and lemma checks")
    chk.add_argument("target", choices=["realizability", "lemmas", "reduction"])
    chk.add_argument("--p", type=int)
    chk.add_argument("--K", type=int)
    chk.add_argument("--variant", choices=["v", "q", "all"])
    chk.add_argument("--tol", type=float)
    chk.add_argument("--strict", action="store_true", default=None)
    chk.add_argument("--lemma", choices=["all", "optimiseks", "fbounds", "closecount"])
    chk.add_argument("--l-max", dest="l_max", type=int)
    chk.add_argument("--samples", type=int)
    chk.add_argument("--seed", type=int)
    _common(chk)

    run = sub.add_parser("run", help="planner and game experiments")
    run.add_argument("target", choices=["tensorplan", "game", "reduction"])
    for name, typ in [("d", int), ("H", int), ("A", int), ("delta", float), ("B", float), ("episodes", int),
                      ("seed", int), ("p", int), ("K", int), ("margin", float), ("slack", float)]:
        run.add_argument(f"--{name}", type=typ)
    run.add_argument("--fixture-seed", dest="fixture_seed", type=int)
    run.add_argument("--scale-n1", dest="scale_n1", type=float)
    run.add_argument("--scale-n2", dest="scale_n2", type=float)
    run.add_argument("--scale-n3", dest="scale_n3", type=float)
    run.add_argument("--ed-cap", dest="ed_cap", type=int)
    run.add_argument("--planner", choices=["fixed-output", "random-output", "cheating"])
    run.add_argument("--out", help="CSV path (default: run_<target>.csv)")
    _common(run)

    dmp = sub.add_parser("dump", help="enumerate hard-MDP states to CSV")
    dmp.add_argument("target", choices=["hardmdp"])
    dmp.add_argument("--p", type=int)
    dmp.add_argument("--K", type=int)
    dmp.add_argument("--secret-index", dest="secret_index", type=int)
    dmp.add_argument("--variant", choices=["v", "q", "vq"])
    dmp.add_argument("--quotient", action="store_true", default=None)
    dmp.add_argument("--out")
    _common(dmp)
    return ap


def resolve(args: argparse.Namespace) -> dict:
    key = f"{args.command} {args.target}"
    cfg = dict(DEFAULTS[key])
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config: {e}") from None
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys for {key}: {sorted(unknown)}")
        cfg.update(loaded)
    for k, v in vars(args).items():
        if k in cfg and v is not None:
            cfg[k] = v
    if "seed" in cfg and not 0 <= int(cfg["seed"]) < 2**64:
        raise UsageError("seed must be a 64-bit unsigned integer")
    return cfg


def _emit_json(payload: dict, args) -> None:
    text = dump_json(payload)
    sys.stdout.write(text)
    if args.json_out:
        Path(args.json_out).write_text(text)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        cfg = resolve(args)
        t0 = time.perf_counter()
        if args.command == "check":
            fn = {"realizability": check_realizability, "lemmas": check_lemmas, "reduction": check_reduction}
            ok, report = fn[args.target](cfg)
            report = {"command": f"check {args.target}", "config": cfg, **report}
            _emit_json(report, args)
            return 0 if ok else 1
        if args.command == "run":
            if args.target == "game":
                rows, summary = run_game(cfg)
                cols = ["seed", "trial", "payoff", "f_empty"]
            else:
                rows, summary = run_planner(args.target, cfg)
                cols = RUN_COLUMNS
            out = args.out or f"run_{args.target}.csv"
            buf = io.StringIO()
            write_csv(rows, cols, buf)
            if out == "-":
                # keep stdout pure CSV
                sys.stdout.write(buf.getvalue())
                sys.stderr.write(dump_json(summary))
                if args.json_out:
                    Path(args.json_out).write_text(dump_json(summary))
            else:
                Path(out).write_text(buf.getvalue())
                _emit_json(summary, args)
                timing = {"wall_seconds": time.perf_counter() - t0, "workers": workers()}
                Path(out).with_suffix(".timing.json").write_text(dump_json(timing))
            return 0
        rows = dump_hardmdp(cfg)
        buf = io.StringIO()
        write_csv(rows, DUMP_COLUMNS, buf)
        if cfg["out"] == "-":
            sys.stdout.write(buf.getvalue())
        else:
            Path(cfg["out"]).write_text(buf.getvalue())
        return 0
    except (UsageError, ValueError, OverflowError) as e:
        sys.stderr.write(f"hardplan: error: {e}\n")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
