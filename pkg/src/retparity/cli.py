"""``rpy`` command-line entry point.

Exit codes: 0 success, 2 invalid input, 3 infeasible or unbounded LP,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (AssumptionViolated, DegenerateData, DimensionMismatch, InvalidParameter,
                     NonFiniteValue, NumericalFailure, ParseError, RetParityError, SingularMatrix,
                     ValidationError, WitnessPreconditionViolated)
from .fairlp import check_optimum_parity, solve_fair
from .io import load_pair, load_policy, read_csv, read_json, save_policy, write_csv, write_json
from .lp import LpStatus
from .parity import check_transition_span, disparity_report, parse_witness
from .pca import project_groups
from .report import RunConfig, make_report, run_grid, summarize

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 2, 3, 4


class Infeasible(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _metrics(path: Optional[str], m: int, n: int):
    if path is None:
        return 1.0 - np.eye(m), 1.0 - np.eye(m * n)
    doc = read_json(path)
    return np.asarray(doc["state_metric"], dtype=float), np.asarray(doc["pair_metric"], dtype=float)


def cmd_analyze(args) -> dict:
    started = time.time()
    pair = load_pair(*args.pair, lam=args.lam)
    pi0, pi1 = load_policy(args.policy0), load_policy(args.policy1)
    sm, pm = _metrics(args.metric, pair.num_states, pair.num_actions)
    witness = parse_witness(args.witness, sm, pm)
    rep = disparity_report(pair, pi0, pi1, witness)
    out = _out_dir(args)
    flat = rep.flat()
    write_csv(out / "analyze.csv", list(flat), [flat])
    return make_report("analyze", [*args.pair, args.policy0, args.policy1], rep.to_dict(),
                       started=started)


def cmd_check(args) -> dict:
    started = time.time()
    pair = load_pair(*args.pair, lam=args.lam)
    if args.which == "span":
        res = check_transition_span(pair).to_dict()
    else:
        res = check_optimum_parity(pair, args.epsilon).to_dict()
        res["epsilon"] = args.epsilon
    res["which"] = args.which
    out = _out_dir(args)
    write_csv(out / "check.csv", ["which", "holds"], [{"which": args.which, "holds": res["holds"]}])
    return make_report("check", list(args.pair), res, started=started)


def cmd_optimize(args) -> dict:
    started = time.time()
    pair = load_pair(*args.pair, lam=args.lam)
    sol = solve_fair(pair, args.epsilon)
    out = _out_dir(args)
    res = sol.to_dict()
    res["lambda"] = args.lam
    if sol.status is not LpStatus.OPTIMAL:
        write_json(out / "report.json", make_report("optimize", list(args.pair), res, started=started))
        raise Infeasible(f"fair LP is {sol.status.value}")
    save_policy(sol.pi0, out / "policy0.json")
    save_policy(sol.pi1, out / "policy1.json")
    cols = ["epsilon", "lambda", "objective", "b0", "b1", "return0", "return1", "achieved_disparity"]
    write_csv(out / "optimize.csv", cols, [{k: res[k] for k in cols}])
    return make_report("optimize", list(args.pair), res, started=started)


def cmd_train(args) -> dict:
    started = time.time()
    cfg_path = Path(args.config)
    doc = read_json(cfg_path)
    if args.seeds is not None:
        doc["seeds"] = args.seeds
    rc = RunConfig.from_dict(doc, cfg_path.parent)
    out = _out_dir(args)
    runs = run_grid(rc, out)
    results = {"config": {"trainer": rc.trainer.to_dict(), "env": rc.env,
                          "ratios": [f"{x}:{y}" for x, y in rc.ratios]},
               "summary": summarize(runs)}
    return make_report("train", [cfg_path, *rc.input_files()], results, seeds=rc.seeds,
                       started=started)


def _load_batch(path: str) -> np.ndarray:
    rows = read_csv(path)
    if not rows:
        raise ValidationError(f"{path}: no rows")
    cols = [c for c in rows[0] if c != "group"]
    try:
        return np.array([[float(r[c]) for c in cols] for r in rows])
    except (TypeError, ValueError):
        raise ParseError(f"{path}: non-numeric feature cell") from None


def cmd_pca(args) -> dict:
    started = time.time()
    batches = [_load_batch(p) for p in args.features]
    fit, proj, labels = project_groups(batches, args.components)
    out = _out_dir(args)
    cols = [f"pc{i + 1}" for i in range(args.components)] + ["group"]
    rows = [dict(zip(cols, [*p, int(g)])) for p, g in zip(proj, labels)]
    write_csv(out / "pca.csv", cols, rows)
    res = {"components": fit.components.tolist(), "variances": fit.variances.tolist(),
           "explained_ratio": fit.explained_ratio.tolist(), "points": len(rows)}
    return make_report("pca", list(args.features), res, started=started)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rpy", description="Return-disparity analysis and mitigation")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, pair=True):
        if pair:
            sp.add_argument("--pair", nargs=2, required=True, metavar=("MDP0", "MDP1"))
            sp.add_argument("--lambda", dest="lam", type=float, default=0.5)
        sp.add_argument("--out", default="rpy-out")

    a = sub.add_parser("analyze", help="exact disparity and decomposition bounds")
    common(a)
    a.add_argument("--policy0", required=True)
    a.add_argument("--policy1", required=True)
    a.add_argument("--witness", default="sup", help="sup | lipschitz:L")
    a.add_argument("--metric", help="JSON with state_metric and pair_metric (default: discrete)")
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("check", help="feasibility conditions for return parity")
    common(c)
    c.add_argument("--which", choices=("span", "optimum"), required=True)
    c.add_argument("--epsilon", type=float, default=0.0)
    c.set_defaults(func=cmd_check)

    o = sub.add_parser("optimize", help="fair occupancy LP")
    common(o)
    o.add_argument("--epsilon", type=float, required=True)
    o.set_defaults(func=cmd_optimize)

    t = sub.add_parser("train", help="double-DQN with distributional alignment")
    common(t, pair=False)
    t.add_argument("--config", required=True)
    t.add_argument("--seeds", type=lambda s: [int(x) for x in s.split(",")],
                   help="comma-separated seeds, overrides the config")
    t.set_defaults(func=cmd_train)

    q = sub.add_parser("pca", help="project feature batches onto principal components")
    common(q, pair=False)
    q.add_argument("--features", nargs="+", required=True, help="one CSV per group")
    q.add_argument("--components", type=int, default=2)
    q.set_defaults(func=cmd_pca)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report = args.func(args)
    except Infeasible as e:
        print(f"rpy: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericalFailure, SingularMatrix, NonFiniteValue) as e:
        print(f"rpy: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except AssumptionViolated as e:
        print(f"rpy: assumption violated ({e.assumption}): {e.detail}", file=sys.stderr)
        return EXIT_INVALID
    except (RetParityError, OSError, KeyError) as e:
        print(f"rpy: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INVALID
    write_json(Path(args.out) / "report.json", report)
    print(Path(args.out) / "report.json")
    return EXIT_OK
