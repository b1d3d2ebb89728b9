"""Command line entry point: validate / analyze / solve / mces / verify / gen.

All reports are JSON. Exit status: 0 success, 1 a verification check failed,
2 usage, validation or budget error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from .analysis import (
    DEFAULT_ENUM_BUDGET,
    ETA_STAR,
    Overrides,
    exact_policy_iteration,
    schedules,
    value_iteration,
)
from .generators import FAMILIES, GeneratorParams, generate
from .mces import DEFAULT_STEP_BUDGET, MCESConfig, check_step_budget, run_mces
from .mdp import MdpError, Policy, load_mdp, require_valid, save_mdp, validate
from .verify import (
    ETA_GRID,
    brute_force_optimal,
    check_lemma1,
    check_lemma2,
    check_lemma3,
    check_oracles,
    check_tail_histogram,
    check_theorem1,
    check_theorem2,
    check_w_bound,
)

log = logging.getLogger("mces_ssp")

DETERMINISTIC_CHECKS = ("lemma1", "lemma2", "w_bound", "theorem2", "oracle")
STATISTICAL_CHECKS = ("lemma3", "theorem1", "tails")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def _emit(doc, args):
    text = json.dumps(_jsonable(doc), indent=2) + "\n"
    if getattr(args, "output", None):
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _envelope(args, result, config):
    doc = {"command": args.command, "version": __version__, "config": config, "result": result}
    if not args.no_timestamp:
        doc["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    return doc


def _overrides(args):
    return Overrides(delta_min=args.gap, delta_star=args.gap_star, k=args.k)


def _seed(args):
    if args.seed is not None:
        return args.seed
    return int(os.environ.get("MCES_SEED", "0"))


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("MCES_THREADS")
    return int(env) if env else None


def _parse_policy(text, spec):
    names = [t.strip() for t in text.split(",")]
    if len(names) != spec.n_states:
        raise MdpError(f"policy needs {spec.n_states} actions, got {len(names)}")
    out = []
    for n in names:
        if n in spec.action_names:
            out.append(spec.action_names.index(n))
        else:
            out.append(int(n))
    pi = Policy(out)
    pi.check(spec)
    return pi


# -- subcommands -------------------------------------------------------------------


def cmd_validate(args):
    spec = load_mdp(args.mdp)
    report = validate(spec)
    _emit(_envelope(args, report.to_dict(), {"mdp": args.mdp}), args)
    return 0 if report.ok else 2


def cmd_analyze(args):
    spec = load_mdp(args.mdp)
    sched = schedules(spec, args.eta, args.delta, _overrides(args), args.budget)
    config = {"mdp": args.mdp, "eta": args.eta, "delta": args.delta, "budget": args.budget,
              "overrides": _overrides(args).to_dict()}
    _emit(_envelope(args, sched.to_dict(), config), args)
    return 0


def cmd_solve(args):
    spec = load_mdp(args.mdp)
    require_valid(spec)
    if args.method == "pi":
        res = exact_policy_iteration(spec)
        result = {"v_star": res.value, "policy": res.final.names(spec), "improvement_steps": res.steps}
    elif args.method == "vi":
        v, iters = value_iteration(spec, args.tol, args.max_iter)
        result = {"v_star": v, "iterations": iters}
    else:
        bf = brute_force_optimal(spec, args.budget)
        result = {"v_star": bf.v_star, "q_star": bf.q_star,
                  "optimal_policies": [Policy(p).names(spec) for p in sorted(bf.optimal)]}
    config = {"mdp": args.mdp, "method": args.method}
    _emit(_envelope(args, result, config), args)
    return 0


def cmd_mces(args):
    spec = load_mdp(args.mdp)
    require_valid(spec)
    seed = _seed(args)
    sched = None
    if args.L is None or args.N is None:
        sched = schedules(spec, ETA_STAR, args.delta, _overrides(args), args.budget)
    L = args.L if args.L is not None else sched.L_star
    N = args.N if args.N is not None else sched.N_delta
    cost = check_step_budget(spec, L, N, args.step_budget)
    config = MCESConfig(L=L, N=N, seed=seed, first_visit=args.first_visit,
                        keep_history=args.keep_history, schedule=sched)
    run = run_mces(spec, config, threads=_threads(args))
    resolved = {"mdp": args.mdp, "delta": args.delta, "overrides": _overrides(args).to_dict(),
                "step_budget": args.step_budget, "estimated_steps": cost, **config.to_dict()}
    result = run.to_dict()
    result["final_policy_names"] = run.final_policy.names(spec)
    _emit(_envelope(args, result, resolved), args)
    return 0


def cmd_verify(args):
    spec = load_mdp(args.mdp)
    require_valid(spec)
    seed = _seed(args)
    threads = _threads(args)
    names = args.check or list(DETERMINISTIC_CHECKS)
    etas = [args.eta] if args.eta is not None else list(ETA_GRID)
    results = []
    for name in names:
        if name == "lemma1":
            results += [check_lemma1(spec, e, args.budget) for e in etas]
        elif name == "lemma2":
            results += [check_lemma2(spec, e, args.budget, args.horizon) for e in etas]
        elif name == "w_bound":
            results.append(check_w_bound(spec, None if args.eta is None else [args.eta]))
        elif name == "theorem2":
            results.append(check_theorem2(spec, min(args.budget, 10**4), args.starts, seed))
        elif name == "oracle":
            results.append(check_oracles(spec, min(args.budget, 10**4)))
        elif name == "theorem1":
            results.append(check_theorem1(spec, args.delta, args.trials, seed, args.step_budget,
                                          min(args.budget, 10**4), args.first_visit, threads,
                                          _overrides(args)))
        elif name in ("lemma3", "tails"):
            pi = _parse_policy(args.policy, spec) if args.policy else exact_policy_iteration(spec).final
            if name == "tails":
                results.append(check_tail_histogram(spec, pi, args.N or 10**5, 20, seed))
                continue
            sched = schedules(spec, ETA_STAR, args.delta, _overrides(args), args.budget)
            n = args.N or sched.N_delta
            t0 = args.t0 if args.t0 is not None else sched.T0
            results.append(check_lemma3(spec, pi, n, t0, args.trials, seed, sched.delta_min,
                                        threads=threads))
    invocation = {"mdp": args.mdp, "checks": names, "eta": args.eta, "delta": args.delta,
                  "seed": seed, "trials": args.trials, "budget": args.budget}
    out = []
    for r in results:
        d = r.to_dict()
        d["invocation"] = invocation
        if not args.no_timestamp:
            d["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
        out.append(d)
    _emit(out, args)
    return 0 if all(r.passed for r in results) else 1


def cmd_gen(args):
    params = GeneratorParams(args.family, args.S, args.A, args.alpha, args.layers, _seed(args))
    spec = generate(params)
    save_mdp(spec, args.output)
    return 0


# -- parser -------------------------------------------------------------------------


def _add_common(p, output=True):
    if output:
        p.add_argument("-o", "--output", help="write the JSON report here instead of stdout")
    p.add_argument("--no-timestamp", action="store_true", help="omit timestamps (byte-stable reports)")


def _add_overrides(p):
    p.add_argument("--gap", type=float, help="known minimum gap over all policies")
    p.add_argument("--gap-star", type=float, help="known gap of an optimal policy")
    p.add_argument("--k", type=int, help="known K for eta = 1 - 1/e")
    p.add_argument("--budget", type=int, default=DEFAULT_ENUM_BUDGET,
                   help="maximum number of policies to enumerate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mces-ssp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check stochasticity, reward range and properness")
    p.add_argument("mdp")
    _add_common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("analyze", help="emit the schedule report")
    p.add_argument("mdp")
    p.add_argument("--eta", type=float, default=ETA_STAR)
    p.add_argument("--delta", type=float, default=0.1, help="failure probability")
    _add_overrides(p)
    _add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("solve", help="optimal values and policy")
    p.add_argument("mdp")
    p.add_argument("--method", choices=("pi", "vi", "brute"), default="pi")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=100_000)
    p.add_argument("--budget", type=int, default=DEFAULT_ENUM_BUDGET)
    _add_common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("mces", help="run Monte Carlo Exploring Starts")
    p.add_argument("mdp")
    p.add_argument("--delta", type=float, default=0.1)
    _add_overrides(p)
    p.add_argument("--L", type=int, help="improvement steps (default: derived)")
    p.add_argument("--N", type=int, help="episodes per pair per step (default: derived)")
    p.add_argument("--seed", type=int)
    p.add_argument("--first-visit", action="store_true")
    p.add_argument("--keep-history", action="store_true", help="store q estimates per iteration")
    p.add_argument("--threads", type=int)
    p.add_argument("--step-budget", type=float, default=DEFAULT_STEP_BUDGET)
    _add_common(p)
    p.set_defaults(func=cmd_mces)

    p = sub.add_parser("verify", help="run named checks, print a JSON array of results")
    p.add_argument("mdp")
    p.add_argument("--check", action="append",
                   choices=DETERMINISTIC_CHECKS + STATISTICAL_CHECKS,
                   help="check to run (repeatable); default: all deterministic checks")
    p.add_argument("--eta", type=float, help="single eta (default: a grid)")
    p.add_argument("--delta", type=float, default=0.2)
    _add_overrides(p)
    p.add_argument("--horizon", type=int, default=50)
    p.add_argument("--starts", type=int, default=100)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--N", type=int)
    p.add_argument("--t0", type=float)
    p.add_argument("--policy", help="comma separated action names or indices")
    p.add_argument("--seed", type=int)
    p.add_argument("--first-visit", action="store_true")
    p.add_argument("--threads", type=int)
    p.add_argument("--step-budget", type=float, default=DEFAULT_STEP_BUDGET)
    _add_common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen", help="write a generated instance in the MDP file format")
    p.add_argument("family", choices=FAMILIES)
    p.add_argument("--S", type=int, default=3)
    p.add_argument("--A", type=int, default=2)
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MdpError, ValueError, OSError) as exc:
        print(f"mces-ssp {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
