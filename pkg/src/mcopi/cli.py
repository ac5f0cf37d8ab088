"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 usage error, 3 runtime
error. Failures print one machine-parsable line on stderr:
`error: <Type>: <message>`. Output files are written atomically
(temp file + rename) and depend only on the arguments and seed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile

import numpy as np

from . import aggregation, experiments, variants
from .errors import McopiError
from .mdp import SSP, load_clusters, load_mdp
from .opi import (FIRST_STATE_ONLY, TIME_BASED, TRAJECTORY_UPDATE, VISIT_BASED,
                  OpiConfig, StepSchedule, estimator_diagnostics, run_opi, stream)
from .solvers import policy_iteration
from .structure import analyze

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3


class ValidationFailure(Exception):
    """Input failed a structural or assumption check."""


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_atomic(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".mcopi-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(path: str | None, text: str):
    if path is None:
        sys.stdout.write(text)
    else:
        _write_atomic(path, text)


def _csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _parse_beta(text: str) -> tuple[str, float, float]:
    try:
        family, _, args = text.partition(":")
        if family == "harmonic":
            return "harmonic", float(args), 1.0
        if family == "power":
            c, r = args.split(",")
            return "power", float(c), float(r)
    except ValueError:
        pass
    raise ValidationFailure(
        f"--beta expects harmonic:C or power:C,R, got {text!r}")


def _add_run_options(sub: argparse.ArgumentParser):
    sub.add_argument("--mode", choices=["trajectory", "first-state"],
                     default="trajectory")
    sub.add_argument("--schedule", choices=["visit", "time"], default="visit")
    sub.add_argument("--beta", default="harmonic:1",
                     help="harmonic:C or power:C,R")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--iters", type=int, default=1000)
    sub.add_argument("--bias", type=float, default=1e-6,
                     help="tolerated truncation bias of discounted tails")
    sub.add_argument("--history", metavar="FILE",
                     help="write thinned value-history CSV here")
    sub.add_argument("--history-stride", type=int, default=10)
    sub.add_argument("--out", metavar="FILE",
                     help="write the run CSV here instead of stdout")


def _config_from(args) -> OpiConfig:
    family, c, rho = _parse_beta(args.beta)
    schedule = StepSchedule(
        mode=VISIT_BASED if args.schedule == "visit" else TIME_BASED,
        family=family, c=c, rho=rho)
    mode = TRAJECTORY_UPDATE if args.mode == "trajectory" else FIRST_STATE_ONLY
    return OpiConfig(update_mode=mode, schedule=schedule, seed=args.seed,
                     epsilon_bias=args.bias, max_iterations=args.iters,
                     record_history=args.history is not None,
                     history_stride=args.history_stride)


def _require_valid_structure(mdp, p):
    report = analyze(mdp, p)
    if not report.all_ok:
        problems = []
        if not report.assumption1_ok:
            problems.append(
                f"states {list(report.unreachable_states)} unreachable from "
                f"the start distribution")
        if not report.assumption2_ok:
            m = report.support_mismatches[0]
            problems.append(
                f"state {m.state} actions {m.action_a}/{m.action_b} have "
                f"different supports {list(m.support_a)} vs {list(m.support_b)}")
        if not report.assumption3_ok:
            problems.append(
                f"transient cycle {list(report.transient_cycle)}")
        raise ValidationFailure("; ".join(problems))
    return report


def _run_csv(args, config: OpiConfig, result_error, iterations_to_optimal) -> str:
    return _csv(
        ["trial", "mode", "schedule", "seed", "iterations_to_optimal",
         "final_sup_error"],
        [(0, args.mode, config.schedule.label(), args.seed,
          iterations_to_optimal, result_error)])


def _history_csv(history_t, history) -> str:
    rows = []
    for idx in range(history.shape[0]):
        for state in range(history.shape[1]):
            rows.append((int(history_t[idx]), state,
                         float(history[idx, state])))
    return _csv(["t", "state", "value"], rows)


def cmd_validate(args) -> int:
    mdp, p = load_mdp(args.mdp)
    report = analyze(mdp, p)
    print(f"states: {mdp.num_states}")
    print(f"problem_class: {mdp.problem_class}")
    print(f"assumption1 (all states reachable): "
          f"{'ok' if report.assumption1_ok else 'VIOLATED'}")
    if not report.assumption1_ok:
        print(f"  unreachable: {list(report.unreachable_states)}")
    print(f"assumption2 (action-independent supports): "
          f"{'ok' if report.assumption2_ok else 'VIOLATED'}")
    for m in report.support_mismatches:
        print(f"  state {m.state}: action {m.action_a} reaches "
              f"{list(m.support_a)}, action {m.action_b} reaches "
              f"{list(m.support_b)}")
    print(f"assumption3 (acyclic transient subgraph): "
          f"{'ok' if report.assumption3_ok else 'VIOLATED'}")
    if not report.assumption3_ok:
        print(f"  cycle: {list(report.transient_cycle)}")
    print(f"transient states (reverse topological): "
          f"{list(report.transient_states)}")
    print(f"recurrent classes: "
          f"{[list(c) for c in report.recurrent_classes]}")
    if mdp.problem_class == SSP:
        ssp = variants.validate_ssp(mdp, report)
        print(f"ssp structure: {'ok' if ssp.ok else 'VIOLATED'}")
        for v in ssp.violations:
            print(f"  {v}")
        if not ssp.ok:
            return EXIT_VALIDATION
    elif mdp.problem_class == "game":
        try:
            variants.load_game(args.mdp)
        except McopiError as exc:
            print(f"game structure: VIOLATED\n  {exc}")
            return EXIT_VALIDATION
        print("game structure: ok")
    return EXIT_OK if report.all_ok else EXIT_VALIDATION


def cmd_solve(args) -> int:
    mdp, p = load_mdp(args.mdp)
    jstar, policy, sets = policy_iteration(mdp)
    doc = {"J": [float(v) for v in jstar],
           "policy": [int(a) for a in policy],
           "optimal_action_sets": [list(s) for s in sets.sets]}
    _emit(args.out, json.dumps(doc) + "\n")
    return EXIT_OK


def cmd_opi(args) -> int:
    mdp, p = load_mdp(args.mdp)
    _require_valid_structure(mdp, p)
    config = _config_from(args)
    jstar, _, oracle = policy_iteration(mdp)
    result = run_opi(mdp, p, config, oracle=oracle, jstar=jstar)
    _emit(args.out, _run_csv(args, config, result.final_sup_error,
                             result.iterations_to_optimal))
    if args.history:
        _write_atomic(args.history,
                      _history_csv(result.history_t, result.history))
    return EXIT_OK


def cmd_ssp(args) -> int:
    mdp, p = load_mdp(args.mdp)
    if mdp.problem_class != SSP:
        raise ValidationFailure(
            f"expected an ssp model, got problem_class "
            f"{mdp.problem_class!r}")
    report = _require_valid_structure(mdp, p)
    validation = variants.validate_ssp(mdp, report)
    if not validation.ok:
        raise ValidationFailure("; ".join(validation.violations))
    config = _config_from(args)
    jstar, _, oracle = policy_iteration(mdp)
    result = variants.run_opi_ssp(mdp, p, config, oracle=oracle, jstar=jstar)
    _emit(args.out, _run_csv(args, config, result.final_sup_error,
                             result.iterations_to_optimal))
    if args.history:
        _write_atomic(args.history,
                      _history_csv(result.history_t, result.history))
    return EXIT_OK


def cmd_game(args) -> int:
    game, p = variants.load_game(args.game)
    config = _config_from(args)
    jstar = variants.solve_game_exact(game)
    _, _, _, oracle = variants.solve_negamin(game)
    outcome = variants.run_opi_game(game, p, config, oracle=oracle,
                                    jstar=jstar)
    rows = [(i, int(game.player[i]), float(outcome.j_prime[i]),
             float(outcome.j_star[i]), float(jstar[i]))
            for i in range(game.mdp.num_states)]
    text = _csv(["state", "player", "j_prime", "j_star", "j_star_exact"], rows)
    _emit(args.out, text)
    if args.history:
        _write_atomic(args.history, _history_csv(
            outcome.run.history_t, outcome.run.history))
    return EXIT_OK


def cmd_aggregate(args) -> int:
    mdp, p = load_mdp(args.mdp)
    report = _require_valid_structure(mdp, p)
    raw = load_clusters(args.clusters)
    clusters = aggregation.build_cluster_map(mdp, raw, report)
    jstar, _, oracle = policy_iteration(mdp)
    validation = aggregation.validate_clusters(
        mdp, clusters, report, jstar,
        check_values=not args.skip_value_check)
    if not validation.ok:
        raise ValidationFailure("; ".join(validation.violations))
    config = _config_from(args)
    result = aggregation.run_opi_aggregated(mdp, p, clusters, config,
                                            oracle=oracle, jstar=jstar)
    rows = []
    for c, members in enumerate(clusters.members):
        ref = float(jstar[members[0]])
        rows.append((c, float(result.theta[c]), ref,
                     abs(float(result.theta[c]) - ref)))
    _emit(args.out, _csv(["cluster", "theta", "jstar_cluster", "abs_error"],
                         rows))
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.graph and args.random:
        raise ValidationFailure("--graph and --random are mutually exclusive")
    if args.graph:
        graph = experiments.load_base_graph(args.graph)
    elif args.random:
        try:
            n, d, seed = (int(x) for x in args.random.split(","))
        except ValueError:
            raise ValidationFailure(
                f"--random expects N,D,SEED, got {args.random!r}") from None
        graph = experiments.random_base_graph(n, d, seed)
    elif args.gen == experiments.EXPERIMENT_1:
        graph = experiments.DEFAULT_EXP1_GRAPH
    else:
        graph = experiments.DEFAULT_EXP2_GRAPH
    spec = experiments.GeneratorSpec(mode=args.gen, graph=graph,
                                     alpha=args.alpha)
    generated = experiments.generate_experiment_mdp(spec)
    config = OpiConfig(schedule=StepSchedule(VISIT_BASED), seed=args.seed,
                       epsilon_bias=args.bias, max_iterations=args.iters)
    result = experiments.run_comparison(generated.mdp, generated.initial,
                                        args.trials, config)
    comparison = _csv(
        ["trial", "mode", "seed", "iterations_to_optimal", "censored"],
        [(o.trial, o.mode, args.seed,
          "" if o.iterations_to_optimal is None else o.iterations_to_optimal,
          int(o.iterations_to_optimal is None))
         for o in result.outcomes])
    histogram = _csv(["mode", "bin_lo", "bin_hi", "count"],
                     experiments.histogram_rows(result))
    _write_atomic(f"{args.out}_comparison.csv", comparison)
    _write_atomic(f"{args.out}_histogram.csv", histogram)
    for summary in result.summaries:
        print(f"{summary.mode}: converged {summary.converged}/"
              f"{summary.converged + summary.censored}, "
              f"mean {_fmt(summary.mean)}, median {_fmt(summary.median)}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    mdp, p = load_mdp(args.mdp)
    _require_valid_structure(mdp, p)
    with open(args.policy, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    policy = doc["policy"] if isinstance(doc, dict) else doc
    policy = np.asarray(policy, dtype=np.int64)
    if policy.shape != (mdp.num_states,):
        raise ValidationFailure(
            f"policy file must list one action per state "
            f"({mdp.num_states} expected)")
    for i, a in enumerate(policy):
        if not 0 <= a < mdp.num_actions(i):
            raise ValidationFailure(
                f"policy action {int(a)} invalid at state {i}")
    table = estimator_diagnostics(mdp, policy, p, args.samples,
                                  rng=stream(args.seed))
    rows = []
    for i in range(mdp.num_states):
        mean = table.mean_estimate[i]
        err = table.stderr[i]
        rows.append((i, float(table.visit_freq[i]), float(table.q_exact[i]),
                     None if np.isnan(mean) else float(mean),
                     None if np.isnan(err) else float(err),
                     float(table.j_exact[i])))
    _emit(args.out, _csv(
        ["state", "visit_freq", "q_exact", "mean_estimate", "stderr",
         "j_exact"], rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcopi",
        description="Monte Carlo optimistic policy iteration toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check structural assumptions")
    s.add_argument("mdp")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("solve", help="exact optimal value and policy")
    s.add_argument("mdp")
    s.add_argument("--out", metavar="FILE")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("opi", help="run optimistic policy iteration")
    s.add_argument("mdp")
    _add_run_options(s)
    s.set_defaults(func=cmd_opi)

    s = sub.add_parser("ssp", help="run OPI on a stochastic shortest path model")
    s.add_argument("mdp")
    _add_run_options(s)
    s.set_defaults(func=cmd_ssp)

    s = sub.add_parser("game", help="run OPI on an alternating zero-sum game")
    s.add_argument("game")
    _add_run_options(s)
    s.set_defaults(func=cmd_game)

    s = sub.add_parser("aggregate", help="run cluster-aggregated OPI")
    s.add_argument("mdp")
    s.add_argument("--clusters", required=True, metavar="FILE")
    s.add_argument("--skip-value-check", action="store_true",
                   help="skip the exact-value agreement check (large models)")
    _add_run_options(s)
    s.set_defaults(func=cmd_aggregate)

    s = sub.add_parser("experiment",
                       help="compare trajectory vs start-state-only updates")
    s.add_argument("--gen", choices=["exp1", "exp2"], required=True)
    s.add_argument("--graph", metavar="FILE")
    s.add_argument("--random", metavar="N,D,SEED")
    s.add_argument("--trials", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--alpha", type=float, default=experiments.DEFAULT_ALPHA)
    s.add_argument("--bias", type=float, default=1e-4)
    s.add_argument("--iters", type=int, default=experiments.DEFAULT_CAP,
                   help="censoring cap per trial")
    s.add_argument("--out", default="experiment",
                   help="prefix for the comparison and histogram CSV files")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("diagnose",
                       help="sampling statistics of the tail-cost estimator")
    s.add_argument("mdp")
    s.add_argument("--policy", required=True, metavar="FILE")
    s.add_argument("--samples", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", metavar="FILE")
    s.set_defaults(func=cmd_diagnose)
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ValidationFailure as exc:
        print(f"error: ValidationFailure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except McopiError as exc:
        kind = type(exc).__name__
        code = EXIT_VALIDATION if kind in (
            "MdpFormatError", "InvariantViolation") else EXIT_RUNTIME
        print(f"error: {kind}: {exc}", file=sys.stderr)
        return code
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
