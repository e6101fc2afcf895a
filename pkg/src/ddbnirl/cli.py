"""Command-line entry point: ``ddbnirl <subcommand> ...``.

Exit codes: 0 success, 1 invalid input, 2 runtime failure.
"""

import argparse
import functools
import logging
import os
import sys

import numpy as np

from . import bench
from . import io as fio
from .ddcrp import ScoreConfig
from .likelihood import DEFAULT_BETA, MODES, NORMALIZED, SubgoalPrior, build_cache, prior_from_dict
from .mdp import load_mdp, save_mdp
from .prediction import (OPTIMAL, SOFTMAX, bnirl_predictive, entropy_map, map_policy,
                         predictive_distribution, report_subgoals)
from .samplers import (BNIRL, DDBNIRL_S, DDBNIRL_T, InferenceConfig, infer_bnirl,
                       infer_ddbnirl_s, infer_ddbnirl_t)

log = logging.getLogger("ddbnirl")

SCENARIOS = ("random-mdp", "gridworld", "three-leg", "three-phase")
CRITERIA = bench.ACQUISITIONS + ("random",)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise fio.ValidationError(f"{self.prog}: {message}")


def _inference_flags(p, sweeps):
    g = p.add_argument_group("sampler")
    g.add_argument("--sweeps", type=int, default=sweeps)
    g.add_argument("--burn-in", type=int, default=None, help="default: a quarter of --sweeps")
    g.add_argument("--thin", type=int, default=5)
    g.add_argument("--t0", type=float, default=1.0, help="initial annealing temperature")
    g.add_argument("--t-min", type=float, default=0.05, help="final annealing temperature")
    g.add_argument("--no-cold-chain", action="store_true",
                   help="skip the companion chain at temperature 1")
    g.add_argument("--kappa", type=float, default=0.05, help="score floor")
    g.add_argument("--scale", type=float, default=None,
                   help="score decay length (default: median pairwise distance)")
    g.add_argument("--self-link", type=float, default=1.0, help="self-link weight nu")
    g.add_argument("--alpha", type=float, default=1.0, help="CRP concentration (BNIRL)")


def _likelihood_flags(p):
    p.add_argument("--mode", choices=MODES, default=NORMALIZED)
    p.add_argument("--beta", type=float, default=DEFAULT_BETA)


def build_parser():
    parser = _Parser(prog="ddbnirl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic MDP and expert demonstrations")
    p.add_argument("--scenario", choices=SCENARIOS, default="random-mdp")
    p.add_argument("--nr", type=int, default=10, help="number of rewarded states")
    p.add_argument("--n-trajectories", type=int, default=10)
    p.add_argument("--success-prob", type=float, default=0.7, help="grid move success rate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")

    for name, model in (("infer-s", DDBNIRL_S), ("infer-t", DDBNIRL_T), ("infer-bnirl", BNIRL)):
        p = sub.add_parser(name, help=f"sample the {model} posterior")
        p.set_defaults(model=model)
        p.add_argument("--mdp", required=True)
        p.add_argument("--demos", required=True)
        p.add_argument("--prior", help="subgoal prior JSON {support, log_weights}; "
                       "overrides --prior-scope")
        p.add_argument("--prior-scope", choices=("visited", "all"), default="visited",
                       help="uniform prior over the visited states or over all states")
        _likelihood_flags(p)
        _inference_flags(p, 2000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="bundle path (default <output dir>/bundle-<model>.json)")
        p.add_argument("--cache-dir", help="reuse planning results across runs")

    p = sub.add_parser("predict", help="posterior predictive policy, entropy map and subgoals")
    p.add_argument("--bundle")
    p.add_argument("--mdp", required=True)
    p.add_argument("--demos", required=True)
    p.add_argument("--policy-mode", choices=(SOFTMAX, OPTIMAL), default=SOFTMAX)
    p.add_argument("--out", help="output directory")

    for name in ("bench-random-mdp", "bench-gridworld"):
        p = sub.add_parser(name, help="value loss of ddBNIRL-S, BNIRL-EXT and BNIRL")
        p.add_argument("--nr", type=int, choices=(1, 10, 50, 100), default=10)
        p.add_argument("--runs", type=int, default=100)
        p.add_argument("--n-trajectories", default="10",
                       help="comma-separated trajectory counts (10 records each)")
        if name == "bench-gridworld":
            p.add_argument("--success-prob", type=float, default=0.7)
        _likelihood_flags(p)
        _inference_flags(p, 300)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("active-learn", help="uncertainty sampling versus random queries")
    p.add_argument("--criterion", choices=CRITERIA, required=True)
    p.add_argument("--nr", type=int, default=1)
    p.add_argument("--runs", type=int, default=200)
    p.add_argument("--budget", type=int, default=30)
    _likelihood_flags(p)
    _inference_flags(p, 500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="output directory")
    return parser


# -- helpers ----------------------------------------------------------------

def _inference_config(args, seed):
    burn = args.sweeps // 4 if args.burn_in is None else args.burn_in
    score = ScoreConfig(args.scale, args.kappa, args.self_link)
    return InferenceConfig(sweeps=args.sweeps, burn_in=burn, thin=args.thin, t0=args.t0,
                           t_min=args.t_min, run_cold_chain=not args.no_cold_chain, seed=seed,
                           score=score, crp_alpha=args.alpha)


def _validated(fn, *a):
    """Run an input-building call, reporting bad values as validation errors."""
    try:
        return fn(*a)
    except FileNotFoundError as exc:
        raise fio.ValidationError(f"no such file: {exc.filename}") from None
    except (ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, fio.ValidationError):
            raise
        raise fio.ValidationError(str(exc)) from None


def _out_dir(args):
    path = fio.output_dir(args.out)
    os.makedirs(path, exist_ok=True)
    return path


def _load_prior(path, n_states, scope="all", demos=None):
    if path is None:
        if scope == "visited":
            prior = SubgoalPrior.uniform(demos.visited_states())
        else:
            prior = SubgoalPrior.all_states(n_states)
        return prior, prior.to_dict()
    data = fio.read_json(path)
    prior = _validated(prior_from_dict, data)
    if prior.support.max() >= n_states:
        raise fio.ValidationError("prior support lies outside the state set")
    return prior, prior.to_dict()


# -- subcommands --------------------------------------------------------------

def cmd_generate(args):
    rng = np.random.default_rng(args.seed)
    out = _out_dir(args)
    config = {"command": "generate", "scenario": args.scenario, "nr": args.nr,
              "n_trajectories": args.n_trajectories, "success_prob": args.success_prob}
    truth = {}
    if args.scenario in ("random-mdp", "gridworld"):
        if args.scenario == "random-mdp":
            mdp, reward, pi_star = bench.make_random_mdp(
                bench.RandomMdpSpec(n_reward_states=args.nr), rng)
        else:
            mdp, reward, pi_star = _validated(bench.reward_gridworld, args.nr, rng,
                                              args.success_prob)
        expert = bench.ExpertSpec(n_trajectories=args.n_trajectories)
        demos, actions = bench.simulate_expert(mdp, pi_star, expert, rng)
        truth.update(reward=reward.tolist(), optimal_policy=pi_star.tolist())
    else:
        task = bench.three_leg_task if args.scenario == "three-leg" else bench.three_phase_task
        sc = task(rng, success_prob=args.success_prob)
        mdp, demos, actions = sc.mdp, sc.demos, sc.true_actions
        truth.update(phases=sc.phases.tolist(), targets=[int(t) for t in sc.targets])
    truth["actions"] = actions.tolist()
    header = fio.provenance(config, args.seed)
    mdp_path = os.path.join(out, "mdp.json")
    save_mdp(mdp, mdp_path)
    data = fio.read_json(mdp_path)
    data["provenance"] = header
    fio.write_json(mdp_path, data)
    fio.save_demos(demos, os.path.join(out, "demos.csv"))
    fio.write_json(os.path.join(out, "truth.json"), {"provenance": header, **truth})
    print(out)
    return 0


def cmd_infer(args):
    mdp = _validated(load_mdp, args.mdp)
    demos = fio.load_demos(args.demos, mdp)
    prior, prior_dict = _load_prior(args.prior, mdp.n_states, args.prior_scope, demos)
    config = _validated(_inference_config, args, args.seed)
    if args.beta < 0:
        raise fio.ValidationError("--beta must be nonnegative")
    run_config = {"command": args.command, "model": args.model, "mode": args.mode,
                  "beta": args.beta, "prior_scope": None if args.prior else args.prior_scope,
                  "prior": prior_dict, "inference": config.to_dict()}
    inputs = {"mdp": args.mdp, "demos": args.demos}
    if args.prior:
        inputs["prior"] = args.prior
    cache = build_cache(mdp, prior, args.beta, args.mode, cache_dir=args.cache_dir,
                        hitting=args.model != BNIRL)
    if args.model == DDBNIRL_S:
        bundle = infer_ddbnirl_s(mdp, demos, cache, prior, config)
    elif args.model == DDBNIRL_T:
        bundle = infer_ddbnirl_t(mdp, demos, cache, prior, config)
    else:
        bundle = infer_bnirl(mdp, demos, cache, prior, config)
    path = args.out or os.path.join(fio.output_dir(), f"bundle-{args.model}.json")
    if os.path.dirname(path):
        os.makedirs(os.path.dirname(path), exist_ok=True)
    fio.save_bundle(bundle, path, fio.provenance(run_config, args.seed, inputs))
    print(path)
    return 0


def cmd_predict(args):
    if not args.bundle:
        raise fio.ValidationError("predict needs --bundle (the output of an infer-* run)")
    bundle, header = fio.load_bundle(args.bundle)
    mdp = _validated(load_mdp, args.mdp)
    demos = fio.load_demos(args.demos, mdp)
    recorded = header.get("inputs", {})
    for name, path in (("mdp", args.mdp), ("demos", args.demos)):
        if name in recorded and recorded[name] != fio.file_digest(path):
            raise fio.ValidationError(f"--{name} differs from the file the bundle was fitted to")
    cfg = header["config"]
    prior = (SubgoalPrior.all_states(mdp.n_states) if cfg.get("prior") is None
             else _validated(prior_from_dict, cfg["prior"]))
    cache = build_cache(mdp, prior, cfg["beta"], cfg["mode"], hitting=bundle.model == DDBNIRL_T)
    if bundle.model == BNIRL:
        pred = bnirl_predictive(bundle, cache, prior, demos, args.policy_mode)
    else:
        pred = predictive_distribution(bundle, cache, prior, demos, args.policy_mode, mdp=mdp)
    out = _out_dir(args)
    run_config = {"command": "predict", "policy_mode": args.policy_mode, "bundle_config": cfg}
    meta = fio.provenance(run_config, header.get("seed"),
                          {"bundle": args.bundle, "mdp": args.mdp, "demos": args.demos})
    fio.write_predictive(os.path.join(out, "predictive.csv"), meta, pred.probs,
                         map_policy(pred), entropy_map(pred))
    reports = report_subgoals(bundle, cache, prior, demos)
    fio.write_subgoals(os.path.join(out, "subgoals.csv"), meta, reports, prior.support)
    print(out)
    return 0


def _bench_run(run_id, rng, kind, nr, counts, config, success_prob=None):
    """All trajectory counts of one Monte Carlo run share the environment."""
    if kind == "random-mdp":
        mdp, reward, pi_star = bench.make_random_mdp(bench.RandomMdpSpec(n_reward_states=nr), rng)
    else:
        mdp, reward, pi_star = bench.reward_gridworld(nr, rng, success_prob)
    prior = SubgoalPrior.all_states(mdp.n_states)
    cache = build_cache(mdp, prior, config.beta, config.mode)
    rows = []
    for n in counts:
        expert = bench.ExpertSpec(n_trajectories=n)
        demos, _ = bench.simulate_expert(mdp, pi_star, expert, rng)
        seed = int(rng.integers(2**63))
        losses = bench.method_losses(mdp, reward, pi_star, demos, config, seed, cache)
        rows.extend((run_id, m, len(demos), losses[m]) for m in bench.METHODS)
    return rows


def _active_run(run_id, rng, nr, criterion, config):
    mdp, reward, pi_star = bench.make_random_mdp(bench.RandomMdpSpec(n_reward_states=nr), rng)
    losses = bench.active_learning_run(mdp, reward, pi_star, bench.ExpertSpec(), criterion,
                                       config, rng)
    return [(run_id, criterion, q + 1, float(v)) for q, v in enumerate(losses)]


def _write_series(args, stem, rows, run_config):
    out = _out_dir(args)
    header = fio.provenance(run_config, args.seed)
    columns = ["run_id", "method", "n_demos_or_queries", "loss"]
    fio.write_csv(os.path.join(out, f"{stem}-runs.csv"), header, columns, rows)
    groups = {}
    for _, method, n, loss in rows:
        groups.setdefault((method, n), []).append(loss)
    agg = []
    for (method, n), values in sorted(groups.items()):
        s = bench.summarize(values)
        agg.append([method, n, s["mean"], s["std"], s["stderr"], len(values)])
    fio.write_csv(os.path.join(out, f"{stem}-aggregate.csv"), header,
                  ["method", "n_demos_or_queries", "mean", "std", "stderr", "n_runs"], agg)
    print(out)
    return 0


def _counts(text):
    try:
        counts = [int(c) for c in text.split(",") if c.strip()]
    except ValueError:
        raise fio.ValidationError(f"--n-trajectories must be integers, got {text!r}") from None
    if not counts or min(counts) < 1:
        raise fio.ValidationError("--n-trajectories needs positive counts")
    return counts


def cmd_bench(args):
    kind = "random-mdp" if args.command == "bench-random-mdp" else "gridworld"
    counts = _counts(args.n_trajectories)
    if args.runs < 1:
        raise fio.ValidationError("--runs must be positive")
    inf = _validated(_inference_config, args, 0)
    config = bench.BenchConfig(n_reward_states=args.nr, inference=inf, beta=args.beta,
                               mode=args.mode)
    success = getattr(args, "success_prob", None)
    fn = functools.partial(_bench_run, kind=kind, nr=args.nr, counts=counts, config=config,
                           success_prob=success)
    results = bench.run_trials(fn, args.runs, args.seed, args.jobs)
    rows = [r for run in results for r in run]
    run_config = {"command": args.command, "nr": args.nr, "runs": args.runs,
                  "n_trajectories": counts, "mode": args.mode, "beta": args.beta,
                  "success_prob": success, "inference": inf.to_dict()}
    return _write_series(args, f"{args.command}-nr{args.nr}", rows, run_config)


def cmd_active(args):
    if args.runs < 1 or args.budget < 1:
        raise fio.ValidationError("--runs and --budget must be positive")
    inf = _validated(_inference_config, args, 0)
    config = bench.ActiveConfig(budget=args.budget, inference=inf, beta=args.beta, mode=args.mode)
    fn = functools.partial(_active_run, nr=args.nr, criterion=args.criterion, config=config)
    results = bench.run_trials(fn, args.runs, args.seed, args.jobs)
    rows = [r for run in results for r in run]
    run_config = {"command": "active-learn", "criterion": args.criterion, "nr": args.nr,
                  "runs": args.runs, "budget": args.budget, "mode": args.mode,
                  "beta": args.beta, "inference": inf.to_dict()}
    return _write_series(args, f"active-learn-{args.criterion}", rows, run_config)


COMMANDS = {
    "generate": cmd_generate,
    "infer-s": cmd_infer,
    "infer-t": cmd_infer,
    "infer-bnirl": cmd_infer,
    "predict": cmd_predict,
    "bench-random-mdp": cmd_bench,
    "bench-gridworld": cmd_bench,
    "active-learn": cmd_active,
}


def run(argv=None):
    """Parse ``argv`` and dispatch; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except fio.ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except fio.ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report, do not crash with a trace
        log.debug("runtime failure", exc_info=True)
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
