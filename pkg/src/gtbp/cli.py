"""Command-line entry point: ``gtbp <subcommand> [options]``."""

import argparse
import sys

from . import experiments as X
from . import pipeline as PL
from .model import Scenario, derive_rng

DEFAULTS = {
    "n": "1000", "lambda": "0.05", "noise": "none", "design": "abp", "variant": "1",
    "reps": "1", "seed": "0", "out": None, "workers": None,
    "m1_over_n": None, "c": None, "combine_rule": "and_infected",
    "designs": "individual,dorfman2,dorfman3,grid,bp_individual,bp_inf_dorfman,abp",
    "lambdas": "0.005,0.01,0.05,0.1", "noises": "none,moderate,high",
    "m_grid": "0,25,50,75,100,125,150,175,200", "ratio": "0.25", "population": "10000",
    "iterations": "30", "instances": "20", "sweeps": "100000", "stages": "2", "method": "exact",
}
# tiny instances for the enumeration check
COMMAND_DEFAULTS = {"oracle-check": {"n": "8", "lambda": "0.2"}}


class ConfigError(Exception):
    pass


def _add(p, *names):
    """Register value options; defaults live in DEFAULTS so config files can fill gaps."""
    flags = {
        "n": ("--n",), "lambda": ("--lambda",), "noise": ("--noise",), "design": ("--design",),
        "variant": ("--variant",), "reps": ("--reps",), "seed": ("--seed",), "out": ("--out",),
        "workers": ("--workers",), "m1_over_n": ("--m1-over-n",), "c": ("--c",),
        "combine_rule": ("--combine-rule",), "designs": ("--designs",),
        "lambdas": ("--lambdas",), "noises": ("--noises",), "m_grid": ("--m-grid",),
        "ratio": ("--ratio",), "population": ("--population",), "iterations": ("--iterations",),
        "instances": ("--instances",), "sweeps": ("--sweeps",), "stages": ("--stages",),
        "method": ("--method",),
    }
    for name in names:
        p.add_argument(*flags[name], dest=name, default=None)
    p.add_argument("--config", default=None, help="key = value file; flags override it")


def build_parser():
    parser = argparse.ArgumentParser(prog="gtbp", description="Group testing simulations.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = ("n", "lambda", "noise", "seed", "out")
    _add(sub.add_parser("simulate", help="replicated runs of one design"),
         *common, "design", "variant", "reps", "workers", "m1_over_n", "c", "combine_rule")
    _add(sub.add_parser("sweep", help="designs x priors x noise levels"),
         "n", "seed", "out", "reps", "workers", "designs", "lambdas", "noises", "variant",
         "combine_rule")
    _add(sub.add_parser("entropy-curve", help="Bethe entropy against number of tests"),
         *common, "reps", "m_grid")
    _add(sub.add_parser("popdyn", help="population dynamics of BP marginals"),
         "lambda", "noise", "seed", "out", "ratio", "population", "iterations")
    _add(sub.add_parser("oracle-check", help="BP and Glauber against exhaustive enumeration"),
         "n", "lambda", "noise", "seed", "instances", "sweeps")
    _add(sub.add_parser("expect", help="closed-form Dorfman expectations"),
         "n", "lambda", "noise", "stages", "method")
    return parser


def _settings(args):
    cfg = X.read_config(args.config) if args.config else {}
    out = {}
    defaults = {**DEFAULTS, **COMMAND_DEFAULTS.get(args.command, {})}
    for key, default in defaults.items():
        val = getattr(args, key, None)
        out[key] = val if val is not None else cfg.get(key, default)
    return out


def _num(s, key, kind=float):
    try:
        return kind(s[key])
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {s[key]!r}") from None


def _scenario(s):
    try:
        p, q = X.parse_noise(s["noise"])
        return Scenario(float(s["lambda"]), p, q)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _design_name(design, variant):
    if design == "abp":
        return f"abp{variant}"
    return design


def _params(s):
    if s["m1_over_n"] is None:
        if s["c"] is not None:
            raise ConfigError("--c needs --m1-over-n as well")
        return None
    c = _num(s, "c") if s["c"] is not None else None
    r = {"abp2": 2, "abp3": 3}.get(s["_design"], 1)
    try:
        return PL.StagePlanParams(_num(s, "m1_over_n"), c, r, s["combine_rule"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _experiment(s, design, scen, params):
    try:
        return X.ExperimentConfig(_num(s, "n", int), scen, design, params, _num(s, "reps", int),
                                  _num(s, "seed", int), None,
                                  _num(s, "workers", int) if s["workers"] else None)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_simulate(s):
    design = _design_name(s["design"], s["variant"])
    s["_design"] = design
    scen = _scenario(s)
    params = _params(s)
    if params is None and design in ("abp2", "abp3") and s["combine_rule"] != "and_infected":
        params = PL.table_params(design, scen, s["combine_rule"])
    config = _experiment(s, design, scen, params)
    config.out = s["out"]
    res = X.run_experiment(config)
    for rep, err in res.errors:
        print(f"rep {rep} failed: {err}", file=sys.stderr)
    print(X.format_summary([res]), end="")
    return 0


def cmd_sweep(s):
    designs = [_design_name(d.strip(), s["variant"]) for d in s["designs"].split(",")]
    results = []
    for noise in s["noises"].split(","):
        for lam_s in s["lambdas"].split(","):
            scen = _scenario({**s, "noise": noise.strip(), "lambda": lam_s})
            for design in designs:
                params = None
                if design in ("abp2", "abp3"):
                    try:
                        params = PL.table_params(design, scen, s["combine_rule"])
                    except ValueError as exc:
                        print(f"skipped: {exc}", file=sys.stderr)
                        continue
                try:
                    config = _experiment(s, design, scen, params)
                except ConfigError as exc:
                    print(f"skipped: {exc}", file=sys.stderr)
                    continue
                res = X.run_experiment(config)
                for rep, err in res.errors:
                    print(f"{design} lambda={scen.lam} rep {rep} failed: {err}", file=sys.stderr)
                results.append(res)
    rows = [r for res in results for r in res.rows]
    if s["out"]:
        X.write_rows(rows, s["out"])
        X.write_summary(results, X.summary_path(s["out"]))
    print(X.format_summary(results), end="")
    return 0


def cmd_entropy_curve(s):
    scen = _scenario(s)
    try:
        grid = [int(v) for v in s["m_grid"].split(",")]
    except ValueError:
        raise ConfigError(f"bad m grid {s['m_grid']!r}") from None
    try:
        rows = X.entropy_curve(_num(s, "n", int), scen.lam, scen, grid, _num(s, "reps", int),
                               _num(s, "seed", int))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if s["out"]:
        X.write_entropy_curve(rows, s["out"])
    print("m,entropy_mean,entropy_std,reps")
    for m, mean, std, reps in rows:
        print(f"{m},{mean:.10g},{std:.10g},{reps}")
    return 0


def cmd_popdyn(s):
    from .popdyn import PopDynConfig, popdyn_run
    scen = _scenario(s)
    try:
        cfg = PopDynConfig.for_ratio(scen.lam, scen, _num(s, "ratio"),
                                     population=_num(s, "population", int),
                                     iterations=_num(s, "iterations", int))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    res = popdyn_run(cfg, derive_rng(_num(s, "seed", int), "popdyn"))
    if s["out"]:
        res.write_csv(s["out"])
    print("simplified population dynamics")
    print(f"delta={cfg.delta:.6g} gamma={cfg.gamma}")
    print(f"polarised_healthy={res.polarised_healthy:.6g}")
    print(f"polarised_infected={res.polarised_infected:.6g}")
    return 0


def cmd_oracle_check(s):
    from .oracles import oracle_check
    scen = _scenario(s)
    try:
        rows = oracle_check(_num(s, "n", int), scen, _num(s, "instances", int), _num(s, "sweeps", int),
                            _num(s, "seed", int))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print("instance,acyclic,bp_err,glauber_err")
    for i, acyclic, bp_err, gl_err in rows:
        print(f"{i},{int(acyclic)},{bp_err:.3e},{gl_err:.3e}")
    return 0


def cmd_expect(s):
    scen = _scenario(s)
    stages = _num(s, "stages", int)
    try:
        ex = X.dorfman_expectations(_num(s, "n", int), scen.lam, scen, stages, s["method"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    n = _num(s, "n", int)
    print(f"stages={stages} method={s['method']}")
    print(f"tests={ex.tests:.6g} tests_per_n={ex.tests / n:.6g}")
    print(f"fp={ex.fp:.6g} fn={ex.fn:.6g}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate, "sweep": cmd_sweep, "entropy-curve": cmd_entropy_curve,
    "popdyn": cmd_popdyn, "oracle-check": cmd_oracle_check, "expect": cmd_expect,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        s = _settings(args)
        return COMMANDS[args.command](s)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"gtbp: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
