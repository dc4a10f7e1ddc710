"""Command-line front end.

Subcommands: test (main and coarsened CRT), regularity (order, carryover,
fatigue CRTs), amce (baseline regression test), screen (per-variable
interaction screening), simulate (Monte-Carlo studies).  Exit codes: 0
success, 2 validation/config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import secrets
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_coarsening, load_config
from .data import ValidationError, load_dataset
from .engine import EngineError, run_crt
from .glm import ConvergenceError, amce_test
from .hiernet import HierNetConfig
from .randomization import ResamplePlan
from .statistics import StatisticSpec

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

_CLI_STATISTICS = ("hiernet", "hiernet-respondent", "hiernet-unconstrained",
                   "lasso-main", "dicrt")


def _resolve_seed(seed) -> int:
    if seed is None:
        seed = secrets.randbits(48)
        print(f"seed={seed} (generated; pass --seed to reproduce)")
    return int(seed)


def _write_json(payload: dict, path) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def _print_result(res, out_path) -> None:
    frac = res.p_fraction
    print(f"observed_statistic={res.observed_statistic:.10g}")
    print(f"B={res.B} seed={res.master_seed} wall_time={res.wall_time:.2f}s")
    if out_path:
        print(f"result written to {out_path}")
    print(f"p_value={frac.numerator}/{frac.denominator}")


def _load_inputs(args, need_targets: bool):
    schema, scheme = load_config(args.config)
    targets = tuple(t.strip() for t in (args.target or "").split(",") if t.strip())
    if need_targets and not targets:
        raise ValidationError("--target is required")
    ds = load_dataset(args.data, schema, targets=targets,
                      allow_ragged=args.allow_ragged)
    if ds.n_dropped_respondents:
        print(f"note: dropped {ds.n_dropped_respondents} respondents "
              "(ragged tasks or missing covariates)")
    return ds, schema, scheme, targets


def _hiernet_config(args) -> HierNetConfig:
    return HierNetConfig(n_lambda=args.n_lambda, cv_folds=args.cv_folds,
                         tol=args.tol)


def cmd_test(args) -> int:
    ds, schema, scheme, targets = _load_inputs(args, need_targets=True)
    seed = _resolve_seed(args.seed)
    stat_name = args.statistic.replace("-", "_")
    coarsening = None
    options = {}
    if args.include_v:
        options["include_v"] = True
    if args.extra_main:
        options["extra_mains"] = [tuple(p.split(",")) for p in args.extra_main]
    if args.lambda_mode == "fixed":
        if args.lambda_value is None:
            raise ValidationError("--lambda is required with --lambda-mode fixed")
        options["lambda"] = args.lambda_value
    if args.coarsen:
        if not args.group:
            raise ValidationError("--coarsen requires --group")
        coarsening = load_coarsening(args.coarsen, schema, args.group)
        plan_kind = "coarsened"
        if stat_name in ("hiernet", "hiernet_respondent"):
            if stat_name == "hiernet_respondent":
                options["include_v"] = True
            stat_name = "hiernet_coarsened"
        elif stat_name != "lasso_main":
            raise ValidationError(
                "coarsened testing supports the hiernet and lasso-main statistics")
    else:
        plan_kind = "main"
    spec = StatisticSpec(kind=stat_name, targets=targets, options=options)
    plan = ResamplePlan(kind=plan_kind, B=args.B, master_seed=seed)
    res = run_crt(ds, scheme, plan, spec, coarsening=coarsening,
                  hiernet_config=_hiernet_config(args),
                  lambda_mode=args.lambda_mode, workers=args.workers)
    if args.output:
        payload = res.to_json_dict()
        payload["command"] = "test"
        _write_json(payload, args.output)
    _print_result(res, args.output)
    return EXIT_OK


def cmd_regularity(args) -> int:
    ds, schema, scheme, _ = _load_inputs(args, need_targets=False)
    seed = _resolve_seed(args.seed)
    which = args.which
    j = ds.tasks_per_respondent
    if which == "fatigue" and j < 2:
        raise ValidationError("fatigue test requires J >= 2")
    if which == "carryover":
        if j < 2:
            raise ValidationError("carryover test requires J >= 2")
        if j % 2:
            print(f"warning: J={j} is odd; dropping each respondent's final task")
    spec = StatisticSpec(kind=which, options={"include_v": args.include_v})
    plan = ResamplePlan(kind=which, B=args.B, master_seed=seed)
    res = run_crt(ds, scheme, plan, spec,
                  hiernet_config=_hiernet_config(args),
                  lambda_mode=args.lambda_mode, workers=args.workers)
    if args.output:
        payload = res.to_json_dict()
        payload["command"] = f"regularity:{which}"
        _write_json(payload, args.output)
    _print_result(res, args.output)
    return EXIT_OK


def cmd_amce(args) -> int:
    ds, schema, scheme, targets = _load_inputs(args, need_targets=True)
    extra = tuple(t.strip() for t in (args.extra or "").split(",") if t.strip())
    contrast = None
    if args.contrast:
        contrast = {}
        for part in args.contrast.split(","):
            label, w = part.rsplit("=", 1)
            contrast[label.strip()] = float(w)
    res = amce_test(ds, targets[0], extra_terms=extra, cluster=args.cluster,
                    contrast=contrast)
    print("estimates:")
    for name, est in res.estimates.items():
        print(f"  {name}: {est:+.6f} (t-test p={res.t_p_values[name]:.4g})")
    print(f"F={res.f_stat:.4f} on {len(res.target_columns)} constraint(s), "
          f"{res.ols.df} df")
    if args.output:
        _write_json({
            "command": "amce",
            "target": targets[0],
            "estimates": res.estimates,
            "t_p_values": res.t_p_values,
            "f_stat": res.f_stat,
            "p_value": res.p_value,
            "cluster": args.cluster,
            "n_clusters": res.ols.n_clusters,
        }, args.output)
    print(f"p_value={res.p_value:.10g}")
    return EXIT_OK


def cmd_screen(args) -> int:
    import pandas as pd

    ds, schema, scheme, targets = _load_inputs(args, need_targets=True)
    seed = _resolve_seed(args.seed)
    if args.variables:
        variables = [v.strip() for v in args.variables.split(",")]
    else:
        variables = [f for f in ds.factor_names if f not in targets]
        variables += list(ds.covariate_names)
    rows = []
    for i, var in enumerate(variables):
        spec = StatisticSpec(kind="interaction_screen", targets=targets,
                             options={"screen_variable": var})
        plan = ResamplePlan(kind="main", B=args.B, master_seed=seed + i)
        res = run_crt(ds, scheme, plan, spec, workers=args.workers)
        frac = res.p_fraction
        rows.append((var, res.p_value, f"{frac.numerator}/{frac.denominator}",
                     res.observed_statistic))
        print(f"{var}: p={res.p_value:.4g}")
    table = pd.DataFrame(rows, columns=["variable", "p_value", "p_exact",
                                        "observed_statistic"])
    table = table.sort_values("p_value", kind="stable").reset_index(drop=True)
    out = args.output or "screen_results.csv"
    table.to_csv(out, index=False)
    print(f"screening table written to {out}")
    if args.plot:
        from .report import save_screen_figure
        fig_path = str(Path(out).with_suffix(".png"))
        save_screen_figure(table, fig_path)
        print(f"figure written to {fig_path}")
    best = table.iloc[0]
    print(f"p_value={best['p_value']:.10g}")
    return EXIT_OK


_STUDIES = ("power", "power-hetero", "power-unconstrained", "power-dicrt",
            "inflation")


def cmd_simulate(args) -> int:
    from . import simulation as sim
    from .report import save_inflation_figures, save_power_figure

    if args.study not in _STUDIES:
        raise ValidationError(f"unknown study {args.study!r}; pick from {_STUDIES}")
    seed = _resolve_seed(args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    sizes = tuple(args.sizes) if args.sizes else (0.0, 0.025, 0.05, 0.075, 0.1, 0.125)
    hn_cfg = HierNetConfig(n_lambda=args.n_lambda, cv_folds=args.cv_folds)

    if args.study == "inflation":
        pvals, summary = sim.logistic_inflation_study(
            n=args.n or 5000, reps=args.reps, seed=seed, workers=args.workers)
        figures = (lambda pre: save_inflation_figures(pvals, summary, pre))
    else:
        methods = ["amce", "crt_hiernet"]
        if args.study == "power-unconstrained":
            methods.append("crt_hiernet_unconstrained")
        if args.study == "power-dicrt":
            methods.append("crt_dicrt")
        n = args.n or 3000
        if args.study == "power-hetero":
            grids = {}
            for scen, het in (("homogeneous", False), ("heterogeneous", True)):
                g = sim.interaction_size_grid(sizes=[s for s in sizes if s > 0],
                                              n_interactions=args.count, n=n,
                                              heterogeneous=het)
                for gid, dgp in g.items():
                    grids[f"{scen};{gid}"] = dgp
            methods = ["crt_hiernet"]
        else:
            grids = sim.interaction_size_grid(sizes=sizes,
                                              n_interactions=args.count, n=n)
        pvals, summary = sim.power_study(
            grids, methods=methods, reps=args.reps, B=args.B,
            alpha=args.alpha, seed=seed, workers=args.workers,
            hiernet_config=hn_cfg, lambda_mode=args.lambda_mode)
        if args.study == "power-hetero":
            for df in (pvals, summary):
                df.insert(0, "scenario",
                          df["grid_id"].str.split(";").str[0])
        figures = (lambda pre: [save_power_figure(summary, f"{pre}_power.png",
                                                  title=args.study)]
                   or [f"{pre}_power.png"])

    stem = args.study.replace("-", "_")
    p_path = out_dir / f"{stem}_pvalues.csv"
    s_path = out_dir / f"{stem}_summary.csv"
    pvals.to_csv(p_path, index=False)
    summary.to_csv(s_path, index=False)
    print(f"per-rep p-values: {p_path}")
    print(f"summary: {s_path}")
    print(summary.to_string(index=False))
    if args.plot:
        made = figures(str(out_dir / stem))
        for f in made or [f"{out_dir / stem}_power.png"]:
            print(f"figure: {f}")
    print(f"done in {time.time() - t0:.1f}s")
    return EXIT_OK


def _common_run_flags(p: argparse.ArgumentParser, b_default: int = 400):
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--config", required=True, help="schema + randomization TOML")
    p.add_argument("--B", type=int, default=b_default, help="resample count")
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--workers", type=int, default=1, help="parallel workers")
    p.add_argument("--output", default=None, help="result JSON path")
    p.add_argument("--allow-ragged", action="store_true",
                   help="drop respondents with incomplete task counts")
    p.add_argument("--lambda-mode", default="pilot",
                   choices=("pilot", "observed", "per-resample", "fixed"),
                   help="how the HierNet penalty is chosen")
    p.add_argument("--lambda", dest="lambda_value", type=float, default=None,
                   help="penalty for --lambda-mode fixed")
    p.add_argument("--n-lambda", type=int, default=20, help="CV grid size")
    p.add_argument("--cv-folds", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--include-v", action="store_true",
                   help="include respondent covariates in the fit")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="crt",
        description="Assumption-free conditional randomization tests for "
                    "forced-choice conjoint experiments.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="CRT for a factor (optionally coarsened levels)")
    _common_run_flags(p)
    p.add_argument("--target", required=True,
                   help="factor(s) of interest, comma separated")
    p.add_argument("--statistic", default="hiernet", choices=_CLI_STATISTICS)
    p.add_argument("--coarsen", default=None, help="coarsening TOML")
    p.add_argument("--group", default=None, help="tested group identifier")
    p.add_argument("--extra-main", action="append", default=[],
                   metavar="FACTOR_A,FACTOR_B",
                   help="append a product block as extra main effects")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("regularity", help="order / carryover / fatigue CRTs")
    _common_run_flags(p)
    p.add_argument("--which", required=True,
                   choices=("order", "carryover", "fatigue"))
    p.set_defaults(func=cmd_regularity, target=None)

    p = sub.add_parser("amce", help="stacked AMCE regression baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--extra", default=None,
                   help="factors to interact with the target, comma separated")
    p.add_argument("--cluster", default="task", choices=("task", "respondent"))
    p.add_argument("--contrast", default=None,
                   metavar="LEVEL=W,LEVEL=W",
                   help="linear-equality F-test over target levels")
    p.add_argument("--output", default=None)
    p.add_argument("--allow-ragged", action="store_true")
    p.set_defaults(func=cmd_amce)

    p = sub.add_parser("screen", help="per-variable interaction screening CRT")
    _common_run_flags(p, b_default=200)
    p.add_argument("--target", required=True)
    p.add_argument("--variables", default=None,
                   help="subset to screen, comma separated (default: all)")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("simulate", help="Monte-Carlo studies")
    p.add_argument("study", choices=_STUDIES)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--B", type=int, default=100)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--count", type=int, default=6,
                   help="number of nonzero X-Z interactions")
    p.add_argument("--sizes", type=float, nargs="*", default=None)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", default="crt_study")
    p.add_argument("--plot", action="store_true",
                   help="render figures beside the CSVs")
    p.add_argument("--lambda-mode", default="pilot",
                   choices=("pilot", "observed", "per-resample"))
    p.add_argument("--n-lambda", type=int, default=15)
    p.add_argument("--cv-folds", type=int, default=5)
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (EngineError, ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
