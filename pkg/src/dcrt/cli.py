"""Command-line front end.

Subcommands::

    dcrt test DATA MODEL --variable NAME --seed S
    dcrt select DATA [MODEL | --estimate {ledoit,nodewise}] --seed S --out results.json
    dcrt simulate --design-file design.json --methods d0_rf_bh,hrt_bh --reps R --seed S --out report.csv
    dcrt estimate-model DATA --estimator {ledoit,nodewise} --out model.json

Any flag may also come from ``--config FILE``, a text file of ``key = value``
lines; flags given on the command line win. Exit status is 0 on success, 2
for invalid input and 3 for numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from ._errors import NumericalError, ValidationError
from .data import (CovariateModel, estimate_ledoit_wolf, estimate_nodewise_lasso,
                   laws_for, load_csv, load_model_json, save_model_json)
from .select import DEFAULT_M_SINGLE, SelectionConfig, select, test_variable, variable_rng

EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _bool_pair(p, name, default, help):
    g = p.add_mutually_exclusive_group()
    g.add_argument(f"--{name}", dest=name.replace("-", "_"), action="store_true", help=help)
    g.add_argument(f"--no-{name}", dest=name.replace("-", "_"), action="store_false")
    p.set_defaults(**{name.replace("-", "_"): default})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcrt", description="Distilled conditional "
                                     "randomization tests and variable selection.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="file of key = value lines pre-populating flags")
        p.add_argument("--seed", type=int, default=None, help="random seed (required)")

    t = sub.add_parser("test", help="test one variable; prints a JSON outcome")
    t.add_argument("data")
    t.add_argument("model")
    t.add_argument("--variable", required=False)
    t.add_argument("--response", default="y", help="response column label (default y)")
    t.add_argument("--method", choices=["d0", "dI", "ocrt", "hrt", "gcm"], default="d0")
    t.add_argument("--engine", choices=["rf", "resample"], default="rf")
    t.add_argument("--M", type=int, default=DEFAULT_M_SINGLE)
    t.add_argument("--k", type=int, default=None)
    common(t)

    s = sub.add_parser("select", help="test every variable and apply a correction")
    s.add_argument("data")
    s.add_argument("model", nargs="?")
    s.add_argument("--estimate", choices=["ledoit", "nodewise"])
    s.add_argument("--response", default="y")
    s.add_argument("--alpha", type=float, default=0.1)
    s.add_argument("--error-rate", choices=["fdr", "fwer"], default="fwer")
    _bool_pair(s, "screen", True, "screen with the lasso active set (default)")
    _bool_pair(s, "recycle", True, "reuse the full lasso fit where possible (default)")
    s.add_argument("--method", choices=["d0", "dI", "ocrt", "hrt", "gcm"], default="d0")
    s.add_argument("--engine", choices=["rf", "resample"], default="rf")
    s.add_argument("--M", type=int, default=None)
    s.add_argument("--k", type=int, default=None)
    s.add_argument("--jobs", type=int, default=None)
    s.add_argument("--out", default="results.json")
    common(s)

    m = sub.add_parser("simulate", help="run a simulation study")
    m.add_argument("--design-file", required=False)
    m.add_argument("--methods", default="d0_rf_bh")
    m.add_argument("--reps", type=int, default=10)
    m.add_argument("--alpha", type=float, default=0.1)
    m.add_argument("--M", type=int, default=None)
    m.add_argument("--jobs", type=int, default=None)
    m.add_argument("--out", default="report.csv")
    common(m)

    e = sub.add_parser("estimate-model", help="estimate a covariate model from data")
    e.add_argument("data")
    e.add_argument("--estimator", choices=["ledoit", "nodewise"], default="ledoit")
    e.add_argument("--response", default="y")
    e.add_argument("--out", default="model.json")
    common(e)
    return parser


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read config file {path}: {exc}") from None
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{no}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _apply_config(parser, argv, args):
    """Re-parse with config values as defaults so explicit flags win."""
    if not getattr(args, "config", None):
        return args
    cfg = read_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in cfg.items():
        if key not in actions or key in ("help", "config"):
            raise ValidationError(f"config key {key!r} is not a flag of '{args.command}'")
        act = actions[key]
        if isinstance(act, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            value = raw.lower() in ("1", "true", "yes", "on")
        elif act.type is not None:
            try:
                value = act.type(raw)
            except ValueError:
                raise ValidationError(f"config key {key!r}: bad value {raw!r}") from None
        else:
            value = raw
        if act.choices is not None and value not in act.choices:
            raise ValidationError(f"config key {key!r}: {value!r} not in {sorted(act.choices)}")
        defaults[key] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _jobs(args) -> int:
    if args.jobs is not None:
        return max(1, args.jobs)
    env = os.environ.get("DCRT_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"DCRT_JOBS must be an integer, got {env!r}") from None
    return 1


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise ValidationError(f"--{name.replace('_', '-')} is required")


def _load_model(path, p):
    model = load_model_json(path)
    mp = model.p if isinstance(model, CovariateModel) else len(model)
    if mp != p:
        raise ValidationError(f"model {path} has {mp} columns, data has {p}")
    return model


def cmd_test(args) -> int:
    _require(args, "seed", "variable")
    ds = load_csv(args.data, args.response)
    model = _load_model(args.model, ds.p)
    j = ds.index(args.variable)
    laws = laws_for(model, ds.p)
    if args.M < 1:
        raise ValidationError("--M must be positive")
    out = test_variable(ds.y, ds.X, j, laws[j], args.method, args.engine, args.M,
                        variable_rng(args.seed, j), ds.response_kind, k=args.k,
                        fold_seed=args.seed)
    sys.stdout.write(json.dumps(out.labelled(args.variable).to_dict()) + "\n")
    return 0


def cmd_select(args) -> int:
    _require(args, "seed")
    start = time.perf_counter()
    ds = load_csv(args.data, args.response)
    if args.model and args.estimate:
        raise ValidationError("give either a model file or --estimate, not both")
    if args.estimate == "ledoit":
        model = estimate_ledoit_wolf(ds.X)
    elif args.estimate == "nodewise":
        model = estimate_nodewise_lasso(ds.X, rng=args.seed)
    elif args.model:
        model = _load_model(args.model, ds.p)
    else:
        raise ValidationError("a model file or --estimate is required")
    cfg = SelectionConfig(method=args.method, engine=args.engine, alpha=args.alpha,
                          error_rate="fdr_bh" if args.error_rate == "fdr" else "fwer_bonferroni",
                          screening=args.screen, recycling=args.recycle, M=args.M,
                          seed=args.seed, k=args.k, fold_seed=args.seed, n_jobs=_jobs(args))
    res = select(ds, model, cfg)
    Path(args.out).write_text(json.dumps(res.to_dict(), indent=1) + "\n", encoding="utf-8")
    print(f"rejected {len(res.rejected)} of {ds.p} variables "
          f"(tested {len(res.screened)}) in {time.perf_counter() - start:.2f} s -> {args.out}")
    return 0


def cmd_simulate(args) -> int:
    from .sim import SimDesign, method_from_spec, run_experiment

    _require(args, "seed", "design_file")
    try:
        design = SimDesign.from_dict(json.loads(Path(args.design_file).read_text(encoding="utf-8")))
    except OSError as exc:
        raise ValidationError(f"cannot read design file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"design file is not valid JSON: {exc}") from None
    names = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not names:
        raise ValidationError("--methods is empty")
    methods = {name: method_from_spec(name, args.alpha, args.M) for name in names}
    if args.reps < 2:
        raise ValidationError("--reps must be at least 2")
    start = time.perf_counter()
    report = run_experiment(design, methods, args.reps, args.seed, _jobs(args))
    out = Path(args.out)
    out.write_text(report.to_csv(), encoding="utf-8")
    out.with_suffix(".json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(f"{args.reps} repetitions of {len(methods)} methods in "
          f"{time.perf_counter() - start:.2f} s -> {out}, {out.with_suffix('.json')}")
    return 0


def cmd_estimate_model(args) -> int:
    ds = load_csv(args.data, args.response)
    flat = [name for name, col in zip(ds.names, ds.X.T) if np.ptp(col) == 0]
    if flat:
        raise ValidationError(f"constant column(s) {', '.join(map(repr, flat))}: "
                              "the covariate model would be degenerate")
    if args.estimator == "ledoit":
        model = estimate_ledoit_wolf(ds.X)
    else:
        model = estimate_nodewise_lasso(ds.X, rng=args.seed if args.seed is not None else 0)
    save_model_json(model, args.out, ds.names)
    print(f"wrote {args.estimator} model for {ds.p} variables -> {args.out}")
    return 0


COMMANDS = {"test": cmd_test, "select": cmd_select, "simulate": cmd_simulate,
            "estimate-model": cmd_estimate_model}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args = _apply_config(parser, argv, args)
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"dcrt {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"dcrt {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
