"""Command-line interface: validate, split, fit, score, eval, simulate, gof, sweep.

Every flag can also be given in a YAML ``--config`` file keyed by the long flag
name (dashes or underscores); explicit command-line flags win.

Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import artifacts
from .cascades import (CovariateSchema, ParseError, ValidationError, balanced_sample,
                       preprocess, read_jsonl, write_jsonl)
from .evaluation import (COUNT_GRID, TIME_GRID, compute_metrics, feature_matrix,
                         fit_logistic_baseline, sweep_early_detection, sweep_table)
from .inference import SamplerConfig
from .kernels import FAMILIES

log = logging.getLogger("rumorhawkes")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _out(path: str | None, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"{args.command}: missing required option(s): {flags}")


def _load_cascades(path, schema=None, min_size=1):
    return preprocess(read_jsonl(path, schema), min_size=min_size)


# ---- subcommands ------------------------------------------------------------


def cmd_validate(args) -> int:
    _require(args, "input")
    cascades = read_jsonl(args.input)
    kept = preprocess(cascades, min_size=args.min_size)
    sizes = np.array([len(c) for c in cascades]) if cascades else np.zeros(0)
    summary = {
        "n_cascades": len(cascades),
        "n_false": sum(c.label == "false" for c in cascades),
        "n_true": sum(c.label == "true" for c in cascades),
        "n_unlabeled": sum(c.label is None for c in cascades),
        "n_events": int(sizes.sum()),
        "max_size": int(sizes.max()) if len(sizes) else 0,
        "min_size": args.min_size,
        "n_kept": len(kept),
    }
    _out(args.out, _json(summary))
    return EXIT_OK


def cmd_split(args) -> int:
    _require(args, "input", "per_class", "train_out", "test_out")
    cascades = _load_cascades(args.input, min_size=args.min_size)
    train, test = balanced_sample(cascades, args.per_class, args.seed)
    write_jsonl(args.train_out, train)
    write_jsonl(args.test_out, test)
    log.info("wrote %d training and %d test cascades", len(train), len(test))
    return EXIT_OK


def cmd_fit(args) -> int:
    from .mixture import train

    _require(args, "train", "out")
    cascades = _load_cascades(args.train, min_size=args.min_size)
    config = SamplerConfig(args.chains, args.warmup, args.samples, args.target_accept,
                           args.max_leapfrog, args.seed)
    model = train(cascades, config, CovariateSchema(), (args.root_kernel, args.non_root_kernel),
                  args.prior_false, args.mode, standardize=not args.no_standardize)
    out = artifacts.save_model(model, args.out)
    diag = json.loads((out / "diagnostics.json").read_text())
    for lab, d in diag.items():
        log.info("%s: max R-hat %s, min ESS %s, %d divergent", lab, d["max_rhat"], d["min_ess"],
                 d["n_divergent"])
    return EXIT_OK


def _truncation(args) -> dict:
    if args.time is not None and args.count is not None:
        raise UsageError("give at most one of --time and --count")
    return {"time": args.time} if args.time is not None else (
        {"count": args.count} if args.count is not None else {})


def _scores(model, cascades, trunc):
    from .mixture import score_many, score_partial_many

    return score_partial_many(model, cascades, **trunc) if trunc else score_many(model, cascades)


def cmd_score(args) -> int:
    _require(args, "model", "input")
    model = artifacts.load_model(args.model)
    if args.mode:
        model.mode = args.mode
    cascades = read_jsonl(args.input, model.schema)
    scores = _scores(model, cascades, _truncation(args))
    _out(args.out, "".join(json.dumps(s.to_dict()) + "\n" for s in scores))
    return EXIT_OK


def cmd_eval(args) -> int:
    _require(args, "input")
    if not 0 < args.threshold < 1:
        raise UsageError("--threshold must lie in (0, 1)")
    cascades = read_jsonl(args.input)
    labels = {c.id: c.label for c in cascades}
    if args.scores:
        rows = [json.loads(line) for line in Path(args.scores).read_text().splitlines() if line.strip()]
        p = [r["p_false"] for r in rows]
        ids = [r["id"] for r in rows]
    else:
        _require(args, "model")
        model = artifacts.load_model(args.model)
        scores = _scores(model, read_jsonl(args.input, model.schema), _truncation(args))
        p = [s.p_false for s in scores]
        ids = [s.id for s in scores]
    missing = [i for i in ids if labels.get(i) is None]
    if missing:
        raise ValidationError(f"{len(missing)} scored cascade(s) lack a label, e.g. {missing[0]!r}")
    report = {"mixture": compute_metrics(p, [labels[i] for i in ids], args.threshold)}
    if args.baseline_train:
        train = _load_cascades(args.baseline_train, min_size=args.min_size)
        scorer = fit_logistic_baseline(feature_matrix(train), [c.label for c in train],
                                       seed=args.seed)
        by_id = {c.id: c for c in cascades}
        pb = scorer.predict_proba(feature_matrix([by_id[i] for i in ids]))
        report["logistic_baseline"] = compute_metrics(pb, [labels[i] for i in ids],
                                                      args.threshold)
    if args.out:
        Path(args.out).write_text(_json({k: v.to_dict() for k, v in report.items()}))
    for name, r in report.items():
        sys.stdout.write(f"[{name}]\n{r.table()}\n")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .simulate import SimConfig, simulate_many

    _require(args, "out")
    if args.params:
        params = artifacts.component_from_dict(yaml.safe_load(Path(args.params).read_text()))
    elif args.model:
        model = artifacts.load_model(args.model)
        fit = model.fit_false if args.component == "false" else model.fit_true
        params = fit.map_params
    else:
        raise UsageError("simulate: give --params or --model")
    if args.label:
        params = type(params)(params.marks, params.kernels, args.label, params.schema,
                              params.standardizer)
    config = SimConfig(args.horizon, max_events=args.max_events)
    sims = simulate_many(params, config, args.n, seed=args.seed, prefix=args.prefix)
    write_jsonl(args.out, sims, params.schema)
    return EXIT_OK


def cmd_gof(args) -> int:
    from .gof import TEST_NAMES, gof_report, posterior_predictive_check

    _require(args, "model", "input")
    model = artifacts.load_model(args.model)
    cascades = read_jsonl(args.input, model.schema)
    unlabeled = [c.id for c in cascades if c.label is None]
    if unlabeled:
        raise ValidationError(f"gof needs labeled cascades; {unlabeled[0]!r} has no label")
    comp = {"false": model.fit_false.map_params, "true": model.fit_true.map_params}
    report = gof_report(lambda c: comp[c.label], cascades, seed=args.seed)
    result = report.to_dict(levels=(args.level,))
    if args.ppc_sims:
        fits = {"false": model.fit_false, "true": model.fit_true}
        result["posterior_predictive"] = {
            lab: posterior_predictive_check(fits[lab], [c for c in cascades if c.label == lab],
                                            args.ppc_sims, seed=args.seed)
            for lab in fits if any(c.label == lab for c in cascades)}
    if args.out:
        Path(args.out).write_text(_json(result))
    w = max(len(t) for t in TEST_NAMES)
    sys.stdout.write(f"{'test'.ljust(w)}  {'tested':>6}  {'p > ' + format(args.level, 'g'):>9}\n")
    for t in TEST_NAMES:
        sys.stdout.write(f"{t.ljust(w)}  {report.n_tested(t):>6}  "
                         f"{100 * report.pass_fraction(t, args.level):>8.2f}%\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    _require(args, "model", "input")
    model = artifacts.load_model(args.model)
    cascades = read_jsonl(args.input, model.schema)
    refit, cfg = None, None
    if args.refit:
        _require(args, "train")
        refit = _load_cascades(args.train, model.schema, args.min_size)
        cfg = SamplerConfig(args.chains, args.warmup, args.samples, seed=args.seed)
    result = sweep_early_detection(model, cascades, args.times, args.counts, refit, cfg)
    if args.out:
        Path(args.out).write_text(_json(result))
    sys.stdout.write(sweep_table(result) + "\n")
    return EXIT_OK


# ---- parser -----------------------------------------------------------------


def _sampler_flags(p):
    p.add_argument("--chains", type=int, default=2)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--samples", type=int, default=3000, help="post-warmup draws per chain")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rumorhawkes", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="YAML file mapping flag names to values")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = command("validate", cmd_validate, "parse and check a cascade file")
    p.add_argument("--in", dest="input")
    p.add_argument("--min-size", type=int, default=6)
    p.add_argument("--out")

    p = command("split", cmd_split, "balanced train/test split")
    p.add_argument("--in", dest="input")
    p.add_argument("--per-class", type=int)
    p.add_argument("--min-size", type=int, default=6)
    p.add_argument("--train-out")
    p.add_argument("--test-out")

    p = command("fit", cmd_fit, "fit both mixture components")
    p.add_argument("--train")
    p.add_argument("--out")
    _sampler_flags(p)
    p.add_argument("--target-accept", type=float, default=0.8)
    p.add_argument("--max-leapfrog", type=int, default=64)
    p.add_argument("--mode", choices=("mcmc", "map"), default="mcmc")
    p.add_argument("--root-kernel", choices=FAMILIES, default="power_law")
    p.add_argument("--non-root-kernel", choices=FAMILIES, default="weibull")
    p.add_argument("--prior-false", type=float, default=0.5)
    p.add_argument("--min-size", type=int, default=6)
    p.add_argument("--no-standardize", action="store_true")

    p = command("score", cmd_score, "score cascades with a fitted model")
    p.add_argument("--model")
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    p.add_argument("--time", type=float, help="truncate to this many hours")
    p.add_argument("--count", type=int, help="truncate to this many retweets")
    p.add_argument("--mode", choices=("mcmc", "map"))

    p = command("eval", cmd_eval, "classification metrics")
    p.add_argument("--in", dest="input", help="labeled cascades")
    p.add_argument("--scores", help="scores JSONL from `score`")
    p.add_argument("--model")
    p.add_argument("--time", type=float)
    p.add_argument("--count", type=int)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--baseline-train", help="training cascades for the logistic baseline")
    p.add_argument("--min-size", type=int, default=6)
    p.add_argument("--out")

    p = command("simulate", cmd_simulate, "simulate cascades")
    p.add_argument("--params", help="YAML/JSON component parameters")
    p.add_argument("--model")
    p.add_argument("--component", choices=("false", "true"), default="false")
    p.add_argument("--label", choices=("false", "true"))
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--horizon", type=float, default=168.0)
    p.add_argument("--max-events", type=int, default=10_000)
    p.add_argument("--prefix", default="sim")
    p.add_argument("--out")

    p = command("gof", cmd_gof, "super-thinning goodness of fit")
    p.add_argument("--model")
    p.add_argument("--in", dest="input")
    p.add_argument("--level", type=float, default=0.05)
    p.add_argument("--ppc-sims", type=int, default=0)
    p.add_argument("--out")

    p = command("sweep", cmd_sweep, "early-detection AUC sweep")
    p.add_argument("--model")
    p.add_argument("--in", dest="input")
    p.add_argument("--times", type=float, nargs="*", default=list(TIME_GRID))
    p.add_argument("--counts", type=int, nargs="*", default=list(COUNT_GRID))
    p.add_argument("--refit", action="store_true")
    p.add_argument("--train")
    _sampler_flags(p)
    p.add_argument("--min-size", type=int, default=6)
    p.add_argument("--out")
    return parser


def _apply_config(parser, argv, args):
    """Re-parse with config-file values as defaults."""
    cfg = yaml.safe_load(Path(args.config).read_text()) or {}
    if not isinstance(cfg, dict):
        raise UsageError("config file must be a mapping of flag names to values")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    dests = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = {"in": "input"}.get(key, key.replace("-", "_"))
        if dest not in dests or dest in ("config", "help"):
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            args = _apply_config(parser, argv, args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as e:  # --help
        return EXIT_OK if e.code in (0, None) else EXIT_INVALID
    except (OSError, yaml.YAMLError) as e:
        print(f"error: cannot read config: {e}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (ParseError, ValidationError, artifacts.ArtifactError, FileNotFoundError,
            ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:  # noqa: BLE001 - report and map to the runtime exit code
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
