"""Command-line surface.

Subcommands: check, sweep, export, import, metrics, simulate,
verify-controller. Exit codes: 0 success, 2 formula errors, 3 configuration
or model errors, 4 engine failures, 5 file-format/IO errors.
"""

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .chain import ChainError, build_markov_chain
from .confusion import ClassSizes, ConfusionMatrixError, precision, precision_mean_rate, recall
from .engine import EngineConfig, EngineError, UnsupportedFragment, check, simulate
from .figures import render_sweep_figures
from .formats import (
    ConfigError,
    FormatError,
    export_dot,
    export_explicit,
    export_prism,
    import_explicit,
    load_scenario_json,
    parse_pr,
    resolve_cm,
    scenario_from_dict,
)
from .logic import ParseError
from .scenario import (
    AgentState,
    BUILTIN_FORMULAS,
    ScenarioError,
    ScenarioParams,
    builtin_formula,
    make_controller,
    verify_controller,
)
from .sweep import run_sweep, spec_from_dict, write_csv

EXIT_FORMULA = 2
EXIT_CONFIG = 3
EXIT_ENGINE = 4
EXIT_FORMAT = 5


def _engine_config(args) -> EngineConfig:
    return EngineConfig(
        tolerance=getattr(args, "tol", 1e-12),
        samples=getattr(args, "samples", 100_000),
        seed=getattr(args, "seed", 0),
        horizon=getattr(args, "horizon", None),
    )


def _load_scenario(args):
    payload = load_scenario_json(args.scenario)
    if getattr(args, "semantics", None):
        payload["stop_semantics"] = args.semantics
    params, v0, env, semantics = scenario_from_dict(payload)
    if env is None:
        raise ConfigError(f"{args.scenario}: scenario needs an 'env' entry for this command")
    return params, v0, env, semantics


def _load_matrix(args):
    if getattr(args, "pr", None):
        from .confusion import from_precision_recall

        p, r = parse_pr(args.pr)
        return from_precision_recall(p, r), f"pr({p:g},{r:g})"
    source = getattr(args, "cm", None) or "cm1"
    return resolve_cm(source)


def _resolve_formula_text(text: str, params: ScenarioParams) -> str:
    if text in BUILTIN_FORMULAS:
        return builtin_formula(text, params)
    return text


def _build_chain(args):
    params, v0, env, semantics = _load_scenario(args)
    cm, cm_id = _load_matrix(args)
    controller = make_controller(params, semantics)
    chain = build_markov_chain(params, controller, cm, env, AgentState(1, v0), semantics)
    return params, chain, cm_id


def cmd_check(args) -> int:
    params, chain, cm_id = _build_chain(args)
    formula = _resolve_formula_text(args.formula, params)
    cfg = _engine_config(args)
    result = check(chain, formula, 0, cfg, args.engine)
    if args.json:
        print(json.dumps({
            "probability": result.probability,
            "engine": result.engine,
            "residual": result.residual,
            "iterations": result.iterations,
            "samples": result.samples,
            "chain_states": chain.n,
            "cm": cm_id,
            "formula": formula,
        }))
    else:
        print(f"probability {result.probability:.9f}")
        print(f"engine {result.engine}  residual {result.residual:.3e}  states {chain.n}")
    return 0


def cmd_sweep(args) -> int:
    try:
        payload = json.loads(Path(args.spec).read_text())
    except FileNotFoundError:
        raise ConfigError(f"sweep spec not found: {args.spec}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{args.spec}: not valid JSON ({e})")
    spec = spec_from_dict(payload)
    overrides = {}
    if args.out:
        overrides["out"] = args.out
    if args.engine:
        overrides["engine"] = args.engine
    if overrides:
        spec = type(spec)(**{**spec.__dict__, **overrides})
    cfg = _engine_config(args)
    rows = run_sweep(spec, cfg, timing=args.timing)
    written = write_csv(rows, spec.out)
    for path in written:
        print(f"wrote {path}")
    failures = [r for r in rows if r.error]
    if failures:
        print(f"{len(failures)} of {len(rows)} grid points failed; see the error column")
    if args.plot:
        out_str = str(spec.out)
        stem = out_str[:-4] if out_str.endswith(".csv") else out_str
        prefix = stem.replace("_{env}", "").replace("{env}", "").rstrip("_") or "sweep"
        for path in render_sweep_figures(rows, prefix):
            print(f"wrote {path}")
    return 0


def cmd_export(args) -> int:
    _, chain, _ = _build_chain(args)
    if args.format == "explicit":
        paths = export_explicit(chain, args.out)
    elif args.format == "prism":
        paths = [export_prism(chain, args.out)]
    else:
        paths = [export_dot(chain, args.out)]
    for path in paths:
        print(f"wrote {path}")
    return 0


def cmd_import(args) -> int:
    chain = import_explicit(args.prefix)
    print(f"states {chain.n}  transitions {chain.num_transitions}  stochastic ok")
    if args.formula:
        cfg = _engine_config(args)
        result = check(chain, args.formula, args.init, cfg, args.engine)
        print(f"probability {result.probability:.9f}")
        print(f"engine {result.engine}  residual {result.residual:.3e}")
    return 0


def cmd_metrics(args) -> int:
    cm, _ = resolve_cm(args.cm)
    i = cm.index_of(args.class_name)
    print(f"recall              {recall(cm, i):.9f}")
    print(f"precision           {precision(cm, i):.9f}   (uniform class weights)")
    if args.sizes:
        sizes = ClassSizes(tuple(int(s) for s in args.sizes.split(",")))
        value = precision_mean_rate(cm, i, sizes)
        print(f"precision_mean_rate {value:.9f}   (class sizes {sizes.sizes})")
    else:
        print("precision_mean_rate omitted: pass --sizes; the size-weighted "
              "rate average depends on per-class counts")
    return 0


def cmd_simulate(args) -> int:
    if args.samples <= 0:
        raise ConfigError(f"--samples must be positive, got {args.samples}")
    params, chain, _ = _build_chain(args)
    formula = _resolve_formula_text(args.formula, params)
    cfg = _engine_config(args)
    result = simulate(chain, formula, 0, cfg)
    print(f"frequency {result.probability:.9f}  samples {result.samples}  seed {args.seed}")
    print(f"half_width {result.residual:.3e}  ci [{result.ci_low:.9f}, {result.ci_high:.9f}]")
    return 0


def cmd_verify_controller(args) -> int:
    if args.scenario:
        payload = load_scenario_json(args.scenario)
        params = ScenarioParams(int(payload["N"]), int(payload["k"]), int(payload["v_max"]))
    else:
        if None in (args.road_length, args.sidewalk, args.v_max):
            raise ConfigError("give a scenario file or all of --N, --k, --v-max")
        params = ScenarioParams(args.road_length, args.sidewalk, args.v_max)
    report = verify_controller(params)
    print(f"runs {report.runs}  violations {len(report.violations)}")
    for v in report.violations[:20]:
        print(f"  {v.env.value} v0={v.v0} step={v.step} {v.requirement} at {v.state}")
    if report.passed:
        print("controller satisfies all three requirements under perfect perception")
        return 0
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="confmc",
        description="Satisfaction probabilities for classifier-in-the-loop control",
    )
    parser.add_argument("--version", action="version", version=f"confmc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_engine_opts(p, simulate_opts=False, default_engine="linear"):
        p.add_argument("--engine", default=default_engine,
                       choices=["linear", "iterate", "enumerate", "simulate"])
        p.add_argument("--tol", type=float, default=1e-12, help="solver tolerance")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--horizon", type=int, default=None)
        if simulate_opts:
            p.add_argument("--samples", type=int, default=100_000)

    def add_model_opts(p):
        p.add_argument("scenario", help="scenario JSON file")
        p.add_argument("--cm", help="confusion-matrix JSON file, or cm1/identity")
        p.add_argument("--pr", help="build the matrix from precision,recall")
        p.add_argument("--semantics", choices=["absorb", "restart"],
                       help="override the scenario's stop semantics")

    p = sub.add_parser("check", help="probability that a formula holds")
    add_model_opts(p)
    p.add_argument("--formula", required=True,
                   help=f"formula text or one of {', '.join(BUILTIN_FORMULAS)}")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    add_engine_opts(p, simulate_opts=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("sweep", help="run a grid sweep to CSV (+figures)")
    p.add_argument("spec", help="sweep spec JSON file")
    p.add_argument("--out", help="override the spec's output path")
    p.add_argument("--timing", action="store_true",
                   help="record wall time per point (breaks byte-identical reruns)")
    p.add_argument("--no-plot", dest="plot", action="store_false",
                   help="skip figure rendering")
    add_engine_opts(p, default_engine=None)
    p.set_defaults(func=cmd_sweep, plot=True)

    p = sub.add_parser("export", help="serialize the chain for external tools")
    add_model_opts(p)
    p.add_argument("--format", default="explicit", choices=["explicit", "prism", "dot"])
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("import", help="load an explicit .tra/.lab/.sta triple")
    p.add_argument("prefix", help="path prefix of the triple")
    p.add_argument("--formula", help="optionally check a formula on the imported chain")
    p.add_argument("--init", type=int, default=0)
    add_engine_opts(p, simulate_opts=True)
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("metrics", help="precision/recall of a matrix")
    p.add_argument("--cm", required=True)
    p.add_argument("--class", dest="class_name", required=True)
    p.add_argument("--sizes", help="comma-separated per-class counts")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("simulate", help="Monte Carlo estimate with a confidence interval")
    add_model_opts(p)
    p.add_argument("--formula", required=True)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--tol", type=float, default=1e-12)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify-controller",
                       help="certify the dispatch under perfect perception")
    p.add_argument("scenario", nargs="?", help="scenario JSON file")
    p.add_argument("--N", dest="road_length", type=int)
    p.add_argument("--k", dest="sidewalk", type=int)
    p.add_argument("--v-max", dest="v_max", type=int)
    p.set_defaults(func=cmd_verify_controller)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, UnsupportedFragment) as e:
        print(f"formula error: {e}", file=sys.stderr)
        return EXIT_FORMULA
    except (ConfigError, ConfusionMatrixError, ScenarioError, ChainError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except EngineError as e:
        print(f"engine error: {e}", file=sys.stderr)
        return EXIT_ENGINE
    except (FormatError, OSError) as e:
        print(f"format error: {e}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
