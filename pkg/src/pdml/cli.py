"""Command-line interface.

Subcommands:

* ``simulate`` -- Monte Carlo coverage experiment for a built-in setting;
* ``fit`` -- confidence set for a CSV dataset (real-data path);
* ``filter-sweep`` -- radius-threshold comparison on one replication.

Flags can be pre-loaded from a TOML file via ``--config``; explicit flags
override file values. Reports embed the master seed and the full
configuration, and ``simulate --replay report.json`` reruns a report's
exact configuration.
"""

from __future__ import annotations

import argparse
import json
import sys

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - Python 3.10
    import tomli as tomllib

from pdml.data import CrossFit, SingleSplit, load_csv
from pdml.datagen import SimSetting
from pdml.errors import ConfigError, PdmlError
from pdml.filtering import QuantileRule, RadiusRule
from pdml.harness import RunConfig, emit_report, run_filter_sweep, run_fit, run_simulation
from pdml.learners import OLS, BasisExpansion, External, Lasso


def _parse_filter(text: str):
    kind, _, rest = text.partition(":")
    if kind == "quantile":
        return QuantileRule(float(rest or "0.95"))
    if kind == "radius":
        parts = rest.split(",")
        if len(parts) != 3:
            raise ConfigError("radius filter needs c_star,s_eta,s_gamma")
        return RadiusRule(float(parts[0]), int(parts[1]), int(parts[2]))
    raise ConfigError(f"unknown filter rule {text!r}")


def _parse_split(text: str):
    if text == "single":
        return SingleSplit()
    if text.startswith("crossfit"):
        _, _, k = text.partition(":")
        return CrossFit(int(k or "2"))
    raise ConfigError(f"unknown split scheme {text!r}")


def _parse_learner(text: str, external_cmd: str | None):
    if text == "ols":
        return OLS()
    if text == "lasso":
        return Lasso()
    if text == "basis":
        return BasisExpansion()
    if text == "external":
        if not external_cmd:
            raise ConfigError("external learner needs --external-cmd")
        return External(command=tuple(external_cmd.split()))
    raise ConfigError(f"unknown learner {text!r}")


DEFAULT_LEARNERS = {"F1": "ols", "F2": "lasso", "F3": "basis", "F4": "external"}
DEFAULT_PATHS = {"F1": "general", "F2": "linear", "F3": "general", "F4": "general"}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML file with default flag values")
    parser.add_argument("--M", type=int, default=None, help="number of perturbations (default 500)")
    parser.add_argument("--pi-star", type=float, default=None, help="quantile filtering proportion (default 0.95)")
    parser.add_argument("--filter", default=None, help="quantile:PI or radius:C,S_ETA,S_GAMMA")
    parser.add_argument("--alpha", type=float, default=None, help="significance level (default 0.05)")
    parser.add_argument("--alpha0", type=float, default=None, help="perturbation budget (default 0.01)")
    parser.add_argument("--split", default=None, help="single or crossfit:K (default crossfit:2)")
    parser.add_argument("--fixed-penalty", type=float, default=None, metavar="R",
                        help="skip per-perturbation CV; use R times the base penalty")
    parser.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    parser.add_argument("--workers", type=int, default=None, help="parallel workers (default 1)")
    parser.add_argument("--out", default=None, help="output path (default stdout)")


def _merged(args: argparse.Namespace, defaults: dict) -> dict:
    values = dict(defaults)
    if getattr(args, "config", None):
        with open(args.config, "rb") as fh:
            file_values = tomllib.load(fh)
        for key, val in file_values.items():
            values[key.replace("-", "_")] = val
    for key in values:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return values


_COMMON_DEFAULTS = {
    "M": 500, "pi_star": 0.95, "filter": None, "alpha": 0.05, "alpha0": 0.01,
    "split": "crossfit:2", "fixed_penalty": None, "seed": 0, "workers": 1, "out": None,
}


def _build_config(values: dict, setting_kind: str | None, external_cmd: str | None) -> RunConfig:
    rule = _parse_filter(values["filter"]) if values["filter"] else QuantileRule(values["pi_star"])
    path = values.get("path") or (DEFAULT_PATHS[setting_kind] if setting_kind else "linear")
    g_spec = f_spec = None
    if path == "general":
        default_learner = DEFAULT_LEARNERS.get(setting_kind or "", "ols")
        g_spec = _parse_learner(values.get("learner_g") or default_learner, external_cmd)
        f_spec = _parse_learner(values.get("learner_f") or default_learner, external_cmd)
    return RunConfig(
        path=path, g_spec=g_spec, f_spec=f_spec,
        scheme=_parse_split(values["split"]),
        M=values["M"], alpha=values["alpha"], alpha0=values["alpha0"],
        filter_rule=rule, fixed_r=values["fixed_penalty"],
        noise_scale=values.get("noise_scale", 1.0),
        homoscedastic=values.get("homoscedastic", False),
        bias_bound=tuple(values["bias_bound"]) if values.get("bias_bound") else None,
    )


def _cmd_simulate(args: argparse.Namespace) -> int:
    values = _merged(args, {
        **_COMMON_DEFAULTS, "setting": None, "n": 1000, "p": None, "s": None,
        "beta": 0.5, "reps": 100, "path": None, "learner_g": None, "learner_f": None,
        "noise_scale": 1.0, "homoscedastic": False, "bias_bound": None,
    })
    if args.replay:
        with open(args.replay, encoding="utf-8") as fh:
            doc = json.load(fh)
        echo = doc["config"]
        st = echo["setting"]
        setting = SimSetting(kind=st["kind"], n=st["n"], p=st["p"], s=st["s"], beta_true=st["beta_true"])
        filt = echo["filter"]
        rule = (
            QuantileRule(filt["pi_star"]) if filt["rule"] == "quantile"
            else RadiusRule(filt["c_star"], filt["s_eta"], filt["s_gamma"])
        )
        learner_map = {"ols": "ols", "lasso": "lasso", "basis": "basis", "external": "external"}
        config = RunConfig(
            path=echo["path"],
            g_spec=_parse_learner(learner_map[echo["learner_g"]["kind"]], None) if echo["learner_g"] else None,
            f_spec=_parse_learner(learner_map[echo["learner_f"]["kind"]], None) if echo["learner_f"] else None,
            scheme=SingleSplit() if echo["scheme"] == "single" else CrossFit(echo["k"]),
            M=echo["M"], alpha=echo["alpha"], alpha0=echo["alpha0"], filter_rule=rule,
            cv_folds=echo["cv_folds"], grid_size=echo["grid_size"], grid_ratio=echo["grid_ratio"],
            fixed_r=echo["fixed_r"], aggregate=echo["aggregate"],
            noise_scale=echo["noise_scale"], homoscedastic=echo["homoscedastic"],
            bias_bound=tuple(echo["bias_bound"]) if echo["bias_bound"] else None,
        )
        reps, seed = doc["reps_requested"], doc["master_seed"]
    else:
        if values["setting"] is None or values["p"] is None:
            raise ConfigError("simulate needs --setting and --p (or --replay)")
        setting = SimSetting(
            kind=values["setting"], n=values["n"], p=values["p"],
            s=values["s"], beta_true=values["beta"],
        )
        config = _build_config(values, setting.kind, args.external_cmd)
        reps, seed = values["reps"], values["seed"]
    report = run_simulation(setting, config, reps, seed, workers=values["workers"])
    if values["out"]:
        emit_report(report, values["out"], format=args.format, include_runtime=args.timings)
        print(f"wrote {values['out']} ({len(report.results)} reps, {report.runtime_seconds:.1f}s)", file=sys.stderr)
    else:
        json.dump(report.to_dict(include_runtime=args.timings), sys.stdout, indent=2)
        print()
    return 0


def _cmd_fit(args: argparse.Namespace) -> int:
    values = _merged(args, {
        **_COMMON_DEFAULTS, "data": None, "y_col": "y", "d_col": "d",
        "path": None, "learner_g": None, "learner_f": None,
    })
    if not values["data"]:
        raise ConfigError("fit needs --data")
    ds = load_csv(values["data"], values["y_col"], values["d_col"])
    learner_g = values.get("learner_g") or "lasso"
    learner_f = values.get("learner_f") or learner_g
    path = values.get("path") or ("linear" if learner_g == learner_f == "lasso" else "general")
    config = _build_config(
        {**values, "path": path, "learner_g": learner_g, "learner_f": learner_f},
        None, args.external_cmd,
    )
    doc = run_fit(ds, config, values["seed"], workers=values["workers"])
    payload = json.dumps(doc, indent=2)
    if values["out"]:
        with open(values["out"], "w", encoding="utf-8") as fh:
            fh.write(payload + "\n")
    else:
        print(payload)
    return 0


def _cmd_filter_sweep(args: argparse.Namespace) -> int:
    values = _merged(args, {
        **_COMMON_DEFAULTS, "setting": "F2", "n": 1000, "p": None, "s": None,
        "beta": 0.5, "c_star": None, "s_eta": None, "s_gamma": None,
    })
    if values["p"] is None or values["c_star"] is None:
        raise ConfigError("filter-sweep needs --p and --c-star")
    setting = SimSetting(
        kind=values["setting"], n=values["n"], p=values["p"],
        s=values["s"], beta_true=values["beta"],
    )
    config = _build_config({**values, "path": "linear"}, setting.kind, None)
    c_stars = [float(c) for c in str(values["c_star"]).split(",")]
    doc = run_filter_sweep(
        setting, config, c_stars, values["seed"],
        s_eta=values["s_eta"], s_gamma=values["s_gamma"],
    )
    payload = json.dumps(doc, indent=2)
    if values["out"]:
        with open(values["out"], "w", encoding="utf-8") as fh:
            fh.write(payload + "\n")
    else:
        print(payload)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdml", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Monte Carlo coverage experiment")
    sim.add_argument("--setting", choices=("F1", "F2", "F3", "F4"), default=None)
    sim.add_argument("--n", type=int, default=None)
    sim.add_argument("--p", type=int, default=None)
    sim.add_argument("--s", type=int, default=None, help="sparsity level (F2 only)")
    sim.add_argument("--beta", type=float, default=None, help="true coefficient (default 0.5)")
    sim.add_argument("--reps", type=int, default=None, help="replications (default 100)")
    sim.add_argument("--path", choices=("linear", "general"), default=None)
    sim.add_argument("--learner-g", default=None, help="ols|lasso|basis|external")
    sim.add_argument("--learner-f", default=None)
    sim.add_argument("--external-cmd", default=None, help="command line for external learners")
    sim.add_argument("--noise-scale", type=float, default=None, dest="noise_scale")
    sim.add_argument("--homoscedastic", action="store_const", const=True, default=None)
    sim.add_argument("--format", choices=("json", "csv"), default="json")
    sim.add_argument("--timings", action="store_true", help="include wall-clock runtime in the report")
    sim.add_argument("--replay", default=None, help="rerun the configuration embedded in a report")
    _add_common(sim)
    sim.set_defaults(func=_cmd_simulate)

    fit = sub.add_parser("fit", help="confidence set for a CSV dataset")
    fit.add_argument("--data", default=None, help="CSV path")
    fit.add_argument("--y-col", default=None)
    fit.add_argument("--d-col", default=None)
    fit.add_argument("--path", choices=("linear", "general"), default=None)
    fit.add_argument("--learner-g", default=None)
    fit.add_argument("--learner-f", default=None)
    fit.add_argument("--external-cmd", default=None)
    _add_common(fit)
    fit.set_defaults(func=_cmd_fit)

    fs = sub.add_parser("filter-sweep", help="compare radius thresholds on one replication")
    fs.add_argument("--setting", choices=("F1", "F2", "F3", "F4"), default=None)
    fs.add_argument("--n", type=int, default=None)
    fs.add_argument("--p", type=int, default=None)
    fs.add_argument("--s", type=int, default=None)
    fs.add_argument("--beta", type=float, default=None)
    fs.add_argument("--c-star", default=None, help="comma-separated c* values")
    fs.add_argument("--s-eta", type=int, default=None)
    fs.add_argument("--s-gamma", type=int, default=None)
    _add_common(fs)
    fs.set_defaults(func=_cmd_filter_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PdmlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
