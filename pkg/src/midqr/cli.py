"""Command-line interface: fit, predict, marginal analysis, simulation.

Input is delimited text with a header row (comma by default, tab with
``--tab``).  Results are written as CSV tables or as a single JSON record
(``--format record``); the record written by ``fit`` is what ``predict``
consumes.  Every failure exits nonzero and prints a machine-readable error
record to stderr with a command-specific error code.
"""

import argparse
import json
import sys
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import norm

from . import fit as _fit
from . import inference as _inf
from . import kernel_cdf as _kcdf
from . import middist as _mid
from . import simulate as _sim
from .links import get_link

__all__ = ["RunConfig", "run", "main"]

EXIT_OK = 0
EXIT_GENERIC = 1
EXIT_MISSING_COLUMN = 2
EXIT_NON_NUMERIC = 3
EXIT_BAD_LEVEL = 4
EXIT_EMPTY_RANGE = 5

_ERROR_NAMES = {
    EXIT_GENERIC: "error",
    EXIT_MISSING_COLUMN: "missing-column",
    EXIT_NON_NUMERIC: "non-numeric",
    EXIT_BAD_LEVEL: "bad-quantile-level",
    EXIT_EMPTY_RANGE: "inadmissible-level",
}


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    """Parsed invocation: one command plus its options."""

    command: str
    input: str = None
    response: str = None
    covariates: list = field(default_factory=list)  # (name, kind) pairs
    p: tuple = ()
    link: str = "identity"
    bandwidth: str = "auto-rot"
    variance: str = "analytic"
    boot: int = 200
    seed: int = None
    out: str = None
    format: str = "csv"
    tab: bool = False
    numerical_fallback: bool = False
    model: str = None
    scenario: str = None
    n: int = None
    R: int = None
    ci_level: float = 0.95


def _parse_covariates(text):
    pairs = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" not in item:
            raise CliError(
                EXIT_GENERIC,
                f"covariate '{item}' must be declared as name:kind",
            )
        name, kind = item.rsplit(":", 1)
        if kind not in _kcdf.KINDS:
            raise CliError(
                EXIT_GENERIC,
                f"unknown covariate kind '{kind}' for '{name}'; "
                f"choose from {', '.join(_kcdf.KINDS)}",
            )
        pairs.append((name, kind))
    if not pairs:
        raise CliError(EXIT_GENERIC, "no covariates declared")
    return pairs


def _parse_levels(text):
    try:
        levels = tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise CliError(EXIT_BAD_LEVEL, f"could not parse levels '{text}'")
    if not levels:
        raise CliError(EXIT_BAD_LEVEL, "no quantile levels given")
    for p in levels:
        if not 0.0 < p < 1.0:
            raise CliError(
                EXIT_BAD_LEVEL, f"quantile level {p} outside (0, 1)"
            )
    return levels


def _read_table(path, tab):
    try:
        return pd.read_csv(path, sep="\t" if tab else ",")
    except FileNotFoundError:
        raise CliError(EXIT_GENERIC, f"input file not found: {path}")


def _require_column(df, name):
    if name not in df.columns:
        raise CliError(
            EXIT_MISSING_COLUMN, f"column '{name}' not found in input"
        )
    return df[name]


def _numeric(series, name):
    values = pd.to_numeric(series, errors="coerce")
    if values.isna().any():
        raise CliError(
            EXIT_NON_NUMERIC, f"column '{name}' contains non-numeric values"
        )
    return values.to_numpy(dtype=float)


def _encode_covariates(df, covariates, categories=None):
    """Numeric covariate matrix for the kernel step plus design metadata.

    Unordered columns are category-coded; their observed levels are
    recorded so the regression design (and later predictions) can build
    consistent dummy columns.
    """
    columns = []
    meta = []
    for idx, (name, kind) in enumerate(covariates):
        col = _require_column(df, name)
        if kind == "unordered":
            if categories is not None:
                levels = categories[idx]
            else:
                levels = sorted(str(v) for v in col.unique())
            lookup = {lev: i for i, lev in enumerate(levels)}
            codes = np.empty(len(col), dtype=float)
            for i, v in enumerate(col.astype(str)):
                if v not in lookup:
                    raise CliError(
                        EXIT_GENERIC,
                        f"unseen category '{v}' in column '{name}'",
                    )
                codes[i] = lookup[v]
            columns.append(codes)
            meta.append({"name": name, "kind": kind, "categories": levels})
        else:
            columns.append(_numeric(col, name))
            meta.append({"name": name, "kind": kind})
    return np.column_stack(columns), meta


def _design_from_encoded(W, meta):
    """Intercept, numeric columns, and first-level-dropped dummies.

    Constant numeric columns are absorbed by the intercept rather than
    duplicated, so a degenerate covariate still yields a full-rank design.
    """
    cols = [np.ones(W.shape[0])]
    names = ["(intercept)"]
    for j, m in enumerate(meta):
        if m["kind"] == "unordered":
            levels = m["categories"]
            for li in range(1, len(levels)):
                cols.append((W[:, j] == li).astype(float))
                names.append(f"{m['name']}={levels[li]}")
        else:
            if "constant" not in m:
                m["constant"] = bool(np.ptp(W[:, j]) == 0.0)
            if not m["constant"]:
                cols.append(W[:, j])
                names.append(m["name"])
    return np.column_stack(cols), names


def _write_text(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w") as handle:
            handle.write(text)


def _write_record(record, out):
    _write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", out)


def _cmd_fit(cfg):
    df = _read_table(cfg.input, cfg.tab)
    if cfg.response is None:
        raise CliError(EXIT_GENERIC, "--response is required for fit")
    y = _numeric(_require_column(df, cfg.response), cfg.response)
    if not cfg.covariates:
        raise CliError(EXIT_GENERIC, "--covariates is required for fit")
    W, meta = _encode_covariates(df, cfg.covariates)
    spec = _kcdf.CovariateSpec(tuple(kind for _, kind in cfg.covariates))
    X, names = _design_from_encoded(W, meta)
    levels = cfg.p or (0.5,)

    if cfg.bandwidth == "auto-rot":
        bw = _kcdf.select_bandwidths(y, W, spec, method="rule-of-thumb")
    elif cfg.bandwidth == "auto-cv":
        bw = _kcdf.select_bandwidths(y, W, spec, method="cross-validation")
    elif cfg.bandwidth.startswith("explicit:"):
        try:
            vals = [float(t) for t in cfg.bandwidth[len("explicit:"):].split(",")]
        except ValueError:
            raise CliError(EXIT_GENERIC, "could not parse explicit bandwidths")
        bw = _kcdf.Bandwidths(np.asarray(vals))
    else:
        raise CliError(
            EXIT_GENERIC,
            f"unknown bandwidth method '{cfg.bandwidth}'; use "
            "auto-rot, auto-cv, or explicit:v1,...",
        )

    link = get_link(cfg.link)
    cdf = _kcdf.conditional_cdf(y, W, bw, spec.resolved_for(W))
    pim = _kcdf.conditional_mid_probabilities(cdf)
    rng = _fit.admissible_range(pim)

    if not 0.0 < cfg.ci_level < 1.0:
        raise CliError(EXIT_GENERIC, "--ci-level must lie in (0, 1)")
    betas, ses, los, his, methods = [], [], [], [], []
    z = float(norm.ppf(0.5 * (1.0 + cfg.ci_level)))
    for p in levels:
        if rng.contains(p):
            beta = _fit.closed_form_fit(X, pim, p, link)
            method = "closed-form"
        elif cfg.numerical_fallback:
            beta, _ = _fit.numerical_fit(X, pim, p, link, y=y)
            method = "numerical"
        else:
            raise CliError(
                EXIT_EMPTY_RANGE,
                f"level {p} outside the admissible range "
                f"[{rng.lo:.6g}, {rng.hi:.6g}]; pass --numerical-fallback "
                "to fit it numerically",
            )
        if cfg.variance == "bootstrap":
            var = _inf.bootstrap_variance(
                y, W, spec, bw, p, link, B=cfg.boot, seed=cfg.seed,
                design=lambda V: _design_from_encoded(V, meta)[0],
            )
            se = var.standard_errors
        elif method == "closed-form":
            u, _, _ = _fit._u_values(pim, p, link)
            hw = _inf.huber_white(X, u - X @ beta)
            J = _inf.jacobian_beta_wrt_pi(X, pim, p, link)
            var = _inf.total_variance(
                hw, _inf.delta_component(J, pim.varpi,
                                         groups=_inf.row_groups(W), cdf=cdf)
            )
            se = var.standard_errors
        else:
            se = np.full(X.shape[1], np.nan)
        betas.append(beta)
        ses.append(se)
        los.append(beta - z * se)
        his.append(beta + z * se)
        methods.append(method)

    record = {
        "command": "fit",
        "levels": list(levels),
        "terms": names,
        "coefficients": [list(map(float, b)) for b in betas],
        "standard_errors": [list(map(float, s)) for s in ses],
        "ci_lower": [list(map(float, v)) for v in los],
        "ci_upper": [list(map(float, v)) for v in his],
        "ci_level": cfg.ci_level,
        "admissible_range": [rng.lo, rng.hi],
        "method": methods,
        "seed": cfg.seed,
        "link": cfg.link,
        "response": cfg.response,
        "covariates": meta,
        "bandwidths": [float(v) for v in bw.values],
    }
    if cfg.format == "record":
        _write_record(record, cfg.out)
    else:
        lines = ["p,term,estimate,std_error,ci_lower,ci_upper,method,"
                 "admissible_lo,admissible_hi"]
        for i, p in enumerate(levels):
            for t, name in enumerate(names):
                lines.append(
                    f"{p!r},{name},{float(betas[i][t])!r},"
                    f"{float(ses[i][t])!r},{float(los[i][t])!r},"
                    f"{float(his[i][t])!r},{methods[i]},"
                    f"{float(rng.lo)!r},{float(rng.hi)!r}"
                )
        _write_text("\n".join(lines) + "\n", cfg.out)
    return EXIT_OK


def _cmd_predict(cfg):
    if cfg.model is None:
        raise CliError(EXIT_GENERIC, "--model (a fit record) is required")
    try:
        with open(cfg.model) as handle:
            record = json.load(handle)
    except FileNotFoundError:
        raise CliError(EXIT_GENERIC, f"model file not found: {cfg.model}")
    if record.get("command") != "fit":
        raise CliError(EXIT_GENERIC, "model file is not a fit record")

    df = _read_table(cfg.input, cfg.tab)
    covariates = [(m["name"], m["kind"]) for m in record["covariates"]]
    categories = [m.get("categories") for m in record["covariates"]]
    W, _ = _encode_covariates(df, covariates, categories=categories)
    X, _ = _design_from_encoded(W, record["covariates"])
    link = get_link(record["link"])

    levels = cfg.p or tuple(record["levels"])
    known = {repr(p): i for i, p in enumerate(record["levels"])}
    preds = {}
    for p in levels:
        key = repr(float(p))
        if key not in known:
            raise CliError(
                EXIT_BAD_LEVEL,
                f"level {p} not among the fitted levels {record['levels']}",
            )
        beta = np.asarray(record["coefficients"][known[key]], dtype=float)
        preds[p] = link.hinv(X @ beta)

    if cfg.format == "record":
        _write_record({
            "command": "predict",
            "levels": [float(p) for p in levels],
            "predictions": [
                [float(v) for v in preds[p]] for p in levels
            ],
        }, cfg.out)
    else:
        header = "row," + ",".join(f"midq_p{p!r}" for p in levels)
        lines = [header]
        for i in range(X.shape[0]):
            lines.append(
                f"{i}," + ",".join(repr(float(preds[p][i])) for p in levels)
            )
        _write_text("\n".join(lines) + "\n", cfg.out)
    return EXIT_OK


def _cmd_marginal(cfg):
    df = _read_table(cfg.input, cfg.tab)
    if cfg.response is None:
        raise CliError(EXIT_GENERIC, "--response is required for marginal")
    y = _numeric(_require_column(df, cfg.response), cfg.response)
    sample = _mid.tabulate(y)
    mc = _mid.mid_cdf(sample)
    quantiles = {p: _mid.mid_quantile(mc, p) for p in cfg.p}

    if cfg.format == "record":
        _write_record({
            "command": "marginal",
            "values": [float(v) for v in mc.values],
            "counts": [int(c) for c in sample.counts],
            "cdf": [float(v) for v in mc.cdf],
            "midprobs": [float(v) for v in mc.midprobs],
            "quantiles": {repr(p): float(h) for p, h in quantiles.items()},
        }, cfg.out)
    else:
        lines = ["value,count,cdf,midprob"]
        for j in range(mc.values.size):
            lines.append(
                f"{float(mc.values[j])!r},{int(sample.counts[j])},"
                f"{float(mc.cdf[j])!r},{float(mc.midprobs[j])!r}"
            )
        if quantiles:
            lines.append("")
            lines.append("p,mid_quantile")
            for p in cfg.p:
                lines.append(f"{p!r},{float(quantiles[p])!r}")
        _write_text("\n".join(lines) + "\n", cfg.out)
    return EXIT_OK


def _cmd_simulate(cfg):
    if cfg.scenario is None or cfg.n is None or cfg.R is None:
        raise CliError(
            EXIT_GENERIC, "simulate needs --scenario, --n, and --R"
        )
    try:
        spec = _sim.ScenarioSpec(cfg.scenario, cfg.n,
                                 cfg.seed if cfg.seed is not None else 0)
    except ValueError as exc:
        raise CliError(EXIT_GENERIC, str(exc))
    levels = cfg.p or ((0.5,) if spec.family == "4"
                       else (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8))
    table = _sim.run_study(spec, cfg.R, p_levels=levels)
    if cfg.format == "record":
        rows = {
            "command": "simulate",
            "scenario": table.scenario,
            "n": table.n,
            "R": table.R,
            "p": [float(v) for v in table.p],
            "bias": [float(v) for v in table.bias],
            "rmse": [float(v) for v in table.rmse],
            "hbar": [float(v) for v in table.hbar],
            "coverage": [None if not np.isfinite(v) else float(v)
                         for v in table.coverage],
            "slope_variance": [None if not np.isfinite(v) else float(v)
                               for v in table.slope_variance],
            "failures": table.failures,
        }
        _write_record(rows, cfg.out)
    elif cfg.out is None:
        sys.stdout.write(table.to_text())
    else:
        table.to_csv(cfg.out)
    return EXIT_OK


_COMMANDS = {
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "marginal": _cmd_marginal,
    "simulate": _cmd_simulate,
}


def run(config):
    """Execute a parsed configuration; returns the process exit code."""
    try:
        return _COMMANDS[config.command](config)
    except CliError as exc:
        _emit_error(exc.code, str(exc))
        return exc.code
    except _fit.BracketError as exc:
        _emit_error(EXIT_EMPTY_RANGE, str(exc))
        return EXIT_EMPTY_RANGE
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        _emit_error(EXIT_GENERIC, f"{type(exc).__name__}: {exc}")
        return EXIT_GENERIC


def _emit_error(code, message):
    record = {
        "error": {
            "code": code,
            "name": _ERROR_NAMES.get(code, "error"),
            "message": message,
        }
    }
    sys.stderr.write(json.dumps(record) + "\n")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="midqr",
        description="Conditional mid-quantile regression for discrete responses",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("fit", "predict", "marginal", "simulate"):
        cmd = sub.add_parser(name)
        cmd.add_argument("--input", help="delimited input file with header")
        cmd.add_argument("--response", help="response column name")
        cmd.add_argument("--covariates",
                         help="comma list of name:kind declarations")
        cmd.add_argument("--p", help="comma list of quantile levels")
        cmd.add_argument("--link", default="identity",
                         choices=["identity", "log", "logit"])
        cmd.add_argument("--bandwidth", default="auto-rot",
                         help="auto-rot | auto-cv | explicit:v1,...")
        cmd.add_argument("--variance", default="analytic",
                         choices=["analytic", "bootstrap"])
        cmd.add_argument("--boot", type=int, default=200,
                         help="bootstrap replicates")
        cmd.add_argument("--seed", type=int, default=None)
        cmd.add_argument("--out", default=None, help="output path")
        cmd.add_argument("--format", default="csv",
                         choices=["csv", "record"])
        cmd.add_argument("--tab", action="store_true",
                         help="tab-delimited input")
        cmd.add_argument("--numerical-fallback", action="store_true",
                         dest="numerical_fallback",
                         help="fit levels outside the admissible range "
                              "numerically")
        cmd.add_argument("--ci-level", type=float, default=0.95,
                         dest="ci_level")
        if name == "predict":
            cmd.add_argument("--model", help="fit record (JSON) to predict from")
        if name == "simulate":
            cmd.add_argument("--scenario", choices=list(_sim.SCENARIO_IDS))
            cmd.add_argument("--n", type=int)
            cmd.add_argument("--R", type=int)
    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig(
            command=args.command,
            input=args.input,
            response=args.response,
            covariates=_parse_covariates(args.covariates)
            if args.covariates else [],
            p=_parse_levels(args.p) if args.p else (),
            link=args.link,
            bandwidth=args.bandwidth,
            variance=args.variance,
            boot=args.boot,
            seed=args.seed,
            out=args.out,
            format=args.format,
            tab=args.tab,
            numerical_fallback=args.numerical_fallback,
            model=getattr(args, "model", None),
            scenario=getattr(args, "scenario", None),
            n=getattr(args, "n", None),
            R=getattr(args, "R", None),
            ci_level=args.ci_level,
        )
    except CliError as exc:
        _emit_error(exc.code, str(exc))
        return exc.code
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
