"""Command-line interface.

Subcommands: fit, predict, select-model, sparse-means, simulate, study.

Input CSV files are UTF-8 with a header row; the response column is ``y``
and every other column is a covariate. Configuration is JSON. Outputs go to
the ``--out`` directory and are byte-identical for a fixed ``--seed``, except
``timings.csv`` written by ``study``.

Model config keys (fit, predict, select-model)::

    scheme      {"kind": "count-bounded" | "floor-half", "y_min": 0, "y_max": "inf"}
    transform   "identity" | "sqrt" | "log" | "np-cdf" | "poisson" | "negbin"
                or a serialized transformation object
    psi         g-prior scale (default 1000)
    sigma       latent noise scale (default: pseudo-data estimate)
    intercept   prepend a column of ones (default true; linear models only)
    nonlinear   {"column": "tau", "kind": "bspline", "n_interior": 20, "degree": 3}
    mc_samples  Monte Carlo budget for probabilities (default 20000)

predict also reads ``new_data`` (CSV of covariates; default: training rows)
and ``pmf`` (bool) with an optional explicit ``support`` list.
select-model reads ``candidates`` (a list of model configs, each optionally
with ``label``) and ``prior_weights``.
sparse-means reads ``method`` ("np-cdf+rounding", "identity+rounding",
"gaussian-no-rounding"), ``sweeps``, ``burnin``, ``psi``, ``a_pi``, ``b_pi``.
simulate reads ``generator`` ("negbin-regression", "nl-negbin", "nl-mixture",
"rounded-sparse") with ``n``, ``p``, ``mu``, ``prop_signal``.
study reads the experiment grid; see ``starcount.studies.ExperimentConfig``.

Study output columns (rows.csv, timings.csv):
study, case, replicate, n, p, method, metric, value, error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import model_space as ms
from . import sparse_means as smn
from . import star_linear as sl
from . import studies
from .discretization import RoundingScheme, SupportError, Transformation, fit_transformation
from .gauss import FactorizationError, ZeroMassError
from .nonlinear import BasisSpec, build_diagonalized, predict_nl, star_model
from .simulate import (gen_negbin_regression, gen_nl_mixture_cdf, gen_nl_negbin,
                       gen_rounded_sparse, sparse_scheme)


class CliError(Exception):
    pass


# ---------------------------------------------------------------- io

def read_csv(path) -> tuple[list, np.ndarray]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None
    if not rows or not rows[0]:
        raise CliError(f"{path}: missing header row")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    try:
        data = np.array([[float(c) for c in r] for r in body], dtype=float)
    except ValueError as exc:
        raise CliError(f"{path}: non-numeric value ({exc})") from None
    if body and data.shape[1] != len(header):
        raise CliError(f"{path}: rows do not match the header width")
    return header, data.reshape(len(body), len(header))


def read_response(path):
    header, data = read_csv(path)
    if "y" not in header:
        raise CliError(f"{path}: no column named y")
    j = header.index("y")
    y = data[:, j]
    if np.any(y != np.round(y)):
        raise CliError(f"{path}: y must contain integers")
    cols = [h for i, h in enumerate(header) if i != j]
    X = np.delete(data, j, axis=1)
    return y.astype(np.int64), cols, X


def write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise CliError(f"{path}: config must be a JSON object")
    return cfg


# ---------------------------------------------------------------- model building

class Fitted:
    """A configured model plus what is needed to predict from it."""

    def __init__(self, cfg: dict, y, cols, X):
        self.cfg = cfg
        self.scheme = RoundingScheme.from_dict(cfg.get("scheme", {"kind": "count-bounded"}))
        tcfg = cfg.get("transform", "np-cdf")
        if isinstance(tcfg, dict):
            self.transform = Transformation.from_dict(tcfg)
        else:
            self.transform = fit_transformation(tcfg, y, self.scheme)
        self.psi = float(cfg.get("psi", sl.DEFAULT_PSI))
        self.label = cfg.get("label", self.transform.label)
        nl = cfg.get("nonlinear")
        self.basis = None
        self.cols = list(cols)
        if nl:
            col = nl.get("column", "tau")
            if col not in cols:
                raise CliError(f"nonlinear column {col!r} not found")
            self.tau_col = col
            spec = BasisSpec(nl.get("kind", "bspline"), int(nl.get("degree", 3)),
                             int(nl.get("n_interior", 20)), bool(nl.get("intercept", True)))
            self.basis = build_diagonalized(spec, X[:, cols.index(col)])
            design = self.basis.X
        else:
            self.intercept = bool(cfg.get("intercept", True))
            design = self.design(X)
        sigma = cfg.get("sigma")
        self.sigma = float(sigma) if sigma is not None else sl.estimate_sigma(design, y, self.scheme,
                                                                             self.transform)
        if self.basis is not None:
            self.model = star_model(self.basis, y, self.scheme, self.transform, self.psi, self.sigma)
        else:
            self.model = sl.StarLinearModel(design, y, self.scheme, self.transform,
                                            sl.GPrior(self.psi), self.sigma)

    def design(self, X) -> np.ndarray:
        if X.shape[1] == 0 and not self.intercept:
            raise CliError("no covariates and no intercept")
        return np.column_stack([np.ones(X.shape[0]), X]) if self.intercept else X

    def coef_names(self) -> list:
        if self.basis is not None:
            return [f"beta{j + 1}" for j in range(self.basis.p)]
        return (["intercept"] if self.intercept else []) + self.cols

    def where(self, cols, X):
        if list(cols) != self.cols:
            raise CliError("new_data columns must match the training covariates")
        if self.basis is not None:
            return X[:, cols.index(self.tau_col)]
        return self.design(X)

    def candidate(self) -> ms.Candidate:
        return ms.Candidate(self.model, self.label, self.basis, self.psi if self.basis is not None else None)

    def predict(self, where, count, rng):
        return self.candidate().predict(where, count, rng)

    def describe(self) -> dict:
        return {"scheme": self.scheme.to_dict(), "transform": self.transform.to_dict(),
                "psi": self.psi, "sigma": self.sigma, "label": self.label,
                "nonlinear": self.basis is not None}


def _rng(args) -> np.random.Generator:
    return np.random.default_rng(args.seed)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands

def cmd_fit(args) -> None:
    """Posterior draws and marginal likelihood for one model."""
    cfg = load_config(args.config)
    y, cols, X = read_response(args.data)
    fit = Fitted(cfg, y, cols, X)
    rng = _rng(args)
    draws = sl.sample_posterior(fit.model, args.draws, rng)
    mc = int(cfg.get("mc_samples", 20_000))
    ml = sl.marginal_likelihood(fit.model, mc, rng)
    out = _out(args)
    write_csv(out / "posterior_draws.csv", fit.coef_names(), draws)
    diag = fit.describe() | {
        "n": int(fit.model.n), "p": int(fit.model.p), "draws": args.draws,
        "log_marginal_likelihood": ml.log_value, "log_marginal_rel_err": ml.rel_err,
        "underflow": ml.underflow, "posterior_mean": draws.mean(axis=0),
        "posterior_sd": draws.std(axis=0, ddof=1), "coefficients": fit.coef_names()}
    if fit.model.is_gprior and fit.model.n:
        tm = sl._gprior_v0(fit.model)
        diag |= {"approximate": tm.approximate, "acceptance_rate": tm.acceptance_rate}
    write_json(out / "diagnostics.json", diag)


def default_support(fit: Fitted, y) -> tuple[np.ndarray, bool]:
    s = fit.scheme
    lo = s.y_min if math.isfinite(s.y_min) else int(y.min() - 10 * max(np.std(y, ddof=1), 1.0))
    if math.isfinite(s.y_max):
        return np.arange(lo, s.y_max + 1, dtype=np.int64), False
    hi = int(np.ceil(y.max() + 10 * max(np.std(y, ddof=1), 1.0)))
    return np.arange(lo, hi + 1, dtype=np.int64), True


def cmd_predict(args) -> None:
    """Predictive draws, optionally with the analytic pmf."""
    cfg = load_config(args.config)
    y, cols, X = read_response(args.data)
    fit = Fitted(cfg, y, cols, X)
    rng = _rng(args)
    if cfg.get("new_data"):
        ncols, Xn = read_csv(cfg["new_data"])
        if "y" in ncols:
            Xn = np.delete(Xn, ncols.index("y"), axis=1)
            ncols = [c for c in ncols if c != "y"]
    else:
        ncols, Xn = cols, X
    where = fit.where(ncols, Xn)
    draws = fit.predict(where, args.draws, rng)
    out = _out(args)
    write_csv(out / "predictive_draws.csv", [f"y{i + 1}" for i in range(draws.shape[1])], draws)
    if cfg.get("pmf"):
        if fit.basis is not None:
            rows_x = fit.basis.design(where)
        else:
            rows_x = where
        if "support" in cfg:
            support, truncated = np.asarray(cfg["support"], dtype=np.int64), True
        else:
            support, truncated = default_support(fit, y)
        mc = int(cfg.get("mc_samples", 20_000))
        rows, meta = [], []
        for i in range(rows_x.shape[0]):
            pmf = sl.predictive_pmf(fit.model, rows_x[i:i + 1], support, mc, rng)
            rows += [(i + 1, int(j), p, r) for j, p, r in zip(pmf.support, pmf.probs, pmf.rel_err)]
            meta.append({"row": i + 1, "raw_sum": pmf.raw_sum,
                         "truncated_mass": max(0.0, 1.0 - pmf.raw_sum) if truncated else 0.0,
                         "point_prediction": float(pmf.support @ pmf.probs)})
        write_csv(out / "pmf.csv", ["row", "y", "prob", "rel_err"], rows)
        write_json(out / "pmf_summary.json", {"rows": meta})


def cmd_select_model(args) -> None:
    """Posterior probabilities over candidate models."""
    cfg = load_config(args.config)
    y, cols, X = read_response(args.data)
    cands = cfg.get("candidates")
    if not cands:
        raise CliError("config needs a nonempty 'candidates' list")
    base = {k: v for k, v in cfg.items() if k not in ("candidates", "prior_weights")}
    fits = [Fitted(base | c, y, cols, X) for c in cands]
    cset = ms.CandidateSet([f.candidate() for f in fits], cfg.get("prior_weights"))
    rng = _rng(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ms.ModelComparisonWarning)
        res = ms.posterior_model_probs(cset, y, int(cfg.get("mc_samples", 20_000)), rng)
    out = _out(args)
    write_json(out / "weights.json", {
        "labels": [f.label for f in fits], "weights": res.probs,
        "log_marginal_likelihoods": res.log_marginals, "rel_errs": res.rel_errs,
        "selected": ms.select_model(res.probs), "close_call": res.close_call,
        "warnings": [str(w.message) for w in caught]})


def cmd_sparse_means(args) -> None:
    """Spike-and-slab inclusion probabilities for rounded data."""
    cfg = load_config(args.config)
    header, data = read_csv(args.data)
    col = "y" if "y" in header else header[0]
    if len(header) != 1 and "y" not in header:
        raise CliError("sparse-means expects a single column or a column named y")
    y = data[:, header.index(col)]
    if np.any(y != np.round(y)):
        raise CliError("y must contain integers")
    y = y.astype(np.int64)
    scheme = RoundingScheme.from_dict(cfg["scheme"]) if "scheme" in cfg else sparse_scheme()
    method = cfg.get("method", "np-cdf+rounding")
    conf = studies.sparse_config(method, y, scheme)
    if "psi" in cfg or "a_pi" in cfg or "b_pi" in cfg:
        conf = replace(conf, psi=cfg.get("psi"), a_pi=float(cfg.get("a_pi", 1.0)),
                       b_pi=float(cfg.get("b_pi", 1.0)))
    sweeps = int(cfg.get("sweeps", args.draws + int(cfg.get("burnin", 500))))
    burnin = int(cfg.get("burnin", 500))
    res = smn.run_chain(conf, y, sweeps, burnin, _rng(args))
    out = _out(args)
    tm, ts = res.theta_draws.mean(axis=0), res.theta_draws.std(axis=0, ddof=1)
    write_csv(out / "inclusion.csv", ["index", "y", "inclusion_prob", "theta_mean", "theta_sd"],
              [(i + 1, int(y[i]), res.inclusion_probs[i], tm[i], ts[i]) for i in range(y.shape[0])])
    write_json(out / "sparse_summary.json", {
        "method": method, "sigma": conf.sigma, "sweeps": sweeps, "burnin": burnin,
        "pi_mean": float(res.pi_draws.mean()), "psi_mean": float(res.psi_draws.mean())})


def cmd_simulate(args) -> None:
    """Write a synthetic dataset and its generating truth."""
    cfg = load_config(args.config)
    gen = cfg.get("generator", "negbin-regression")
    n = int(cfg.get("n", 100))
    seed = args.seed
    if gen == "negbin-regression":
        p = int(cfg.get("p", 10))
        d = gen_negbin_regression(n, p, seed)
        header = ["y"] + [f"x{j + 1}" for j in range(p)]
        rows = np.column_stack([d.y, d.X[:, 1:]])
    elif gen in ("nl-negbin", "nl-mixture"):
        d = (gen_nl_negbin if gen == "nl-negbin" else gen_nl_mixture_cdf)(n, seed)
        header, rows = ["y", "tau"], np.column_stack([d.y, d.tau])
    elif gen == "rounded-sparse":
        d = gen_rounded_sparse(n, float(cfg.get("mu", 2.0)), float(cfg.get("prop_signal", 0.1)), seed)
        header, rows = ["y"], d.y[:, None]
    else:
        raise CliError(f"unknown generator {gen!r}")
    out = _out(args)
    write_csv(out / "data.csv", header,
              [[int(r[0])] + [float(v) for v in r[1:]] for r in rows])
    write_json(out / "truth.json", {"generator": gen, "n": n, "seed": seed} | d.truth)


def cmd_study(args) -> None:
    """Run a simulation study grid."""
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg["out"] = str(args.out)
    if "study" not in cfg:
        raise CliError("config needs a 'study' key")
    try:
        exp = studies.ExperimentConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc)) from None
    res = studies.run_study(exp)
    print(f"{exp.study}: {len(res['rows'])} rows, {res['summary']['errors']} errors -> {args.out}")


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "select-model": cmd_select_model,
            "sparse-means": cmd_sparse_means, "simulate": cmd_simulate, "study": cmd_study}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="starcount", description=__doc__.split("\n\n")[0],
                                     epilog=__doc__.split("\n\n", 1)[1],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=COMMANDS[name].__doc__)
        if name not in ("simulate", "study"):
            p.add_argument("--data", required=True, help="input CSV with a header row")
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, default=0 if name != "study" else None,
                       help="random seed (default 0)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--draws", type=int, default=1000, help="Monte Carlo draws (default 1000)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "draws", 1) < 1:
        parser.error("--draws must be positive")
    try:
        COMMANDS[args.command](args)
    except (CliError, SupportError, ZeroMassError, FactorizationError, np.linalg.LinAlgError,
            ValueError, FloatingPointError, KeyError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
