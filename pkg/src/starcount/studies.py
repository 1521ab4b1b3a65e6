"""Simulation studies: sampler efficiency, nonlinear prediction, sparse means.

Every replicate gets its own generator. The master seed is split with
``SeedSequence(seed).spawn(n_cells)`` over grid cells and each cell's
sequence is spawned again over replicates, so results do not depend on the
worker count or the order replicates finish in.
"""
from __future__ import annotations

import csv
import json
import math
import time
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from . import model_space as ms
from . import sparse_means as smn
from . import star_linear as sl
from .discretization import RoundingScheme, Transformation, fit_transformation
from .nonlinear import BasisSpec, build_diagonalized, predict_nl, star_model
from .simulate import (Y_CAP, gen_negbin_regression, gen_nl_mixture_cdf, gen_nl_negbin,
                       gen_rounded_sparse, redraw_response, sparse_scheme)

ESS_BENCHMARK = "ess-benchmark"
PREDICTION_NL = "prediction-nl"
SPARSE_MEANS = "sparse-means"
STUDIES = (ESS_BENCHMARK, PREDICTION_NL, SPARSE_MEANS)

ROW_FIELDS = ["study", "case", "replicate", "n", "p", "method", "metric", "value", "error"]

NL_TRANSFORMS = ["identity", "sqrt", "log", "np-cdf", "poisson", "negbin"]
SPARSE_METHODS = ["np-cdf+rounding", "identity+rounding", "gaussian-no-rounding"]


@dataclass
class ExperimentConfig:
    study: str
    replicates: int = 20
    seed: int = 0
    n: list = field(default_factory=lambda: [100, 200])
    p: list = field(default_factory=lambda: [10, 50])
    psi: float = sl.DEFAULT_PSI
    draws: int = 1000
    burnin: int = 1000
    cases: list = field(default_factory=lambda: ["mixture"])
    transforms: list = field(default_factory=lambda: list(NL_TRANSFORMS))
    model_average: bool = True
    n_interior: int = 20
    mu: float = 2.0
    prop_signal: list = field(default_factory=lambda: [0.1])
    methods: list = field(default_factory=lambda: list(SPARSE_METHODS))
    sweeps: int = 2000
    sparse_burnin: int = 500
    marginal_samples: int = 4000
    workers: int = 1
    out: str | None = None

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ValueError(f"unknown study {self.study!r}; choose from {STUDIES}")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        for name in ("n", "p", "cases", "transforms", "prop_signal", "methods"):
            val = getattr(self, name)
            if not isinstance(val, (list, tuple)):
                setattr(self, name, [val])
            if not getattr(self, name):
                raise ValueError(f"grid {name} must be nonempty")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def _row(cfg, case, rep, n, p, method, metric, value):
    return {"study": cfg.study, "case": case, "replicate": rep, "n": n, "p": p,
            "method": method, "metric": metric, "value": float(value)}


# ---------------------------------------------------------------- ess benchmark

def ess_replicate(cfg: ExperimentConfig, n: int, p: int, rep: int, seq) -> list:
    rng = np.random.default_rng(seq)
    data = gen_negbin_regression(n, p, rng)
    scheme = RoundingScheme.counts()
    g = fit_transformation("np-cdf", data.y, scheme)
    sigma = sl.estimate_sigma(data.X, data.y, scheme, g)
    model = sl.StarLinearModel(data.X, data.y, scheme, g, sl.GPrior(cfg.psi), sigma)
    rows = []
    per_k = 1000.0 / cfg.draws
    t0 = time.perf_counter()
    direct = sl.sample_posterior_gprior(model, cfg.draws, rng)
    t_direct = time.perf_counter() - t0
    approx = bool(sl._gprior_v0(model).approximate)
    t0 = time.perf_counter()
    gibbs = sl.gibbs_da_baseline(model, cfg.draws, cfg.burnin, rng)
    t_gibbs = time.perf_counter() - t0
    for method, draws, secs in (("direct-mc", direct, t_direct), ("gibbs-da", gibbs, t_gibbs)):
        rows.append(_row(cfg, "negbin", rep, n, p, method, "median_ess_pct",
                         np.median(metrics.ess_percent(draws))))
        rows.append(_row(cfg, "negbin", rep, n, p, method, "seconds_per_1000", secs * per_k))
    rows.append(_row(cfg, "negbin", rep, n, p, "direct-mc", "approximate", approx))
    return rows


# ---------------------------------------------------------------- nonlinear prediction

def _score(cfg, case, rep, n, method, draws, y_test) -> list:
    iv = metrics.interval_metrics(draws, y_test, 0.9)
    return [_row(cfg, case, rep, n, "", method, "rps", np.mean(metrics.rps_from_draws(draws, y_test))),
            _row(cfg, case, rep, n, "", method, "interval_width", iv.mean_width),
            _row(cfg, case, rep, n, "", method, "coverage", iv.coverage)]


def nl_replicate(cfg: ExperimentConfig, case: str, n: int, rep: int, seq) -> list:
    rng = np.random.default_rng(seq)
    gen = gen_nl_mixture_cdf if case == "mixture" else gen_nl_negbin
    data = gen(n, rng)
    y_test = redraw_response(data, rng)
    scheme = RoundingScheme.counts(Y_CAP)
    basis = build_diagonalized(BasisSpec(n_interior=cfg.n_interior), data.tau)
    rows, cands = [], []
    for kind in cfg.transforms:
        try:
            g = fit_transformation(kind, data.y, scheme)
            sigma = sl.estimate_sigma(basis.X, data.y, scheme, g)
            t0 = time.perf_counter()
            draws = predict_nl(basis, data.y, scheme, g, cfg.psi, sigma, data.tau, cfg.draws, rng)
            secs = time.perf_counter() - t0
        except Exception as exc:  # recorded, study continues
            rows.append(_row(cfg, case, rep, n, "", kind, "error", math.nan) | {"error": repr(exc)})
            continue
        rows += _score(cfg, case, rep, n, kind, draws, y_test)
        rows.append(_row(cfg, case, rep, n, "", kind, "seconds", secs))
        cands.append(ms.Candidate(star_model(basis, data.y, scheme, g, cfg.psi, sigma),
                                  kind, basis, cfg.psi))
    if cfg.model_average and cands:
        cset = ms.CandidateSet(cands)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ms.ModelComparisonWarning)
            probs = ms.posterior_model_probs(cset, None, cfg.marginal_samples, rng)
        draws, _ = ms.model_averaged_predict(cset, data.tau, cfg.draws, rng, probs=probs.probs)
        rows += _score(cfg, case, rep, n, "model-averaged", draws, y_test)
        for c, w in zip(cands, probs.probs):
            rows.append(_row(cfg, case, rep, n, "", c.label, "model_weight", w))
    return rows


# ---------------------------------------------------------------- sparse means

def sparse_config(method: str, y, scheme) -> smn.SparseMeansConfig:
    if method == "np-cdf+rounding":
        g = fit_transformation("np-cdf", y, scheme)
        return smn.SparseMeansConfig(scheme, g, smn.estimate_sigma_2means(y, scheme, g))
    if method == "identity+rounding":
        g = Transformation.identity()
        return smn.SparseMeansConfig(scheme, g, smn.estimate_sigma_2means(y, scheme, g))
    if method == "gaussian-no-rounding":
        g = Transformation.identity()
        return smn.SparseMeansConfig(scheme, g, smn.estimate_sigma_2means(y, scheme, g, rounding=False),
                                     rounding=False)
    raise ValueError(f"unknown sparse-means method {method!r}")


def sparse_replicate(cfg: ExperimentConfig, n: int, prop: float, rep: int, seq) -> list:
    rng = np.random.default_rng(seq)
    data = gen_rounded_sparse(n, cfg.mu, prop, rng)
    scheme = sparse_scheme()
    rows = []
    case = f"prop={prop:g}"
    for method in cfg.methods:
        try:
            conf = sparse_config(method, data.y, scheme)
            t0 = time.perf_counter()
            res = smn.run_chain(conf, data.y, cfg.sweeps, cfg.sparse_burnin, rng)
            secs = time.perf_counter() - t0
            auc = metrics.roc_auc(res.inclusion_probs, data.truth["gamma"]).auc
        except Exception as exc:
            rows.append(_row(cfg, case, rep, n, "", method, "error", math.nan) | {"error": repr(exc)})
            continue
        rows.append(_row(cfg, case, rep, n, "", method, "auc", auc))
        rows.append(_row(cfg, case, rep, n, "", method, "seconds", secs))
    return rows


# ---------------------------------------------------------------- driver

def _tasks(cfg: ExperimentConfig):
    if cfg.study == ESS_BENCHMARK:
        cells = [(n, p) for n in cfg.n for p in cfg.p]
        fn = ess_replicate
    elif cfg.study == PREDICTION_NL:
        cells = [(case, n) for case in cfg.cases for n in cfg.n]
        fn = nl_replicate
    else:
        cells = [(n, prop) for n in cfg.n for prop in cfg.prop_signal]
        fn = sparse_replicate
    master = np.random.SeedSequence(cfg.seed)
    for cell, cell_seq in zip(cells, master.spawn(len(cells))):
        for rep, seq in enumerate(cell_seq.spawn(cfg.replicates)):
            yield fn, (cfg, *cell, rep, seq)


def _run_task(task):
    fn, args = task
    try:
        return fn(*args)
    except Exception as exc:
        cfg, rep = args[0], args[-2]
        return [{"study": cfg.study, "case": "", "replicate": rep, "n": "", "p": "",
                 "method": "", "metric": "error", "value": math.nan,
                 "error": "".join(traceback.format_exception_only(type(exc), exc)).strip()}]


def summarize(rows: list) -> dict:
    """Median and mean of each (case, n, p, method, metric) group."""
    groups: dict = {}
    for r in rows:
        if r["metric"] == "error":
            continue
        key = "|".join(str(r[k]) for k in ("case", "n", "p", "method", "metric"))
        groups.setdefault(key, []).append(r["value"])
    out = {}
    for key, vals in sorted(groups.items()):
        v = np.asarray(vals, dtype=float)
        out[key] = {"mean": float(np.mean(v)), "median": float(np.median(v)), "count": int(v.size)}
    return out


def is_timing(row) -> bool:
    return "second" in row["metric"]


def run_study(cfg: ExperimentConfig) -> dict:
    """Run every replicate.

    With ``cfg.out`` set, writes ``rows.csv`` and ``summary.json`` (both
    reproducible for a fixed seed) and ``timings.csv`` (wall-clock seconds).
    """
    tasks = list(_tasks(cfg))
    t0 = time.perf_counter()
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    wall = time.perf_counter() - t0
    everything = [r for res in results for r in res]
    rows = [r for r in everything if not is_timing(r)]
    timings = [r for r in everything if is_timing(r)]
    summary = {"study": cfg.study,
               "config": {k: v for k, v in asdict(cfg).items() if k not in ("out", "workers")},
               "errors": sum(r["metric"] == "error" for r in rows),
               "groups": summarize(rows)}
    if cfg.study == ESS_BENCHMARK:
        summary["design"] = {"theta": "intercept log(10); ceil(p/2) slopes 1/sqrt(p); rest 0",
                             "dispersion": 5, "covariates": "iid N(0,1) plus intercept column"}
    if cfg.out:
        out = Path(cfg.out)
        write_rows(rows, out / "rows.csv")
        write_rows(timings + [{"study": cfg.study, "metric": "wall_seconds", "value": wall}],
                   out / "timings.csv")
        (out / "summary.json").write_text(json.dumps(_plain(summary), indent=2, sort_keys=True) + "\n")
    return {"rows": rows, "timings": timings, "summary": summary, "wall_seconds": wall}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def write_rows(rows: list, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = ROW_FIELDS
    exists = path.exists()
    with path.open("a" if exists else "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        if not exists:
            w.writeheader()
        for r in rows:
            w.writerow({k: (repr(r[k]) if isinstance(r.get(k), float) else r.get(k, "")) for k in fields})


def group_values(rows: list, metric: str, method: str, **where) -> np.ndarray:
    vals = [r["value"] for r in rows if r["metric"] == metric and r["method"] == method
            and all(r.get(k) == v for k, v in where.items())]
    return np.asarray(vals, dtype=float)
