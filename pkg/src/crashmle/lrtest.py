"""Likelihood-ratio tests for parameter transferability across subsets.

The observed statistic compares a pooled fit against separate fits on
the two halves of a 0/1 split: ``x2 = -2 * (ll_pooled - ll_a - ll_b)``
with one degree of freedom per extra parameter.  Because the asymptotic
chi-squared reference can be optimistic in small samples, the Monte
Carlo variant re-simulates outcomes from the pooled fit, refits all
three models per replicate, and reports the plain exceedance fraction
as the finite-sample p-value.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaincc

from . import mixed, mnl, negbin, simulate
from .dataset import (DesignMatrix, ModelSpec, ObservationTable, build_design,
                      split_by_flag)
from .optimize import (FitResult, OptimizationError, OptimSettings, maximize)


def chi2_sf(x, dof) -> float:
    """Chi-squared survival function P(X >= x) via the regularized
    upper incomplete gamma function."""
    if np.any(np.asarray(dof) <= 0):
        raise ValueError("dof must be positive")
    if np.any(np.asarray(x) < 0):
        raise ValueError("x must be non-negative")
    out = gammaincc(np.asarray(dof) / 2.0, np.asarray(x) / 2.0)
    return float(out) if np.isscalar(x) and np.isscalar(dof) else out


def chi2_quantile(p: float, dof: float) -> float:
    """Quantile of the chi-squared distribution by bracketed root finding."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    if dof <= 0:
        raise ValueError("dof must be positive")
    target = 1.0 - p
    hi = dof + 10.0
    for _ in range(200):
        if chi2_sf(hi, dof) < target:
            break
        hi *= 2.0
    else:
        raise RuntimeError("failed to bracket the quantile")
    return float(brentq(lambda x: chi2_sf(x, dof) - target, 0.0, hi,
                        xtol=1e-12, rtol=8.9e-16))


def lr_statistic(ll_all: float, ll_a: float, ll_b: float,
                 params_all: int, params_a: int, params_b: int,
                 clamp_tol: float = 1e-4):
    """Pooling statistic and degrees of freedom.

    The statistic is non-negative whenever the subset fits are at least
    as good as the pooled fit restricted to each subset; values inside
    ``-clamp_tol`` are attributed to optimizer noise and clamped to
    zero with a warning, anything lower is an error.
    """
    dof = params_a + params_b - params_all
    if dof <= 0:
        raise ValueError(f"degrees of freedom must be positive, got {dof}")
    x2 = -2.0 * (ll_all - ll_a - ll_b)
    if x2 < -clamp_tol:
        raise ValueError(
            f"pooled log-likelihood exceeds the subset total by {-x2 / 2:.6g}; "
            f"subset fits did not reach their optima")
    if x2 < 0.0:
        warnings.warn(f"clamping slightly negative statistic {x2:.3g} to zero",
                      RuntimeWarning)
        x2 = 0.0
    return x2, dof


@dataclass
class ModelPiece:
    """One of the three fits entering the statistic."""

    label: str
    ll: float
    n_params: int
    n_obs: int
    converged: bool

    def to_dict(self) -> dict:
        return {"label": self.label, "ll": self.ll, "n_params": self.n_params,
                "n_obs": self.n_obs, "converged": self.converged}


@dataclass
class LrTestResult:
    x2: float
    dof: int
    p_asymptotic: float
    critical_value_05: float
    pooled: ModelPiece
    subset_a: ModelPiece
    subset_b: ModelPiece
    flag_column: str
    family: str
    p_mc: float | None = None
    replicates_requested: int = 0
    replicates_kept: int = 0
    replicates_dropped: int = 0
    seed: int | None = None
    plus_one: bool = False
    histogram_edges: np.ndarray | None = None
    histogram_counts: np.ndarray | None = None
    #: raw replicate statistics; kept in memory for diagnostics, not serialized
    null_stats: np.ndarray | None = None

    @property
    def all_converged(self) -> bool:
        return (self.pooled.converged and self.subset_a.converged
                and self.subset_b.converged)

    def to_dict(self) -> dict:
        from . import serialize
        d = {"x2": self.x2, "dof": self.dof,
             "p_asymptotic": self.p_asymptotic,
             "critical_value_05": self.critical_value_05,
             "pooled": self.pooled.to_dict(),
             "subset_a": self.subset_a.to_dict(),
             "subset_b": self.subset_b.to_dict(),
             "flag_column": self.flag_column,
             "family": self.family,
             "p_mc": serialize.nan_to_none(self.p_mc) if self.p_mc is not None else None,
             "replicates_requested": self.replicates_requested,
             "replicates_kept": self.replicates_kept,
             "replicates_dropped": self.replicates_dropped,
             "seed": self.seed,
             "plus_one": self.plus_one,
             "histogram": None}
        if self.histogram_edges is not None:
            d["histogram"] = {"edges": list(map(float, self.histogram_edges)),
                              "counts": list(map(int, self.histogram_counts))}
        return d

    def write_histogram_csv(self, path) -> None:
        """Null-distribution histogram as bin_left,bin_right,count rows."""
        if self.histogram_edges is None:
            raise ValueError("no Monte Carlo histogram in this result")
        import csv
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_left", "bin_right", "count"])
            edges = self.histogram_edges
            for i, count in enumerate(self.histogram_counts):
                writer.writerow([repr(float(edges[i])), repr(float(edges[i + 1])),
                                 int(count)])


def _objective_for(family: str, design: DesignMatrix,
                   draws: mixed.DrawMatrix | None = None,
                   y_index=None, counts=None):
    if family == "mnl":
        return mnl.make_objective(design, y_index=y_index)
    if family == "mixed_mnl":
        return mixed.make_objective(design, draws, y_index=y_index)
    if family == "nb":
        return negbin.make_objective(design, counts=counts)
    if family == "mixed_nb":
        return negbin.make_mixed_objective(design, draws, counts=counts)
    raise ValueError(f"unknown family {family!r}")


def _param_count(spec: ModelSpec, design: DesignMatrix) -> int:
    return design.n_params + (1 if spec.is_frequency else 0)


def _default_start(spec: ModelSpec, design: DesignMatrix) -> np.ndarray:
    if spec.is_frequency:
        return negbin._default_theta0(design)
    return np.zeros(design.n_params)


class _Pieces:
    """Cached designs, draw matrices, and observed fits for one test."""

    def __init__(self, table: ObservationTable, spec: ModelSpec,
                 flag_column: str, settings: OptimSettings | None,
                 n_draws: int | None, draw_seed: int = 0):
        self.spec = spec
        self.settings = settings
        self.flag_column = flag_column
        self.table = table
        flag = table.columns.get(flag_column)
        if flag is None:
            raise ValueError(f"flag column {flag_column!r} not in table")
        part_a, part_b = split_by_flag(table, flag_column)
        if part_a.n_rows == 0 or part_b.n_rows == 0:
            raise ValueError(f"flag column {flag_column!r} does not split the data")
        self.mask_a = flag == 1.0
        self.design_all = build_design(table, spec)
        self.design_a = build_design(part_a, spec)
        self.design_b = build_design(part_b, spec)
        self.n_draws = n_draws if n_draws is not None else (
            200 if spec.is_mixed else None)
        self.draws = {}
        if spec.is_mixed:
            for key, design in (("all", self.design_all), ("a", self.design_a),
                                ("b", self.design_b)):
                self.draws[key] = mixed.DrawMatrix.for_design(
                    design, self.n_draws, seed=draw_seed)

    def objective(self, key: str, y_index=None, counts=None):
        design = {"all": self.design_all, "a": self.design_a,
                  "b": self.design_b}[key]
        return _objective_for(self.spec.family, design,
                              draws=self.draws.get(key),
                              y_index=y_index, counts=counts)

    def fit(self, key: str, theta0=None, y_index=None, counts=None):
        design = {"all": self.design_all, "a": self.design_a,
                  "b": self.design_b}[key]
        start = _default_start(self.spec, design) if theta0 is None else theta0
        return maximize(self.objective(key, y_index, counts), start, self.settings)


def _observed(pieces: _Pieces):
    res_all = pieces.fit("all")
    res_a = pieces.fit("a", theta0=res_all.theta)
    res_b = pieces.fit("b", theta0=res_all.theta)
    return res_all, res_a, res_b


def _build_result(pieces: _Pieces, res_all, res_a, res_b) -> LrTestResult:
    p_all = _param_count(pieces.spec, pieces.design_all)
    x2, dof = lr_statistic(res_all.ll, res_a.ll, res_b.ll, p_all, p_all, p_all)
    for label, res in (("pooled", res_all), ("subset A", res_a), ("subset B", res_b)):
        if not res.converged:
            warnings.warn(f"{label} fit did not converge: {res.message}",
                          RuntimeWarning)
    return LrTestResult(
        x2=x2, dof=dof, p_asymptotic=chi2_sf(x2, dof),
        critical_value_05=chi2_quantile(0.95, dof),
        pooled=ModelPiece("pooled", res_all.ll, p_all,
                          pieces.design_all.n_obs, res_all.converged),
        subset_a=ModelPiece("subset_a", res_a.ll, p_all,
                            pieces.design_a.n_obs, res_a.converged),
        subset_b=ModelPiece("subset_b", res_b.ll, p_all,
                            pieces.design_b.n_obs, res_b.converged),
        flag_column=pieces.flag_column, family=pieces.spec.family)


def lr_test(table: ObservationTable, spec: ModelSpec, flag_column: str,
            settings: OptimSettings | None = None,
            n_draws: int | None = None) -> LrTestResult:
    """Asymptotic pooling test of one spec across a 0/1 split.

    Fits the pooled sample, then each subset warm-started from the
    pooled solution (which guarantees a non-negative statistic), and
    refers the statistic to chi-squared with ``p_a + p_b - p_all``
    degrees of freedom.
    """
    pieces = _Pieces(table, spec, flag_column, settings, n_draws)
    return _build_result(pieces, *_observed(pieces))


def simulate_under_null(fit: FitResult, table: ObservationTable,
                        rng: np.random.Generator | int = 0) -> ObservationTable:
    """Redraw outcomes for ``table`` from a fitted pooled model.

    ``rng`` may be a Generator or a seed.  Under this resampling the
    pooled spec is the true model, so refitted statistics trace the
    null distribution of the pooling test.
    """
    if fit.spec is None:
        raise ValueError("fit carries no model spec")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(rng))))
    return simulate.redraw_outcomes(fit.spec, fit.theta_internal, table, rng)


def mc_null_distribution(table: ObservationTable, spec: ModelSpec,
                         flag_column: str, replicates: int = 1000,
                         seed: int = 0, bins: int = 50,
                         settings: OptimSettings | None = None,
                         n_draws: int | None = None,
                         plus_one: bool = False,
                         max_failure_rate: float = 0.2) -> LrTestResult:
    """Parametric-bootstrap pooling test.

    Each replicate redraws outcomes from the observed pooled fit,
    refits pooled and subset models (warm-started so every replicate
    statistic is non-negative by construction), and the Monte Carlo
    p-value is the fraction of replicate statistics at or above the
    observed one.  ``plus_one`` switches to the (k+1)/(n+1) estimate.
    Replicates whose refits fail to converge are dropped and counted;
    more than ``max_failure_rate`` of them aborts the test.

    Replicate streams derive from ``(seed, replicate_index)``, so
    results do not depend on execution order.
    """
    if replicates < 1:
        raise ValueError("replicates must be positive")
    pieces = _Pieces(table, spec, flag_column, settings, n_draws)
    res_all, res_a, res_b = _observed(pieces)
    result = _build_result(pieces, res_all, res_a, res_b)

    design_all = pieces.design_all
    mask_a = pieces.mask_a
    mask_b = ~mask_a
    theta_terms = res_all.theta[:-1] if spec.is_frequency else res_all.theta
    locs, scales = design_all.unpack(theta_terms)
    alpha = float(np.exp(res_all.theta[-1])) if spec.is_frequency else None

    null_stats = []
    dropped = 0
    for i in range(replicates):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, i))))
        coef = simulate.coefficient_matrix(design_all, locs, scales, rng)
        if spec.is_severity:
            y_full = simulate.draw_severity_outcomes(design_all, coef, rng)
            kw_all = {"y_index": y_full}
            kw_a = {"y_index": y_full[mask_a]}
            kw_b = {"y_index": y_full[mask_b]}
        else:
            c_full = simulate.draw_counts(design_all, coef, alpha, rng)
            kw_all = {"counts": c_full}
            kw_a = {"counts": c_full[mask_a]}
            kw_b = {"counts": c_full[mask_b]}
        try:
            rep_all = pieces.fit("all", theta0=res_all.theta, **kw_all)
            rep_a = pieces.fit("a", theta0=rep_all.theta, **kw_a)
            rep_b = pieces.fit("b", theta0=rep_all.theta, **kw_b)
        except OptimizationError:
            dropped += 1
            continue
        if not (rep_all.converged and rep_a.converged and rep_b.converged):
            dropped += 1
            continue
        x2_i = -2.0 * (rep_all.ll - rep_a.ll - rep_b.ll)
        if x2_i < -1e-4:
            dropped += 1
            continue
        null_stats.append(max(x2_i, 0.0))

    if dropped > max_failure_rate * replicates:
        raise RuntimeError(
            f"{dropped} of {replicates} null replicates failed to converge; "
            f"the null distribution is unreliable")
    null_stats = np.asarray(null_stats)
    kept = null_stats.size
    exceed = int((null_stats >= result.x2).sum())
    if plus_one:
        p_mc = (exceed + 1) / (kept + 1)
    else:
        p_mc = exceed / kept
    hi = float(max(null_stats.max() if kept else 0.0, result.x2))
    if hi <= 0.0:
        hi = 1.0
    counts, edges = np.histogram(null_stats, bins=bins, range=(0.0, hi))

    result.p_mc = float(p_mc)
    result.replicates_requested = replicates
    result.replicates_kept = kept
    result.replicates_dropped = dropped
    result.seed = seed
    result.plus_one = plus_one
    result.histogram_edges = edges
    result.histogram_counts = counts
    result.null_stats = null_stats
    return result
