"""Grid search for the influence distance of a point feature.

A feature located somewhere along a road is assumed to affect accident
severity only within an unknown distance D of itself.  The model enters
the feature through the capped variable min(d, D), where d is each
accident's distance to the feature.  The search fits the severity model
over a grid of caps and picks the one with the highest log-likelihood;
the feature's influence segment is then 2 * D_star (both directions).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from . import mnl
from .dataset import ModelSpec, ObservationTable, build_design
from .optimize import OptimizationError, OptimSettings, maximize


def influence_variable(d, cap: float) -> np.ndarray:
    """Capped distance min(d, cap) used as the model covariate."""
    if cap <= 0:
        raise ValueError("cap must be positive")
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("distances must be non-negative")
    return np.minimum(d, cap)


@dataclass
class InfluenceProfile:
    """Log-likelihood profile over candidate influence distances."""

    distance_column: str
    grid: np.ndarray
    ll: np.ndarray
    converged: np.ndarray
    d_star: float
    segment_length: float
    flat: bool

    def to_dict(self) -> dict:
        from . import serialize
        return {"distance_column": self.distance_column,
                "grid": [float(v) for v in self.grid],
                "ll": [serialize.nan_to_none(float(v)) for v in self.ll],
                "converged": [bool(v) for v in self.converged],
                "d_star": self.d_star,
                "segment_length": self.segment_length,
                "flat": self.flat}

    def to_csv(self, path) -> None:
        """Profile rows as D,ll,converged."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["D", "ll", "converged"])
            for i in range(len(self.grid)):
                writer.writerow([repr(float(self.grid[i])),
                                 repr(float(self.ll[i])),
                                 int(self.converged[i])])


def search_influence(table: ObservationTable, spec: ModelSpec,
                     distance_column: str, d_min: float, d_max: float,
                     step: float, settings: OptimSettings | None = None,
                     tie_tol: float = 1e-6) -> InfluenceProfile:
    """Profile the severity log-likelihood over candidate caps.

    Parameters
    ----------
    table, spec : data and multinomial logit model
        ``distance_column`` must appear in the spec; at every grid
        point its values are replaced by min(d, D) before fitting.
    d_min, d_max, step : floats
        Inclusive grid ``d_min, d_min + step, ...`` up to ``d_max``.
    tie_tol : float
        Log-likelihood ties within this tolerance resolve to the
        smallest cap; a profile whose total range is below it is
        reported flat with a warning.

    Fits are warm-started along the grid, so once the cap exceeds the
    largest observed distance the capped variable, the fit, and the
    log-likelihood stop changing exactly.
    """
    if spec.family != "mnl":
        raise ValueError("influence search expects a plain mnl spec")
    if distance_column not in table.columns:
        raise ValueError(f"distance column {distance_column!r} not in table")
    if not any(t.variable == distance_column for t in spec.terms):
        raise ValueError(f"spec has no term on {distance_column!r}")
    if d_min <= 0 or step <= 0 or d_max < d_min:
        raise ValueError("need 0 < d_min <= d_max and step > 0")

    n_points = int(np.floor((d_max - d_min) / step + 1e-9)) + 1
    grid = d_min + step * np.arange(n_points)
    raw = table.columns[distance_column]
    if np.any(raw < 0):
        raise ValueError("distances must be non-negative")

    lls = np.full(n_points, np.nan)
    converged = np.zeros(n_points, dtype=bool)
    theta_prev = None
    for k, cap in enumerate(grid):
        columns = dict(table.columns)
        columns[distance_column] = influence_variable(raw, float(cap))
        capped = ObservationTable(columns, table.outcome, table.mode)
        design = build_design(capped, spec)
        start = np.zeros(design.n_params) if theta_prev is None else theta_prev
        try:
            res = maximize(mnl.make_objective(design), start, settings)
        except OptimizationError:
            continue
        lls[k] = res.ll
        converged[k] = res.converged
        if res.converged:
            theta_prev = res.theta

    if not converged.any():
        raise RuntimeError("no grid point converged; profile is unusable")
    ok = np.where(converged)[0]
    ll_max = lls[ok].max()
    best = ok[lls[ok] >= ll_max - tie_tol]
    d_star = float(grid[best[0]])
    flat = bool(lls[ok].max() - lls[ok].min() < tie_tol)
    if flat:
        warnings.warn("log-likelihood profile is flat over the whole grid; "
                      "the influence distance is not identified", RuntimeWarning)
    return InfluenceProfile(distance_column, grid, lls, converged,
                            d_star, 2.0 * d_star, flat)
