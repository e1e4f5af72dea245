"""Per-zone iterative proportional fitting of survey record weights.

Starting from unit weights, each sweep rescales the weights of every
category of every constraint variable (in declaration order) so weighted
category counts hit the zone's marginal targets. Converged weights are the
minimum-KL-divergence adjustment of the uniform seed, which the test suite
checks against an independent optimizer on small instances.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import InfeasibleError
from .harmonize import ConstraintTable, SurveyTable

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitOptions:
    tolerance: float = 1e-8
    max_iterations: int = 1000
    # "error" raises on a positive target with zero weighted survey count;
    # "skip" drops that variable from the fit with a warning.
    infeasibility: str = "error"

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.infeasibility not in ("error", "skip"):
            raise ValueError("infeasibility must be 'error' or 'skip'")


@dataclass
class FitDiagnostics:
    iterations: int
    max_residual: float
    converged: bool
    residuals: dict[str, float] = field(default_factory=dict)
    skipped_variables: list[str] = field(default_factory=list)


def _relative_residuals(
    weights: np.ndarray,
    codes: dict[str, np.ndarray],
    targets: dict[str, np.ndarray],
    skipped: set[str],
) -> dict[str, float]:
    out = {}
    for v, target in targets.items():
        if v in skipped:
            continue
        got = np.bincount(codes[v], weights=weights, minlength=len(target))
        out[v] = float(np.max(np.abs(got - target) / np.maximum(1.0, target)))
    return out


def fit_zone(
    survey: SurveyTable,
    marginals: dict[str, np.ndarray],
    opts: FitOptions = FitOptions(),
    zone_id: str = "",
) -> tuple[np.ndarray, FitDiagnostics]:
    """Fit one zone's weights to its marginal targets.

    Returns (weights, diagnostics); non-convergence is flagged, not raised.
    A zero marginal with surviving survey members drives those weights to
    exactly 0; a positive marginal with zero weighted count triggers the
    infeasibility policy.
    """
    if survey.n_records == 0:
        raise InfeasibleError("cannot fit an empty survey")
    order = [v for v in survey.index.variables if v in marginals]
    codes = {v: survey.category_codes(v) for v in order}
    targets = {v: np.asarray(marginals[v], dtype=float) for v in order}

    weights = np.ones(survey.n_records, dtype=float)
    skipped: set[str] = set()
    iterations = 0
    converged = False
    for iterations in range(1, opts.max_iterations + 1):
        for v in order:
            if v in skipped:
                continue
            target = targets[v]
            got = np.bincount(codes[v], weights=weights, minlength=len(target))
            empty = (got == 0) & (target > 0)
            if empty.any():
                cat = survey.index.categories[v][int(np.nonzero(empty)[0][0])]
                msg = (
                    f"zone {zone_id or '?'}: category {v}.{cat} has a positive "
                    f"target but no weighted survey members"
                )
                if opts.infeasibility == "error":
                    raise InfeasibleError(msg)
                log.warning("%s; skipping variable %r", msg, v)
                skipped.add(v)
                continue
            factors = np.ones_like(target)
            nonzero = got > 0
            factors[nonzero] = target[nonzero] / got[nonzero]
            weights *= factors[codes[v]]
        residuals = _relative_residuals(weights, codes, targets, skipped)
        worst = max(residuals.values()) if residuals else 0.0
        if worst <= opts.tolerance:
            converged = True
            break

    residuals = _relative_residuals(weights, codes, targets, skipped)
    diag = FitDiagnostics(
        iterations=iterations,
        max_residual=max(residuals.values()) if residuals else 0.0,
        converged=converged,
        residuals=residuals,
        skipped_variables=sorted(skipped),
    )
    return weights, diag


@dataclass
class WeightField:
    """fit_all output: per-zone weight vectors plus diagnostics and failures."""

    zone_ids: list[str]                      # zones fitted, in table order
    weights: dict[str, np.ndarray]
    diagnostics: dict[str, FitDiagnostics]
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def n_zones(self) -> int:
        return len(self.zone_ids)

    def weights_frame(self, survey: SurveyTable) -> pd.DataFrame:
        rows = []
        for z in self.zone_ids:
            w = self.weights[z]
            rows.append(
                pd.DataFrame(
                    {"zone_id": z, "survey_id": survey.ids, "weight": w}
                )
            )
        return pd.concat(rows, ignore_index=True)

    def diagnostics_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "zone_id": self.zone_ids,
                "iterations": [self.diagnostics[z].iterations for z in self.zone_ids],
                "max_residual": [
                    self.diagnostics[z].max_residual for z in self.zone_ids
                ],
                "converged": [self.diagnostics[z].converged for z in self.zone_ids],
            }
        )


def fit_all(
    survey: SurveyTable,
    constraints: ConstraintTable,
    opts: FitOptions = FitOptions(),
    threads: int = 1,
) -> WeightField:
    """Independent per-zone fits; output identical for any thread count.

    Zones that hit the infeasibility policy (policy="error") are collected in
    ``failures`` and excluded from the fitted set instead of aborting the run.
    """
    zone_ids = list(constraints.zone_ids)

    def one(zone: str):
        marg = constraints.zone_marginals(zone)
        try:
            return zone, fit_zone(survey, marg, opts, zone_id=zone), None
        except InfeasibleError as exc:
            return zone, None, str(exc)

    if threads > 1 and len(zone_ids) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, zone_ids))
    else:
        results = [one(z) for z in zone_ids]

    weights: dict[str, np.ndarray] = {}
    diagnostics: dict[str, FitDiagnostics] = {}
    failures: dict[str, str] = {}
    fitted: list[str] = []
    for zone, fit, err in results:
        if err is not None:
            failures[zone] = err
            continue
        w, diag = fit
        weights[zone] = w
        diagnostics[zone] = diag
        fitted.append(zone)
    return WeightField(fitted, weights, diagnostics, failures)
