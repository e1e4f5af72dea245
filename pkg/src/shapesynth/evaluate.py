"""Compare estimate sets against references and rank models.

Metric records hold Pearson's r (with R² = r²), MAE, and the fraction of
estimates falling inside the reference confidence intervals. For ranking,
MAE is standardized against the min/max of every MAE in the supplied grid
and inverted so that higher is better; each metric is then centered on its
grid mean and the per-(model, outcome) composite is the sum of the three
deviations over all regions.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataError, SchemaError

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["model", "region", "outcome", "r", "r2", "mae", "ci_coverage", "n"]
DEVIATION_COLUMNS = ["model", "region", "outcome", "r_dev", "mae_dev", "ci_dev"]


def pearson_r(x, y) -> float:
    """Sample Pearson correlation; requires length >= 3 and nonzero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DataError(f"length mismatch: {x.shape} vs {y.shape}")
    if len(x) < 3:
        raise DataError(f"need at least 3 pairs for a correlation, got {len(x)}")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt((xc * xc).sum())
    sy = np.sqrt((yc * yc).sum())
    if sx == 0 or sy == 0:
        raise DataError("correlation undefined: an input has zero variance")
    return float((xc * yc).sum() / (sx * sy))


def mae(x, y) -> float:
    """Mean absolute error between paired vectors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DataError(f"length mismatch: {x.shape} vs {y.shape}")
    if len(x) == 0:
        raise DataError("mae of empty vectors")
    return float(np.mean(np.abs(x - y)))


@dataclass
class CoverageResult:
    fraction: float
    covered: int
    n: int
    excluded: int = 0     # matched zones lacking CI bounds, or unmatched zones


def ci_coverage(estimates: pd.DataFrame, reference: pd.DataFrame) -> CoverageResult:
    """Fraction of estimates inside the reference CI, bounds inclusive.

    Frames are joined on zone_id (plus outcome when both carry it); zones
    without a match or without CI bounds are excluded and counted.
    """
    keys = ["zone_id"]
    if "outcome" in estimates.columns and "outcome" in reference.columns:
        keys.append("outcome")
    for col in ("ci_low", "ci_high"):
        if col not in reference.columns:
            raise SchemaError(f"reference table has no {col!r} column")
    merged = estimates.merge(
        reference, on=keys, how="left", suffixes=("", "_ref")
    )
    lo = pd.to_numeric(merged["ci_low"], errors="coerce")
    hi = pd.to_numeric(merged["ci_high"], errors="coerce")
    usable = lo.notna() & hi.notna()
    excluded = int((~usable).sum())
    est = merged.loc[usable, "estimate"].astype(float)
    inside = (est >= lo[usable]) & (est <= hi[usable])
    n = int(usable.sum())
    if n == 0:
        raise DataError("no matched zones with CI bounds to score coverage against")
    covered = int(inside.sum())
    return CoverageResult(covered / n, covered, n, excluded)


def evaluate_estimates(
    estimates: pd.DataFrame, reference: pd.DataFrame
) -> pd.DataFrame:
    """Per-(model, region, outcome) metric records against a reference set.

    ``estimates`` columns: model, region, zone_id, outcome, estimate.
    ``reference`` columns: zone_id, outcome, estimate [, ci_low, ci_high]
    (plus an optional region column used in the join when present).
    """
    for col in ("model", "region", "zone_id", "outcome", "estimate"):
        if col not in estimates.columns:
            raise SchemaError(f"estimates table has no {col!r} column")
    for col in ("zone_id", "outcome", "estimate"):
        if col not in reference.columns:
            raise SchemaError(f"reference table has no {col!r} column")
    has_ci = {"ci_low", "ci_high"} <= set(reference.columns)
    if not has_ci:
        log.warning("reference has no CI columns; coverage will be empty")
    join = ["zone_id", "outcome"]
    if "region" in reference.columns:
        join.append("region")

    records = []
    for (model, region, outcome), group in estimates.groupby(
        ["model", "region", "outcome"], sort=False
    ):
        merged = group.merge(reference, on=join, how="inner", suffixes=("", "_ref"))
        n = len(merged)
        if n == 0:
            raise DataError(
                f"no reference zones matched for {model}/{region}/{outcome}"
            )
        unmatched = len(group) - n
        if unmatched:
            log.warning(
                "%s/%s/%s: %d zone(s) had no reference match and were excluded",
                model, region, outcome, unmatched,
            )
        est = merged["estimate"].astype(float).to_numpy()
        ref = merged["estimate_ref"].astype(float).to_numpy()
        r = pearson_r(est, ref)
        coverage = np.nan
        if has_ci:
            cov = ci_coverage(
                merged[["zone_id", "estimate"]],
                merged[["zone_id", "ci_low", "ci_high"]],
            )
            coverage = cov.fraction
        records.append(
            (model, region, outcome, r, r * r, mae(est, ref), coverage, n)
        )
    return pd.DataFrame(records, columns=METRIC_COLUMNS)


def standardize_mae(values) -> np.ndarray:
    """Min-max standardize a pool of MAE values and invert: best (lowest) -> 1."""
    arr = np.asarray(values, dtype=float)
    lo, hi = float(arr.min()), float(arr.max())
    if hi == lo:
        raise DataError("cannot standardize MAE: all values identical")
    return 1.0 - (arr - lo) / (hi - lo)


def _check_complete_grid(frame: pd.DataFrame) -> None:
    models = list(dict.fromkeys(frame["model"]))
    regions = list(dict.fromkeys(frame["region"]))
    outcomes = list(dict.fromkeys(frame["outcome"]))
    have = set(zip(frame["model"], frame["region"], frame["outcome"]))
    holes = [
        combo
        for combo in itertools.product(models, regions, outcomes)
        if combo not in have
    ]
    if holes:
        raise DataError(f"incomplete metric grid; missing entries: {holes[:10]}")
    if len(have) != len(frame):
        raise DataError("duplicate (model, region, outcome) entries in the grid")


@dataclass
class CompositeReport:
    """Deviation grid, per-(model, outcome) composites, and the means used."""

    deviations: pd.DataFrame             # DEVIATION_COLUMNS
    composites: pd.DataFrame             # model, outcome, score
    means: dict[str, float] = field(default_factory=dict)
    mae_range: tuple[float, float] | None = None

    def ranking(self) -> pd.DataFrame:
        """Per model: outcomes by descending score, ties broken by outcome name."""
        frame = self.composites.copy()
        frame = frame.sort_values(
            ["model", "score", "outcome"], ascending=[True, False, True]
        ).reset_index(drop=True)
        frame["rank"] = frame.groupby("model").cumcount() + 1
        return frame[["model", "rank", "outcome", "score"]]


def _composites_from_deviation_frame(dev: pd.DataFrame) -> pd.DataFrame:
    total = dev["r_dev"] + dev["mae_dev"] + dev["ci_dev"]
    summed = (
        dev.assign(score=total)
        .groupby(["model", "outcome"], sort=False)["score"]
        .sum()
        .reset_index()
    )
    return summed[["model", "outcome", "score"]]


def composite_from_deviations(deviations: pd.DataFrame) -> CompositeReport:
    """Build the report straight from an already-computed deviation grid."""
    for col in DEVIATION_COLUMNS:
        if col not in deviations.columns:
            raise SchemaError(f"deviation grid has no {col!r} column")
    dev = deviations[DEVIATION_COLUMNS].copy()
    for col in ("r_dev", "mae_dev", "ci_dev"):
        dev[col] = pd.to_numeric(dev[col])
    _check_complete_grid(dev)
    return CompositeReport(dev, _composites_from_deviation_frame(dev))


def composite_scores(
    metrics: pd.DataFrame, means: tuple[float, float, float] | None = None
) -> CompositeReport:
    """Deviation-from-mean scoring over a complete model x region x outcome grid.

    ``metrics`` columns: model, region, outcome, r, mae, ci_coverage (fraction).
    Means of r, inverted-standardized MAE, and coverage are taken over the
    whole grid unless ``means`` pins them explicitly.
    """
    for col in ("model", "region", "outcome", "r", "mae", "ci_coverage"):
        if col not in metrics.columns:
            raise SchemaError(f"metric grid has no {col!r} column")
    frame = metrics.copy()
    _check_complete_grid(frame)
    r = frame["r"].astype(float).to_numpy()
    raw_mae = frame["mae"].astype(float).to_numpy()
    cov = frame["ci_coverage"].astype(float).to_numpy()
    if np.isnan(cov).any():
        raise DataError("metric grid has missing ci_coverage values")
    smae = standardize_mae(raw_mae)
    if means is None:
        r_mean, smae_mean, cov_mean = r.mean(), smae.mean(), cov.mean()
    else:
        r_mean, smae_mean, cov_mean = means
    dev = pd.DataFrame(
        {
            "model": frame["model"],
            "region": frame["region"],
            "outcome": frame["outcome"],
            "r_dev": r - r_mean,
            "mae_dev": smae - smae_mean,
            "ci_dev": cov - cov_mean,
        }
    )
    return CompositeReport(
        dev,
        _composites_from_deviation_frame(dev),
        means={"r": float(r_mean), "smae": float(smae_mean), "ci": float(cov_mean)},
        mae_range=(float(raw_mae.min()), float(raw_mae.max())),
    )


def rank_models(
    report: CompositeReport,
    threshold: float,
    moderate: float | None = None,
) -> pd.DataFrame:
    """Tier each (model, outcome) composite score.

    reliable >= threshold > moderate >= grid-mean cut > caution >= 0 > limited.
    The moderate cut defaults to the mean composite score over the grid.
    """
    ranked = report.ranking()
    cut = float(report.composites["score"].mean()) if moderate is None else moderate

    def tier(score: float) -> str:
        if score < 0:
            return "limited"
        if score >= threshold:
            return "reliable"
        if score >= cut:
            return "moderate"
        return "caution"

    ranked = ranked.copy()
    ranked["tier"] = [tier(s) for s in ranked["score"]]
    return ranked
