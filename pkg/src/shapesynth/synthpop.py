"""Truncate-replicate-sample integerisation and synthetic-population expansion.

Each weight is truncated to its integer part; the remaining fractional parts
are then sampled systematically (one random offset, equally-spaced pointers
over the cumulative fractions) so the zone total lands exactly on the
rounded weight sum. A record is topped up at most once; a pointer that hits
an already-selected record rolls forward to the next unselected record with
a positive fraction, which keeps every count inside {floor(w), floor(w)+1}.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DataError
from .harmonize import SurveyTable


def zone_rng(seed: int, zone_id: str) -> np.random.Generator:
    """Deterministic per-zone stream keyed by (master seed, zone id)."""
    digest = hashlib.sha256(zone_id.encode("utf-8")).digest()
    zone_key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed), zone_key]))


@dataclass
class IntegerCounts:
    """Integer replication counts for one zone; sum equals round(sum(weights))."""

    zone_id: str
    survey_ids: np.ndarray
    counts: np.ndarray            # (n,) int64

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"zone_id": self.zone_id, "survey_id": self.survey_ids, "count": self.counts}
        )


def integerise_trs(
    weights: np.ndarray, seed: int, zone_id: str, survey_ids: np.ndarray | None = None
) -> IntegerCounts:
    """Convert one zone's continuous weights to integer counts.

    The deficit D = round(sum w) - sum floor(w) records are selected by
    systematic sampling over the fractional parts using the per-zone stream.
    """
    w = np.asarray(weights, dtype=float)
    if np.isnan(w).any():
        raise DataError(f"zone {zone_id}: NaN weight")
    if not np.isfinite(w).all():
        raise DataError(f"zone {zone_id}: non-finite weight")
    if (w < 0).any():
        raise DataError(f"zone {zone_id}: negative weight")
    if survey_ids is None:
        survey_ids = np.arange(len(w)).astype(str).astype(object)

    base = np.floor(w)
    frac = w - base
    total = int(np.rint(w.sum()))
    deficit = total - int(base.sum())
    counts = base.astype(np.int64)
    if deficit > 0:
        frac_sum = frac.sum()
        step = frac_sum / deficit
        rng = zone_rng(seed, zone_id)
        pointers = rng.random() * step + step * np.arange(deficit)
        cum = np.cumsum(frac)
        idx = np.searchsorted(cum, pointers, side="right")
        idx = np.minimum(idx, len(w) - 1)
        selected = np.zeros(len(w), dtype=bool)
        for j in idx:
            # cap rule: at most one top-up per record, roll forward past
            # records that are already selected or have no fraction left
            while selected[j] or frac[j] <= 0:
                j = (j + 1) % len(w)
            selected[j] = True
        counts[selected] += 1
    return IntegerCounts(zone_id, np.asarray(survey_ids, dtype=object), counts)


@dataclass
class SyntheticPopulation:
    """Expanded agents: (zone_id, survey_id, replicate) rows with linked attributes."""

    zone_ids: np.ndarray
    survey_ids: np.ndarray
    replicates: np.ndarray
    attributes: dict[str, np.ndarray]

    def __len__(self) -> int:
        return len(self.zone_ids)

    @property
    def total_agents(self) -> int:
        return len(self.zone_ids)

    def frame(self) -> pd.DataFrame:
        data = {
            "zone_id": self.zone_ids,
            "survey_id": self.survey_ids,
            "replicate": self.replicates,
        }
        data.update(self.attributes)
        return pd.DataFrame(data)

    @classmethod
    def concat(cls, parts: list["SyntheticPopulation"]) -> "SyntheticPopulation":
        if not parts:
            return cls(
                np.empty(0, dtype=object),
                np.empty(0, dtype=object),
                np.empty(0, dtype=np.int64),
                {},
            )
        names = list(parts[0].attributes)
        return cls(
            zone_ids=np.concatenate([p.zone_ids for p in parts]),
            survey_ids=np.concatenate([p.survey_ids for p in parts]),
            replicates=np.concatenate([p.replicates for p in parts]),
            attributes={
                a: np.concatenate([p.attributes[a] for p in parts]) for a in names
            },
        )


def expand(
    counts: IntegerCounts, survey: SurveyTable, attributes: list[str]
) -> SyntheticPopulation:
    """Emit count_i copies of each survey record with attributes linked by id.

    Rows come out in (survey row, replicate) order within the zone.
    """
    for a in attributes:
        if a not in survey.attributes:
            raise DataError(f"attribute {a!r} not carried by the survey")
    id_to_row = {sid: i for i, sid in enumerate(survey.ids)}
    rows = np.empty(len(counts.survey_ids), dtype=np.int64)
    for k, sid in enumerate(counts.survey_ids):
        if sid not in id_to_row:
            raise DataError(
                f"zone {counts.zone_id}: survey_id {sid!r} not present in the survey"
            )
        rows[k] = id_to_row[sid]

    c = counts.counts
    total = int(c.sum())
    src = np.repeat(rows, c)
    # replicate index 1..count_i for each record
    ends = np.cumsum(c)
    replicates = np.arange(1, total + 1) - np.repeat(ends - c, c)
    return SyntheticPopulation(
        zone_ids=np.full(total, counts.zone_id, dtype=object),
        survey_ids=survey.ids[src],
        replicates=replicates.astype(np.int64),
        attributes={a: survey.attributes[a][src] for a in attributes},
    )
