"""Ingest survey microdata and zone marginal tables into harmonized binary form.

The recode spec is a small JSON document (see README for the schema) that
declares, in order, the constraint variables with their categories, the
carried attribute columns with their truthy/falsy encodings, and optional
pass-through columns such as a region/state column.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataError, InfeasibleError, SchemaError

log = logging.getLogger(__name__)

# Attribute cells that map to 1/0 even without an explicit values list.
_BUILTIN_TRUE = ("1",)
_BUILTIN_FALSE = ("0",)


@dataclass(frozen=True)
class Category:
    name: str
    values: tuple[str, ...] = ()
    # inclusive numeric bounds; None = unbounded on that side
    lo: float | None = None
    hi: float | None = None

    @property
    def has_range(self) -> bool:
        return self.lo is not None or self.hi is not None


@dataclass(frozen=True)
class Variable:
    name: str
    column: str
    categories: tuple[Category, ...]

    @property
    def category_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.categories)


@dataclass(frozen=True)
class Attribute:
    name: str
    column: str
    true_values: tuple[str, ...] = ()
    false_values: tuple[str, ...] = ()


@dataclass(frozen=True)
class RecodeSpec:
    """Declarative recode rules: constraint variables, carried attributes, extras."""

    spec_version: int
    id_column: str
    variables: tuple[Variable, ...]
    attributes: tuple[Attribute, ...]
    keep_columns: tuple[str, ...] = ()

    @property
    def variable_names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    @property
    def attribute_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def variable(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise SchemaError(f"unknown constraint variable {name!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "RecodeSpec":
        if "spec_version" not in doc:
            raise SchemaError("recode spec is missing 'spec_version'")
        variables = []
        for vdoc in doc.get("variables", []):
            cats = []
            for cdoc in vdoc.get("categories", []):
                rng = cdoc.get("range")
                lo, hi = (rng[0], rng[1]) if rng is not None else (None, None)
                cats.append(
                    Category(
                        name=cdoc["name"],
                        values=tuple(str(x) for x in cdoc.get("values", ())),
                        lo=None if lo is None else float(lo),
                        hi=None if hi is None else float(hi),
                    )
                )
            if len(cats) < 2:
                raise SchemaError(
                    f"constraint variable {vdoc.get('name')!r} needs >= 2 categories"
                )
            names = [c.name for c in cats]
            if len(set(names)) != len(names):
                raise SchemaError(f"duplicate category names in {vdoc.get('name')!r}")
            variables.append(
                Variable(
                    name=vdoc["name"],
                    column=vdoc.get("column", vdoc["name"]),
                    categories=tuple(cats),
                )
            )
        if not variables:
            raise SchemaError("recode spec declares no constraint variables")
        attributes = tuple(
            Attribute(
                name=adoc["name"],
                column=adoc.get("column", adoc["name"]),
                true_values=tuple(str(x) for x in adoc.get("true_values", ())),
                false_values=tuple(str(x) for x in adoc.get("false_values", ())),
            )
            for adoc in doc.get("attributes", [])
        )
        return cls(
            spec_version=int(doc["spec_version"]),
            id_column=doc.get("id_column", "id"),
            variables=tuple(variables),
            attributes=attributes,
            keep_columns=tuple(doc.get("keep_columns", ())),
        )

    @classmethod
    def from_json(cls, path) -> "RecodeSpec":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"recode spec {path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc)


class CategoryIndex:
    """Maps (variable, category) to a column of the indicator matrix."""

    def __init__(self, variables: tuple[Variable, ...]):
        self.variables = tuple(v.name for v in variables)
        self.slices: dict[str, slice] = {}
        self.columns: dict[tuple[str, str], int] = {}
        self.categories: dict[str, tuple[str, ...]] = {}
        pos = 0
        for v in variables:
            self.slices[v.name] = slice(pos, pos + len(v.categories))
            self.categories[v.name] = v.category_names
            for c in v.categories:
                self.columns[(v.name, c.name)] = pos
                pos += 1
        self.width = pos

    def column(self, variable: str, category: str) -> int:
        try:
            return self.columns[(variable, category)]
        except KeyError:
            raise SchemaError(f"unknown category {variable}.{category}") from None


@dataclass
class SurveyTable:
    """Harmonized individual records: one-hot indicators plus 0/1 attributes.

    Invariants: exactly one category bit set per constraint variable per
    record, unique ids, no missing values (rows with any missing value are
    dropped at load and counted in ``dropped_rows``).
    """

    ids: np.ndarray                      # object array of strings
    indicators: np.ndarray               # (n, width) uint8
    index: CategoryIndex
    attributes: dict[str, np.ndarray]    # name -> (n,) uint8
    extras: dict[str, np.ndarray] = field(default_factory=dict)
    dropped_rows: int = 0

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_records(self) -> int:
        return len(self.ids)

    def category_codes(self, variable: str) -> np.ndarray:
        """Per-record category position within one variable (0-based)."""
        block = self.indicators[:, self.index.slices[variable]]
        return np.argmax(block, axis=1)

    def category_counts(self, variable: str) -> np.ndarray:
        return self.indicators[:, self.index.slices[variable]].sum(axis=0)

    def subset(self, rows: np.ndarray) -> "SurveyTable":
        return SurveyTable(
            ids=self.ids[rows],
            indicators=self.indicators[rows],
            index=self.index,
            attributes={k: v[rows] for k, v in self.attributes.items()},
            extras={k: v[rows] for k, v in self.extras.items()},
            dropped_rows=0,
        )

    def with_binary_variables(self, names: list[str]) -> "SurveyTable":
        """Append two-category (yes/no) constraint variables built from attributes."""
        variables = [
            Variable(v, v, tuple(Category(c) for c in self.index.categories[v]))
            for v in self.index.variables
        ]
        blocks = [self.indicators]
        for name in names:
            if name not in self.attributes:
                raise SchemaError(f"attribute {name!r} not carried by the survey")
            variables.append(
                Variable(name, name, (Category("yes"), Category("no")))
            )
            yes = self.attributes[name].astype(np.uint8)
            blocks.append(np.column_stack([yes, 1 - yes]))
        return SurveyTable(
            ids=self.ids,
            indicators=np.ascontiguousarray(np.hstack(blocks)),
            index=CategoryIndex(tuple(variables)),
            attributes=self.attributes,
            extras=self.extras,
            dropped_rows=self.dropped_rows,
        )


def _read_csv(path) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError as exc:
        raise SchemaError(f"input file not found: {path}") from exc
    except pd.errors.EmptyDataError as exc:
        raise SchemaError(f"{path}: empty file, expected a CSV header") from exc
    return frame


def _map_variable(raw: pd.Series, var: Variable) -> np.ndarray:
    """Raw strings -> category positions; -1 where missing/unmappable."""
    cleaned = raw.str.strip()
    codes = np.full(len(cleaned), -1, dtype=np.int64)
    value_map = {}
    for pos, cat in enumerate(var.categories):
        value_map[cat.name] = pos          # category labels always self-map
        for v in cat.values:
            value_map[v] = pos
    mapped = cleaned.map(value_map)
    hit = mapped.notna().to_numpy()
    codes[hit] = mapped[hit].to_numpy(dtype=np.int64)

    if any(c.has_range for c in var.categories):
        numeric = pd.to_numeric(cleaned, errors="coerce").to_numpy()
        for pos, cat in enumerate(var.categories):
            if not cat.has_range:
                continue
            mask = codes < 0
            mask &= ~np.isnan(numeric)
            if cat.lo is not None:
                mask &= numeric >= cat.lo
            if cat.hi is not None:
                mask &= numeric <= cat.hi
            codes[mask] = pos
    return codes


def _map_attribute(raw: pd.Series, attr: Attribute) -> np.ndarray:
    """Raw strings -> {0,1}; -1 where missing/unmappable."""
    cleaned = raw.str.strip()
    value_map = {v: 1 for v in attr.true_values}
    value_map.update({v: 0 for v in attr.false_values})
    for v in _BUILTIN_TRUE:
        value_map.setdefault(v, 1)
    for v in _BUILTIN_FALSE:
        value_map.setdefault(v, 0)
    mapped = cleaned.map(value_map)
    out = np.full(len(cleaned), -1, dtype=np.int64)
    hit = mapped.notna().to_numpy()
    out[hit] = mapped[hit].to_numpy(dtype=np.int64)
    return out


def load_survey(path, spec: RecodeSpec) -> SurveyTable:
    """Load a raw survey CSV and recode it to binary indicators.

    Rows with a missing or unmappable value in any constraint variable or
    carried attribute are dropped; the count lands in ``dropped_rows``.
    """
    frame = _read_csv(path)
    needed = [spec.id_column]
    needed += [v.column for v in spec.variables]
    needed += [a.column for a in spec.attributes]
    needed += list(spec.keep_columns)
    for col in needed:
        if col not in frame.columns:
            raise SchemaError(f"survey {path}: missing column {col!r}")

    n = len(frame)
    var_codes = {v.name: _map_variable(frame[v.column], v) for v in spec.variables}
    attr_vals = {a.name: _map_attribute(frame[a.column], a) for a in spec.attributes}

    keep = np.ones(n, dtype=bool)
    for codes in var_codes.values():
        keep &= codes >= 0
    for vals in attr_vals.values():
        keep &= vals >= 0
    dropped = int(n - keep.sum())
    if keep.sum() == 0:
        raise DataError(f"survey {path}: no usable rows after recoding ({dropped} dropped)")

    ids = frame[spec.id_column].str.strip().to_numpy(dtype=object)[keep]
    dupes = pd.Series(ids).duplicated()
    if dupes.any():
        raise DataError(
            f"survey {path}: duplicate id(s), e.g. {ids[dupes.to_numpy()][0]!r}"
        )

    index = CategoryIndex(spec.variables)
    indicators = np.zeros((int(keep.sum()), index.width), dtype=np.uint8)
    for v in spec.variables:
        codes = var_codes[v.name][keep]
        indicators[np.arange(len(codes)), index.slices[v.name].start + codes] = 1

    attributes = {
        name: vals[keep].astype(np.uint8) for name, vals in attr_vals.items()
    }
    extras = {
        col: frame[col].str.strip().to_numpy(dtype=object)[keep]
        for col in spec.keep_columns
    }
    if dropped:
        log.info("survey %s: dropped %d row(s) with missing values", path, dropped)
    return SurveyTable(ids, indicators, index, attributes, extras, dropped)


def write_survey_csv(table: SurveyTable, spec: RecodeSpec, path) -> None:
    """Write a harmonized survey back out; reloading with the same spec is the identity."""
    data = {spec.id_column: table.ids}
    for v in spec.variables:
        names = np.asarray(v.category_names, dtype=object)
        data[v.column] = names[table.category_codes(v.name)]
    for a in spec.attributes:
        data[a.column] = table.attributes[a.name]
    for col in spec.keep_columns:
        data[col] = table.extras[col]
    pd.DataFrame(data).to_csv(path, index=False)


def stratified_sample(
    survey: SurveyTable, strata_vars: list[str], target_n: int, seed: int
) -> SurveyTable:
    """Proportional sample across the cross-classification of ``strata_vars``.

    Allocation is floor(target_n * stratum_share); fractional seats are
    discarded, so the result can fall slightly short of ``target_n``.
    """
    n = survey.n_records
    if target_n <= 0:
        raise DataError(f"target_n must be positive, got {target_n}")
    if target_n > n:
        raise DataError(f"target_n={target_n} exceeds survey size {n}")
    for v in strata_vars:
        if v not in survey.index.variables:
            raise SchemaError(f"stratum variable {v!r} not in the survey")

    codes = np.column_stack([survey.category_codes(v) for v in strata_vars])
    keys = [tuple(row) for row in codes]
    strata: dict[tuple, list[int]] = {}
    for i, key in enumerate(keys):
        strata.setdefault(key, []).append(i)

    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for key in sorted(strata):
        members = np.asarray(strata[key])
        k = int(np.floor(target_n * len(members) / n))
        if k == 0:
            continue
        take = rng.choice(members, size=k, replace=False)
        chosen.extend(int(i) for i in take)
    chosen.sort()
    return survey.subset(np.asarray(chosen, dtype=np.int64))


def filter_by_region(
    survey: SurveyTable, region_column: str, region_value: str
) -> SurveyTable:
    if region_column not in survey.extras:
        raise SchemaError(
            f"region column {region_column!r} was not retained at load "
            f"(declare it in the recode spec's keep_columns)"
        )
    mask = survey.extras[region_column] == region_value
    if not mask.any():
        raise DataError(f"no survey rows with {region_column}={region_value!r}")
    return survey.subset(np.nonzero(mask)[0])


@dataclass
class ConstraintTable:
    """Per-zone category counts for each constraint variable.

    ``counts[var]`` is a (n_zones, n_categories) float array in persons.
    """

    zone_ids: list[str]
    counts: dict[str, np.ndarray]
    index: CategoryIndex
    reference_var: str | None = None
    dropped_zones: list[str] = field(default_factory=list)
    scale_factors: dict[tuple[str, str], float] = field(default_factory=dict)

    @property
    def n_zones(self) -> int:
        return len(self.zone_ids)

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(self.index.variables)

    def zone_marginals(self, zone: str) -> dict[str, np.ndarray]:
        z = self.zone_ids.index(zone)
        return {v: self.counts[v][z] for v in self.variables}

    def populations(self) -> np.ndarray:
        """N_z per zone, from the reference variable (first variable if unset)."""
        ref = self.reference_var or self.variables[0]
        return self.counts[ref].sum(axis=1)


def load_marginals(path, spec: RecodeSpec) -> ConstraintTable:
    """Load a marginals CSV (``zone_id,<var>.<cat>,...``) into a ConstraintTable.

    Zones with a missing cell or an all-zero variable total are dropped with
    a warning.
    """
    frame = _read_csv(path)
    if "zone_id" not in frame.columns:
        raise SchemaError(f"marginals {path}: missing column 'zone_id'")
    index = CategoryIndex(spec.variables)
    expected = {f"{v}.{c}" for (v, c) in index.columns}
    present = set(frame.columns) - {"zone_id"}
    unknown = present - expected
    if unknown:
        raise SchemaError(
            f"marginals {path}: unknown category column(s) {sorted(unknown)}"
        )
    missing = expected - present
    if missing:
        raise SchemaError(
            f"marginals {path}: missing category column(s) {sorted(missing)}"
        )

    zone_ids = frame["zone_id"].str.strip().tolist()
    if len(set(zone_ids)) != len(zone_ids):
        raise DataError(f"marginals {path}: duplicate zone_id")

    n = len(frame)
    values: dict[str, np.ndarray] = {}
    cell_missing = np.zeros(n, dtype=bool)
    for v in spec.variables:
        cols = [f"{v.name}.{c}" for c in v.category_names]
        block = np.column_stack(
            [pd.to_numeric(frame[c].str.strip(), errors="coerce").to_numpy() for c in cols]
        )
        cell_missing |= np.isnan(block).any(axis=1)
        if np.nan_to_num(block).min() < 0:
            bad = np.nanmin(block)
            raise DataError(f"marginals {path}: negative count {bad} in {v.name}")
        values[v.name] = block

    zero_total = np.zeros(n, dtype=bool)
    for v in spec.variable_names:
        zero_total |= np.nan_to_num(values[v]).sum(axis=1) == 0
    bad = cell_missing | zero_total
    dropped = [zone_ids[i] for i in np.nonzero(bad)[0]]
    for z in dropped:
        log.warning("marginals %s: dropping zone %s (missing or zero totals)", path, z)
    keep = ~bad
    if not keep.any():
        raise DataError(f"marginals {path}: no usable zones")
    return ConstraintTable(
        zone_ids=[z for z, k in zip(zone_ids, keep) if k],
        counts={v: values[v][keep] for v in spec.variable_names},
        index=index,
        dropped_zones=dropped,
    )


def reconcile_marginals(table: ConstraintTable, reference_var: str) -> ConstraintTable:
    """Rescale every non-reference variable so its zone total equals N_z.

    N_z is the reference variable's category sum; scale factors are kept per
    (zone, variable) for diagnostics.
    """
    if reference_var not in table.variables:
        raise SchemaError(f"reference variable {reference_var!r} not in the table")
    ref_totals = table.counts[reference_var].sum(axis=1)
    counts: dict[str, np.ndarray] = {}
    factors: dict[tuple[str, str], float] = {}
    for v in table.variables:
        block = table.counts[v].astype(float).copy()
        if v != reference_var:
            totals = block.sum(axis=1)
            for z, (s, nz) in enumerate(zip(totals, ref_totals)):
                if s == 0 and nz > 0:
                    raise InfeasibleError(
                        f"zone {table.zone_ids[z]}: variable {v!r} sums to 0 "
                        f"but N_z={nz:g}"
                    )
                f = 1.0 if s == 0 else nz / s
                block[z] *= f
                factors[(table.zone_ids[z], v)] = f
        counts[v] = block
    return ConstraintTable(
        zone_ids=list(table.zone_ids),
        counts=counts,
        index=table.index,
        reference_var=reference_var,
        dropped_zones=list(table.dropped_zones),
        scale_factors=factors,
    )
