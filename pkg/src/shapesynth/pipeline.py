"""Two-level pipeline: fit sociodemographics, estimate behaviors, refit with
behavior constraints appended, estimate outcomes, and aggregate everything
into zone-level prevalence tables.

Level 1 fits the survey to the sociodemographic marginals and aggregates the
behavior attributes of the integerised population. Level 2 appends one
two-category constraint per behavior (targets derived from the Level 1
estimates), refits from unit weights, and aggregates the outcome attributes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataError, SchemaError
from .harmonize import (
    ConstraintTable,
    RecodeSpec,
    SurveyTable,
    load_marginals,
    load_survey,
    reconcile_marginals,
)
from .ipf import FitOptions, WeightField, fit_all
from .synthpop import IntegerCounts, SyntheticPopulation, expand, integerise_trs

log = logging.getLogger(__name__)

TOOL_VERSION = "0.1.0"

DEFAULT_BEHAVIORS = ["smoking", "obesity"]
DEFAULT_OUTCOMES = [
    "cancer",
    "asthma",
    "high_blood_pressure",
    "diabetes",
    "copd",
    "arthritis",
    "high_cholesterol",
    "kidney_disease",
    "heart_disease",
    "depression",
    "stroke",
]

PREVALENCE_COLUMNS = ["zone_id", "variable", "prevalence", "numerator", "denominator"]


@dataclass
class PipelineConfig:
    recode_spec: str
    survey_csv: str
    marginals_csv: dict[str, str]        # scale -> path
    scale: str = "county"
    behaviors: list[str] = field(default_factory=lambda: list(DEFAULT_BEHAVIORS))
    outcomes: list[str] = field(default_factory=lambda: list(DEFAULT_OUTCOMES))
    seed: int = 0
    fit: FitOptions = field(default_factory=FitOptions)
    reference_variable: str | None = None
    output_dir: str = "."
    threads: int = 1
    write_population: bool = False
    write_weights: bool = False

    def __post_init__(self):
        overlap = set(self.behaviors) & set(self.outcomes)
        if overlap:
            raise SchemaError(f"behaviors and outcomes overlap: {sorted(overlap)}")
        if self.scale not in self.marginals_csv:
            raise SchemaError(
                f"no marginals path for scale {self.scale!r} "
                f"(have {sorted(self.marginals_csv)})"
            )

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str = ".") -> "PipelineConfig":
        def resolve(p):
            return p if os.path.isabs(p) else os.path.join(base_dir, p)

        for key in ("recode_spec", "survey_csv", "marginals_csv"):
            if key not in doc:
                raise SchemaError(f"pipeline config is missing {key!r}")
        marg = doc["marginals_csv"]
        if isinstance(marg, str):
            marg = {doc.get("scale", "county"): marg}
        fit = FitOptions(
            tolerance=float(doc.get("tolerance", 1e-8)),
            max_iterations=int(doc.get("max_iterations", 1000)),
            infeasibility=doc.get("infeasibility", "error"),
        )
        return cls(
            recode_spec=resolve(doc["recode_spec"]),
            survey_csv=resolve(doc["survey_csv"]),
            marginals_csv={k: resolve(v) for k, v in marg.items()},
            scale=doc.get("scale", "county"),
            behaviors=list(doc.get("behaviors", DEFAULT_BEHAVIORS)),
            outcomes=list(doc.get("outcomes", DEFAULT_OUTCOMES)),
            seed=int(doc.get("seed", 0)),
            fit=fit,
            reference_variable=doc.get("reference_variable"),
            output_dir=resolve(doc.get("output_dir", ".")),
            threads=int(doc.get("threads", 1)),
            write_population=bool(doc.get("write_population", False)),
            write_weights=bool(doc.get("write_weights", False)),
        )

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"config {path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc, base_dir=os.path.dirname(os.path.abspath(path)))


def level_seed(master: int, level: int) -> int:
    """Independent integerisation stream per pipeline level."""
    return int(np.random.SeedSequence([int(master), int(level)]).generate_state(1)[0])


def aggregate_prevalence(pop: SyntheticPopulation, variables: list[str]) -> pd.DataFrame:
    """Zone x variable prevalence percentages over all agents in each zone.

    Zones with zero agents are excluded with a warning.
    """
    for v in variables:
        if v not in pop.attributes:
            raise DataError(f"variable {v!r} not linked in the population")
    frame = pd.DataFrame({"zone_id": pop.zone_ids})
    for v in variables:
        frame[v] = pop.attributes[v].astype(np.int64)
    rows = []
    for zone, group in frame.groupby("zone_id", sort=False):
        denom = len(group)
        if denom == 0:
            log.warning("zone %s has no agents; excluded from prevalence", zone)
            continue
        for v in variables:
            num = int(group[v].sum())
            rows.append((zone, v, 100.0 * num / denom, num, denom))
    return pd.DataFrame(rows, columns=PREVALENCE_COLUMNS)


def derive_behavior_constraints(
    level1: pd.DataFrame, constraints: ConstraintTable
) -> ConstraintTable:
    """Append a two-category (yes/no) constraint variable per behavior.

    Targets are prevalence * N_z / 100 and its complement, kept real-valued.
    """
    from .harmonize import Category, CategoryIndex, Variable

    behaviors = list(dict.fromkeys(level1["variable"]))
    lookup = {
        (z, v): p
        for z, v, p in zip(level1["zone_id"], level1["variable"], level1["prevalence"])
    }
    populations = constraints.populations()
    counts = {v: constraints.counts[v].copy() for v in constraints.variables}
    variables = [
        Variable(v, v, tuple(Category(c) for c in constraints.index.categories[v]))
        for v in constraints.variables
    ]
    for b in behaviors:
        block = np.empty((constraints.n_zones, 2), dtype=float)
        for z, zone in enumerate(constraints.zone_ids):
            if (zone, b) not in lookup:
                raise DataError(f"behavior table is missing zone {zone} for {b!r}")
            yes = lookup[(zone, b)] * populations[z] / 100.0
            block[z, 0] = yes
            block[z, 1] = populations[z] - yes
        counts[b] = block
        variables.append(Variable(b, b, (Category("yes"), Category("no"))))
    return ConstraintTable(
        zone_ids=list(constraints.zone_ids),
        counts=counts,
        index=CategoryIndex(tuple(variables)),
        reference_var=constraints.reference_var,
    )


@dataclass
class LevelResult:
    population: SyntheticPopulation
    prevalence: pd.DataFrame
    weights: WeightField
    counts: dict[str, IntegerCounts]


def _integerise_and_expand(
    field_: WeightField,
    survey: SurveyTable,
    attributes: list[str],
    seed: int,
) -> tuple[SyntheticPopulation, dict[str, IntegerCounts]]:
    parts = []
    counts: dict[str, IntegerCounts] = {}
    for zone in field_.zone_ids:
        ic = integerise_trs(field_.weights[zone], seed, zone, survey_ids=survey.ids)
        if ic.total == 0:
            log.warning("zone %s integerises to zero agents", zone)
        counts[zone] = ic
        parts.append(expand(ic, survey, attributes))
    return SyntheticPopulation.concat(parts), counts


def run_level1(
    config: PipelineConfig, survey: SurveyTable, constraints: ConstraintTable
) -> LevelResult:
    """Sociodemographic fit, integerise, expand with behaviors, aggregate."""
    fitted = fit_all(survey, constraints, config.fit, threads=config.threads)
    attrs = list(config.behaviors)
    pop, counts = _integerise_and_expand(
        fitted, survey, attrs, level_seed(config.seed, 1)
    )
    prevalence = aggregate_prevalence(pop, config.behaviors)
    return LevelResult(pop, prevalence, fitted, counts)


def run_level2(
    config: PipelineConfig,
    survey: SurveyTable,
    constraints: ConstraintTable,
    level1_behaviors: pd.DataFrame,
) -> LevelResult:
    """Refit from unit weights against sociodemographics plus behavior margins."""
    constraints2 = derive_behavior_constraints(level1_behaviors, constraints)
    survey2 = survey.with_binary_variables(config.behaviors)
    fitted = fit_all(survey2, constraints2, config.fit, threads=config.threads)
    attrs = list(config.behaviors) + list(config.outcomes)
    pop, counts = _integerise_and_expand(
        fitted, survey2, attrs, level_seed(config.seed, 2)
    )
    prevalence = aggregate_prevalence(pop, config.outcomes)
    return LevelResult(pop, prevalence, fitted, counts)


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json_atomic(doc: dict, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


@dataclass
class RunResult:
    level1: LevelResult
    level2: LevelResult
    manifest: dict
    output_dir: str


def run_shape(config: PipelineConfig, manifest_extra: dict | None = None) -> RunResult:
    """Execute the full two-level pipeline and write outputs plus a manifest.

    On a stage failure the manifest is still written (status="error") before
    the exception propagates.
    """
    os.makedirs(config.output_dir, exist_ok=True)
    manifest: dict = {
        "tool": "shapesynth",
        "version": TOOL_VERSION,
        "command": "run",
        "seed": config.seed,
        "scale": config.scale,
        "options": {
            "tolerance": config.fit.tolerance,
            "max_iterations": config.fit.max_iterations,
            "infeasibility": config.fit.infeasibility,
            "behaviors": config.behaviors,
            "outcomes": config.outcomes,
            "threads": config.threads,
        },
        "inputs": {},
        "stages": [],
        "warnings": [],
        "outputs": {},
        "status": "error",
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    manifest_path = os.path.join(config.output_dir, "manifest.json")

    def stage(name):
        class _Timer:
            def __enter__(self_inner):
                self_inner.t0 = time.perf_counter()
                return self_inner

            def __exit__(self_inner, exc_type, exc, tb):
                manifest["stages"].append(
                    {
                        "name": name,
                        "seconds": round(time.perf_counter() - self_inner.t0, 6),
                    }
                )
                if exc is not None:
                    manifest["error"] = f"stage {name!r}: {exc}"
                    write_json_atomic(manifest, manifest_path)
                return False

        return _Timer()

    marginals_path = config.marginals_csv[config.scale]
    for path in (config.recode_spec, config.survey_csv, marginals_path):
        if not os.path.exists(path):
            manifest["error"] = f"input not found: {path}"
            write_json_atomic(manifest, manifest_path)
            raise SchemaError(f"input not found: {path}")
        manifest["inputs"][path] = _sha256_file(path)

    with stage("load"):
        spec = RecodeSpec.from_json(config.recode_spec)
        survey = load_survey(config.survey_csv, spec)
        raw_constraints = load_marginals(marginals_path, spec)
        if raw_constraints.dropped_zones:
            manifest["warnings"].append(
                f"dropped zones with missing/zero marginals: "
                f"{raw_constraints.dropped_zones}"
            )
        ref = config.reference_variable
        if ref is None:
            ref = "age" if "age" in spec.variable_names else spec.variable_names[0]
        constraints = reconcile_marginals(raw_constraints, ref)
        manifest["options"]["reference_variable"] = ref

    with stage("level1"):
        level1 = run_level1(config, survey, constraints)
        if level1.weights.failures:
            manifest["warnings"].append(
                f"level1 infeasible zones: {sorted(level1.weights.failures)}"
            )

    with stage("level2"):
        level2 = run_level2(config, survey, constraints, level1.prevalence)
        if level2.weights.failures:
            manifest["warnings"].append(
                f"level2 infeasible zones: {sorted(level2.weights.failures)}"
            )

    with stage("write"):
        outputs = {
            "level1_prevalence.csv": level1.prevalence,
            "level2_prevalence.csv": level2.prevalence,
        }
        if config.write_population:
            outputs["population_level1.csv"] = level1.population.frame()
            outputs["population_level2.csv"] = level2.population.frame()
        if config.write_weights:
            outputs["weights_level1.csv"] = level1.weights.weights_frame(survey)
            outputs["diagnostics_level1.csv"] = level1.weights.diagnostics_frame()
            outputs["diagnostics_level2.csv"] = level2.weights.diagnostics_frame()
        for name, frame in outputs.items():
            path = os.path.join(config.output_dir, name)
            frame.to_csv(path, index=False)
            manifest["outputs"][name] = _sha256_file(path)

    manifest["status"] = "ok"
    write_json_atomic(manifest, manifest_path)
    return RunResult(level1, level2, manifest, config.output_dir)
