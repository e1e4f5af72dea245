"""Synthetic "mini-state" ground truth for end-to-end recovery tests.

Generates zones with widely varying demographic compositions, assigns each
individual two behaviors and eleven outcomes through logistic models (with
coefficient magnitudes in the 0.2-1.4 range typical for these conditions),
then writes the survey, marginal tables, recode spec, and a pipeline config
to disk. Behavior logits carry a small zone-level shock so behaviors are
not a pure function of demographics; outcomes depend on demographics plus
the behaviors.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

VARIABLES = {
    "age": ["18to29", "30to49", "50to64", "65plus"],
    "gender": ["male", "female"],
    "race": ["white", "black", "hispanic", "other"],
    "education": ["no_bachelor", "bachelor"],
    "income": ["under25k", "25to50k", "50to75k", "75kplus"],
    "urbanicity": ["urban", "nonurban"],
    "insurance": ["insured", "uninsured"],
}

BASE_SHARES = {
    "age": [0.17, 0.30, 0.26, 0.27],
    "gender": [0.49, 0.51],
    "race": [0.68, 0.11, 0.13, 0.08],
    "education": [0.62, 0.38],
    "income": [0.21, 0.24, 0.23, 0.32],
    "urbanicity": [0.65, 0.35],
    "insurance": [0.87, 0.13],
}

# Dirichlet concentration per variable: age/gender structures are fairly
# stable across zones, race and socioeconomic mix swing widely.
CONCENTRATION = {
    "age": 14.0,
    "gender": 40.0,
    "race": 1.8,
    "education": 2.2,
    "income": 2.2,
    "urbanicity": 3.0,
    "insurance": 3.0,
}

BEHAVIORS = ["smoking", "obesity"]

OUTCOMES = [
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

_FEATURES = [
    "age65p", "age50_64", "male", "black", "hispanic", "bachelor",
    "inc_top", "inc_low", "urban", "insured",
]

BEHAVIOR_MODELS = {
    "smoking": {
        "_intercept": -1.00, "age65p": -0.82, "age50_64": 0.10, "male": 0.05,
        "black": -0.40, "hispanic": -0.50, "bachelor": -1.00, "inc_top": -0.81,
        "inc_low": 0.35, "urban": -0.21, "insured": -0.30,
    },
    "obesity": {
        "_intercept": -1.00, "age65p": -0.43, "age50_64": 0.30, "male": -0.08,
        "black": 0.58, "hispanic": 0.25, "bachelor": -0.50, "inc_top": -0.26,
        "inc_low": 0.45, "urban": -0.32, "insured": 0.40,
    },
}

# zone-level shock scale on the behavior logits (exogenous local variation)
BEHAVIOR_SHOCK_SD = {"smoking": 0.19, "obesity": 0.17}

OUTCOME_MODELS = {
    "cancer": {
        "_intercept": -2.90, "age65p": 1.01, "age50_64": 0.45, "male": -0.27,
        "black": 0.10, "bachelor": -0.05, "inc_top": -0.18,
        "_smoking": 0.35, "_obesity": 0.08,
    },
    "asthma": {
        "_intercept": -2.20, "age65p": -0.25, "male": -0.76, "black": 0.12,
        "inc_top": -0.26, "inc_low": 0.20, "_smoking": 0.31, "_obesity": 0.62,
    },
    "high_blood_pressure": {
        "_intercept": -1.45, "age65p": 1.30, "age50_64": 0.70, "male": 0.35,
        "black": 0.55, "bachelor": -0.25, "inc_top": -0.23,
        "_smoking": 0.29, "_obesity": 0.99,
    },
    "diabetes": {
        "_intercept": -2.75, "age65p": 0.92, "age50_64": 0.50, "male": 0.31,
        "black": 0.50, "hispanic": 0.30, "bachelor": -0.35, "inc_top": -0.45,
        "_smoking": 0.08, "_obesity": 1.05,
    },
    "copd": {
        "_intercept": -3.30, "age65p": 0.83, "age50_64": 0.45, "male": -0.20,
        "black": -0.40, "bachelor": -0.70, "inc_top": -0.76, "inc_low": 0.40,
        "_smoking": 1.43, "_obesity": 0.48,
    },
    "arthritis": {
        "_intercept": -1.70, "age65p": 1.13, "age50_64": 0.70, "male": -0.43,
        "black": -0.20, "bachelor": -0.28, "inc_top": -0.25,
        "_smoking": 0.30, "_obesity": 0.60,
    },
    "high_cholesterol": {
        "_intercept": -1.45, "age65p": 0.88, "age50_64": 0.55, "male": 0.12,
        "black": -0.10, "inc_top": -0.01, "_smoking": 0.18, "_obesity": 0.49,
    },
    "kidney_disease": {
        "_intercept": -3.80, "age65p": 0.98, "age50_64": 0.40, "black": 0.30,
        "bachelor": -0.23, "inc_top": -0.48, "_smoking": 0.04, "_obesity": 0.51,
    },
    "heart_disease": {
        "_intercept": -3.50, "age65p": 1.43, "age50_64": 0.60, "male": 0.65,
        "black": -0.30, "bachelor": -0.27, "inc_top": -0.32,
        "_smoking": 0.40, "_obesity": 0.44,
    },
    "depression": {
        "_intercept": -1.55, "age65p": -0.58, "age50_64": -0.20, "male": -0.72,
        "black": -0.70, "hispanic": -0.30, "inc_top": -0.59, "inc_low": 0.30,
        "urban": 0.16, "_smoking": 0.74, "_obesity": 0.50,
    },
    "stroke": {
        "_intercept": -3.50, "age65p": 0.95, "age50_64": 0.45, "male": 0.15,
        "black": 0.50, "bachelor": -0.35, "inc_top": -0.80,
        "_smoking": 0.55, "_obesity": 0.31,
    },
}


@dataclass
class MiniState:
    root: str
    zone_ids: list[str]
    truth: pd.DataFrame               # zone_id, variable, prevalence, numerator, denominator
    config_path: str
    survey_path: str
    recode_path: str
    county_marginals_path: str
    tract_marginals_path: str
    survey_rows: int

    def truth_vector(self, variable: str) -> np.ndarray:
        sub = self.truth[self.truth["variable"] == variable]
        lookup = dict(zip(sub["zone_id"], sub["prevalence"]))
        return np.array([lookup[z] for z in self.zone_ids])


def _features(cats: dict[str, np.ndarray]) -> np.ndarray:
    n = len(cats["age"])
    feats = np.zeros((n, len(_FEATURES)))
    feats[:, 0] = cats["age"] == 3
    feats[:, 1] = cats["age"] == 2
    feats[:, 2] = cats["gender"] == 0
    feats[:, 3] = cats["race"] == 1
    feats[:, 4] = cats["race"] == 2
    feats[:, 5] = cats["education"] == 1
    feats[:, 6] = cats["income"] == 3
    feats[:, 7] = cats["income"] == 0
    feats[:, 8] = cats["urbanicity"] == 0
    feats[:, 9] = cats["insurance"] == 0
    return feats


def _coef_vector(model: dict) -> np.ndarray:
    return np.array([model.get(f, 0.0) for f in _FEATURES])


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def generate(
    root: str,
    seed: int = 7,
    n_zones: int = 40,
    pop_range: tuple[int, int] = (3000, 10000),
    survey_n: int = 6000,
    shock_sd: dict[str, float] | None = None,
) -> MiniState:
    """Build the mini-state, write its input files, and return truth tables."""
    rng = np.random.default_rng(seed)
    zone_ids = [f"Z{i:03d}" for i in range(1, n_zones + 1)]
    pops = rng.integers(pop_range[0], pop_range[1] + 1, size=n_zones)

    zone_cats: list[dict[str, np.ndarray]] = []
    zone_behaviors: list[dict[str, np.ndarray]] = []
    zone_outcomes: list[dict[str, np.ndarray]] = []
    sds = shock_sd or BEHAVIOR_SHOCK_SD
    shocks = {b: rng.normal(0.0, sds[b], size=n_zones) for b in BEHAVIORS}

    for z in range(n_zones):
        n = int(pops[z])
        cats: dict[str, np.ndarray] = {}
        for var, base in BASE_SHARES.items():
            shares = rng.dirichlet(np.asarray(base) * CONCENTRATION[var])
            cats[var] = rng.choice(len(base), size=n, p=shares)
        zone_cats.append(cats)

        feats = _features(cats)
        behaviors: dict[str, np.ndarray] = {}
        for b in BEHAVIORS:
            model = BEHAVIOR_MODELS[b]
            logit = model["_intercept"] + feats @ _coef_vector(model) + shocks[b][z]
            behaviors[b] = (rng.random(n) < _sigmoid(logit)).astype(np.int8)
        zone_behaviors.append(behaviors)

        outcomes: dict[str, np.ndarray] = {}
        for y in OUTCOMES:
            model = OUTCOME_MODELS[y]
            logit = (
                model["_intercept"]
                + feats @ _coef_vector(model)
                + model["_smoking"] * behaviors["smoking"]
                + model["_obesity"] * behaviors["obesity"]
            )
            outcomes[y] = (rng.random(n) < _sigmoid(logit)).astype(np.int8)
        zone_outcomes.append(outcomes)

    truth_rows = []
    for z, zone in enumerate(zone_ids):
        n = int(pops[z])
        for name, vals in list(zone_behaviors[z].items()) + list(zone_outcomes[z].items()):
            num = int(vals.sum())
            truth_rows.append((zone, name, 100.0 * num / n, num, n))
    truth = pd.DataFrame(
        truth_rows,
        columns=["zone_id", "variable", "prevalence", "numerator", "denominator"],
    )

    # marginal tables: tabulated per zone; "tract" splits each zone in two
    county_rows, tract_rows = [], []
    for z, zone in enumerate(zone_ids):
        n = int(pops[z])
        half = n // 2
        county = {"zone_id": zone}
        tract_a = {"zone_id": f"{zone}a"}
        tract_b = {"zone_id": f"{zone}b"}
        for var, labels in VARIABLES.items():
            codes = zone_cats[z][var]
            for c, label in enumerate(labels):
                county[f"{var}.{label}"] = int((codes == c).sum())
                tract_a[f"{var}.{label}"] = int((codes[:half] == c).sum())
                tract_b[f"{var}.{label}"] = int((codes[half:] == c).sum())
        county_rows.append(county)
        tract_rows.append(tract_a)
        tract_rows.append(tract_b)

    # survey: uniform draw from the pooled state population
    pooled = {var: np.concatenate([zc[var] for zc in zone_cats]) for var in VARIABLES}
    for b in BEHAVIORS:
        pooled[b] = np.concatenate([zb[b] for zb in zone_behaviors])
    for y in OUTCOMES:
        pooled[y] = np.concatenate([zo[y] for zo in zone_outcomes])
    total = len(pooled["age"])
    take = rng.choice(total, size=min(survey_n, total), replace=False)
    survey = {"id": [f"R{i:06d}" for i in range(len(take))]}
    for var, labels in VARIABLES.items():
        survey[var] = [labels[c] for c in pooled[var][take]]
    for name in BEHAVIORS + OUTCOMES:
        survey[name] = pooled[name][take]

    os.makedirs(root, exist_ok=True)
    survey_path = os.path.join(root, "survey.csv")
    county_path = os.path.join(root, "marginals_county.csv")
    tract_path = os.path.join(root, "marginals_tract.csv")
    recode_path = os.path.join(root, "recode.json")
    config_path = os.path.join(root, "config.json")

    pd.DataFrame(survey).to_csv(survey_path, index=False)
    pd.DataFrame(county_rows).to_csv(county_path, index=False)
    pd.DataFrame(tract_rows).to_csv(tract_path, index=False)

    recode = {
        "spec_version": 1,
        "id_column": "id",
        "variables": [
            {
                "name": var,
                "categories": [{"name": label} for label in labels],
            }
            for var, labels in VARIABLES.items()
        ],
        "attributes": [{"name": a} for a in BEHAVIORS + OUTCOMES],
    }
    with open(recode_path, "w", encoding="utf-8") as fh:
        json.dump(recode, fh, indent=2)

    config = {
        "recode_spec": "recode.json",
        "survey_csv": "survey.csv",
        "marginals_csv": {
            "county": "marginals_county.csv",
            "tract": "marginals_tract.csv",
        },
        "scale": "county",
        "behaviors": BEHAVIORS,
        "outcomes": OUTCOMES,
        "seed": 42,
        "tolerance": 1e-8,
        "max_iterations": 500,
        "reference_variable": "age",
        "output_dir": "out",
    }
    with open(config_path, "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2)

    return MiniState(
        root=root,
        zone_ids=zone_ids,
        truth=truth,
        config_path=config_path,
        survey_path=survey_path,
        recode_path=recode_path,
        county_marginals_path=county_path,
        tract_marginals_path=tract_path,
        survey_rows=len(take),
    )
