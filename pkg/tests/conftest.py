import json
import os

import numpy as np
import pandas as pd
import pytest

import ministate
from shapesynth.harmonize import RecodeSpec, load_marginals, load_survey, reconcile_marginals
from shapesynth.pipeline import PipelineConfig, run_shape

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")

# frozen harness seed; see ministate.py for the generator
MINISTATE_SEED = 23


@pytest.fixture(scope="session")
def data_dir():
    return DATA_DIR


@pytest.fixture(scope="session")
def mini(tmp_path_factory):
    root = tmp_path_factory.mktemp("ministate")
    return ministate.generate(str(root), seed=MINISTATE_SEED)


@pytest.fixture(scope="session")
def mini_run(mini):
    cfg = PipelineConfig.from_json(mini.config_path)
    cfg.output_dir = os.path.join(mini.root, "out")
    return run_shape(cfg)


@pytest.fixture(scope="session")
def mini_loaded(mini):
    """Survey and reconciled county constraints for the mini-state."""
    spec = RecodeSpec.from_json(mini.recode_path)
    survey = load_survey(mini.survey_path, spec)
    constraints = reconcile_marginals(
        load_marginals(mini.county_marginals_path, spec), "age"
    )
    return spec, survey, constraints


# A 10-row hand survey: FL-2019-style income brackets, age ranges, and two
# carried attributes. Rows 9/10 carry missing values.
TINY_SURVEY_ROWS = [
    # id, age, sex, income, state, smoker, obese
    ("p01", "67", "male", "60000", "FL", "1", "0"),
    ("p02", "23", "female", "12000", "FL", "0", "1"),
    ("p03", "45", "female", "81000", "NY", "0", "0"),
    ("p04", "52", "male", "30000", "FL", "1", "1"),
    ("p05", "38", "female", "55000", "GA", "0", "0"),
    ("p06", "71", "female", "26000", "NY", "0", "1"),
    ("p07", "29", "male", "95000", "NY", "1", "0"),
    ("p08", "60", "male", "18000", "GA", "0", "0"),
    ("p09", "44", "male", "", "NY", "0", "1"),      # missing income
    ("p10", "58", "female", "47000", "FL", "", "0"),  # missing smoker
]

TINY_RECODE = {
    "spec_version": 1,
    "id_column": "id",
    "keep_columns": ["state"],
    "variables": [
        {
            "name": "age",
            "categories": [
                {"name": "18to29", "range": [18, 29]},
                {"name": "30to49", "range": [30, 49]},
                {"name": "50to64", "range": [50, 64]},
                {"name": "65plus", "range": [65, None]},
            ],
        },
        {
            "name": "gender",
            "column": "sex",
            "categories": [
                {"name": "male", "values": ["male", "M"]},
                {"name": "female", "values": ["female", "F"]},
            ],
        },
        {
            "name": "income",
            "categories": [
                {"name": "under25k", "range": [0, 24999]},
                {"name": "25to49k", "range": [25000, 49999]},
                {"name": "50to74k", "range": [50000, 74999]},
                {"name": "75kplus", "range": [75000, None]},
            ],
        },
    ],
    "attributes": [
        {"name": "smoking", "column": "smoker"},
        {"name": "obesity", "column": "obese"},
    ],
}


def write_tiny_survey(path, rows=None):
    rows = TINY_SURVEY_ROWS if rows is None else rows
    frame = pd.DataFrame(
        rows, columns=["id", "age", "sex", "income", "state", "smoker", "obese"]
    )
    frame.to_csv(path, index=False)
    return path


def write_tiny_recode(path, doc=None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc or TINY_RECODE, fh, indent=2)
    return path


@pytest.fixture
def tiny_survey(tmp_path):
    survey_path = write_tiny_survey(tmp_path / "survey.csv")
    recode_path = write_tiny_recode(tmp_path / "recode.json")
    spec = RecodeSpec.from_json(recode_path)
    return load_survey(survey_path, spec), spec, str(survey_path), str(recode_path)


def make_random_survey(rng, n_records, category_counts):
    """Random one-hot survey with the given categories per variable."""
    from shapesynth.harmonize import Category, CategoryIndex, SurveyTable, Variable

    variables = tuple(
        Variable(
            f"v{j}",
            f"v{j}",
            tuple(Category(f"c{k}") for k in range(c)),
        )
        for j, c in enumerate(category_counts)
    )
    index = CategoryIndex(variables)
    indicators = np.zeros((n_records, index.width), dtype=np.uint8)
    for j, c in enumerate(category_counts):
        codes = rng.integers(0, c, size=n_records)
        indicators[np.arange(n_records), index.slices[f"v{j}"].start + codes] = 1
    ids = np.array([f"r{i:05d}" for i in range(n_records)], dtype=object)
    return SurveyTable(ids, indicators, index, attributes={})


def feasible_marginals(rng, survey, scale=100.0):
    """Marginal targets generated from a hidden positive weight vector."""
    w = rng.uniform(0.25, 4.0, size=survey.n_records) * scale / survey.n_records
    targets = {}
    for v in survey.index.variables:
        block = survey.indicators[:, survey.index.slices[v]].astype(float)
        targets[v] = block.T @ w
    return targets, w
