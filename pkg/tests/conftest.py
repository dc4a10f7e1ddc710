import numpy as np
import pytest

from conjoint_crt.data import ConjointDataset, FactorSpec, Schema
from conjoint_crt.randomization import RandomizationScheme, Restriction


@pytest.fixture
def tiny_schema():
    return Schema((
        FactorSpec(name="gender", levels=("Male", "Female")),
        FactorSpec(name="party", levels=("Dem", "Rep")),
        FactorSpec(name="age", kind="respondent", numeric=True),
    ))


def make_dataset(schema, left, right, y, respondent_ids=None, task=None,
                 covariates=None, targets=("gender",)):
    left = np.asarray(left)
    nj = left.shape[0]
    cov_count = len(schema.covariates)
    if covariates is None:
        covariates = np.zeros((nj, cov_count))
    if respondent_ids is None:
        respondent_ids = np.arange(nj)
    if task is None:
        task = np.ones(nj, dtype=int)
    return ConjointDataset(
        schema=schema,
        profiles_left=left,
        profiles_right=np.asarray(right),
        covariates=np.asarray(covariates, dtype=float),
        y=np.asarray(y),
        respondent_ids=np.asarray(respondent_ids),
        task_order=np.asarray(task, dtype=int),
        target_factors=targets,
    )


@pytest.fixture
def tiny_dataset(tiny_schema):
    # 3 respondents x 1 task
    return make_dataset(
        tiny_schema,
        left=[[0, 0], [1, 1], [0, 1]],
        right=[[1, 1], [0, 0], [1, 0]],
        y=[1, 0, 1],
        covariates=[[27.0], [35.0], [44.0]],
    )


@pytest.fixture
def immigration_like():
    """10-level origin restricted by a 3-level reason, like the motivating
    design: persecution forces origin into {Iraq, Sudan, Somalia}."""
    origin_levels = ("Germany", "France", "Mexico", "Philippines", "Poland",
                     "India", "China", "Sudan", "Somalia", "Iraq")
    schema = Schema((
        FactorSpec(name="reason", levels=("family", "job", "persecution")),
        FactorSpec(name="origin", levels=origin_levels),
        FactorSpec(name="education", levels=("college", "no_college")),
    ))
    scheme = RandomizationScheme(
        marginals={},
        restrictions=(Restriction(
            if_factor="reason", if_levels=("persecution",),
            then_factor="origin",
            allowed_levels=("Iraq", "Sudan", "Somalia")),),
    )
    scheme.validate(schema)
    return schema, scheme
