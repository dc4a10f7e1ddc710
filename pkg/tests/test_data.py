import numpy as np
import pandas as pd
import pytest

from conjoint_crt.data import (CoarseningSpec, ConjointDataset, FactorSpec,
                               Schema, ValidationError, apply_coarsening,
                               load_dataset, save_dataset)

from conftest import make_dataset


def _write_csv(tmp_path, rows, name="d.csv"):
    path = tmp_path / name
    pd.DataFrame(rows).to_csv(path, index=False)
    return path


@pytest.fixture
def small_csv(tmp_path):
    rows = [
        dict(respondent_id=1, task=1, Y=1, gender_L="Male", gender_R="Female",
             party_L="Dem", party_R="Rep", age=27),
        dict(respondent_id=1, task=2, Y=0, gender_L="Female", gender_R="Male",
             party_L="Rep", party_R="Rep", age=27),
        dict(respondent_id=2, task=1, Y=0, gender_L="Male", gender_R="Male",
             party_L="Dem", party_R="Dem", age=44),
        dict(respondent_id=2, task=2, Y=1, gender_L="Female", gender_R="Male",
             party_L="Rep", party_R="Dem", age=44),
    ]
    return _write_csv(tmp_path, rows)


class TestFactorSpec:
    def test_profile_needs_two_levels(self):
        with pytest.raises(ValidationError):
            FactorSpec(name="bad", levels=("only",))

    def test_duplicate_levels_rejected(self):
        with pytest.raises(ValidationError):
            FactorSpec(name="bad", levels=("a", "a"))

    def test_numeric_only_on_respondent(self):
        with pytest.raises(ValidationError):
            FactorSpec(name="bad", levels=("a", "b"), numeric=True)


class TestLoadDataset:
    def test_basic_load(self, small_csv, tiny_schema):
        ds = load_dataset(small_csv, tiny_schema, targets=("gender",))
        assert ds.n_respondents == 2
        assert ds.tasks_per_respondent == 2
        assert ds.n_rows == 4
        # codes follow schema order
        assert ds.profiles_left[0].tolist() == [0, 0]
        assert ds.profiles_right[0].tolist() == [1, 1]
        assert ds.y.tolist() == [1, 0, 0, 1]

    def test_numeric_covariate_standardized(self, small_csv, tiny_schema):
        ds = load_dataset(small_csv, tiny_schema)
        age = ds.covariates[:, 0]
        assert age.mean() == pytest.approx(0.0, abs=1e-12)
        assert age.std() == pytest.approx(1.0, abs=1e-12)

    def test_non_binary_response(self, tmp_path, tiny_schema):
        rows = [dict(respondent_id=1, task=1, Y=2, gender_L="Male",
                     gender_R="Female", party_L="Dem", party_R="Rep", age=1)]
        path = _write_csv(tmp_path, rows)
        with pytest.raises(ValidationError, match="non-binary"):
            load_dataset(path, tiny_schema)

    def test_missing_column(self, tmp_path, tiny_schema):
        rows = [dict(respondent_id=1, task=1, Y=1, gender_L="Male",
                     gender_R="Female", party_L="Dem", age=1)]
        path = _write_csv(tmp_path, rows)
        with pytest.raises(ValidationError, match="missing column"):
            load_dataset(path, tiny_schema)

    def test_unknown_level(self, tmp_path, tiny_schema):
        rows = [dict(respondent_id=1, task=1, Y=1, gender_L="Other",
                     gender_R="Female", party_L="Dem", party_R="Rep", age=1)]
        path = _write_csv(tmp_path, rows)
        with pytest.raises(ValidationError, match="unknown level"):
            load_dataset(path, tiny_schema)

    def test_covariate_varies_within_respondent(self, tmp_path, tiny_schema):
        rows = [
            dict(respondent_id=1, task=1, Y=1, gender_L="Male", gender_R="Female",
                 party_L="Dem", party_R="Rep", age=27),
            dict(respondent_id=1, task=2, Y=0, gender_L="Male", gender_R="Female",
                 party_L="Dem", party_R="Rep", age=28),
            dict(respondent_id=2, task=1, Y=0, gender_L="Male", gender_R="Male",
                 party_L="Dem", party_R="Dem", age=44),
            dict(respondent_id=2, task=2, Y=1, gender_L="Female", gender_R="Male",
                 party_L="Rep", party_R="Dem", age=44),
        ]
        path = _write_csv(tmp_path, rows)
        with pytest.raises(ValidationError, match="varies within respondent"):
            load_dataset(path, tiny_schema)

    def test_ragged_rejected_then_dropped(self, tmp_path, tiny_schema):
        rows = [
            dict(respondent_id=1, task=1, Y=1, gender_L="Male", gender_R="Female",
                 party_L="Dem", party_R="Rep", age=27),
            dict(respondent_id=1, task=2, Y=0, gender_L="Male", gender_R="Female",
                 party_L="Dem", party_R="Rep", age=27),
            dict(respondent_id=2, task=1, Y=0, gender_L="Male", gender_R="Male",
                 party_L="Dem", party_R="Dem", age=44),
        ]
        path = _write_csv(tmp_path, rows)
        with pytest.raises(ValidationError, match="ragged"):
            load_dataset(path, tiny_schema)
        ds = load_dataset(path, tiny_schema, allow_ragged=True)
        assert ds.n_respondents == 1
        assert ds.n_dropped_respondents == 1

    def test_round_trip(self, small_csv, tiny_schema, tmp_path):
        ds = load_dataset(small_csv, tiny_schema, targets=("gender",))
        out = tmp_path / "rt.csv"
        save_dataset(ds, out)
        ds2 = load_dataset(out, tiny_schema, targets=("gender",))
        assert np.array_equal(ds.profiles_left, ds2.profiles_left)
        assert np.array_equal(ds.profiles_right, ds2.profiles_right)
        assert np.array_equal(ds.y, ds2.y)
        assert np.allclose(ds.covariates, ds2.covariates)
        assert np.array_equal(ds.task_order, ds2.task_order)


class TestDatasetInvariants:
    def test_xz_split_views(self, tiny_dataset):
        assert tiny_dataset.x_left.shape == (3, 1)
        assert tiny_dataset.z_left.shape == (3, 1)
        assert tiny_dataset.x_left[:, 0].tolist() == [0, 1, 0]
        assert tiny_dataset.z_left[:, 0].tolist() == [0, 1, 1]

    def test_immutable_arrays(self, tiny_dataset):
        with pytest.raises(ValueError):
            tiny_dataset.y[0] = 0

    def test_bad_task_order(self, tiny_schema):
        with pytest.raises(ValidationError, match="task order"):
            make_dataset(tiny_schema,
                         left=[[0, 0], [1, 1]], right=[[1, 1], [0, 0]],
                         y=[1, 0], respondent_ids=[1, 1], task=[1, 3])


class TestCoarsening:
    @pytest.fixture
    def origin_schema(self):
        return Schema((
            FactorSpec(name="origin",
                       levels=("France", "Germany", "Poland", "Mexico", "China")),
            FactorSpec(name="job", levels=("gardener", "doctor")),
        ))

    @pytest.fixture
    def europe_spec(self, origin_schema):
        c_map = {(lv,): ("Europe" if lv in ("France", "Germany", "Poland") else lv)
                 for lv in origin_schema["origin"].levels}
        return CoarseningSpec(factors=("origin",), c_map=c_map,
                              h_map={"Mexico": "mex-eur", "Europe": "mex-eur"},
                              tested_group="mex-eur")

    def test_germany_becomes_europe(self, origin_schema, europe_spec):
        ds = make_dataset(origin_schema,
                          left=[[1, 0]], right=[[4, 1]], y=[1],
                          targets=("origin",))
        out = apply_coarsening(ds, europe_spec)
        f = out.schema[out.target_factors[0]]
        assert f.levels[out.profiles_left[0, 0]] == "Europe"
        assert f.levels[out.profiles_right[0, 0]] == "China"

    def test_identity_coarsening_is_identity(self, origin_schema):
        spec = CoarseningSpec.identity(origin_schema, ("origin",),
                                       tested_group="g")
        ds = make_dataset(origin_schema,
                          left=[[1, 0], [3, 1]], right=[[4, 1], [0, 0]],
                          y=[1, 0], targets=("origin",))
        out = apply_coarsening(ds, spec)
        f = out.schema[out.target_factors[0]]
        orig = ds.schema["origin"]
        for i in range(ds.n_rows):
            assert f.levels[out.profiles_left[i, 0]] == \
                orig.levels[ds.profiles_left[i, 0]]

    def test_multi_factor_tuple_map(self, origin_schema):
        # (gardener, France/Germany/Poland) collapse together
        c_map = {}
        for o in origin_schema["origin"].levels:
            for j in origin_schema["job"].levels:
                if j == "gardener" and o in ("France", "Germany", "Poland"):
                    c_map[(o, j)] = "gardener-Europe"
                else:
                    c_map[(o, j)] = f"{o}-{j}"
        spec = CoarseningSpec(factors=("origin", "job"), c_map=c_map,
                              h_map={}, tested_group="gardener-Europe")
        ds = make_dataset(origin_schema,
                          left=[[0, 0], [2, 0]], right=[[3, 1], [4, 0]],
                          y=[1, 0], targets=("origin", "job"))
        out = apply_coarsening(ds, spec)
        f = out.schema[out.target_factors[0]]
        assert f.levels[out.profiles_left[0, 0]] == "gardener-Europe"
        assert f.levels[out.profiles_left[1, 0]] == "gardener-Europe"
        assert f.levels[out.profiles_right[0, 0]] == "Mexico-doctor"

    def test_untouched_fields(self, origin_schema, europe_spec):
        ds = make_dataset(origin_schema,
                          left=[[1, 0], [3, 1]], right=[[4, 1], [0, 0]],
                          y=[1, 0], targets=("origin",))
        out = apply_coarsening(ds, europe_spec)
        assert np.array_equal(out.y, ds.y)
        assert np.array_equal(out.respondent_ids, ds.respondent_ids)
        assert np.array_equal(out.task_order, ds.task_order)
        # non-target factor untouched
        assert np.array_equal(out.profiles_left[:, 1], ds.profiles_left[:, 1])
        # original unchanged
        assert ds.schema["origin"].levels[ds.profiles_left[0, 0]] == "Germany"

    def test_idempotent_when_c_idempotent(self, origin_schema, europe_spec):
        ds = make_dataset(origin_schema,
                          left=[[0, 0], [3, 1]], right=[[2, 1], [4, 0]],
                          y=[1, 0], targets=("origin",))
        once = apply_coarsening(ds, europe_spec)
        coarse_f = once.schema[once.target_factors[0]]
        c2 = {(lv,): lv for lv in coarse_f.levels}
        spec2 = CoarseningSpec(factors=(coarse_f.name,), c_map=c2, h_map={},
                               tested_group="g")
        twice = apply_coarsening(once, spec2)
        f1 = once.schema[once.target_factors[0]]
        f2 = twice.schema[twice.target_factors[0]]
        labels1 = [f1.levels[c] for c in once.profiles_left[:, 0]]
        labels2 = [f2.levels[c] for c in twice.profiles_left[:, 0]]
        assert labels1 == labels2

    def test_missing_tuple_errors(self, origin_schema):
        spec = CoarseningSpec(factors=("origin",),
                              c_map={("France",): "Europe", ("Mexico",): "Mexico"},
                              h_map={}, tested_group="Europe")
        ds = make_dataset(origin_schema, left=[[4, 0]], right=[[0, 1]], y=[1],
                          targets=("origin",))
        with pytest.raises(ValidationError, match="absent from coarsening"):
            apply_coarsening(ds, spec)
