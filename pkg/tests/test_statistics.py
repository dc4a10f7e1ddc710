import numpy as np
import pytest

from conjoint_crt.data import (CoarseningSpec, FactorSpec, Schema,
                               ValidationError, apply_coarsening)
from conjoint_crt.encoding import (build_carryover_augmented, build_design,
                                   build_symmetry_augmented)
from conjoint_crt.hiernet import HierNetConfig, HierNetFit
from conjoint_crt.hiernet import fit as hiernet_fit
from conjoint_crt.randomization import (apply_order_swap, rng_for,
                                        sample_x_given_z)
from conjoint_crt.statistics import (LambdaPolicy, StatisticSpec,
                                     distill_dicrt, make_statistic,
                                     t_carryover, t_fatigue, t_hiernet,
                                     t_hiernet_coarsened,
                                     t_hiernet_respondent,
                                     t_hiernet_unconstrained, t_lasso_main,
                                     t_order)

from conftest import make_dataset


def zero_fit(dm, y=None, augmented=None) -> HierNetFit:
    d = dm.n_cols
    return HierNetFit(
        columns=dm.columns,
        beta=np.zeros(d), beta_plus=np.zeros(d), beta_minus=np.zeros(d),
        theta=np.zeros((d, d)), intercept=0.5, lambda_=0.1,
        objective_path=np.array([0.0]), converged=True, n_iter=1,
        augmented=augmented if augmented is not None else dm.augmented,
        col_means=np.zeros(d), col_sds=np.ones(d),
        prod_means=np.zeros((d, d)), mask=dm.interaction_mask(),
    )


def set_main(fit, factor, values, kind="factor"):
    """Plant canonical main effects: left = +v, right = -v."""
    sl = fit.block_slice((kind, factor, "L"))
    sr = fit.block_slice((kind, factor, "R"))
    fit.beta[sl] = values
    fit.beta[sr] = -np.asarray(values)


def set_within(fit, t, o, mat):
    tl, ol = fit.block_slice(("factor", t, "L")), fit.block_slice(("factor", o, "L"))
    tr, orr = fit.block_slice(("factor", t, "R")), fit.block_slice(("factor", o, "R"))
    mat = np.asarray(mat, dtype=float)
    fit.theta[tl, ol] = mat
    fit.theta[ol, tl] = mat.T
    fit.theta[tr, orr] = -mat
    fit.theta[orr, tr] = -mat.T


def set_between(fit, t, o, mat):
    tl, orr = fit.block_slice(("factor", t, "L")), fit.block_slice(("factor", o, "R"))
    tr, ol = fit.block_slice(("factor", t, "R")), fit.block_slice(("factor", o, "L"))
    mat = np.asarray(mat, dtype=float)
    if t == o:
        # the self cross-profile block must be antisymmetric under Eq.-6
        # structure; theta[L,R] and theta[R,L] are transposes of each other
        fit.theta[tl, orr] = mat
        fit.theta[orr, tl] = mat.T
        return
    fit.theta[tl, orr] = mat
    fit.theta[orr, tl] = mat.T
    fit.theta[tr, ol] = -mat
    fit.theta[ol, tr] = -mat.T


def set_resp(fit, t, cov_key, mat):
    tl = fit.block_slice(("factor", t, "L"))
    tr = fit.block_slice(("factor", t, "R"))
    cv = fit.block_slice(cov_key)
    mat = np.asarray(mat, dtype=float)
    fit.theta[tl, cv] = mat
    fit.theta[cv, tl] = mat.T
    fit.theta[tr, cv] = -mat
    fit.theta[cv, tr] = -mat.T


@pytest.fixture
def two_factor_aug(tiny_schema):
    ds = make_dataset(tiny_schema, left=[[0, 0], [1, 1], [0, 1]],
                      right=[[1, 1], [0, 0], [1, 0]], y=[1, 0, 1],
                      covariates=[[1.0], [0.0], [-1.0]])
    dm, y = build_symmetry_augmented(ds, include_v=True)
    return ds, dm, y


class TestHandValues:
    def test_hiernet_main_term(self, two_factor_aug):
        ds, dm, _ = two_factor_aug
        f = zero_fit(dm)
        set_main(f, "gender", [0.5, -0.5])
        assert t_hiernet(f, ("gender",)) == pytest.approx(0.5)

    def test_hiernet_within_slices(self, two_factor_aug):
        """Slice k'=1 is (0.2, 0.0) -> 0.02; slice k'=2 is (0.4, 0.4) -> 0."""
        ds, dm, _ = two_factor_aug
        f = zero_fit(dm)
        set_within(f, "gender", "party", [[0.2, 0.4], [0.0, 0.4]])
        assert t_hiernet(f, ("gender",)) == pytest.approx(0.02)

    def test_hiernet_zero_fit(self, two_factor_aug):
        ds, dm, _ = two_factor_aug
        assert t_hiernet(zero_fit(dm), ("gender",)) == 0.0

    def test_respondent_term(self, two_factor_aug):
        """Numeric covariate, xi = (0.3, -0.3) -> mean 0 -> adds 0.18."""
        ds, dm, _ = two_factor_aug
        f = zero_fit(dm)
        set_resp(f, "gender", ("cov", "age"), [[0.3], [-0.3]])
        assert t_hiernet_respondent(f, ("gender",)) == pytest.approx(0.18)
        # and it reduces to t_hiernet when xi is zero
        f2 = zero_fit(dm)
        set_main(f2, "gender", [0.2, -0.2])
        assert t_hiernet_respondent(f2, ("gender",)) == \
            pytest.approx(t_hiernet(f2, ("gender",)))

    def test_between_self_pair_included(self, two_factor_aug):
        """The between-profile sum includes the target's own cross-profile
        interaction (l = 1 term)."""
        ds, dm, _ = two_factor_aug
        f = zero_fit(dm)
        set_between(f, "gender", "gender", [[0.0, 0.3], [-0.3, 0.0]])
        # canonical delta = [[0, .3], [-.3, 0]]; per-column demeaned squares:
        # each column contributes 2 * 0.15^2 = 0.045
        assert t_hiernet(f, ("gender",)) == pytest.approx(0.09)

    def test_order_hand_value(self, tiny_dataset):
        dm = build_design(tiny_dataset, include_v=True)
        f = zero_fit(dm)
        # one raw coefficient pair beta_L = 0.3, beta_R = -0.1 -> (0.2)^2
        f.beta[f.block_slice(("factor", "gender", "L"))] = [0.3, 0.0]
        f.beta[f.block_slice(("factor", "gender", "R"))] = [-0.1, 0.0]
        assert t_order(f) == pytest.approx(0.04)

    def test_order_zero_when_antisymmetric(self, tiny_dataset):
        dm = build_design(tiny_dataset, include_v=True)
        f = zero_fit(dm)
        set_main(f, "gender", [0.4, -0.4])
        set_within(f, "gender", "party", [[0.5, -0.2], [0.1, 0.0]])
        set_between(f, "gender", "party", [[0.3, 0.0], [0.0, -0.3]])
        assert t_order(f) == pytest.approx(0.0, abs=1e-12)

    def test_order_rejects_augmented_fit(self, two_factor_aug):
        ds, dm, _ = two_factor_aug
        with pytest.raises(ValidationError, match="identically zero"):
            t_order(zero_fit(dm))

    def test_carryover_hand_value(self, tiny_schema):
        ds = make_dataset(tiny_schema, left=[[0, 0], [1, 1]],
                          right=[[1, 1], [0, 1]], y=[1, 0],
                          respondent_ids=[7, 7], task=[1, 2],
                          covariates=[[0.0], [0.0]])
        dm, y = build_carryover_augmented(ds)
        f = zero_fit(dm)
        # single canonical lag interaction of 0.25 -> 0.0625
        ll = f.block_slice(("lag", "gender", "L"))
        cl = f.block_slice(("cur", "party", "L"))
        lr = f.block_slice(("lag", "gender", "R"))
        cr = f.block_slice(("cur", "party", "R"))
        f.theta[ll.start, cl.start] = 0.25
        f.theta[cl.start, ll.start] = 0.25
        f.theta[lr.start, cl.start] = 0.25
        f.theta[cl.start, lr.start] = 0.25
        f.theta[ll.start, cr.start] = -0.25
        f.theta[cr.start, ll.start] = -0.25
        f.theta[lr.start, cr.start] = -0.25
        f.theta[cr.start, lr.start] = -0.25
        assert t_carryover(f) == pytest.approx(0.0625)

    def test_fatigue_hand_value(self, tiny_schema):
        ds = make_dataset(tiny_schema, left=[[0, 0], [1, 1]],
                          right=[[1, 1], [0, 0]], y=[1, 0],
                          respondent_ids=[1, 1], task=[1, 2],
                          covariates=[[0.0], [0.0]])
        dm, y = build_symmetry_augmented(ds, include_v=False, include_f=True)
        f = zero_fit(dm)
        gl = f.block_slice(("factor", "gender", "L"))
        gr = f.block_slice(("factor", "gender", "R"))
        fo = f.block_slice(("taskorder",))
        f.theta[gl.start, fo.start] = 0.1
        f.theta[fo.start, gl.start] = 0.1
        f.theta[gr.start, fo.start] = -0.1
        f.theta[fo.start, gr.start] = -0.1
        assert t_fatigue(f) == pytest.approx(0.01)

    def test_lasso_main_hand_value(self):
        meta = [("main", "origin", 0, "L"), ("main", "origin", 1, "L"),
                ("main", "origin", 0, "R"), ("main", "origin", 1, "R")]
        coef = np.array([0.2, -0.1, -0.2, 0.1])  # canonical (0.2, -0.1)
        assert t_lasso_main(coef, meta, "origin", 2) == pytest.approx(0.045)

    def test_lasso_main_all_zero(self):
        meta = [("main", "origin", 0, "L"), ("main", "origin", 1, "L")]
        assert t_lasso_main(np.zeros(2), meta, "origin", 2) == 0.0


class TestCoarsenedStatistic:
    @pytest.fixture
    def origin_aug(self):
        schema = Schema((
            FactorSpec("origin", ("Mexico", "Europe", "China")),
            FactorSpec("job", ("a", "b")),
        ))
        ds = make_dataset(schema, left=[[0, 0], [1, 1], [2, 0]],
                          right=[[1, 1], [2, 0], [0, 1]], y=[1, 0, 1],
                          covariates=np.zeros((3, 0)), targets=("origin",))
        dm, y = build_symmetry_augmented(ds)
        return ds, dm

    def test_group_restricted_hand_value(self, origin_aug):
        ds, dm = origin_aug
        f = zero_fit(dm)
        set_main(f, "origin", [0.2, -0.1, 9.9])  # China coefficient ignored
        val = t_hiernet_coarsened(f, "origin", np.array([0, 1]))
        assert val == pytest.approx(0.045)

    def test_disjoint_support_zero(self, origin_aug):
        ds, dm = origin_aug
        f = zero_fit(dm)
        set_main(f, "origin", [0.0, 0.0, 1.7])
        set_within(f, "origin", "job", [[0, 0], [0, 0], [0.4, -0.2]])
        assert t_hiernet_coarsened(f, "origin", np.array([0, 1])) == 0.0

    def test_all_levels_equals_full(self, origin_aug):
        ds, dm = origin_aug
        f = zero_fit(dm)
        set_main(f, "origin", [0.2, -0.1, 0.4])
        set_within(f, "origin", "job", [[0.1, 0], [0, 0.2], [0.3, 0]])
        full = t_hiernet(f, ("origin",))
        assert t_hiernet_coarsened(f, "origin", np.array([0, 1, 2])) == \
            pytest.approx(full)


class TestUnconstrained:
    def test_sum_of_sides(self, tiny_dataset):
        dm = build_design(tiny_dataset, include_v=False)
        f = zero_fit(dm)
        f.beta[f.block_slice(("factor", "gender", "L"))] = [0.5, -0.5]
        # right side zero: only the left Eq.5 form contributes
        assert t_hiernet_unconstrained(f, ("gender",)) == pytest.approx(0.5)
        f.beta[f.block_slice(("factor", "gender", "R"))] = [-0.5, 0.5]
        assert t_hiernet_unconstrained(f, ("gender",)) == pytest.approx(1.0)


class TestInvariances:
    def _stat_value(self, ds, seed=0):
        spec = StatisticSpec(kind="hiernet", targets=("f0",))
        stat = make_statistic(spec, HierNetConfig(),
                              LambdaPolicy(mode="fixed", value=0.01), seed)
        return stat(ds, -1)

    @pytest.fixture
    def medium_ds(self):
        rng = rng_for(21, "fixture", 0)
        schema = Schema((FactorSpec("f0", ("0", "1")),
                         FactorSpec("f1", ("0", "1")),
                         FactorSpec("f2", ("0", "1"))))
        n = 120
        left = rng.integers(0, 2, (n, 3))
        right = rng.integers(0, 2, (n, 3))
        y = rng.integers(0, 2, n)
        return make_dataset(schema, left, right, y,
                            covariates=np.zeros((n, 0)), targets=("f0",))

    def test_row_permutation_invariance(self, medium_ds):
        base = self._stat_value(medium_ds)
        rng = rng_for(22, "perm", 0)
        perm = rng.permutation(medium_ds.n_rows)
        permuted = make_dataset(
            medium_ds.schema,
            np.asarray(medium_ds.profiles_left)[perm],
            np.asarray(medium_ds.profiles_right)[perm],
            np.asarray(medium_ds.y)[perm],
            respondent_ids=np.asarray(medium_ds.respondent_ids)[perm],
            task=np.asarray(medium_ds.task_order)[perm],
            covariates=np.zeros((medium_ds.n_rows, 0)),
            targets=("f0",))
        assert self._stat_value(permuted) == pytest.approx(base, abs=1e-8)

    def test_swap_invariance_through_dc(self, medium_ds):
        """Lemma-1: the D^c-based statistic is invariant to any left/right
        relabeling of the raw data."""
        base = self._stat_value(medium_ds)
        rng = rng_for(23, "swap", 0)
        for _ in range(5):
            e = rng.random(medium_ds.n_rows) < 0.5
            swapped = apply_order_swap(medium_ds, e)
            assert self._stat_value(swapped) == pytest.approx(base, abs=1e-8)

    def test_statistics_nonnegative(self, medium_ds):
        assert self._stat_value(medium_ds) >= 0.0


class TestDicrt:
    @pytest.fixture
    def signal_ds(self):
        rng = rng_for(31, "fixture", 0)
        p = 5
        schema = Schema(tuple(FactorSpec(f"f{i}", ("0", "1")) for i in range(p)))
        n = 600
        left = rng.integers(0, 2, (n, p))
        right = rng.integers(0, 2, (n, p))
        lc, rc = left - 0.5, right - 0.5
        lp = 0.8 * (lc[:, 1] - rc[:, 1]) + 0.6 * (lc[:, 2] - rc[:, 2])
        y = (lp + rng.logistic(size=n) > 0).astype(int)
        return make_dataset(schema, left, right, y,
                            covariates=np.zeros((n, 0)), targets=("f0",))

    def test_distillation_selects_strong_factors(self, signal_ds):
        ctx = distill_dicrt(signal_ds, ("f0",), n_select=2, seed=0)
        assert set(ctx["selected"]) == {"f1", "f2"}

    def test_default_selection_count_is_two(self, signal_ds):
        ctx = distill_dicrt(signal_ds, ("f0",), seed=0)
        assert len(ctx["selected"]) == 2

    def test_stage1_frozen_across_resamples(self, signal_ds):
        from conjoint_crt.simulation import uniform_scheme
        ctx = distill_dicrt(signal_ds, ("f0",), seed=0)
        spec = StatisticSpec(kind="dicrt", targets=("f0",))
        stat = make_statistic(spec, HierNetConfig(), LambdaPolicy(), seed=0,
                              dicrt_context=ctx)
        scheme = uniform_scheme()
        coefs_before = ctx["stage1_coef"].copy()
        for b in (1, 2):
            ds_b = sample_x_given_z(signal_ds, scheme, b=b, seed=0)
            stat(ds_b, b)
        assert np.array_equal(ctx["stage1_coef"], coefs_before)

    def test_m_zero_means_main_only(self, signal_ds):
        from conjoint_crt.statistics import t_dicrt_from_fit
        meta = [("main", "f0", 0, "L"), ("main", "f0", 1, "L"),
                ("main", "f0", 0, "R"), ("main", "f0", 1, "R")]
        coef = np.array([0.3, -0.3, -0.3, 0.3])
        val = t_dicrt_from_fit(coef, meta, "f0", 2, ["f1"], {"f1": 2})
        assert val == pytest.approx(0.18)

    def test_too_many_selected_errors(self, signal_ds):
        with pytest.raises(ValidationError):
            distill_dicrt(signal_ds, ("f0",), n_select=10, seed=0)


class TestExtraMains:
    def test_product_block_contributes(self, two_factor_aug):
        ds, _, _ = two_factor_aug
        dm, y = build_symmetry_augmented(ds, include_v=False,
                                         extra_mains=(("gender", "party"),))
        f = zero_fit(dm)
        set_main(f, "gender*party", [0.4, 0.0, 0.0, -0.4], kind="xmain")
        assert t_hiernet(f, ("gender",)) == pytest.approx(0.32)
        # block not involving the target contributes nothing
        assert t_hiernet(f, ("party",)) == pytest.approx(0.32)
