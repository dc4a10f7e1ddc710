"""CRT orchestration: pair a resampler with a statistic, run B resamples,
report the exact p-value (1 + #{T_b >= T_obs}) / (B + 1).

Every resample is a pure function of (master_seed, b), so a run is
reproducible bit-for-bit regardless of worker count; BLAS threading is
pinned to one thread inside statistic evaluation for the same reason.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from joblib import Parallel, delayed

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    from contextlib import nullcontext

    def threadpool_limits(limits=None):
        return nullcontext()

from .data import ConjointDataset, CoarseningSpec, ValidationError, apply_coarsening
from .hiernet import HierNetConfig, cross_validate
from .hiernet import fit as hiernet_fit
from .randomization import (RandomizationScheme, ResamplePlan, sample_carryover,
                            sample_coarsened, sample_fatigue_permutation,
                            sample_order_swap, sample_x_given_z)
from .statistics import (PLAN_OF_KIND, LambdaPolicy, StatisticSpec,
                         distill_dicrt, lasso_cv_lambda, make_statistic)
from .encoding import build_carryover_augmented, build_design, build_symmetry_augmented

OBSERVED = -1
PILOT = 0  # resamples are 1..B


class EngineError(RuntimeError):
    """Numerical failure inside a CRT run (NaN statistic, failed fit)."""


@dataclass
class CrtResult:
    observed_statistic: float
    resampled_statistics: np.ndarray
    B: int
    master_seed: int
    statistic: dict
    plan_kind: str
    lambda_mode: str
    lambda_value: float | None
    wall_time: float
    extras: dict = field(default_factory=dict)

    @property
    def p_fraction(self) -> Fraction:
        return crt_p_value(self.observed_statistic, self.resampled_statistics)

    @property
    def p_value(self) -> float:
        return float(self.p_fraction)

    def to_json_dict(self) -> dict:
        frac = self.p_fraction
        return {
            "p_value": float(frac),
            "p_numerator": frac.numerator,
            "p_denominator": frac.denominator,
            "observed_statistic": self.observed_statistic,
            "resampled_statistics": [float(v) for v in self.resampled_statistics],
            "B": self.B,
            "master_seed": self.master_seed,
            "statistic": self.statistic,
            "plan_kind": self.plan_kind,
            "lambda_mode": self.lambda_mode,
            "lambda_value": self.lambda_value,
            "extras": self.extras,
            "wall_time": self.wall_time,
        }


def crt_p_value(observed: float, resampled) -> Fraction:
    """Exact CRT p-value; ties count toward the numerator."""
    resampled = np.asarray(resampled, dtype=float)
    if np.isnan(observed) or np.isnan(resampled).any():
        raise EngineError("NaN statistic in p-value computation")
    count = int((resampled >= observed).sum())
    return Fraction(1 + count, len(resampled) + 1)


def _resampler(plan: ResamplePlan, ds: ConjointDataset,
               scheme: RandomizationScheme | None,
               coarsening: CoarseningSpec | None,
               original: ConjointDataset | None):
    kind = plan.kind
    seed = plan.master_seed
    if kind == "main":
        return lambda b: sample_x_given_z(ds, scheme, b, seed)
    if kind == "coarsened":
        return lambda b: sample_coarsened(ds, scheme, coarsening, b, seed,
                                          original=original)
    if kind == "order":
        return lambda b: sample_order_swap(ds, b, seed)[1]
    if kind == "carryover":
        return lambda b: sample_carryover(ds, scheme, b, seed)
    if kind == "fatigue":
        return lambda b: sample_fatigue_permutation(ds, b, seed)
    raise ValidationError(f"unknown plan kind {kind!r}")


_HIERNET_KINDS = ("hiernet", "hiernet_respondent", "hiernet_coarsened",
                  "hiernet_unconstrained", "order", "carryover", "fatigue")
_LASSO_KINDS = ("lasso_main", "interaction_screen", "dicrt")


def _design_for_cv(spec: StatisticSpec, ds: ConjointDataset):
    """The design/response pair the pilot CV should tune on, mirroring what
    the statistic will fit."""
    opts = spec.options
    if spec.kind in ("hiernet", "hiernet_respondent", "hiernet_coarsened"):
        include_v = (spec.kind == "hiernet_respondent") or bool(opts.get("include_v"))
        return build_symmetry_augmented(
            ds, include_v=include_v,
            extra_mains=tuple(tuple(p) for p in opts.get("extra_mains", ())))
    if spec.kind in ("hiernet_unconstrained", "order"):
        include_v = bool(opts.get("include_v", spec.kind == "order")) \
            and ds.covariates.shape[1] > 0
        dm = build_design(ds, include_v=include_v)
        return dm, ds.y.astype(float)
    if spec.kind == "carryover":
        return build_carryover_augmented(ds)
    if spec.kind == "fatigue":
        include_v = bool(opts.get("include_v", False)) and ds.covariates.shape[1] > 0
        return build_symmetry_augmented(ds, include_v=include_v, include_f=True)
    raise ValidationError(f"no CV design for kind {spec.kind!r}")


def run_crt(ds: ConjointDataset, scheme: RandomizationScheme | None,
            plan: ResamplePlan, spec: StatisticSpec,
            coarsening: CoarseningSpec | None = None,
            hiernet_config: HierNetConfig | None = None,
            lambda_mode: str = "pilot", workers: int = 1,
            statistic_fn=None) -> CrtResult:
    """Run the conditional randomization test.

    lambda_mode governs HierNet penalty selection: "pilot" (default)
    cross-validates once on an extra resample -- a function of (Y, Z)-side
    information only, so the B+1 statistics stay exchangeable under the
    null; "observed" cross-validates once on the observed data (cheap,
    but reuses X information); "per-resample" re-runs CV inside every fit.
    """
    t0 = time.perf_counter()
    expected_plan = PLAN_OF_KIND.get(spec.kind)
    if plan.kind != expected_plan:
        raise ValidationError(
            f"statistic {spec.kind!r} requires plan kind {expected_plan!r}, "
            f"got {plan.kind!r}")
    hn_cfg = hiernet_config or HierNetConfig()

    original = None
    ds_obs = ds
    if plan.kind == "coarsened":
        if coarsening is None:
            raise ValidationError("coarsened plan needs a coarsening spec")
        original = ds
        ds_obs = apply_coarsening(ds, coarsening)
    if plan.kind in ("main", "coarsened") and scheme is None:
        raise ValidationError("this plan kind needs a randomization scheme")
    if plan.kind == "fatigue" and ds.tasks_per_respondent < 2:
        raise ValidationError("fatigue test requires J >= 2")

    draw = _resampler(plan, ds_obs, scheme, coarsening, original)

    lambda_value = None
    policy = LambdaPolicy(mode="per-resample")
    dicrt_context = None
    run_spec = spec
    if statistic_fn is None:
        if spec.kind == "dicrt":
            dicrt_context = distill_dicrt(
                ds_obs, spec.targets, n_select=int(spec.options.get("I", 2)),
                seed=plan.master_seed)
        if spec.kind in _LASSO_KINDS and "lambda" not in spec.options:
            if lambda_mode in ("pilot", "observed"):
                with threadpool_limits(limits=1):
                    cv_ds = draw(PILOT) if lambda_mode == "pilot" else ds_obs
                    lambda_value = lasso_cv_lambda(spec, cv_ds, plan.master_seed,
                                                   coarsening=coarsening,
                                                   dicrt_context=dicrt_context)
                run_spec = StatisticSpec(
                    kind=spec.kind, targets=spec.targets,
                    options={**spec.options, "lambda": lambda_value})
            elif lambda_mode not in ("per-resample",):
                raise ValidationError(f"unknown lambda_mode {lambda_mode!r}")
        elif spec.kind in _LASSO_KINDS:
            lambda_value = float(spec.options["lambda"])
        if spec.kind in _HIERNET_KINDS:
            if lambda_mode == "fixed":
                lambda_value = float(spec.options["lambda"])
                policy = LambdaPolicy(mode="fixed", value=lambda_value)
            elif lambda_mode in ("pilot", "observed"):
                with threadpool_limits(limits=1):
                    cv_ds = draw(PILOT) if lambda_mode == "pilot" else ds_obs
                    dm, y = _design_for_cv(spec, cv_ds)
                    cv = cross_validate(dm, y, hn_cfg, seed=plan.master_seed)
                    pilot_fit = hiernet_fit(dm, y, cv.lambda_selected, hn_cfg)
                lambda_value = cv.lambda_selected
                policy = LambdaPolicy(
                    mode="fixed", value=lambda_value,
                    warm_init=(pilot_fit.beta_plus, pilot_fit.beta_minus,
                               pilot_fit.theta))
            elif lambda_mode == "per-resample":
                policy = LambdaPolicy(mode="per-resample")
            else:
                raise ValidationError(f"unknown lambda_mode {lambda_mode!r}")
        stat = make_statistic(run_spec, hn_cfg, policy, plan.master_seed,
                              coarsening=coarsening, dicrt_context=dicrt_context)
    else:
        stat = statistic_fn

    def eval_one(b: int) -> float:
        with threadpool_limits(limits=1):
            if b == OBSERVED:
                return float(stat(ds_obs, OBSERVED))
            return float(stat(draw(b), b))

    observed = eval_one(OBSERVED)
    b_indices = list(range(1, plan.B + 1))
    if workers > 1:
        with Parallel(n_jobs=workers, backend="loky",
                      inner_max_num_threads=1) as par:
            resampled = par(delayed(eval_one)(b) for b in b_indices)
    else:
        resampled = [eval_one(b) for b in b_indices]
    resampled = np.asarray(resampled, dtype=float)
    if np.isnan(observed) or np.isnan(resampled).any():
        raise EngineError("statistic returned NaN; aborting the run")

    return CrtResult(
        observed_statistic=observed,
        resampled_statistics=resampled,
        B=plan.B,
        master_seed=plan.master_seed,
        statistic=spec.to_dict(),
        plan_kind=plan.kind,
        lambda_mode=lambda_mode if spec.kind in _HIERNET_KINDS else "n/a",
        lambda_value=lambda_value,
        wall_time=time.perf_counter() - t0,
    )


@dataclass
class ValiditySummary:
    p_values: np.ndarray
    alphas: np.ndarray
    rejection_rates: np.ndarray
    ks_statistic: float
    ks_p_value: float

    def rejection_at(self, alpha: float) -> float:
        return float(np.mean(self.p_values <= alpha))


def run_validity_suite(make_instance, plan: ResamplePlan, spec: StatisticSpec,
                       reps: int, alphas=(0.01, 0.05, 0.10), workers: int = 1,
                       **run_kwargs) -> ValiditySummary:
    """Monte-Carlo check of p-value validity under a null DGP.

    make_instance(rep_seed) must return (dataset, scheme); each rep runs a
    full CRT with master_seed derived from the plan seed and the rep index.
    """
    from scipy import stats as sps

    def one(rep: int) -> float:
        ds, scheme = make_instance(plan.master_seed + 7919 * rep)
        rep_plan = ResamplePlan(kind=plan.kind, B=plan.B,
                                master_seed=plan.master_seed + 104729 * rep)
        res = run_crt(ds, scheme, rep_plan, spec, workers=1, **run_kwargs)
        return res.p_value

    if reps == 1:
        pvals = np.array([one(0)])
    elif workers > 1:
        with Parallel(n_jobs=workers, backend="loky",
                      inner_max_num_threads=1) as par:
            pvals = np.asarray(par(delayed(one)(r) for r in range(reps)))
    else:
        pvals = np.asarray([one(r) for r in range(reps)])

    alphas = np.asarray(alphas, dtype=float)
    rates = np.array([(pvals <= a).mean() for a in alphas])
    ks = sps.kstest(pvals, "uniform", alternative="greater")
    return ValiditySummary(p_values=pvals, alphas=alphas, rejection_rates=rates,
                           ks_statistic=float(ks.statistic),
                           ks_p_value=float(ks.pvalue))
