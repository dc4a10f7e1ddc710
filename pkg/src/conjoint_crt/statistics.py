"""CRT test statistics.

The HierNet-based statistics sum squared, slice-demeaned coefficients that
involve the factor(s) of interest: main effects, within-profile
interactions, between-profile interactions, and (optionally) respondent
interactions.  Demeaning is per slice of the non-target index: the mean
subtracted from gamma_{k,k'} is taken over the target levels k within each
(other factor, level k') cell.

Dataset-level statistic callables for the CRT engine are built by
`make_statistic`; they rebuild the design, refit, and reduce to a scalar,
and are pure functions of (dataset, resample index) given the frozen
penalty policy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ConjointDataset, CoarseningSpec, ValidationError
from .encoding import (DesignMatrix, build_carryover_augmented, build_design,
                       build_symmetry_augmented)
from . import glm
from .hiernet import HierNetConfig, HierNetFit, cross_validate, fit as hiernet_fit
from .randomization import rng_for

STATISTIC_KINDS = (
    "hiernet", "hiernet_respondent", "hiernet_unconstrained",
    "hiernet_coarsened", "order", "carryover", "fatigue",
    "dicrt", "lasso_main", "interaction_screen",
)

PLAN_OF_KIND = {
    "hiernet": "main",
    "hiernet_respondent": "main",
    "hiernet_unconstrained": "main",
    "dicrt": "main",
    "lasso_main": "main",
    "interaction_screen": "main",
    "hiernet_coarsened": "coarsened",
    "order": "order",
    "carryover": "carryover",
    "fatigue": "fatigue",
}


@dataclass
class StatisticSpec:
    kind: str
    targets: tuple[str, ...] = ()
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in STATISTIC_KINDS:
            raise ValidationError(f"unknown statistic kind {self.kind!r}")
        self.targets = tuple(self.targets)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "targets": list(self.targets),
                "options": {k: v for k, v in self.options.items()}}


def _demeaned_sq(arr: np.ndarray) -> float:
    """Sum of squares after demeaning over axis 0 (the target-level axis)."""
    if arr.size == 0:
        return 0.0
    return float(((arr - arr.mean(axis=0, keepdims=True)) ** 2).sum())


def _fit_factor_names(fit: HierNetFit) -> list[str]:
    names: list[str] = []
    for c in fit.columns:
        if c.block[0] == "factor" and c.block[1] not in names:
            names.append(c.block[1])
    return names


def _fit_cov_blocks(fit: HierNetFit) -> list[tuple]:
    keys: list[tuple] = []
    for c in fit.columns:
        if c.block[0] == "cov" and c.block not in keys:
            keys.append(c.block)
    return keys


def _fit_xmain_blocks(fit: HierNetFit) -> list[str]:
    seen: list[str] = []
    for c in fit.columns:
        if c.block[0] == "xmain" and c.block[1] not in seen:
            seen.append(c.block[1])
    return seen


def _eq5_for_target(fit: HierNetFit, target: str, kind: str = "factor",
                    include_respondent: bool = False,
                    level_subset: np.ndarray | None = None,
                    skip_factors: tuple[str, ...] = ()) -> float:
    """Main + within-profile + between-profile (+ respondent) contribution
    of one target block, each demeaned per slice over the target levels."""
    sub = slice(None) if level_subset is None else np.asarray(level_subset)
    total = _demeaned_sq(fit.main_effects(target, kind=kind)[sub])
    for other in _fit_factor_names(fit):
        if other == target or other in skip_factors:
            continue
        total += _demeaned_sq(fit.within_profile(target, other, kind=kind)[sub])
    for other in _fit_factor_names(fit):
        if other in skip_factors:
            continue
        total += _demeaned_sq(fit.between_profile(target, other, kind=kind)[sub])
    if include_respondent:
        for key in _fit_cov_blocks(fit):
            total += _demeaned_sq(fit.respondent_inter(target, key, kind=kind)[sub])
    return total


def _require_symmetry_fit(fit: HierNetFit):
    if fit.augmented != "symmetry":
        raise ValidationError("statistic requires a symmetry-augmented fit")


def t_hiernet(fit: HierNetFit, targets) -> float:
    """Eq.-5-style statistic: squared demeaned mains plus X-involving
    within- and between-profile interactions, summed over targets."""
    _require_symmetry_fit(fit)
    total = 0.0
    for t in targets:
        total += _eq5_for_target(fit, t, include_respondent=False)
    total += _xmain_contribution(fit, targets, include_respondent=False)
    return total


def t_hiernet_respondent(fit: HierNetFit, targets) -> float:
    """t_hiernet plus the respondent-interaction block."""
    _require_symmetry_fit(fit)
    if not _fit_cov_blocks(fit):
        raise ValidationError("fit does not include respondent covariates")
    total = 0.0
    for t in targets:
        total += _eq5_for_target(fit, t, include_respondent=True)
    total += _xmain_contribution(fit, targets, include_respondent=True)
    return total


def _xmain_contribution(fit: HierNetFit, targets, include_respondent: bool) -> float:
    """Appended product blocks whose parents include a target enter the
    statistic like extra factors of interest (this is what lets planted
    two-way terms surface three-way structure)."""
    total = 0.0
    for name in _fit_xmain_blocks(fit):
        fa, fb = name.split("*", 1)
        if fa not in targets and fb not in targets:
            continue
        total += _eq5_for_target(fit, name, kind="xmain",
                                 include_respondent=include_respondent,
                                 skip_factors=(fa, fb))
    return total


def t_hiernet_coarsened(fit: HierNetFit, target: str,
                        group_levels: np.ndarray,
                        include_respondent: bool = False) -> float:
    """Eq. 5 restricted to the tested group's coarsened levels."""
    _require_symmetry_fit(fit)
    group_levels = np.asarray(group_levels)
    if group_levels.size == 0:
        raise ValidationError("tested group has no levels")
    return _eq5_for_target(fit, target, include_respondent=include_respondent,
                           level_subset=group_levels)


def t_hiernet_unconstrained(fit: HierNetFit, targets) -> float:
    """Sum of the Eq.-5 form evaluated separately on the left-profile and
    right-profile coefficients of an unaugmented fit."""
    if fit.augmented is not None:
        raise ValidationError("unconstrained statistic requires a raw fit")
    total = 0.0
    factor_names = _fit_factor_names(fit)
    for t in targets:
        for own, other_side in (("L", "R"), ("R", "L")):
            total += _demeaned_sq(fit.beta_block(("factor", t, own)))
            for o in factor_names:
                if o != t:
                    total += _demeaned_sq(
                        fit.theta_block(("factor", t, own), ("factor", o, own)))
            for o in factor_names:
                total += _demeaned_sq(
                    fit.theta_block(("factor", t, own), ("factor", o, other_side)))
    return total


def t_order(fit: HierNetFit) -> float:
    """Squared symmetry violations over every factor: (L + R) main sums,
    within-profile, between-profile, and respondent interaction mismatches."""
    if fit.augmented == "symmetry":
        raise ValidationError(
            "order statistic on a symmetry-augmented fit is identically zero")
    if fit.augmented is not None:
        raise ValidationError("order statistic requires a raw fit")
    total = 0.0
    names = _fit_factor_names(fit)
    for l_ in names:
        bl = fit.beta_block(("factor", l_, "L"))
        br = fit.beta_block(("factor", l_, "R"))
        total += float(((bl + br) ** 2).sum())
    for l_ in names:
        for lp in names:
            if lp == l_:
                continue
            gl = fit.theta_block(("factor", l_, "L"), ("factor", lp, "L"))
            gr = fit.theta_block(("factor", l_, "R"), ("factor", lp, "R"))
            total += float(((gl + gr) ** 2).sum())
            dlr = fit.theta_block(("factor", l_, "L"), ("factor", lp, "R"))
            drl = fit.theta_block(("factor", l_, "R"), ("factor", lp, "L"))
            total += float(((dlr + drl) ** 2).sum())
    for key in _fit_cov_blocks(fit):
        for l_ in names:
            xl = fit.theta_block(("factor", l_, "L"), key)
            xr = fit.theta_block(("factor", l_, "R"), key)
            total += float(((xl + xr) ** 2).sum())
    return total


def t_carryover(fit: HierNetFit) -> float:
    """Sum of squared lag-by-current interaction estimates."""
    if fit.augmented != "carryover":
        raise ValidationError("carryover statistic requires the lag-augmented fit")
    names: list[str] = []
    for c in fit.columns:
        if c.block[0] == "lag" and c.block[1] not in names:
            names.append(c.block[1])
    total = 0.0
    for l_ in names:
        for lp in names:
            ll = fit.theta_block(("lag", l_, "L"), ("cur", lp, "L"))
            rl = fit.theta_block(("lag", l_, "R"), ("cur", lp, "L"))
            lr = fit.theta_block(("lag", l_, "L"), ("cur", lp, "R"))
            rr = fit.theta_block(("lag", l_, "R"), ("cur", lp, "R"))
            gamma = 0.25 * (ll + rl - lr - rr)
            total += float((gamma ** 2).sum())
    return total


def t_fatigue(fit: HierNetFit) -> float:
    """Sum of squared task-order-by-factor-level interaction estimates."""
    _require_symmetry_fit(fit)
    if not fit.has_block(("taskorder",)):
        raise ValidationError("fatigue statistic requires the task-order column")
    key = ("taskorder",)
    total = 0.0
    for l_ in _fit_factor_names(fit):
        gl = fit.theta_block(("factor", l_, "L"), key)
        gr = fit.theta_block(("factor", l_, "R"), key)
        gamma = 0.5 * (gl - gr)
        total += float((gamma ** 2).sum())
    return total


# ---------------------------------------------------------------------------
# Lasso-logistic statistics (main-effects, screening, dICRT)
# ---------------------------------------------------------------------------

@dataclass
class _LassoColumns:
    """Bookkeeping for a materialized lasso design on the D^c matrix."""

    matrix: np.ndarray
    names: list
    meta: list          # tuples describing each column
    respondent_ids: np.ndarray


def _dc_main_design(ds: ConjointDataset, include_v: bool) -> tuple[DesignMatrix, np.ndarray]:
    return build_symmetry_augmented(ds, include_v=include_v)


def _main_cols_of(dm: DesignMatrix) -> _LassoColumns:
    meta = []
    for c in dm.columns:
        if c.block[0] == "factor":
            meta.append(("main", c.block[1], c.level, c.side))
        elif c.block[0] == "cov":
            meta.append(("cov", c.block[1], c.level, None))
        else:
            meta.append(("other", c.block, c.level, None))
    return _LassoColumns(matrix=np.asarray(dm.matrix), names=[c.label for c in dm.columns],
                         meta=meta, respondent_ids=dm.respondent_ids)


def _append_x_interactions(cols: _LassoColumns, dm: DesignMatrix, target: str,
                           other: str, other_is_cov: bool) -> _LassoColumns:
    """Append within/between products of the target with a profile factor,
    or products with a covariate block."""
    mat = [cols.matrix]
    names = list(cols.names)
    meta = list(cols.meta)
    x = np.asarray(dm.matrix)
    t_l = dm.block_slice(("factor", target, "L"))
    t_r = dm.block_slice(("factor", target, "R"))
    kt = t_l.stop - t_l.start
    if other_is_cov:
        o_sl = dm.block_slice(("cov", other))
        for k in range(kt):
            for w in range(o_sl.stop - o_sl.start):
                for side, tsl in (("L", t_l), ("R", t_r)):
                    col = x[:, tsl.start + k] * x[:, o_sl.start + w]
                    mat.append(col[:, None])
                    names.append(f"{target}[{k}]:{side}*{other}[{w}]")
                    meta.append(("resp_inter", target, k, other, w, side))
    else:
        o_l = dm.block_slice(("factor", other, "L"))
        o_r = dm.block_slice(("factor", other, "R"))
        for k in range(kt):
            for w in range(o_l.stop - o_l.start):
                pairs = (("within", "L", t_l, o_l), ("within", "R", t_r, o_r),
                         ("between", "L", t_l, o_r), ("between", "R", t_r, o_l))
                for itype, side, tsl, osl in pairs:
                    col = x[:, tsl.start + k] * x[:, osl.start + w]
                    mat.append(col[:, None])
                    names.append(f"{itype}:{target}[{k}]:{side}*{other}[{w}]")
                    meta.append(("inter", itype, target, k, other, w, side))
    return _LassoColumns(matrix=np.hstack(mat), names=names, meta=meta,
                         respondent_ids=cols.respondent_ids)


def _canonical_main(coef: np.ndarray, meta, target: str, k_levels: int) -> np.ndarray:
    out = np.zeros(k_levels)
    for i, m in enumerate(meta):
        if m[0] == "main" and m[1] == target:
            if m[3] == "L":
                out[m[2]] += 0.5 * coef[i]
            elif m[3] == "R":
                out[m[2]] -= 0.5 * coef[i]
    return out


def _canonical_inter(coef: np.ndarray, meta, target: str, other: str,
                     kt: int, kw: int) -> tuple[np.ndarray, np.ndarray]:
    """(gamma, delta) canonical within/between interaction matrices."""
    gamma = np.zeros((kt, kw))
    delta = np.zeros((kt, kw))
    for i, m in enumerate(meta):
        if m[0] != "inter" or m[2] != target or m[4] != other:
            continue
        _, itype, _, k, _, w, side = m
        sign = 0.5 if side == "L" else -0.5
        if itype == "within":
            gamma[k, w] += sign * coef[i]
        else:
            delta[k, w] += sign * coef[i]
    return gamma, delta


def _canonical_resp(coef: np.ndarray, meta, target: str, other: str,
                    kt: int, kw: int) -> np.ndarray:
    xi = np.zeros((kt, kw))
    for i, m in enumerate(meta):
        if m[0] == "resp_inter" and m[1] == target and m[3] == other:
            _, _, k, _, w, side = m
            xi[k, w] += (0.5 if side == "L" else -0.5) * coef[i]
    return xi


def t_lasso_main(coef: np.ndarray, meta, target: str, k_levels: int,
                 level_subset: np.ndarray | None = None) -> float:
    beta = _canonical_main(coef, meta, target, k_levels)
    if level_subset is not None:
        beta = beta[np.asarray(level_subset)]
    return _demeaned_sq(beta)


def t_interaction_screen(coef: np.ndarray, meta, target: str, other: str,
                         kt: int, kw: int, other_is_cov: bool) -> float:
    if other_is_cov:
        xi = _canonical_resp(coef, meta, target, other, kt, kw)
        return _demeaned_sq(xi)
    gamma, delta = _canonical_inter(coef, meta, target, other, kt, kw)
    return _demeaned_sq(gamma) + _demeaned_sq(delta)


def t_dicrt_from_fit(coef: np.ndarray, meta, target: str, kt: int,
                     selected: list[str], k_of: dict) -> float:
    """Demeaned squared mains plus the mean (not sum) of demeaned squared
    interaction effects over the estimated nonzero ones."""
    total = t_lasso_main(coef, meta, target, kt)
    inter_sq = 0.0
    m_nonzero = 0
    for other in selected:
        gamma, delta = _canonical_inter(coef, meta, target, other, kt, k_of[other])
        inter_sq += _demeaned_sq(gamma) + _demeaned_sq(delta)
        m_nonzero += int((np.abs(gamma) > 1e-12).sum())
        m_nonzero += int((np.abs(delta) > 1e-12).sum())
    if m_nonzero > 0:
        total += inter_sq / m_nonzero
    return total


# ---------------------------------------------------------------------------
# Dataset-level statistic callables for the engine
# ---------------------------------------------------------------------------

@dataclass
class LambdaPolicy:
    """How the HierNet penalty is chosen inside a CRT run.

    "fixed": use `value` for every fit.  "per-resample": re-run CV inside
    each resample (seeded by the resample index).  The engine resolves its
    default "pilot" mode (CV once on an extra resample, which depends only
    on (Y, Z) information) to "fixed" before fitting starts.

    warm_init carries a pilot fit's parameters to warm-start every fit in
    the run.  Because the pilot draw is symmetric with respect to the
    observed data and all resamples, a shared warm start keeps the B+1
    statistics exchangeable (and cuts solve time roughly threefold).
    """

    mode: str = "pilot"
    value: float | None = None
    warm_init: tuple | None = None

    def lam_for(self, dm, y, cfg: HierNetConfig, seed: int, b: int) -> float:
        if self.mode == "fixed":
            return float(self.value)
        if self.mode == "per-resample":
            return cross_validate(dm, y, cfg, seed=_cv_seed(seed, b)).lambda_selected
        raise ValidationError(f"unresolved lambda policy {self.mode!r}")

    def init_for(self, dm) -> tuple | None:
        if self.warm_init is None:
            return None
        if self.warm_init[0].shape[0] != dm.n_cols:
            return None
        return self.warm_init


def _cv_seed(seed: int, b: int) -> int:
    return int(rng_for(seed, "cvseed", b).integers(0, 2**62))


TIEBREAK_SCALE = 1e-9


def _gradient_fit(dm: DesignMatrix, y: np.ndarray) -> HierNetFit:
    """One-gradient-step pseudo-fit: standardized marginal correlations in
    the main slots and cross-moment correlations in the interaction slots.

    Evaluating a statistic on it yields a continuous companion value used to
    break exact ties among hard-zero lasso statistics.  It is a
    deterministic function of the same data, so CRT exchangeability is
    unaffected.
    """
    x = np.asarray(dm.matrix, dtype=float)
    n = x.shape[0]
    means = x.mean(axis=0)
    sds = x.std(axis=0)
    inv = np.where(sds > 0, 1.0 / np.where(sds > 0, sds, 1.0), 0.0)
    xs = (x - means) * inv
    ys = np.asarray(y, dtype=float)
    ys = ys - ys.mean()
    beta = xs.T @ ys / n
    mask = dm.interaction_mask()
    theta = np.where(mask, (xs.T * ys) @ xs / (2.0 * n), 0.0)
    theta = 0.5 * (theta + theta.T)
    d = x.shape[1]
    return HierNetFit(
        columns=dm.columns, beta=beta, beta_plus=np.maximum(beta, 0),
        beta_minus=np.maximum(-beta, 0), theta=theta, intercept=float(np.mean(y)),
        lambda_=0.0, objective_path=np.zeros(1), converged=True, n_iter=0,
        augmented=dm.augmented, col_means=means, col_sds=sds,
        prod_means=np.zeros((d, d)), mask=mask)


def _with_tiebreak(value: float, cont: float) -> float:
    """Statistic plus a bounded infinitesimal continuous companion."""
    return value + TIEBREAK_SCALE * cont / (1.0 + cont)


def group_level_codes(ds: ConjointDataset, spec: CoarseningSpec) -> np.ndarray:
    """Codes of the coarsened factor's levels inside the tested group."""
    f = ds.schema[ds.target_factors[0]]
    return np.array([k for k, lv in enumerate(f.levels)
                     if spec.group_of(lv) == spec.tested_group], dtype=int)


def make_statistic(spec: StatisticSpec, hn_cfg: HierNetConfig,
                   policy: LambdaPolicy, seed: int,
                   coarsening: CoarseningSpec | None = None,
                   dicrt_context: dict | None = None):
    """Build the dataset -> scalar statistic callable used by the engine.

    The callable signature is fn(ds, b) where b is -1 for the observed
    dataset and the resample index otherwise; b only seeds per-resample
    cross-validation, never the data.
    """
    kind = spec.kind
    opts = spec.options
    tiebreak = bool(opts.get("tiebreak", True))

    def _finish(reduce_fn, f: HierNetFit, dm, y) -> float:
        value = reduce_fn(f)
        if not tiebreak:
            return value
        return _with_tiebreak(value, reduce_fn(_gradient_fit(dm, y)))

    if kind in ("hiernet", "hiernet_respondent", "hiernet_coarsened"):
        include_v = (kind == "hiernet_respondent") or bool(opts.get("include_v"))
        extra_mains = tuple(tuple(p) for p in opts.get("extra_mains", ()))

        def stat(ds: ConjointDataset, b: int) -> float:
            dm, y = build_symmetry_augmented(ds, include_v=include_v,
                                             extra_mains=extra_mains)
            lam = policy.lam_for(dm, y, hn_cfg, seed, b)
            f = hiernet_fit(dm, y, lam, hn_cfg, init=policy.init_for(dm))
            if kind == "hiernet_coarsened":
                codes = group_level_codes(ds, coarsening)
                reduce_fn = lambda fi: t_hiernet_coarsened(
                    fi, ds.target_factors[0], codes, include_respondent=include_v)
            elif kind == "hiernet_respondent":
                reduce_fn = lambda fi: t_hiernet_respondent(
                    fi, spec.targets or ds.target_factors)
            else:
                reduce_fn = lambda fi: t_hiernet(fi, spec.targets or ds.target_factors)
            return _finish(reduce_fn, f, dm, y)

        return stat

    if kind == "hiernet_unconstrained":

        def stat(ds: ConjointDataset, b: int) -> float:
            dm = build_design(ds, include_v=bool(opts.get("include_v")))
            y = ds.y.astype(float)
            lam = policy.lam_for(dm, y, hn_cfg, seed, b)
            f = hiernet_fit(dm, y, lam, hn_cfg, init=policy.init_for(dm))
            reduce_fn = lambda fi: t_hiernet_unconstrained(
                fi, spec.targets or ds.target_factors)
            return _finish(reduce_fn, f, dm, y)

        return stat

    if kind == "order":
        include_v = bool(opts.get("include_v", True))

        def stat(ds: ConjointDataset, b: int) -> float:
            dm = build_design(ds, include_v=include_v and ds.covariates.shape[1] > 0)
            y = ds.y.astype(float)
            lam = policy.lam_for(dm, y, hn_cfg, seed, b)
            f = hiernet_fit(dm, y, lam, hn_cfg, init=policy.init_for(dm))
            return _finish(t_order, f, dm, y)

        return stat

    if kind == "carryover":

        def stat(ds: ConjointDataset, b: int) -> float:
            dm, y = build_carryover_augmented(ds)
            lam = policy.lam_for(dm, y, hn_cfg, seed, b)
            f = hiernet_fit(dm, y, lam, hn_cfg, init=policy.init_for(dm))
            return _finish(t_carryover, f, dm, y)

        return stat

    if kind == "fatigue":
        include_v = bool(opts.get("include_v", False))

        def stat(ds: ConjointDataset, b: int) -> float:
            if ds.tasks_per_respondent < 2:
                raise ValidationError("fatigue test requires J >= 2")
            dm, y = build_symmetry_augmented(
                ds, include_v=include_v and ds.covariates.shape[1] > 0,
                include_f=True)
            lam = policy.lam_for(dm, y, hn_cfg, seed, b)
            f = hiernet_fit(dm, y, lam, hn_cfg, init=policy.init_for(dm))
            return _finish(t_fatigue, f, dm, y)

        return stat

    if kind in ("lasso_main", "interaction_screen", "dicrt"):
        if kind == "dicrt" and dicrt_context is None:
            raise ValidationError("dicrt statistic needs its distilled context")
        if kind == "interaction_screen" and not opts.get("screen_variable"):
            raise ValidationError("interaction_screen needs options.screen_variable")
        lam_fixed = opts.get("lambda")

        def stat(ds: ConjointDataset, b: int) -> float:
            target = (spec.targets or ds.target_factors)[0]
            cols, y, offsets = lasso_design_for(spec, ds, coarsening,
                                                dicrt_context)
            if lam_fixed is None:
                lam, _, _ = glm.cv_lasso_logistic(
                    cols.matrix, y, cols.respondent_ids, offset=offsets,
                    seed=_cv_seed(seed, b),
                    n_lambda=int(opts.get("n_lambda", 15)))
            else:
                lam = float(lam_fixed)
            f = glm.fit_lasso_logistic(cols.matrix, y, lam, offset=offsets)
            kt = ds.schema[target].n_levels
            if kind == "lasso_main":
                subset = None
                if coarsening is not None:
                    subset = group_level_codes(ds, coarsening)
                reduce_fn = lambda c: t_lasso_main(c, cols.meta, target, kt,
                                                   subset)
            elif kind == "interaction_screen":
                screen = opts["screen_variable"]
                other_is_cov = screen in ds.covariate_names
                if other_is_cov:
                    cv_spec = ds.schema[screen]
                    kw = 1 if cv_spec.numeric else cv_spec.n_levels
                else:
                    kw = ds.schema[screen].n_levels
                reduce_fn = lambda c: t_interaction_screen(
                    c, cols.meta, target, screen, kt, kw, other_is_cov)
            else:
                selected = dicrt_context["selected"]
                k_of = {o: ds.schema[o].n_levels for o in selected}
                reduce_fn = lambda c: t_dicrt_from_fit(c, cols.meta, target,
                                                       kt, selected, k_of)
            value = reduce_fn(f.coef)
            if not tiebreak:
                return value
            x = cols.matrix
            sds = x.std(axis=0)
            inv = np.where(sds > 0, 1.0 / np.where(sds > 0, sds, 1.0), 0.0)
            xs = (x - x.mean(axis=0)) * inv
            coef_cont = xs.T @ (y - y.mean()) / x.shape[0]
            return _with_tiebreak(value, reduce_fn(coef_cont))

        return stat

    raise ValidationError(f"unknown statistic kind {kind!r}")


def lasso_design_for(spec: StatisticSpec, ds: ConjointDataset,
                     coarsening: CoarseningSpec | None = None,
                     dicrt_context: dict | None = None
                     ) -> tuple[_LassoColumns, np.ndarray, np.ndarray | None]:
    """Materialize the lasso design of a lasso-family statistic kind.

    Returns (columns, response, offsets); offsets is None except for the
    distilled statistic."""
    kind = spec.kind
    opts = spec.options
    target = (spec.targets or ds.target_factors)[0]
    if kind == "lasso_main":
        include_v = bool(opts.get("include_v", True)) and ds.covariates.shape[1] > 0
        dm, y = _dc_main_design(ds, include_v)
        return _main_cols_of(dm), y, None
    if kind == "interaction_screen":
        screen = opts["screen_variable"]
        other_is_cov = screen in ds.covariate_names
        if not other_is_cov and screen not in ds.factor_names:
            raise ValidationError(f"unknown screen variable {screen!r}")
        dm, y = _dc_main_design(ds, ds.covariates.shape[1] > 0)
        cols = _main_cols_of(dm)
        cols = _append_x_interactions(cols, dm, target, screen, other_is_cov)
        return cols, y, None
    if kind == "dicrt":
        dm, y = _dc_main_design(ds, include_v=False)
        x = np.asarray(dm.matrix)
        keep = [i for i, c in enumerate(dm.columns)
                if c.block[0] == "factor" and c.block[1] == target]
        cols = _LassoColumns(matrix=x[:, keep],
                             names=[dm.columns[i].label for i in keep],
                             meta=[("main", target, dm.columns[i].level,
                                    dm.columns[i].side) for i in keep],
                             respondent_ids=dm.respondent_ids)
        for other in dicrt_context["selected"]:
            cols = _append_x_interactions(cols, dm, target, other, False)
        return cols, y, dicrt_context["offsets"]
    raise ValidationError(f"{kind!r} is not a lasso-design statistic")


def lasso_cv_lambda(spec: StatisticSpec, ds: ConjointDataset, seed: int,
                    coarsening: CoarseningSpec | None = None,
                    dicrt_context: dict | None = None) -> float:
    """One cross-validated penalty for a lasso-family statistic kind."""
    cols, y, offsets = lasso_design_for(spec, ds, coarsening, dicrt_context)
    lam, _, _ = glm.cv_lasso_logistic(
        cols.matrix, y, cols.respondent_ids, offset=offsets,
        seed=_cv_seed(seed, PILOT_CV), n_lambda=int(spec.options.get("n_lambda", 15)))
    return lam


PILOT_CV = 0


def distill_dicrt(ds: ConjointDataset, targets, n_select: int = 2,
                  seed: int = 0) -> dict:
    """Stage-1 distillation: CV lasso logistic of Y on the non-target
    profile mains (on the symmetry-augmented design), ranking factors by
    their summed squared canonical main effects.  Depends only on (Y, Z),
    so it is computed once and shared across all resamples."""
    target = tuple(targets or ds.target_factors)
    z_names = [f for f in ds.factor_names if f not in target]
    if n_select > len(z_names):
        raise ValidationError("dicrt selects more factors than available")
    dm, y = _dc_main_design(ds, include_v=False)
    x = np.asarray(dm.matrix)
    keep = [i for i, c in enumerate(dm.columns)
            if c.block[0] == "factor" and c.block[1] in z_names]
    meta = [("main", dm.columns[i].block[1], dm.columns[i].level,
             dm.columns[i].side) for i in keep]
    xz = x[:, keep]
    lam, _, _ = glm.cv_lasso_logistic(xz, y, dm.respondent_ids,
                                      seed=_cv_seed(seed, -3))
    f = glm.fit_lasso_logistic(xz, y, lam)
    scores = {}
    for name in z_names:
        beta = _canonical_main(f.coef, meta, name, ds.schema[name].n_levels)
        scores[name] = float((beta ** 2).sum())
    ranked = sorted(z_names, key=lambda nm: (-scores[nm], z_names.index(nm)))
    selected = ranked[:n_select]
    offsets = f.linear_predictor(xz)
    return {"selected": selected, "offsets": offsets,
            "stage1_coef": f.coef.copy(), "scores": scores}
