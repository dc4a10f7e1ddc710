"""Classical regression pieces: cluster-robust OLS for the AMCE baseline,
logistic maximum likelihood with Wald subset tests, and an l1-penalized
logistic fit used by the cheaper CRT statistics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import ConjointDataset, ValidationError
from .randomization import rng_for


class RankDeficientError(ValidationError):
    def __init__(self, aliased):
        self.aliased = list(aliased)
        super().__init__(f"rank-deficient design; aliased columns: {self.aliased}")


class SeparationError(ValidationError):
    pass


class ConvergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# OLS with CR0 cluster-robust covariance
# ---------------------------------------------------------------------------

@dataclass
class ClusteredOlsFit:
    coef: np.ndarray
    cov: np.ndarray
    se: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    df: int
    n_clusters: int
    residuals: np.ndarray
    fitted: np.ndarray
    column_names: tuple[str, ...]

    def linear_restriction(self, r_matrix: np.ndarray) -> tuple[float, float]:
        """Wald F-test of R beta = 0 with (rank(R), G-1) degrees of freedom."""
        r_matrix = np.atleast_2d(np.asarray(r_matrix, dtype=float))
        rb = r_matrix @ self.coef
        rvr = r_matrix @ self.cov @ r_matrix.T
        q = r_matrix.shape[0]
        f_stat = float(rb @ np.linalg.solve(rvr, rb)) / q
        p = float(stats.f.sf(f_stat, q, self.df))
        return f_stat, p


def fit_ols_clustered(x: np.ndarray, y: np.ndarray, cluster_ids,
                      column_names=None) -> ClusteredOlsFit:
    """OLS point estimates with the CR0 sandwich clustered on cluster_ids.

    t-tests use G-1 degrees of freedom.  Rank-deficient designs raise with
    the aliased column names.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = x.shape
    if n < k:
        raise ValidationError("more columns than rows")
    names = tuple(column_names) if column_names else tuple(f"x{i}" for i in range(k))
    # rank check via pivoted QR
    from scipy.linalg import qr
    _, r_, piv = qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r_))
    tol = diag.max(initial=0.0) * max(n, k) * np.finfo(float).eps
    rank = int((diag > tol).sum())
    if rank < k:
        raise RankDeficientError([names[i] for i in piv[rank:]])

    ids = np.asarray(cluster_ids)
    uniq, inv = np.unique(ids, return_inverse=True)
    g = len(uniq)
    if g < 2:
        raise ValidationError("need at least 2 clusters")

    xtx_inv = np.linalg.inv(x.T @ x)
    coef = xtx_inv @ (x.T @ y)
    resid = y - x @ coef
    xu = x * resid[:, None]
    sums = np.zeros((g, k))
    np.add.at(sums, inv, xu)
    meat = sums.T @ sums
    cov = xtx_inv @ meat @ xtx_inv
    cov = 0.5 * (cov + cov.T)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stats = np.where(se > 0, coef / np.where(se > 0, se, 1.0), 0.0)
    df = g - 1
    p_values = 2 * stats.t.sf(np.abs(t_stats), df)
    return ClusteredOlsFit(coef=coef, cov=cov, se=se, t_stats=t_stats,
                           p_values=p_values, df=df, n_clusters=g,
                           residuals=resid, fitted=x @ coef,
                           column_names=names)


# ---------------------------------------------------------------------------
# AMCE baseline: stacked two-row-per-task regression
# ---------------------------------------------------------------------------

@dataclass
class AmceResult:
    estimates: dict
    p_value: float
    f_stat: float
    t_p_values: dict
    ols: ClusteredOlsFit
    target_columns: tuple[str, ...]
    dropped_columns: tuple[str, ...] = ()


def _stacked_target_design(ds: ConjointDataset, target: str, extra_terms=()):
    """Design for Y_amce = [Y, 1-Y] on stacked left/right profiles."""
    if target not in ds.factor_names:
        raise ValidationError(f"factor {target!r} absent")
    jt = ds.factor_column(target)
    f = ds.schema[target]
    codes = np.concatenate([ds.profiles_left[:, jt], ds.profiles_right[:, jt]])
    n2 = codes.shape[0]
    cols = [np.ones(n2)]
    names = ["intercept"]
    for k in range(1, f.n_levels):
        cols.append((codes == k).astype(float))
        names.append(f"{target}={f.levels[k]}")
    target_cols = list(names[1:])
    for other in extra_terms:
        fo = ds.schema[other]
        jo = ds.factor_column(other)
        ocodes = np.concatenate([ds.profiles_left[:, jo], ds.profiles_right[:, jo]])
        for w in range(1, fo.n_levels):
            cols.append((ocodes == w).astype(float))
            names.append(f"{other}={fo.levels[w]}")
        for k in range(1, f.n_levels):
            for w in range(1, fo.n_levels):
                cols.append(((codes == k) & (ocodes == w)).astype(float))
                name = f"{target}={f.levels[k]}*{other}={fo.levels[w]}"
                names.append(name)
                target_cols.append(name)
    x = np.column_stack(cols)
    # restricted randomization can make interaction cells structurally empty;
    # those all-zero columns are unidentifiable and are dropped
    nonzero = (np.abs(x) > 0).any(axis=0)
    keep = [i for i in range(x.shape[1]) if nonzero[i]]
    x = x[:, keep]
    kept_names = [names[i] for i in keep]
    target_cols = [c for c in target_cols if c in kept_names]
    y_st = np.concatenate([ds.y, 1 - ds.y]).astype(float)
    return x, y_st, kept_names, target_cols


def amce_test(ds: ConjointDataset, target: str, extra_terms=(),
              cluster: str = "task", contrast: dict | None = None) -> AmceResult:
    """AMCE regression on the stacked 2nJ design.

    The response [Y, 1-Y] is regressed on the target factor's dummies
    (baseline dropped) plus, for each name in extra_terms, that factor's
    dummies and its interactions with the target.  Standard errors cluster
    on the evaluation task by default (both stacked copies of a row share a
    cluster) or on the respondent.  The returned p-value is the Wald F over
    every target-involving column; `contrast` maps target level labels to
    weights for a single linear-equality test instead.
    """
    x, y_st, names, target_cols = _stacked_target_design(ds, target, extra_terms)
    if cluster == "task":
        ids = [f"{r}#{t}" for r, t in zip(ds.respondent_ids, ds.task_order)]
    elif cluster == "respondent":
        ids = list(ds.respondent_ids)
    else:
        raise ValidationError(f"unknown cluster unit {cluster!r}")
    ids = np.array(ids + ids)
    # restricted designs can alias an interaction with a main effect; prune
    # aliased columns (as classical regression software does) and refit
    dropped: list[str] = []
    while True:
        try:
            ols = fit_ols_clustered(x, y_st, ids, column_names=names)
            break
        except RankDeficientError as err:
            if not err.aliased:
                raise
            drop = set(err.aliased)
            dropped += [c for c in names if c in drop]
            keep = [i for i, c in enumerate(names) if c not in drop]
            x = x[:, keep]
            names = [names[i] for i in keep]
            target_cols = [c for c in target_cols if c not in drop]

    if contrast is not None:
        f_spec = ds.schema[target]
        row = np.zeros(len(names))
        for label, w in contrast.items():
            k = f_spec.code_of(label)
            if k > 0:
                row[names.index(f"{target}={f_spec.levels[k]}")] = w
        f_stat, p = ols.linear_restriction(row)
    else:
        r_matrix = np.zeros((len(target_cols), len(names)))
        for i, cname in enumerate(target_cols):
            r_matrix[i, names.index(cname)] = 1.0
        f_stat, p = ols.linear_restriction(r_matrix)

    estimates = {c: float(ols.coef[names.index(c)]) for c in target_cols}
    t_p = {c: float(ols.p_values[names.index(c)]) for c in target_cols}
    return AmceResult(estimates=estimates, p_value=p, f_stat=f_stat,
                      t_p_values=t_p, ols=ols, target_columns=tuple(target_cols),
                      dropped_columns=tuple(dropped))


# ---------------------------------------------------------------------------
# Logistic regression (IRLS) with Wald subset test
# ---------------------------------------------------------------------------

@dataclass
class LogisticFit:
    coef: np.ndarray
    cov: np.ndarray
    converged: bool
    n_iter: int
    separated: bool
    log_lik: float
    column_names: tuple[str, ...] = ()

    def wald_f(self, subset: np.ndarray) -> tuple[float, float, int]:
        """Wald F-statistic and p-value for coef[subset] = 0."""
        subset = np.asarray(subset)
        b = self.coef[subset]
        v = self.cov[np.ix_(subset, subset)]
        q = len(subset)
        w = float(b @ np.linalg.solve(v, b))
        df2 = max(self._n - len(self.coef), 1)
        f_stat = w / q
        return f_stat, float(stats.f.sf(f_stat, q, df2)), q

    _n: int = 0


def fit_logistic(x: np.ndarray, y: np.ndarray, max_iter: int = 60,
                 tol: float = 1e-10, column_names=()) -> LogisticFit:
    """Newton/IRLS maximum likelihood for binary y on x (x includes any
    intercept column).  Raises on separation or non-convergence."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = x.shape
    if n <= k:
        raise ValidationError("need more rows than columns for the MLE")
    beta = np.zeros(k)
    ll_old = -np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = x @ beta
        eta = np.clip(eta, -35, 35)
        mu = 1.0 / (1.0 + np.exp(-eta))
        w = mu * (1 - mu)
        ll = float(y @ np.log(mu + 1e-300) + (1 - y) @ np.log(1 - mu + 1e-300))
        grad = x.T @ (y - mu)
        h = (x * w[:, None]).T @ x
        try:
            step = np.linalg.solve(h + 1e-12 * np.eye(k), grad)
        except np.linalg.LinAlgError:
            raise SeparationError("singular information matrix (separation?)")
        # step-halving to keep the likelihood moving up
        scale = 1.0
        for _ in range(30):
            cand = beta + scale * step
            eta_c = np.clip(x @ cand, -35, 35)
            mu_c = 1.0 / (1.0 + np.exp(-eta_c))
            ll_c = float(y @ np.log(mu_c + 1e-300) + (1 - y) @ np.log(1 - mu_c + 1e-300))
            if ll_c >= ll - 1e-12:
                break
            scale *= 0.5
        beta = beta + scale * step
        if np.abs(grad).max() < tol * n or abs(ll_c - ll_old) < tol * (abs(ll_c) + 1):
            converged = True
            ll_old = ll_c
            break
        ll_old = ll_c
    eta = np.clip(x @ beta, -35, 35)
    mu = 1.0 / (1.0 + np.exp(-eta))
    separated = bool(((mu < 1e-8) | (mu > 1 - 1e-8)).mean() > 0.99) or \
        bool(np.abs(beta).max() > 25)
    if separated:
        raise SeparationError("complete or quasi-complete separation detected")
    if not converged:
        raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations")
    w = mu * (1 - mu)
    h = (x * w[:, None]).T @ x
    cov = np.linalg.inv(h + 1e-12 * np.eye(k))
    fit_obj = LogisticFit(coef=beta, cov=cov, converged=converged, n_iter=it,
                          separated=False, log_lik=ll_old,
                          column_names=tuple(column_names))
    fit_obj._n = n
    return fit_obj


# ---------------------------------------------------------------------------
# L1-penalized logistic regression via coordinate descent
# ---------------------------------------------------------------------------

@dataclass
class LassoLogisticFit:
    coef: np.ndarray          # on the original column scale
    intercept: float
    lambda_: float
    converged: bool
    n_iter: int
    objective_path: np.ndarray = field(default_factory=lambda: np.zeros(0))
    column_names: tuple[str, ...] = ()
    _std_state: tuple | None = None   # (standardized beta, intercept) for warm starts

    def linear_predictor(self, x: np.ndarray, offset=None) -> np.ndarray:
        eta = self.intercept + np.asarray(x, dtype=float) @ self.coef
        if offset is not None:
            eta = eta + offset
        return eta


def _logistic_objective(x, y, offset, beta, b0, lam, pen_weight):
    eta = np.clip(b0 + x @ beta + offset, -35, 35)
    nll = float(np.mean(np.log1p(np.exp(eta)) - y * eta))
    return nll + lam * float(np.abs(beta * pen_weight).sum())


def fit_lasso_logistic(x: np.ndarray, y: np.ndarray, lam: float,
                       offset: np.ndarray | None = None,
                       penalty_weights: np.ndarray | None = None,
                       max_outer: int = 60, max_inner: int = 80,
                       tol: float = 1e-8, column_names=(),
                       init: tuple | None = None) -> LassoLogisticFit:
    """Coordinate-descent l1 logistic regression (glmnet-style IRLS outer
    loop, cyclic soft-threshold updates inner loop).  Columns are
    standardized internally; offset enters the linear predictor unpenalized.
    init warm-starts from a previous fit's (standardized beta, intercept).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not np.isfinite(x).all() or not np.isfinite(y).all():
        raise ValidationError("non-finite input")
    n, k = x.shape
    offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    pen_w = np.ones(k) if penalty_weights is None else np.asarray(penalty_weights,
                                                                  dtype=float)
    means = x.mean(axis=0)
    sds = x.std(axis=0)
    ok = sds > 0
    inv = np.where(ok, 1.0 / np.where(ok, sds, 1.0), 0.0)
    xs = (x - means) * inv

    if init is not None:
        beta = np.array(init[0], dtype=float)
        b0 = float(init[1])
    else:
        beta = np.zeros(k)
        b0 = float(np.log((y.mean() + 1e-6) / (1 - y.mean() + 1e-6))) \
            - float(offset.mean())
    obj = _logistic_objective(xs, y, offset, beta, b0, lam, pen_w)
    path = [obj]
    converged = False
    it = 0
    for it in range(1, max_outer + 1):
        eta = np.clip(b0 + xs @ beta + offset, -35, 35)
        mu = 1.0 / (1.0 + np.exp(-eta))
        w = np.maximum(mu * (1 - mu), 1e-6)
        z = eta - offset + (y - mu) / w
        # cyclic CD on the weighted quadratic surrogate
        beta_new = beta.copy()
        b0_new = b0
        wsum = w.sum()
        denoms = w @ (xs * xs)
        wx = xs * w[:, None]
        r = z - b0_new - xs @ beta_new
        for _inner in range(max_inner):
            delta = 0.0
            for j in range(k):
                if not ok[j] or denoms[j] <= 0:
                    continue
                xj = xs[:, j]
                rho = float(wx[:, j] @ r) + denoms[j] * beta_new[j]
                bj = np.sign(rho) * max(abs(rho) - n * lam * pen_w[j], 0.0) / denoms[j]
                if bj != beta_new[j]:
                    r = r - xj * (bj - beta_new[j])
                    delta = max(delta, abs(bj - beta_new[j]))
                    beta_new[j] = bj
            db0 = float((w @ r) / wsum)
            if db0 != 0.0:
                b0_new += db0
                r = r - db0
                delta = max(delta, abs(db0))
            if delta < 1e-10:
                break
        # safeguard: keep the true objective non-increasing
        obj_new = _logistic_objective(xs, y, offset, beta_new, b0_new, lam, pen_w)
        shrink = 1.0
        while obj_new > obj + 1e-12 and shrink > 1e-4:
            shrink *= 0.5
            cand_b = beta + shrink * (beta_new - beta)
            cand_0 = b0 + shrink * (b0_new - b0)
            obj_new = _logistic_objective(xs, y, offset, cand_b, cand_0, lam, pen_w)
            beta_new, b0_new = cand_b, cand_0
        rel = abs(obj - obj_new) / max(1.0, abs(obj))
        beta, b0, obj = beta_new, b0_new, obj_new
        path.append(obj)
        if rel < tol:
            converged = True
            break
    coef = beta * inv
    intercept = b0 - float(means @ coef)
    out = LassoLogisticFit(coef=coef, intercept=intercept, lambda_=float(lam),
                           converged=converged, n_iter=it,
                           objective_path=np.asarray(path),
                           column_names=tuple(column_names))
    out._std_state = (beta.copy(), b0)
    return out


def lasso_logistic_lambda_max(x: np.ndarray, y: np.ndarray,
                              offset: np.ndarray | None = None) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    offset = np.zeros(n) if offset is None else offset
    means = x.mean(axis=0)
    sds = np.where(x.std(axis=0) > 0, x.std(axis=0), 1.0)
    xs = (x - means) / sds
    b0 = float(np.log((y.mean() + 1e-6) / (1 - y.mean() + 1e-6)))
    mu = 1.0 / (1.0 + np.exp(-(b0 + offset)))
    g = np.abs(xs.T @ (y - mu)) / n
    return float(g.max(initial=0.0)) or 1.0


def cv_lasso_logistic(x: np.ndarray, y: np.ndarray, respondent_ids,
                      n_folds: int = 5, n_lambda: int = 20,
                      lambda_min_ratio: float = 0.01, seed: int = 0,
                      offset: np.ndarray | None = None,
                      penalty_weights: np.ndarray | None = None
                      ) -> tuple[float, np.ndarray, np.ndarray]:
    """Respondent-level K-fold CV; returns (lambda, grid, deviance curve)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    lmax = lasso_logistic_lambda_max(x, y, offset)
    grid = np.geomspace(lmax, lmax * lambda_min_ratio, n_lambda)
    ids = np.asarray(respondent_ids)
    uniq = np.unique(ids)
    rng = rng_for(seed, "lassofolds", 0)
    perm = rng.permutation(len(uniq))
    fold_of = {rid: int(i % n_folds) for i, rid in enumerate(uniq[perm])}
    row_fold = np.array([fold_of[r] for r in ids])
    dev = np.zeros(len(grid))
    for fold in range(n_folds):
        tr = row_fold != fold
        te = ~tr
        init = None
        for gi, lam in enumerate(grid):
            f = fit_lasso_logistic(x[tr], y[tr], lam, offset=offset[tr],
                                   penalty_weights=penalty_weights, init=init)
            init = f._std_state
            eta = np.clip(f.linear_predictor(x[te], offset[te]), -35, 35)
            dev[gi] += float(np.sum(np.log1p(np.exp(eta)) - y[te] * eta))
    best = int(np.argmin(dev))
    for gi in range(best + 1):
        if dev[gi] <= dev[best] * (1 + 1e-12) + 1e-12:
            best = gi
            break
    return float(grid[best]), grid, dev / n
