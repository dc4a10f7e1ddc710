"""Squared-error lasso with all two-way interactions under strong hierarchy.

The problem solved, for a design X (n rows, d standardized main columns),
centered response y, and penalty weight lam:

    minimize   (1/2n) || y - X(b+ - b-) - q(Theta) ||^2
               + lam * sum(b+ + b-) + (lam/2) * sum_jk |Theta_jk|
    subject to b+, b- >= 0,
               sum_k |Theta_{jk}| <= b+_j + b-_j   for every row j,
               Theta = Theta^T, supported on cross-block pairs,

where q(Theta)_i = 0.5 * x_i^T Theta x_i computed on centered interaction
features.  The row budgets plus symmetry give strong hierarchy: an
interaction can be nonzero only when both parent budgets are.

Solver: monotone FISTA.  The proximal step splits into (a) independent
per-row budget problems, solved exactly by bisection on the KKT
multiplier, and (b) projection onto symmetric matrices; Dykstra's
alternation between the two converges to the exact prox of the sum.  The
inner kernel is numba-compiled when available (set CONJOINT_CRT_NO_NUMBA=1
to force the numpy fallback).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .data import ValidationError
from .encoding import DesignMatrix
from .randomization import rng_for

_N_BISECT = 48


def _dykstra_prox_numpy(a_plus, a_minus, a_theta, mask, nu, kap,
                        max_sweeps, tol):
    """Prox of the row-budget + symmetry compound, vectorized over rows."""
    d = a_theta.shape[0]
    x_th = 0.5 * (a_theta + a_theta.T)
    x_p = a_plus.copy()
    x_m = a_minus.copy()
    p_th = np.zeros((d, d))
    p_p = np.zeros(d)
    p_m = np.zeros(d)
    q_th = np.zeros((d, d))

    for _ in range(max_sweeps):
        cp = x_p + p_p
        cm = x_m + p_m
        c = (x_th + p_th) * mask
        # all-rows budget prox
        w0 = np.sign(c) * np.maximum(np.abs(c) - kap, 0.0)
        s1 = np.abs(w0).sum(axis=1)
        p0 = np.maximum(cp - nu, 0.0)
        q0 = np.maximum(cm - nu, 0.0)
        need = s1 > p0 + q0 + 1e-300
        alpha = np.zeros(d)
        if need.any():
            lo = np.zeros(d)
            hi = np.maximum(np.abs(c).max(axis=1) - kap, 0.0)
            for _it in range(_N_BISECT):
                mid = 0.5 * (lo + hi)
                wn = np.maximum(np.abs(c) - (kap + mid)[:, None], 0.0).sum(axis=1)
                bud = (np.maximum(cp - nu + mid, 0.0)
                       + np.maximum(cm - nu + mid, 0.0))
                gt = wn > bud
                lo = np.where(gt, mid, lo)
                hi = np.where(gt, hi, mid)
            alpha = np.where(need, hi, 0.0)
        y_p = np.maximum(cp - nu + alpha, 0.0)
        y_m = np.maximum(cm - nu + alpha, 0.0)
        y_th = np.sign(c) * np.maximum(np.abs(c) - (kap + alpha)[:, None], 0.0)
        p_p = cp - y_p
        p_m = cm - y_m
        p_th = (x_th + p_th) - y_th
        # symmetry projection
        t = y_th + q_th
        new_x = 0.5 * (t + t.T)
        q_th = t - new_x
        delta = max(np.abs(new_x - x_th).max(initial=0.0),
                    np.abs(y_p - x_p).max(initial=0.0),
                    np.abs(y_m - x_m).max(initial=0.0))
        x_th = new_x
        x_p = y_p
        x_m = y_m
        if delta < tol:
            break
    return x_p, x_m, x_th


_USE_NUMBA = os.environ.get("CONJOINT_CRT_NO_NUMBA", "") == ""
if _USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        _USE_NUMBA = False

if _USE_NUMBA:

    @njit(cache=True)
    def _row_alpha(c_abs_kap, cp, cm, nu, s1):  # pragma: no cover
        """Exact KKT multiplier for one row-budget prox.

        c_abs_kap holds max(|c_k| - kap, 0); s1 is its (positive) sum.
        Solves W(a) = B(a) for a >= 0 where
            W(a) = sum_k max(c_abs_kap_k - a, 0)   (decreasing)
            B(a) = max(cp - nu + a, 0) + max(cm - nu + a, 0)  (increasing)
        by walking the merged, sorted kink set; phi = W - B is linear
        between consecutive kinks, so the root is exact.
        """
        vals = np.sort(c_abs_kap[c_abs_kap > 0.0])    # ascending
        m = vals.shape[0]
        suff = np.empty(m + 1)
        suff[m] = 0.0
        for i in range(m - 1, -1, -1):
            suff[i] = suff[i + 1] + vals[i]

        kinks = np.empty(m + 2)
        kinks[:m] = vals
        n_k = m
        b1 = nu - cp
        if b1 > 0.0:
            kinks[n_k] = b1
            n_k += 1
        b2 = nu - cm
        if b2 > 0.0:
            kinks[n_k] = b2
            n_k += 1
        kinks = np.sort(kinks[:n_k])

        def _w(a):
            # number of surviving entries = m - (index of first val > a)
            lo, hi = 0, m
            while lo < hi:
                mid = (lo + hi) // 2
                if vals[mid] <= a:
                    lo = mid + 1
                else:
                    hi = mid
            return suff[lo] - a * (m - lo)

        prev_a = 0.0
        prev_phi = s1 - (max(cp - nu, 0.0) + max(cm - nu, 0.0))
        for i in range(n_k):
            a = kinks[i]
            if a <= prev_a:
                continue
            phi = _w(a) - (max(cp - nu + a, 0.0) + max(cm - nu + a, 0.0))
            if phi <= 0.0:
                if prev_phi <= phi:
                    return a
                return prev_a + prev_phi * (a - prev_a) / (prev_phi - phi)
            prev_a = a
            prev_phi = phi
        return prev_a

    @njit(cache=True)
    def _dykstra_prox_numba(a_plus, a_minus, a_theta, mask, nu, kap,
                            max_sweeps, tol):  # pragma: no cover - exercised via tests
        d = a_theta.shape[0]
        x_th = 0.5 * (a_theta + a_theta.T)
        x_p = a_plus.copy()
        x_m = a_minus.copy()
        p_th = np.zeros((d, d))
        p_p = np.zeros(d)
        p_m = np.zeros(d)
        q_th = np.zeros((d, d))
        y_th = np.zeros((d, d))
        y_p = np.zeros(d)
        y_m = np.zeros(d)
        work = np.zeros(d)
        for _sweep in range(max_sweeps):
            delta = 0.0
            for j in range(d):
                cp = x_p[j] + p_p[j]
                cm = x_m[j] + p_m[j]
                s1 = 0.0
                for k in range(d):
                    cjk = x_th[j, k] + p_th[j, k]
                    if not mask[j, k]:
                        cjk = 0.0
                    p_th[j, k] = cjk  # reuse as scratch for c
                    a = abs(cjk) - kap
                    if a > 0.0:
                        work[k] = a
                        s1 += a
                    else:
                        work[k] = 0.0
                p0 = cp - nu
                if p0 < 0.0:
                    p0 = 0.0
                q0 = cm - nu
                if q0 < 0.0:
                    q0 = 0.0
                alpha = 0.0
                if s1 > p0 + q0:
                    alpha = _row_alpha(work, cp, cm, nu, s1)
                yp = cp - nu + alpha
                if yp < 0.0:
                    yp = 0.0
                ym = cm - nu + alpha
                if ym < 0.0:
                    ym = 0.0
                y_p[j] = yp
                y_m[j] = ym
                th = kap + alpha
                for k in range(d):
                    cjk = p_th[j, k]
                    a = abs(cjk) - th
                    if a > 0.0:
                        y_th[j, k] = a if cjk > 0.0 else -a
                    else:
                        y_th[j, k] = 0.0
                    p_th[j, k] = cjk - y_th[j, k]
                p_p[j] = cp - yp
                p_m[j] = cm - ym
                dv = abs(yp - x_p[j])
                if dv > delta:
                    delta = dv
                dv = abs(ym - x_m[j])
                if dv > delta:
                    delta = dv
            for j in range(d):
                for k in range(j, d):
                    tjk = y_th[j, k] + q_th[j, k]
                    tkj = y_th[k, j] + q_th[k, j]
                    nx = 0.5 * (tjk + tkj)
                    q_th[j, k] = tjk - nx
                    q_th[k, j] = tkj - nx
                    dv = abs(nx - x_th[j, k])
                    if dv > delta:
                        delta = dv
                    x_th[j, k] = nx
                    x_th[k, j] = nx
            for j in range(d):
                x_p[j] = y_p[j]
                x_m[j] = y_m[j]
            if delta < tol:
                break
        return x_p, x_m, x_th

    _dykstra_prox = _dykstra_prox_numba
else:
    _dykstra_prox = _dykstra_prox_numpy


@dataclass
class HierNetConfig:
    """Solver and cross-validation settings."""

    lambda_grid: np.ndarray | None = None
    n_lambda: int = 50
    lambda_min_ratio: float = 0.01
    tol: float = 1e-7
    max_iter: int = 3000
    cv_folds: int = 5
    prox_sweeps: int = 200
    prox_tol: float = 1e-12

    def __post_init__(self):
        if self.tol <= 0:
            raise ValidationError("tol must be positive")
        if self.lambda_grid is not None:
            g = np.asarray(self.lambda_grid, dtype=float)
            if (g <= 0).any() or (np.diff(g) >= 0).any():
                raise ValidationError("lambda_grid must be positive and descending")
            self.lambda_grid = g


@dataclass
class HierNetFit:
    """Fitted coefficients on the standardized scale plus block metadata."""

    columns: tuple
    beta: np.ndarray
    beta_plus: np.ndarray
    beta_minus: np.ndarray
    theta: np.ndarray
    intercept: float
    lambda_: float
    objective_path: np.ndarray
    converged: bool
    n_iter: int
    augmented: str | None
    col_means: np.ndarray
    col_sds: np.ndarray
    prod_means: np.ndarray
    mask: np.ndarray

    # -- block navigation ------------------------------------------------

    def block_slice(self, key: tuple) -> slice:
        idx = [i for i, c in enumerate(self.columns) if c.block == key]
        if not idx:
            raise KeyError(f"no block {key!r}")
        return slice(idx[0], idx[-1] + 1)

    def has_block(self, key: tuple) -> bool:
        return any(c.block == key for c in self.columns)

    def beta_block(self, key: tuple) -> np.ndarray:
        return self.beta[self.block_slice(key)]

    def theta_block(self, key1: tuple, key2: tuple) -> np.ndarray:
        return self.theta[self.block_slice(key1), self.block_slice(key2)]

    @property
    def budget(self) -> np.ndarray:
        return self.beta_plus + self.beta_minus

    # -- canonical (left = -right averaged) views ------------------------

    def main_effects(self, factor: str, kind: str = "factor") -> np.ndarray:
        bl = self.beta_block((kind, factor, "L"))
        br = self.beta_block((kind, factor, "R"))
        return 0.5 * (bl - br)

    def within_profile(self, target: str, other: str, kind: str = "factor",
                       other_kind: str = "factor") -> np.ndarray:
        ll = self.theta_block((kind, target, "L"), (other_kind, other, "L"))
        rr = self.theta_block((kind, target, "R"), (other_kind, other, "R"))
        return 0.5 * (ll - rr)

    def between_profile(self, target: str, other: str, kind: str = "factor",
                        other_kind: str = "factor") -> np.ndarray:
        lr = self.theta_block((kind, target, "L"), (other_kind, other, "R"))
        rl = self.theta_block((kind, target, "R"), (other_kind, other, "L"))
        return 0.5 * (lr - rl)

    def respondent_inter(self, target: str, block_key: tuple,
                         kind: str = "factor") -> np.ndarray:
        l_ = self.theta_block((kind, target, "L"), block_key)
        r_ = self.theta_block((kind, target, "R"), block_key)
        return 0.5 * (l_ - r_)

    # -- prediction -------------------------------------------------------

    def _standardize_rows(self, x_raw: np.ndarray) -> np.ndarray:
        inv = np.where(self.col_sds > 0, 1.0 / np.where(self.col_sds > 0,
                                                        self.col_sds, 1.0), 0.0)
        return (x_raw - self.col_means) * inv

    def predict(self, x_raw: np.ndarray) -> np.ndarray:
        xs = self._standardize_rows(np.asarray(x_raw, dtype=float))
        lin = xs @ self.beta
        xt = xs @ self.theta
        quad = 0.5 * (np.einsum("ij,ij->i", xt, xs)
                      - float((self.theta * self.prod_means).sum()))
        return self.intercept + lin + quad


def _standardize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    means = x.mean(axis=0)
    sds = x.std(axis=0)
    inv = np.where(sds > 0, 1.0 / np.where(sds > 0, sds, 1.0), 0.0)
    return (x - means) * inv, means, sds


def _objective(n, r, lam, b_plus, b_minus, theta) -> float:
    return (0.5 / n * float(r @ r)
            + lam * float(b_plus.sum() + b_minus.sum())
            + 0.5 * lam * float(np.abs(theta).sum()))


def _quad_part(xs: np.ndarray, theta: np.ndarray, prod_means: np.ndarray) -> np.ndarray:
    xt = xs @ theta
    return 0.5 * (np.einsum("ij,ij->i", xt, xs)
                  - float((theta * prod_means).sum()))


def lambda_max(xs: np.ndarray, ys: np.ndarray, mask: np.ndarray) -> float:
    """Smallest penalty for which the all-zero fit is stationary."""
    n = xs.shape[0]
    g = np.abs(xs.T @ ys) / n
    big_g = np.abs(xs.T * ys) @ xs / (2.0 * n)
    big_g = np.where(mask, np.abs(big_g), 0.0)
    row_max = big_g.max(axis=1, initial=0.0)
    lam = max(g.max(initial=0.0),
              ((2.0 / 3.0) * (row_max + g)).max(initial=0.0))
    return float(lam) if lam > 0 else 1.0


def fit(dm: DesignMatrix, y: np.ndarray, lam: float,
        cfg: HierNetConfig | None = None, init: tuple | None = None) -> HierNetFit:
    """Fit the strong-hierarchy interaction lasso at one penalty value."""
    cfg = cfg or HierNetConfig()
    x_raw = np.asarray(dm.matrix, dtype=float)
    y = np.asarray(y, dtype=float)
    if x_raw.shape[0] != y.shape[0] or x_raw.shape[0] == 0:
        raise ValidationError("design/response shape mismatch")
    if not np.isfinite(x_raw).all() or not np.isfinite(y).all():
        raise ValidationError("non-finite values in design or response")
    if lam < 0:
        raise ValidationError("lambda must be nonnegative")

    n, d = x_raw.shape
    xs, means, sds = _standardize(x_raw)
    ybar = float(y.mean())
    ys = y - ybar
    mask = dm.interaction_mask()
    mask &= (sds > 0)[:, None] & (sds > 0)[None, :]
    mask_u8 = mask.astype(np.uint8)
    prod_means = (xs.T @ xs) / n

    if init is not None:
        b_plus, b_minus, theta = (np.array(init[0]), np.array(init[1]),
                                  np.array(init[2]))
    else:
        b_plus = np.zeros(d)
        b_minus = np.zeros(d)
        theta = np.zeros((d, d))

    def residual(bp, bm, th):
        beta = bp - bm
        return ys - xs @ beta - _quad_part(xs, th, prod_means)

    def smooth_and_grads(bp, bm, th):
        r = residual(bp, bm, th)
        f = 0.5 / n * float(r @ r)
        g_beta = -(xs.T @ r) / n
        g_theta = -0.5 / n * ((xs.T * r) @ xs - float(r.sum()) * prod_means)
        g_theta = np.where(mask, g_theta, 0.0)
        return f, g_beta, g_theta, r

    x_cur = (b_plus, b_minus, theta)
    x_prev = tuple(np.array(v) for v in x_cur)
    y_pt = tuple(np.array(v) for v in x_cur)
    r0 = residual(*x_cur)
    f_x = 0.5 / n * float(r0 @ r0)
    obj_x = f_x + lam * float(x_cur[0].sum() + x_cur[1].sum()) \
        + 0.5 * lam * float(np.abs(x_cur[2]).sum())
    objective_path = [obj_x]
    lip = getattr(cfg, "_warm_lip", None) or 1.0
    t_mom = 1.0
    converged = False
    n_iter = 0
    stall = 0

    for it in range(cfg.max_iter):
        n_iter = it + 1
        f_y, g_beta, g_theta, _ = smooth_and_grads(*y_pt)
        while True:
            step = 1.0 / lip
            zp, zm, zt = _dykstra_prox(
                y_pt[0] - step * g_beta,
                y_pt[1] + step * g_beta,
                y_pt[2] - step * g_theta,
                mask_u8, step * lam, 0.5 * step * lam,
                cfg.prox_sweeps, cfg.prox_tol,
            )
            dp = zp - y_pt[0]
            dmn = zm - y_pt[1]
            dt = zt - y_pt[2]
            rz = residual(zp, zm, zt)
            f_z = 0.5 / n * float(rz @ rz)
            quad_bound = (f_y + float(g_beta @ dp) - float(g_beta @ dmn)
                          + float((g_theta * dt).sum())
                          + 0.5 * lip * (float(dp @ dp) + float(dmn @ dmn)
                                         + float((dt * dt).sum())))
            if f_z <= quad_bound + 1e-12 * max(1.0, abs(f_z)):
                break
            lip *= 2.0
            if lip > 1e16:
                break
        obj_z = (f_z + lam * float(zp.sum() + zm.sum())
                 + 0.5 * lam * float(np.abs(zt).sum()))

        if obj_z <= obj_x:
            x_prev = x_cur
            x_cur = (zp, zm, zt)
            rel = abs(obj_x - obj_z) / max(1.0, abs(obj_x))
            obj_x = obj_z
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
            y_pt = tuple(
                x_cur[i] + (t_mom / t_next) * ((zp, zm, zt)[i] - x_cur[i])
                + ((t_mom - 1.0) / t_next) * (x_cur[i] - x_prev[i])
                for i in range(3))
            t_mom = t_next
            stall = 0
            objective_path.append(obj_x)
            if rel < cfg.tol:
                converged = True
                break
        else:
            # restart momentum from the best point
            t_mom = 1.0
            y_pt = tuple(np.array(v) for v in x_cur)
            stall += 1
            objective_path.append(obj_x)
            if stall >= 8:
                converged = True
                break

    b_plus, b_minus, theta = (np.array(v) for v in x_cur)
    # exact feasibility polish: shrink rows onto their budgets
    row_l1 = np.abs(theta).sum(axis=1)
    budget = b_plus + b_minus
    viol = row_l1 > budget
    if viol.any():
        scale = np.where(row_l1 > 0, np.minimum(budget / np.where(row_l1 > 0,
                                                                  row_l1, 1.0), 1.0), 1.0)
        theta *= np.minimum(scale[:, None], scale[None, :])

    cfg._warm_lip = lip
    return HierNetFit(
        columns=dm.columns,
        beta=b_plus - b_minus,
        beta_plus=b_plus,
        beta_minus=b_minus,
        theta=theta,
        intercept=ybar,
        lambda_=float(lam),
        objective_path=np.asarray(objective_path),
        converged=converged,
        n_iter=n_iter,
        augmented=dm.augmented,
        col_means=means,
        col_sds=sds,
        prod_means=prod_means,
        mask=mask,
    )


def default_lambda_grid(dm: DesignMatrix, y: np.ndarray,
                        cfg: HierNetConfig) -> np.ndarray:
    if cfg.lambda_grid is not None:
        return np.asarray(cfg.lambda_grid, dtype=float)
    x_raw = np.asarray(dm.matrix, dtype=float)
    xs, _, sds = _standardize(x_raw)
    ys = np.asarray(y, dtype=float) - float(np.mean(y))
    mask = dm.interaction_mask()
    mask &= (sds > 0)[:, None] & (sds > 0)[None, :]
    lmax = lambda_max(xs, ys, mask)
    return np.geomspace(lmax, lmax * cfg.lambda_min_ratio, cfg.n_lambda)


def fit_path(dm: DesignMatrix, y: np.ndarray, grid: np.ndarray,
             cfg: HierNetConfig) -> list[HierNetFit]:
    """Warm-started fits along a descending penalty path."""
    fits = []
    init = None
    for lam in grid:
        f = fit(dm, y, float(lam), cfg, init=init)
        fits.append(f)
        init = (f.beta_plus, f.beta_minus, f.theta)
    return fits


@dataclass
class CvResult:
    lambda_selected: float
    grid: np.ndarray
    cv_curve: np.ndarray
    fold_of_respondent: dict = field(default_factory=dict)


def respondent_folds(respondent_ids: np.ndarray, n_folds: int,
                     seed: int) -> dict:
    """Deterministic respondent -> fold assignment."""
    uniq = np.unique(respondent_ids)
    if len(uniq) < n_folds:
        raise ValidationError("fewer respondents than folds")
    rng = rng_for(seed, "cvfolds", 0)
    perm = rng.permutation(len(uniq))
    return {rid: int(i % n_folds) for i, rid in enumerate(uniq[perm])}


def cross_validate(dm: DesignMatrix, y: np.ndarray, cfg: HierNetConfig,
                   seed: int = 0) -> CvResult:
    """Pick the penalty by respondent-level K-fold CV (all augmented rows of
    a respondent share a fold); ties resolve to the sparser fit."""
    if cfg.cv_folds < 2:
        raise ValidationError("cv_folds must be >= 2")
    grid = default_lambda_grid(dm, y, cfg)
    fold_of = respondent_folds(dm.respondent_ids, cfg.cv_folds, seed)
    row_fold = np.array([fold_of[r] for r in dm.respondent_ids])
    y = np.asarray(y, dtype=float)
    sq_err = np.zeros(len(grid))
    n_held = 0
    for k in range(cfg.cv_folds):
        train = row_fold != k
        held = ~train
        sub = DesignMatrix(matrix=dm.matrix[train], columns=dm.columns,
                           respondent_ids=dm.respondent_ids[train],
                           task_ids=dm.task_ids[train], augmented=dm.augmented)
        fits = fit_path(sub, y[train], grid, cfg)
        n_held += int(held.sum())
        for gi, f in enumerate(fits):
            pred = f.predict(dm.matrix[held])
            sq_err[gi] += float(((y[held] - pred) ** 2).sum())
    curve = sq_err / n_held
    best = int(np.argmin(curve))
    # prefer the largest lambda within numerical tolerance of the minimum
    for gi in range(best + 1):
        if curve[gi] <= curve[best] * (1 + 1e-12):
            best = gi
            break
    return CvResult(lambda_selected=float(grid[best]), grid=grid,
                    cv_curve=curve, fold_of_respondent=fold_of)
