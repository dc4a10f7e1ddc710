"""Synthetic forced-choice data generation and the Monte-Carlo studies.

The base DGP draws independent binary factors for both profiles, codes them
as (-0.5, 0.5), and generates the choice through a latent logistic model
with X and Z main effects, within- and between-profile X-by-Z interactions
(positive and negative respectively), and within-profile Z-by-Z
interactions.  Interaction coefficients are doubled in the predictor so
that effect sizes stay comparable under the centered coding.

Optional regularity violations are planted on top: a left-profile-specific
extra main effect (profile order effect), a dependence of the X effect on
the task index (fatigue), and a lag-1 interaction between the previous
task's first Z factor and the current task's second Z factor (carryover).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .data import ConjointDataset, FactorSpec, Schema, ValidationError
from .engine import run_crt
from .glm import amce_test, fit_logistic
from .hiernet import HierNetConfig
from .randomization import RandomizationScheme, ResamplePlan, rng_for
from .statistics import StatisticSpec

X_FACTOR = "x"


def default_beta_z(num_z: int) -> np.ndarray:
    """Eight alternating-sign main effects of 0.1, zeros beyond."""
    beta = np.zeros(num_z)
    for i in range(min(8, num_z)):
        beta[i] = 0.1 if i % 2 == 0 else -0.1
    return beta


@dataclass(frozen=True)
class ForcedChoiceDgp:
    num_z: int = 10
    beta_x: float = 0.1
    beta_z: tuple | None = None
    n_within: int = 0
    n_between: int = 0
    size_within: float = 0.0
    size_between: float = 0.0
    gamma_tilde_count: int = 15
    gamma_tilde_size: float = 0.05
    n: int = 3000
    J: int = 1
    order_effect: float = 0.0
    fatigue_effect: float = 0.0
    carryover_effect: float = 0.0
    n_covariates: int = 0
    respondent_interaction: float = 0.0

    def resolved_beta_z(self) -> np.ndarray:
        if self.beta_z is not None:
            b = np.asarray(self.beta_z, dtype=float)
            if b.shape != (self.num_z,):
                raise ValidationError("beta_z length must equal num_z")
            return b
        return default_beta_z(self.num_z)

    def schema(self) -> Schema:
        factors = [FactorSpec(name=X_FACTOR, levels=("0", "1"))]
        factors += [FactorSpec(name=f"z{i + 1}", levels=("0", "1"))
                    for i in range(self.num_z)]
        factors += [FactorSpec(name=f"v{m + 1}", kind="respondent", numeric=True)
                    for m in range(self.n_covariates)]
        return Schema(tuple(factors))


def uniform_scheme() -> RandomizationScheme:
    return RandomizationScheme(marginals={}, restrictions=())


@dataclass
class GeneratedData:
    dataset: ConjointDataset
    scheme: RandomizationScheme
    latent: np.ndarray
    gamma_positions: np.ndarray
    delta_positions: np.ndarray
    gamma_tilde_pairs: np.ndarray


def generate(dgp: ForcedChoiceDgp, seed: int) -> GeneratedData:
    """Draw one synthetic dataset; interaction positions are redrawn from
    the seed every call."""
    if dgp.n_within > dgp.num_z or dgp.n_between > dgp.num_z:
        raise ValidationError("more interactions requested than Z factors")
    rng = rng_for(seed, "dgp", 0)
    n_rows = dgp.n * dgp.J
    xl = rng.integers(0, 2, size=n_rows)
    xr = rng.integers(0, 2, size=n_rows)
    zl = rng.integers(0, 2, size=(n_rows, dgp.num_z))
    zr = rng.integers(0, 2, size=(n_rows, dgp.num_z))
    v = rng.standard_normal((dgp.n, dgp.n_covariates))
    v_rows = np.repeat(v, dgp.J, axis=0)

    gamma_pos = np.sort(rng.choice(dgp.num_z, size=dgp.n_within, replace=False)) \
        if dgp.n_within else np.zeros(0, dtype=int)
    delta_pos = np.sort(rng.choice(dgp.num_z, size=dgp.n_between, replace=False)) \
        if dgp.n_between else np.zeros(0, dtype=int)
    all_pairs = [(a, b) for a in range(dgp.num_z) for b in range(a + 1, dgp.num_z)]
    n_gt = min(dgp.gamma_tilde_count, len(all_pairs))
    gt_idx = rng.choice(len(all_pairs), size=n_gt, replace=False) if n_gt else []
    gt_pairs = np.array([all_pairs[i] for i in gt_idx], dtype=int).reshape(-1, 2)

    xlc = xl - 0.5
    xrc = xr - 0.5
    zlc = zl - 0.5
    zrc = zr - 0.5
    beta_z = dgp.resolved_beta_z()

    lp = dgp.beta_x * (xlc - xrc) + dgp.order_effect * xlc
    lp = lp + (zlc - zrc) @ beta_z
    for f in gamma_pos:
        lp = lp + 2 * dgp.size_within * (xlc * zlc[:, f] - xrc * zrc[:, f])
    for f in delta_pos:
        lp = lp + 2 * (-dgp.size_between) * (xlc * zrc[:, f] - xrc * zlc[:, f])
    for a, b in gt_pairs:
        lp = lp + 2 * dgp.gamma_tilde_size * (zlc[:, a] * zlc[:, b]
                                              - zrc[:, a] * zrc[:, b])
    task = np.tile(np.arange(1, dgp.J + 1), dgp.n)
    if dgp.fatigue_effect:
        lp = lp + dgp.fatigue_effect * (task - (dgp.J + 1) / 2) * (xlc - xrc)
    if dgp.carryover_effect and dgp.J >= 2:
        prev = task > 1
        idx = np.where(prev)[0]
        lp_add = 2 * dgp.carryover_effect * (
            zlc[idx - 1, 0] * zlc[idx, 1] - zrc[idx - 1, 0] * zrc[idx, 1])
        lp = lp.astype(float)
        lp[idx] = lp[idx] + lp_add
    if dgp.respondent_interaction and dgp.n_covariates:
        lp = lp + 2 * dgp.respondent_interaction * v_rows[:, 0] * (xlc - xrc)

    latent = lp + rng.logistic(size=n_rows)
    y = (latent > 0).astype(np.int8)

    ds = ConjointDataset(
        schema=dgp.schema(),
        profiles_left=np.column_stack([xl[:, None], zl]),
        profiles_right=np.column_stack([xr[:, None], zr]),
        covariates=v_rows,
        y=y,
        respondent_ids=np.repeat(np.arange(dgp.n), dgp.J),
        task_order=task,
        target_factors=(X_FACTOR,),
    )
    return GeneratedData(dataset=ds, scheme=uniform_scheme(), latent=latent,
                         gamma_positions=gamma_pos, delta_positions=delta_pos,
                         gamma_tilde_pairs=gt_pairs)


# ---------------------------------------------------------------------------
# Analytic variance decomposition (latent scale)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VarianceDecomposition:
    sigma2_interaction: float
    sigma2_remaining: float

    @property
    def total(self) -> float:
        return self.sigma2_interaction + self.sigma2_remaining

    @property
    def fraction(self) -> float:
        if self.total == 0:
            return 0.0
        return self.sigma2_interaction / self.total


def variance_decomposition(dgp: ForcedChoiceDgp) -> VarianceDecomposition:
    """Closed-form latent-scale variances under the centered binary coding.

    Each main effect of size b contributes b^2/2; every doubled interaction
    of size c contributes c^2/2 (the product of two independent centered
    codes has variance 1/16, times the 4 from doubling, times 2 sides).
    """
    beta_z = dgp.resolved_beta_z()
    sigma2_rem = (dgp.beta_x ** 2 + float(beta_z @ beta_z)) / 2.0
    sigma2_rem += dgp.gamma_tilde_count * dgp.gamma_tilde_size ** 2 / 2.0
    sigma2_int = (dgp.n_within * dgp.size_within ** 2
                  + dgp.n_between * dgp.size_between ** 2) / 2.0
    return VarianceDecomposition(sigma2_interaction=sigma2_int,
                                 sigma2_remaining=sigma2_rem)


def heterogeneous_coefficients(size: float) -> tuple[float, float]:
    """(strong, weak) interaction sizes whose squared sum matches two equal
    interactions of the given size: the thirty-degree point on the circle."""
    if size < 0:
        raise ValidationError("interaction size must be nonnegative")
    return float(np.sqrt(4.0 / 3.0) * size), float(np.sqrt(2.0 / 3.0) * size)


def homogeneous_dgp(size: float, n_interactions: int, n: int = 3000,
                    **kwargs) -> ForcedChoiceDgp:
    if n_interactions % 2:
        raise ValidationError("interaction count must be even (half within, half between)")
    half = n_interactions // 2
    return ForcedChoiceDgp(n=n, n_within=half, n_between=half,
                           size_within=size, size_between=size, **kwargs)


def heterogeneous_dgp(size: float, n_interactions: int, n: int = 3000,
                      **kwargs) -> ForcedChoiceDgp:
    strong, weak = heterogeneous_coefficients(size)
    half = n_interactions // 2
    return ForcedChoiceDgp(n=n, n_within=half, n_between=half,
                           size_within=strong, size_between=weak, **kwargs)


# ---------------------------------------------------------------------------
# Power study
# ---------------------------------------------------------------------------

METHODS = ("amce", "crt_hiernet", "crt_hiernet_unconstrained", "crt_dicrt")

_METHOD_KIND = {
    "crt_hiernet": "hiernet",
    "crt_hiernet_unconstrained": "hiernet_unconstrained",
    "crt_dicrt": "dicrt",
}


def _one_rep_pvalues(dgp: ForcedChoiceDgp, methods, rep_seed: int, B: int,
                     hn_cfg: HierNetConfig, lambda_mode: str) -> dict:
    gen = generate(dgp, rep_seed)
    ds, scheme = gen.dataset, gen.scheme
    out = {}
    for method in methods:
        if method == "amce":
            out[method] = amce_test(ds, X_FACTOR).p_value
        else:
            spec = StatisticSpec(kind=_METHOD_KIND[method], targets=(X_FACTOR,))
            plan = ResamplePlan(kind="main", B=B, master_seed=rep_seed)
            res = run_crt(ds, scheme, plan, spec, hiernet_config=hn_cfg,
                          lambda_mode=lambda_mode, workers=1)
            out[method] = res.p_value
    return out


def power_study(dgps: dict, methods=("amce", "crt_hiernet"), reps: int = 100,
                B: int = 100, alpha: float = 0.05, seed: int = 0,
                workers: int = 1, hiernet_config: HierNetConfig | None = None,
                lambda_mode: str = "pilot") -> tuple[pd.DataFrame, pd.DataFrame]:
    """Monte-Carlo power over a grid of DGPs.

    Returns (tidy per-rep p-values, power summary with MC standard errors).
    """
    for m in methods:
        if m not in METHODS:
            raise ValidationError(f"unknown method {m!r}")
    hn_cfg = hiernet_config or HierNetConfig(n_lambda=20)
    tasks = [(gid, rep) for gid in dgps for rep in range(reps)]

    def one(gid, rep):
        rep_seed = int(rng_for(seed, f"grid:{gid}", rep).integers(0, 2**62))
        pv = _one_rep_pvalues(dgps[gid], methods, rep_seed, B, hn_cfg, lambda_mode)
        return [(gid, m, rep, pv[m], rep_seed) for m in methods]

    if workers > 1:
        with Parallel(n_jobs=workers, backend="loky",
                      inner_max_num_threads=1) as par:
            rows_nested = par(delayed(one)(g, r) for g, r in tasks)
    else:
        rows_nested = [one(g, r) for g, r in tasks]
    rows = [r for chunk in rows_nested for r in chunk]
    pvals = pd.DataFrame(rows, columns=["grid_id", "method", "rep", "p_value",
                                        "rep_seed"])
    summary_rows = []
    for (gid, m), grp in pvals.groupby(["grid_id", "method"], sort=False):
        power = float((grp["p_value"] <= alpha).mean())
        se = float(np.sqrt(power * (1 - power) / len(grp)))
        summary_rows.append((gid, m, len(grp), alpha, power, se))
    summary = pd.DataFrame(summary_rows, columns=["grid_id", "method", "reps",
                                                  "alpha", "power", "mc_se"])
    return pvals, summary


def interaction_size_grid(sizes=(0.0, 0.025, 0.05, 0.075, 0.1, 0.125),
                          n_interactions: int = 6, n: int = 3000,
                          heterogeneous: bool = False) -> dict:
    """Grid over interaction sizes at a fixed interaction count; grid ids
    carry the latent variance fraction explained by the interactions."""
    build = heterogeneous_dgp if heterogeneous else homogeneous_dgp
    grid = {}
    for s in sizes:
        dgp = build(s, n_interactions, n=n) if s > 0 else \
            homogeneous_dgp(0.0, n_interactions, n=n)
        frac = variance_decomposition(dgp).fraction
        grid[f"size={s:g};frac={frac:.3f}"] = dgp
    return grid


# ---------------------------------------------------------------------------
# Logistic p-value inflation study (single-profile, all-null)
# ---------------------------------------------------------------------------

def _inflation_design(rng: np.random.Generator, n: int, num_z: int,
                      n_levels: int = 4) -> tuple[np.ndarray, np.ndarray, list]:
    """Single-profile factors, baseline-dropped dummies, all two-way
    interactions; returns (design, test-column indices, names)."""
    p = num_z + 1
    codes = rng.integers(0, n_levels, size=(n, p))
    blocks = []
    names = ["intercept"]
    cols = [np.ones(n)]
    col_factor = [-1]
    for f in range(p):
        dums = []
        for k in range(1, n_levels):
            cols.append((codes[:, f] == k).astype(float))
            names.append(f"f{f}={k}")
            col_factor.append(f)
            dums.append(len(cols) - 1)
        blocks.append(dums)
    for a in range(p):
        for b in range(a + 1, p):
            for ia in blocks[a]:
                for ib in blocks[b]:
                    cols.append(cols[ia] * cols[ib])
                    names.append(f"{names[ia]}*{names[ib]}")
                    col_factor.append(-2 if 0 in (a, b) else -3)
    x = np.column_stack(cols)
    test_idx = np.array([i for i, cf in enumerate(col_factor)
                         if cf == 0 or cf == -2])
    return x, test_idx, names


def logistic_inflation_study(num_z_grid=(3, 5, 10, 11, 12, 13), n: int = 5000,
                             reps: int = 200, seed: int = 0, workers: int = 1
                             ) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Null rejection rates of the all-two-way-interaction logistic F-test.

    Everything is null: the response is an independent fair coin, so any
    excess rejection is p-value inflation from the high-dimensional MLE.
    """
    def one(num_z: int, rep: int) -> tuple:
        rng = rng_for(seed, f"inflation:{num_z}", rep)
        x, test_idx, _ = _inflation_design(rng, n, num_z)
        y = rng.integers(0, 2, size=n).astype(float)
        try:
            f = fit_logistic(x, y, max_iter=80)
            _, p, _ = f.wald_f(test_idx)
        except Exception:
            p = np.nan
        return (num_z, rep, p)

    tasks = [(nz, rep) for nz in num_z_grid for rep in range(reps)]
    if workers > 1:
        with Parallel(n_jobs=workers, backend="loky",
                      inner_max_num_threads=1) as par:
            rows = par(delayed(one)(nz, rep) for nz, rep in tasks)
    else:
        rows = [one(nz, rep) for nz, rep in tasks]
    pvals = pd.DataFrame(rows, columns=["num_z", "rep", "p_value"])
    summary_rows = []
    for nz, grp in pvals.groupby("num_z", sort=True):
        ok = grp["p_value"].dropna()
        rate = float((ok <= 0.05).mean())
        summary_rows.append((nz, len(ok), rate,
                             float(np.sqrt(rate * (1 - rate) / max(len(ok), 1)))))
    summary = pd.DataFrame(summary_rows,
                           columns=["num_z", "reps", "rejection_rate", "mc_se"])
    return pvals, summary
