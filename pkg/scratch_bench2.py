"""Scratch: harder solver cases."""
import time
import numpy as np

from conjoint_crt.hiernet import HierNetConfig, fit, fit_path, default_lambda_grid
from conjoint_crt.encoding import DesignMatrix, Column

rng = np.random.default_rng(1)


def sim_design(n, p=11, signal=True):
    cols = []
    mats = []
    codes_all = {}
    for side in ("L", "R"):
        for f in range(p):
            codes = rng.integers(0, 2, size=n)
            codes_all[(f, side)] = codes
            oh = np.zeros((n, 2)); oh[np.arange(n), codes] = 1
            mats.append(oh)
            cols += [Column(block=("factor", f"f{f}", side), factor=f"f{f}",
                            level=k, side=side) for k in range(2)]
    X = np.hstack(mats)
    lin = np.zeros(n)
    if signal:
        for f in range(min(8, p)):
            lin += 0.4 * (codes_all[(f, "L")] - 0.5) - 0.4 * (codes_all[(f, "R")] - 0.5)
        if p >= 2:
            lin += 1.6 * (codes_all[(0, "L")] - 0.5) * (codes_all[(1, "L")] - 0.5)
            lin -= 1.6 * (codes_all[(0, "R")] - 0.5) * (codes_all[(1, "R")] - 0.5)
    prob = 1 / (1 + np.exp(-lin))
    y = (rng.random(n) < prob).astype(float)
    dm = DesignMatrix(matrix=X, columns=tuple(cols),
                      respondent_ids=np.arange(n), task_ids=np.ones(n))
    return dm, y


for n in (2000, 6000):
    dm, y = sim_design(n)
    cfg = HierNetConfig(tol=1e-7, max_iter=3000)
    grid = default_lambda_grid(dm, y, cfg)
    for lam_label, lam in (("lam_max/4", grid[0] / 4), ("lam_max/20", grid[0] / 20),
                           ("lam_max/100", grid[0] / 100)):
        t0 = time.time()
        f1 = fit(dm, y, lam, cfg)
        t1 = time.time()
        nnz = int((np.abs(f1.theta) > 1e-10).sum())
        print(f"n={n} {lam_label}: {t1-t0:.3f}s iters={f1.n_iter} conv={f1.converged} "
              f"nnz_theta={nnz} per_iter={(t1-t0)/f1.n_iter*1000:.2f}ms")
    t0 = time.time()
    fits = fit_path(dm, y, grid[::3], cfg)   # ~17 point path
    t1 = time.time()
    print(f"n={n} 17-point path: {t1-t0:.2f}s")

# lambda=0 oracle on small instance
n, p = 60, 2
dm, y = sim_design(n, p=p, signal=True)
cfg = HierNetConfig(tol=1e-12, max_iter=20000)
f0 = fit(dm, y, 0.0, cfg)
# oracle: least squares on [standardized mains, centered masked products]
X = dm.matrix
Xs = (X - X.mean(0)) / np.where(X.std(0) > 0, X.std(0), 1)
Xs[:, X.std(0) == 0] = 0
mask = dm.interaction_mask()
feats = [Xs]
for j in range(X.shape[1]):
    for k in range(j + 1, X.shape[1]):
        if mask[j, k]:
            pr = Xs[:, j] * Xs[:, k]
            feats.append((pr - pr.mean())[:, None])
A = np.hstack(feats)
yc = y - y.mean()
coef, *_ = np.linalg.lstsq(A, yc, rcond=None)
pred_oracle = y.mean() + A @ coef
pred_fit = f0.predict(X)
print("lam=0: iters=", f0.n_iter, "max fitted-value diff:", np.abs(pred_oracle - pred_fit).max())
