"""Calibration pilot: criteria 4/5/6 power points at reduced reps."""
import time

from conjoint_crt.hiernet import HierNetConfig
from conjoint_crt.simulation import (heterogeneous_dgp, homogeneous_dgp,
                                     power_study)

hn = HierNetConfig(n_lambda=12, cv_folds=4, tol=1e-6)
t0 = time.time()

# criterion 4 point: n=3000, six within + six between at 0.1 + null point
grids = {
    "c4_null": homogeneous_dgp(0.0, 0, n=3000),
    "c4_big": homogeneous_dgp(0.1, 12, n=3000),
}
pv, summary = power_study(grids, methods=("amce", "crt_hiernet"), reps=16,
                          B=100, seed=11, workers=2, hiernet_config=hn)
print(summary.to_string(index=False))
print(f"[c4 pilot] {time.time()-t0:.0f}s")

# criterion 5: constrained vs unconstrained at two sizes
t0 = time.time()
grids5 = {
    "c5_mid": homogeneous_dgp(0.075, 6, n=3000),
    "c5_big": homogeneous_dgp(0.125, 6, n=3000),
}
pv5, s5 = power_study(grids5, methods=("crt_hiernet", "crt_hiernet_unconstrained"),
                      reps=12, B=100, seed=12, workers=2, hiernet_config=hn)
print(s5.to_string(index=False))
print(f"[c5 pilot] {time.time()-t0:.0f}s")

# criterion 6: dicrt sandwich at twelve interactions of 0.06
t0 = time.time()
grids6 = {"c6": homogeneous_dgp(0.06, 12, n=3000)}
pv6, s6 = power_study(grids6, methods=("amce", "crt_hiernet", "crt_dicrt"),
                      reps=12, B=100, seed=13, workers=2, hiernet_config=hn)
print(s6.to_string(index=False))
print(f"[c6 pilot] {time.time()-t0:.0f}s")

# criterion 7 scenario pair at one size
t0 = time.time()
grids7 = {
    "hom": homogeneous_dgp(0.1, 6, n=3000),
    "het": heterogeneous_dgp(0.1, 6, n=3000),
}
pv7, s7 = power_study(grids7, methods=("crt_hiernet",), reps=12, B=100,
                      seed=14, workers=2, hiernet_config=hn)
print(s7.to_string(index=False))
print(f"[c7 pilot] {time.time()-t0:.0f}s")
