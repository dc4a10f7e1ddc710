"""Calibration pilot: criterion 2 validity runtime + regularity DGP power."""
import time

import numpy as np

from conjoint_crt.engine import run_crt, run_validity_suite
from conjoint_crt.hiernet import HierNetConfig
from conjoint_crt.randomization import ResamplePlan
from conjoint_crt.simulation import ForcedChoiceDgp, generate
from conjoint_crt.statistics import StatisticSpec

hn = HierNetConfig(n_lambda=12, cv_folds=4, tol=1e-6)

# --- criterion 2 runtime probe: one rep timed, then a 24-rep band check
def make_null(seed):
    gen = generate(ForcedChoiceDgp(n=1000, beta_x=0.0), seed)
    return gen.dataset, gen.scheme

t0 = time.time()
ds, scheme = make_null(0)
res = run_crt(ds, scheme, ResamplePlan(kind="main", B=100, master_seed=1),
              StatisticSpec(kind="hiernet", targets=("x",)),
              hiernet_config=hn)
t_one = time.time() - t0
print(f"[c2] one p-value at n=1000 B=100: {t_one:.1f}s (p={res.p_value:.3f}, lam={res.lambda_value:.4f})")

t0 = time.time()
plan = ResamplePlan(kind="main", B=100, master_seed=7)
spec = StatisticSpec(kind="hiernet", targets=("x",))
summary = run_validity_suite(make_null, plan, spec, reps=24, workers=2,
                             hiernet_config=hn)
print(f"[c2 pilot] rejection@.05={summary.rejection_at(0.05):.3f} "
      f"ks_p={summary.ks_p_value:.3f} time={time.time()-t0:.0f}s for 24 reps")

# --- regularity: order test with planted order effect, calibrate size
for oe in (0.3, 0.5):
    t0 = time.time()
    hits = 0
    reps = 10
    for r in range(reps):
        gen = generate(ForcedChoiceDgp(n=1500, order_effect=oe), seed=300 + r)
        res = run_crt(gen.dataset, gen.scheme,
                      ResamplePlan(kind="order", B=100, master_seed=900 + r),
                      StatisticSpec(kind="order"), hiernet_config=hn)
        hits += res.p_value <= 0.05
    print(f"[order oe={oe}] power={hits}/{reps} time={time.time()-t0:.0f}s")

# --- carryover with the module-spec DGP: n=1500, J=4, interaction 0.5
t0 = time.time()
hits = 0
reps = 6
for r in range(reps):
    gen = generate(ForcedChoiceDgp(n=1500, J=4, carryover_effect=0.5),
                   seed=400 + r)
    res = run_crt(gen.dataset, gen.scheme,
                  ResamplePlan(kind="carryover", B=100, master_seed=800 + r),
                  StatisticSpec(kind="carryover"), hiernet_config=hn)
    hits += res.p_value <= 0.05
print(f"[carryover ce=0.5 n=1500 J=4] power={hits}/{reps} time={time.time()-t0:.0f}s")

# --- fatigue planted effect
for fe in (0.15, 0.25):
    t0 = time.time()
    hits = 0
    reps = 8
    for r in range(reps):
        gen = generate(ForcedChoiceDgp(n=1000, J=4, fatigue_effect=fe),
                       seed=500 + r)
        res = run_crt(gen.dataset, gen.scheme,
                      ResamplePlan(kind="fatigue", B=100, master_seed=700 + r),
                      StatisticSpec(kind="fatigue"), hiernet_config=hn)
        hits += res.p_value <= 0.05
    print(f"[fatigue fe={fe} n=1000 J=4] power={hits}/{reps} time={time.time()-t0:.0f}s")
