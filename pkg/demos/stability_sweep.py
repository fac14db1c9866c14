"""W2 distance between a two-cluster run and runs started at W2 distance delta.

The ratio W2(t) / W2(0) stays of order one for every delta: the solution
map is Lipschitz in W2, with a rate far below the worst-case estimate.

    python demos/stability_sweep.py [scenario.ini]
"""

import sys

import numpy as np

from qclosest.experiments import run_stability
from qclosest.scenario import load_scenario

path = sys.argv[1] if len(sys.argv) > 1 else "demos/scenarios/two_clusters.ini"
rep = run_stability(load_scenario(path))
print("delta0      sup W2      sup ratio")
for d0, w, r in zip(rep.delta0, rep.sup_w2, rep.sup_ratio):
    print(f"{d0:8.1e}  {w:10.3e}  {r:9.4f}")
print(f"log-log slope of sup W2 vs delta0: {rep.slope:.4f}")
print(f"fitted rate {rep.fitted_rate:.3f} (least squares {rep.lsq_rate:.3f})")
print(f"worst-case exponent {rep.theoretical_bound_exponent:.3g}")
t = rep.times
print("t    " + " ".join(f"{x:6.2f}" for x in t[:: max(1, len(t) // 8)]))
print("ratio" + " ".join(f"{x:6.3f}" for x in (rep.series[0] / rep.delta0[0])[:: max(1, len(t) // 8)]))
