"""Long-time behaviour: global coupling flocks, periodic pairs keep switching.

With eta = 1 every particle weighs every other one equally and the
velocities reach consensus.  On the torus the two pairs of the two-pair
layout keep passing the middle particle, so its neighbors never settle.

    python demos/clustering.py
"""

import numpy as np

from qclosest.experiments import run_conjecture
from qclosest.scenario import load_scenario, parse_scenario

GLOBAL = """[domain]
dim = 2
[model]
n = 16
eta = 1
sigma = 0.1
[integrator]
dt = 1e-2
[init]
kind = uniform_box
seed = 9
[output]
stride = 10
"""

for label, s, horizon in (
    ("global coupling", parse_scenario(GLOBAL), 50.0),
    ("torus pairs", load_scenario("demos/scenarios/torus_example1.ini"), 100.0),
):
    d = run_conjecture(s, horizon=horizon)
    k = np.linspace(0, d.times.shape[0] - 1, 6).astype(int)
    print(f"{label}: stabilization time {d.stabilization_time}")
    for i in k:
        print(f"  t={d.times[i]:6.1f}  max accel {d.max_accel[i]:.2e}  weight drift {d.weight_change[i]:.2e}  components {d.n_components[i]}")
