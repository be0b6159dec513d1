"""
Filtering a hidden Ornstein-Uhlenbeck state
===========================================

Simulate the observed process, run the filter at the true parameter and
compare the time average of the squared score with the closed-form
Fisher information.
"""

import numpy as np

from hidden_ou import SimConfig, SystemParams, model, run_filter, simulate
from hidden_ou.oracle import lyapunov_fisher_oracle

# a = f = b = sigma = 1, with the state started in its stationary law
params = SystemParams().stationary_d2()
path = simulate(params, SimConfig(dt=0.01, horizon_T=2000.0, seed=1))

# the filter error variance settles at the stationary Riccati root
gamma = model.gamma_stationary("F", 1.0, params)[0]
tr = run_filter(path, 1.0, "F", params, gamma0=gamma)
err = tr.m - path.Y
print(f"stationary gamma      {gamma:.5f}")
print(f"mean (m - Y)^2        {np.mean(err[1000:] ** 2):.5f}")

# the score factor mdot carries the information about f
info = model.fisher("F", 1.0, params)
print(f"Fisher information    {info:.8f} (closed form)")
print(f"                      {lyapunov_fisher_oracle('F', 1.0, params):.8f} (Lyapunov)")
print(f"                      {np.mean(tr.mdot[0, 5000:] ** 2):.5f} (time average)")

# the moment map behind the preliminary estimator
for f in (0.5, 1.0, 2.0):
    print(f"Phi({f}) = {model.phi('F', f, params).value:.6f}")
