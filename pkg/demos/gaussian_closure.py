"""OU process on the Gaussian family: the projected flow is exact.

Starting from N(0.5, 0.5), the natural parameters follow the closed-form
moment equations and the projection residual stays at rounding level.
"""

import numpy as np

from fpe_project import ExpFamily, SdeModel, projected_flow, residual
from fpe_project.expfam import gaussian_from_theta

fam = ExpFamily.monomial(2)
model = SdeModel.ornstein_uhlenbeck()
ts = np.linspace(0, 5, 6)
traj = projected_flow(fam, model, [1.0, -1.0], (0, 5), t_eval=ts)

print(f"{'t':>4} {'mean':>10} {'exact':>10} {'var':>10} {'exact':>10} {'residual':>10}")
for t, th in zip(traj.times, traj.states):
    m, v = gaussian_from_theta(th)
    print(f"{t:4.1f} {m:10.6f} {0.5 * np.exp(-t):10.6f} {v:10.6f} {1 - 0.5 * np.exp(-2 * t):10.6f} "
          f"{residual(fam, model, th).r2:10.2e}")
