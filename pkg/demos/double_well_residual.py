"""How far the double-well flow leaves a family.

With f = x - x^3 and a = 2 the Gaussian family is not invariant: at the
standard normal the squared residual is 24. Adding x^3 and x^4 to the
statistics shrinks it, and it dies out along the flow because the
stationary density exp(x^2/2 - x^4/4) is a member of that family.
"""

import numpy as np

from fpe_project import ExpFamily, SdeModel, projected_flow, residual
from fpe_project.projection import invariance_scan

model = SdeModel.double_well()
gauss = ExpFamily.monomial(2)
quartic = ExpFamily.monomial(4)

print("residual at N(0, 1):", residual(gauss, model, [0.0, -0.5]).r2)

ts = np.linspace(0, 2, 5)
for name, fam, th0 in (("gaussian", gauss, [0.0, -0.5]), ("quartic", quartic, [0.0, -0.5, 0.0, -0.05])):
    traj = projected_flow(fam, model, th0, (0, 2), t_eval=ts)
    r2 = [residual(fam, model, th, t).r2 for t, th in zip(traj.times, traj.states)]
    print(f"{name:>9}: " + "  ".join(f"t={t:.1f} r2={r:.4f}" for t, r in zip(traj.times, r2)))

rep = invariance_scan(quartic, model, [[0, b, 0, -d] for b in (-1.0, 0.0, 1.0) for d in (0.1, 0.25)])
print(f"quartic scan: max r2 {rep.max_r2:.4f}, invariant={rep.invariant}")
