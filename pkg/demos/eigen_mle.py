"""Hermite statistics under OU: the projection error decays like exp(-Lambda t).

A bimodal start is moment-projected onto He1..He4. The grid solver gives the
true moments; the projected flow is started slightly off and its error is
compared with the predicted decay.
"""

import numpy as np

from fpe_project import Background, ExpFamily, SdeModel
from fpe_project.oracle import Grid1D, GridDensity, eigen_spectrum, mle_error_series

fam = ExpFamily.hermite(4, Background.gaussian())
model = SdeModel.ornstein_uhlenbeck()
print("spectrum:", eigen_spectrum(fam, model))

p0 = GridDensity.mixture(Grid1D(-10, 10, 2001), [0.5, 0.5], [-1, 1], [0.09, 0.09])
ts = np.linspace(0, 2, 9)
delta = np.array([0.02, -0.02, 0.02, -0.02])
s = mle_error_series(fam, model, p0, ts, 1e-4, offset=delta)
for t, e, pred in zip(s.times, s.eps_norm, np.max(np.abs(s.predicted), axis=1)):
    print(f"t={t:.2f}  |eps|={e:.5f}  predicted={pred:.5f}")
