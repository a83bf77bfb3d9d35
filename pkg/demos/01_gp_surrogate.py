"""Walk through the GP surrogate that ranks learning rates.

The search works in log10 LR space. Each observed point is a candidate's
forecast loss; the posterior interpolates them and the lower-confidence-bound
acquisition picks where to look next.
"""

import numpy as np

from autolrs.gp import Observation, fit_posterior, lcb_argmin, matern_kernel

# the kernel is 1 at zero distance and decays smoothly
for r in (0.0, 0.5, 1.0, 2.0, 4.0):
    print(f"kernel(0, {r}) = {matern_kernel(0.0, r):.6f}")
print()

# pretend three candidates have been evaluated: log10 lr -> forecast loss
observed = [
    Observation(-3.0, 0.90),
    Observation(-1.5, 0.35),
    Observation(-0.5, 0.60),
]
posterior = fit_posterior(observed, noise_variance=1e-4)

grid = np.linspace(-3.0, 0.0, 13)
mean, std = posterior.predict(grid)
print("log10_lr   mean    std")
for x, m, s in zip(grid, mean, std):
    marker = " <- observed" if any(abs(x - o.x) < 1e-9 for o in observed) else ""
    print(f"{x:8.2f} {m:7.3f} {s:6.3f}{marker}")
print()

# a huge kappa turns the acquisition into pure exploration: it goes where
# the posterior is least certain, far from anything observed
for kappa in (0.0, 1.0, 1000.0):
    x = lcb_argmin(posterior, (-3.0, 0.0), kappa=kappa, grid_size=1024)
    print(f"kappa={kappa:<6g} next candidate at log10 lr {x:.4f} (lr {10**x:.5f})")
