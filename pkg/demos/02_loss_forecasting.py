"""Forecast where a loss curve is headed from a short prefix.

A candidate only trains tau' steps; the decision needs the loss at tau.
The model is a * exp(b * t) + c with b < 0: a is how much there is left to
forget, b how fast it goes, c the floor the curve settles to.
"""

import numpy as np

from autolrs.forecast import (
    LossSeries,
    evaluate_candidate,
    fit_exponential,
    forecast_loss,
    spline_smooth,
)

t = np.arange(1, 101)
truth_a, truth_b, truth_c = 2.0, -0.01, 0.5
clean = truth_a * np.exp(truth_b * t) + truth_c

# corrupt the early window the way real training curves are corrupted:
# a transient bump plus a few hardware-hiccup spikes
y = clean + 0.8 * np.exp(-(((t - 20.0) / 8.0) ** 2))
for s in (10, 25, 40):
    y[s - 1] += 2.0

series = LossSeries(t, y, horizon_tau=1000, observed_tau_prime=100)
truth_at_horizon = truth_a * np.exp(truth_b * 1000) + truth_c

naive = fit_exponential(series)
print("fit on the raw series:")
print(f"  a={naive.a:.4f} b={naive.b:.5f} c={naive.c:.4f}")
print(f"  forecast at 1000: {forecast_loss(naive, 1000):.4f}"
      f" (truth {truth_at_horizon:.4f})")

smoothed = spline_smooth(series)
print(f"\nsmoothing removed steps {sorted(smoothed.removed_steps.tolist())}")
robust = fit_exponential(smoothed.series)
print("fit after smoothing:")
print(f"  a={robust.a:.4f} b={robust.b:.5f} c={robust.c:.4f}")
print(f"  forecast at 1000: {forecast_loss(robust, 1000):.4f}")

# evaluate_candidate is the one-call version the controller uses
print(f"\nevaluate_candidate: {evaluate_candidate(series):.4f}")
