"""Loss forecasting: iterative spline smoothing and an exponential decay fit.

A candidate LR is evaluated for only a fraction of the stage, so its few
noisy losses must be extrapolated to the full stage horizon. The pipeline is:
smooth the series with an outlier-discarding quadratic spline, then fit
y = a * exp(b * t) + c with b < 0 and read the model off at the horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import LSQUnivariateSpline

__all__ = [
    "LossSeries",
    "SmoothingParams",
    "SmoothingResult",
    "ExponentialFit",
    "spline_smooth",
    "fit_exponential",
    "forecast_loss",
    "evaluate_candidate",
    "MIN_SMOOTHING_POINTS",
    "MIN_FIT_POINTS",
]

# A least-squares quadratic spline needs a handful of points to be anything
# but an interpolant; below this the series is used raw.
MIN_SMOOTHING_POINTS = 8
MIN_FIT_POINTS = 4

# Multi-start decay rates for the outer line search; spans fast decay over a
# short window down to nearly-flat series.
FIT_STARTS = (-1.0, -0.3, -0.1, -0.03, -0.01, -0.003, -0.001, -0.0003)
FIT_MAX_ITERATIONS = 500
FIT_RELATIVE_TOLERANCE = 1e-10

# |a| below this fraction of the series range, or b indistinguishable from 0,
# means the exponential term carries no signal.
DEGENERATE_AMPLITUDE_REL = 1e-8
DEGENERATE_RATE = -1e-12


@dataclass(frozen=True)
class LossSeries:
    """Losses observed at increasing true step indices within one candidate run.

    steps may start anywhere >= 0 and need not be contiguous (validation-loss
    runs measure every val_every steps); horizon_tau is the stage length being
    forecast and observed_tau_prime the length actually run.
    """

    steps: np.ndarray
    losses: np.ndarray
    horizon_tau: int
    observed_tau_prime: int

    def __post_init__(self) -> None:
        steps = np.asarray(self.steps, dtype=np.int64)
        losses = np.asarray(self.losses, dtype=float)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "losses", losses)
        if steps.ndim != 1 or losses.ndim != 1 or len(steps) != len(losses):
            raise ValueError("steps and losses must be 1-d arrays of equal length")
        if len(steps) == 0:
            raise ValueError("series must contain at least one point")
        if steps[0] < 0:
            raise ValueError("steps must be >= 0")
        if np.any(np.diff(steps) <= 0):
            raise ValueError("steps must be strictly increasing")
        if not np.all(np.isfinite(losses)):
            raise ValueError("losses must be finite")
        if not (0 < self.observed_tau_prime <= self.horizon_tau):
            raise ValueError(
                f"need 0 < observed_tau_prime <= horizon_tau, got "
                f"{self.observed_tau_prime}, {self.horizon_tau}"
            )

    @classmethod
    def from_points(
        cls, points: "list[tuple[int, float]]", horizon_tau: int, observed_tau_prime: int
    ) -> "LossSeries":
        steps = np.array([p[0] for p in points], dtype=np.int64)
        losses = np.array([p[1] for p in points], dtype=float)
        return cls(steps, losses, horizon_tau, observed_tau_prime)

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class SmoothingParams:
    """Controls for the iterative outlier-discarding spline.

    protected_after=None means tau'/2: only losses from the first half of the
    candidate run may be discarded (early instability), later ones never.
    knot_spacing is the number of points per interior knot (minimum 4 knots).
    """

    iterations: int = 10
    drop_fraction: float = 0.03
    protected_after: float | None = None
    knot_spacing: int = 10

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not 0.0 <= self.drop_fraction < 1.0:
            raise ValueError(f"drop_fraction must be in [0, 1), got {self.drop_fraction}")
        if self.knot_spacing < 1:
            raise ValueError(f"knot_spacing must be >= 1, got {self.knot_spacing}")


@dataclass(frozen=True)
class SmoothingResult:
    series: LossSeries  # final spline evaluated at the surviving steps
    spline: object = field(repr=False)  # callable spline, final iteration
    removed_steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def _fit_quadratic_spline(t: np.ndarray, y: np.ndarray, knot_spacing: int):
    """Least-squares quadratic B-spline with uniform interior knots.

    Knot count max(4, n // knot_spacing); halved on a knot-placement rejection
    until the fit succeeds (zero interior knots is a plain parabola).
    """
    n_knots = max(4, len(t) // knot_spacing)
    while True:
        if n_knots > 0:
            interior = np.linspace(t[0], t[-1], n_knots + 2)[1:-1]
        else:
            interior = np.zeros(0)
        try:
            return LSQUnivariateSpline(t, y, interior, k=2)
        except ValueError:
            if n_knots == 0:
                raise
            n_knots //= 2


def spline_smooth(series: LossSeries, params: SmoothingParams = SmoothingParams()) -> SmoothingResult:
    """Iteratively fit a quadratic spline and discard early outliers.

    Each round fits the spline to the surviving points; the ceil(drop_fraction
    * n) points farthest from it are outlier candidates, and those observed at
    step <= protected_after are dropped. Returns the last round's spline
    evaluated at the surviving steps.
    """
    if len(series) < MIN_SMOOTHING_POINTS:
        raise ValueError(
            f"smoothing needs at least {MIN_SMOOTHING_POINTS} points, got {len(series)}"
        )
    protected_after = params.protected_after
    if protected_after is None:
        protected_after = series.observed_tau_prime / 2.0
    t = series.steps.astype(float)
    y = series.losses.copy()
    removed: list[int] = []
    spline = None
    for _ in range(params.iterations):
        spline = _fit_quadratic_spline(t, y, params.knot_spacing)
        if len(t) <= MIN_SMOOTHING_POINTS:
            continue
        residuals = np.abs(y - spline(t))
        n_drop = math.ceil(params.drop_fraction * len(t))
        if n_drop == 0:
            continue
        worst = np.argsort(-residuals, kind="stable")[:n_drop]
        droppable = worst[t[worst] <= protected_after]
        # never shrink below the spline minimum
        droppable = droppable[: max(0, len(t) - MIN_SMOOTHING_POINTS)]
        if len(droppable) == 0:
            continue
        keep = np.ones(len(t), dtype=bool)
        keep[droppable] = False
        removed.extend(int(s) for s in t[~keep])
        t, y = t[keep], y[keep]
    smoothed = LossSeries(
        t.astype(np.int64),
        np.asarray(spline(t), dtype=float),
        series.horizon_tau,
        series.observed_tau_prime,
    )
    return SmoothingResult(smoothed, spline, np.array(sorted(removed), dtype=np.int64))


@dataclass(frozen=True)
class ExponentialFit:
    """Parameters of y = a * exp(b * t) + c plus fit diagnostics.

    When degenerate is set (vanishing amplitude or rate) the exponential term
    carries no information and forecasts fall back to the offset c; b is then
    not meaningful. start_sse holds the converged objective of every
    multi-start, for inspection.
    """

    a: float
    b: float
    c: float
    sse: float
    degenerate: bool = False
    reason: str | None = None
    start_sse: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not self.degenerate and not self.b < 0:
            raise ValueError(f"non-degenerate fit requires b < 0, got {self.b}")
        if self.sse < 0:
            raise ValueError(f"sse must be >= 0, got {self.sse}")


def _inner_solve(t: np.ndarray, y: np.ndarray, b: float):
    """Closed-form least squares for (a, c) at fixed rate b.

    Normal equations of the design [exp(b t), 1]; when the exponential column
    is numerically constant the system is singular and the flat solution
    a=0, c=mean(y) is returned.
    """
    u = np.exp(b * t)
    n = len(t)
    suu = float(u @ u)
    su = float(u.sum())
    suy = float(u @ y)
    sy = float(y.sum())
    det = n * suu - su * su
    if not np.isfinite(det) or det <= 1e-12 * max(n * suu, 1e-300):
        c = sy / n
        resid = c - y
        return 0.0, c, float(resid @ resid), resid, u
    a = (n * suy - su * sy) / det
    c = (suu * sy - su * suy) / det
    resid = a * u + c - y
    return a, c, float(resid @ resid), resid, u


def _descend(t: np.ndarray, y: np.ndarray, b_start: float):
    """Minimize g(b') = min_{a,c} SSE over b' where b = -exp(b').

    Plain gradient descent with a backtracking line search; the gradient of
    the reduced objective is the partial derivative at the optimal (a, c).
    Stops when the relative objective decrease falls below tolerance.
    """
    bp = math.log(-b_start)
    b = -math.exp(bp)
    a, c, sse, resid, u = _inner_solve(t, y, b)
    step = 1.0
    for _ in range(FIT_MAX_ITERATIONS):
        grad = 2.0 * a * b * float((resid * t) @ u)
        if grad == 0.0 or not np.isfinite(grad):
            break
        trial = step
        accepted = False
        while trial >= 1e-20:
            bp_new = min(max(bp - trial * grad, -60.0), 20.0)
            if bp_new == bp:
                break
            b_new = -math.exp(bp_new)
            a_n, c_n, sse_n, resid_n, u_n = _inner_solve(t, y, b_new)
            if sse_n < sse - 1e-4 * abs(bp_new - bp) * abs(grad):
                accepted = True
                break
            trial *= 0.5
        if not accepted:
            break
        decrease = sse - sse_n
        bp, b, a, c, sse, resid, u = bp_new, b_new, a_n, c_n, sse_n, resid_n, u_n
        step = min(trial * 2.0, 1e6)
        if decrease <= FIT_RELATIVE_TOLERANCE * max(sse, 1e-300):
            break
    return a, b, c, sse


def fit_exponential(series: LossSeries) -> ExponentialFit:
    """Fit y = a * exp(b * t) + c, b < 0, by alternating closed-form (a, c)
    with a line-searched descent on the rate, from several fixed starts."""
    if len(series) < MIN_FIT_POINTS:
        raise ValueError(f"fit needs at least {MIN_FIT_POINTS} points, got {len(series)}")
    t = series.steps.astype(float)
    y = series.losses
    y_range = float(y.max() - y.min())
    if y_range == 0.0:
        return ExponentialFit(0.0, 0.0, float(y[0]), 0.0, degenerate=True, reason="constant series")

    # Descend on the shifted, rescaled series: gradients on b' scale with the
    # square of the data scale, so at tiny loss magnitudes the raw update
    # rounds to nothing and the descent stalls at its start. The model is
    # exactly equivariant under y -> (y - min) / range, so fit there and map
    # (a, c, sse) back; b is untouched.
    y_min = float(y.min())
    z = (y - y_min) / y_range
    results = [_descend(t, z, b0) for b0 in FIT_STARTS]
    scale = y_range * y_range
    start_sse = tuple(r[3] * scale for r in results)
    a, b, c, sse = min(results, key=lambda r: r[3])
    a *= y_range
    c = c * y_range + y_min
    sse *= scale

    amplitude_floor = DEGENERATE_AMPLITUDE_REL * (y_range + 1e-12)
    if abs(a) < amplitude_floor:
        return ExponentialFit(a, b, c, sse, True, "vanishing amplitude", start_sse)
    if b > DEGENERATE_RATE:
        return ExponentialFit(a, b, c, sse, True, "vanishing rate", start_sse)
    return ExponentialFit(a, b, c, sse, start_sse=start_sse)


def forecast_loss(fit: ExponentialFit, step: float) -> float:
    """Loss predicted at a future step; degenerate fits predict the offset c."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if fit.degenerate:
        return float(fit.c)
    value = fit.a * math.exp(fit.b * step) + fit.c
    return float(value) if np.isfinite(value) else float(fit.c)


def evaluate_candidate(
    series: LossSeries, smoothing: SmoothingParams = SmoothingParams()
) -> float:
    """Forecast a candidate's loss at the stage horizon from its short run.

    Smooths when enough points are available, refuses to extrapolate a series
    that ends higher than it starts (returns the last smoothed value), and
    falls back to the last smoothed value whenever the fit degenerates to a
    non-finite offset or the forecast itself is non-finite.
    """
    if len(series) >= MIN_SMOOTHING_POINTS:
        smoothed = spline_smooth(series, smoothing).series
    else:
        smoothed = series
    last = float(smoothed.losses[-1])
    if smoothed.losses[-1] > smoothed.losses[0]:
        return last
    if len(smoothed) < MIN_FIT_POINTS:
        return last
    fit = fit_exponential(smoothed)
    if fit.degenerate:
        return float(fit.c) if np.isfinite(fit.c) else last
    value = forecast_loss(fit, series.horizon_tau)
    return value if np.isfinite(value) else last
