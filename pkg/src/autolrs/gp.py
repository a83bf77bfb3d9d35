"""Gaussian-process surrogate over log10 learning rates.

The search models the forecast loss as a draw from a GP with a Matern 5/2
kernel on the log10-LR axis (zero prior mean, unit prior variance) and picks
the next candidate by minimizing a lower confidence bound on a fixed grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "KernelParams",
    "Observation",
    "GpPosterior",
    "FactorizationError",
    "matern_kernel",
    "fit_posterior",
    "predict",
    "lcb_argmin",
    "DEFAULT_NOISE_VARIANCE",
    "LCB_GRID_POINTS",
]

DEFAULT_NOISE_VARIANCE = 1e-4

# Jitter added to the kernel matrix diagonal when the Cholesky factorization
# fails; escalates by 10x per retry up to the cap.
JITTER_INITIAL = 1e-10
JITTER_MAX = 1e-4

# Acquisition minimization uses a fixed uniform grid so results are
# deterministic and reproducible; 1024 points over the log10-LR interval.
LCB_GRID_POINTS = 1024

_SQRT5 = np.sqrt(5.0)


@dataclass(frozen=True)
class KernelParams:
    """Matern kernel hyperparameters.

    Only smoothness nu=2.5 is supported (it admits the closed form used
    throughout); length_scale is in log10-LR units.
    """

    nu: float = 2.5
    length_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.nu != 2.5:
            raise ValueError(f"only nu=2.5 is supported, got {self.nu}")
        if not np.isfinite(self.length_scale) or self.length_scale <= 0:
            raise ValueError(f"length_scale must be finite and > 0, got {self.length_scale}")


DEFAULT_KERNEL = KernelParams()


@dataclass(frozen=True)
class Observation:
    """One evaluated candidate: x is log10(lr), y the forecast loss at the stage horizon."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.x) or not np.isfinite(self.y):
            raise ValueError(f"observation must be finite, got ({self.x}, {self.y})")


class FactorizationError(RuntimeError):
    """Kernel matrix could not be factorized even at the jitter cap."""

    def __init__(self, message: str, condition_estimate: float) -> None:
        super().__init__(f"{message} (condition estimate {condition_estimate:.3e})")
        self.condition_estimate = condition_estimate


def _matern52(u: np.ndarray | float) -> np.ndarray | float:
    # u = sqrt(5) * r / l, scaled distance. Beyond ~700 the exponential
    # underflows and the polynomial factor overflows long before that on
    # inf inputs, so cut to exactly 0.
    u = np.asarray(u, dtype=float)
    safe = np.where(u > 700.0, 0.0, u)
    out = (1.0 + safe + safe * safe / 3.0) * np.exp(-safe)
    return np.where(u > 700.0, 0.0, out)


def matern_kernel(xi: float, xj: float, params: KernelParams = DEFAULT_KERNEL) -> float:
    """Matern covariance with nu=2.5 between two log10-LR points.

    Closed form (1 + u + u^2/3) * exp(-u) with u = sqrt(5)*|xi-xj|/l.
    Returns 1 at zero distance and decays monotonically to 0.
    """
    xi = float(xi)
    xj = float(xj)
    if not np.isfinite(xi) or not np.isfinite(xj):
        raise ValueError(f"kernel inputs must be finite, got ({xi}, {xj})")
    r = abs(xi - xj)
    scaled = r / params.length_scale
    if not np.isfinite(scaled) or scaled > 320.0:
        return 0.0
    return float(_matern52(_SQRT5 * scaled))


def _kernel_matrix(xs: np.ndarray, params: KernelParams) -> np.ndarray:
    r = np.abs(xs[:, None] - xs[None, :])
    return np.asarray(_matern52(_SQRT5 * r / params.length_scale))


def _kernel_cross(xs: np.ndarray, q: np.ndarray, params: KernelParams) -> np.ndarray:
    # rows: training points, columns: query points
    r = np.abs(xs[:, None] - q[None, :])
    return np.asarray(_matern52(_SQRT5 * r / params.length_scale))


@dataclass(frozen=True)
class GpPosterior:
    """Immutable posterior state; safe to share across threads.

    Holds the observations, the effective noise/jitter actually used, and the
    lower Cholesky factor of (K + noise*I + jitter*I) together with the
    precomputed weight vector alpha = (K + noise*I + jitter*I)^-1 y.
    """

    observations: tuple[Observation, ...]
    noise_variance: float
    jitter: float
    params: KernelParams = DEFAULT_KERNEL
    chol: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)), repr=False)
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    @property
    def xs(self) -> np.ndarray:
        return np.array([o.x for o in self.observations], dtype=float)

    def predict(self, x: float | np.ndarray) -> tuple[float, float] | tuple[np.ndarray, np.ndarray]:
        """Posterior predictive mean and standard deviation at x (scalar or array)."""
        scalar = np.isscalar(x)
        q = np.atleast_1d(np.asarray(x, dtype=float))
        if not np.all(np.isfinite(q)):
            raise ValueError("prediction points must be finite")
        n = len(self.observations)
        if n == 0:
            mean = np.zeros_like(q)
            std = np.ones_like(q)
        else:
            kq = _kernel_cross(self.xs, q, self.params)  # (n, m)
            mean = kq.T @ self.alpha
            v = solve_triangular(self.chol, kq, lower=True)  # (n, m)
            var = 1.0 - np.sum(v * v, axis=0)  # prior variance K(x,x) = 1
            std = np.sqrt(np.clip(var, 0.0, None))
        if scalar:
            return float(mean[0]), float(std[0])
        return mean, std


def fit_posterior(
    observations: "list[Observation] | tuple[Observation, ...]",
    noise_variance: float = DEFAULT_NOISE_VARIANCE,
    params: KernelParams = DEFAULT_KERNEL,
) -> GpPosterior:
    """Build the GP posterior from evaluated candidates.

    Factorizes K + noise*I + jitter*I by Cholesky, escalating jitter from
    1e-10 by 10x up to 1e-4 on failure; raises FactorizationError with a
    condition-number estimate if the cap is reached.
    """
    obs = tuple(observations)
    if not np.isfinite(noise_variance) or noise_variance < 0:
        raise ValueError(f"noise_variance must be finite and >= 0, got {noise_variance}")
    if len(obs) == 0:
        return GpPosterior(obs, noise_variance, JITTER_INITIAL, params)
    xs = np.array([o.x for o in obs], dtype=float)
    ys = np.array([o.y for o in obs], dtype=float)
    base = _kernel_matrix(xs, params) + noise_variance * np.eye(len(obs))
    jitter = JITTER_INITIAL
    while True:
        try:
            chol = np.linalg.cholesky(base + jitter * np.eye(len(obs)))
            break
        except np.linalg.LinAlgError:
            if jitter >= JITTER_MAX:
                raise FactorizationError(
                    f"kernel matrix of {len(obs)} observations is not positive definite"
                    f" at jitter cap {JITTER_MAX:g}",
                    float(np.linalg.cond(base)),
                ) from None
            jitter = min(jitter * 10.0, JITTER_MAX)
    tmp = solve_triangular(chol, ys, lower=True)
    alpha = solve_triangular(chol.T, tmp, lower=False)
    return GpPosterior(obs, noise_variance, jitter, params, chol, alpha)


def predict(posterior: GpPosterior, x: float | np.ndarray):
    """Module-level alias for GpPosterior.predict."""
    return posterior.predict(x)


def lcb_argmin(
    posterior: GpPosterior,
    kappa: float,
    interval: tuple[float, float],
    grid_points: int = LCB_GRID_POINTS,
) -> float:
    """Next candidate in log10-LR space: grid argmin of mean - kappa * std.

    The grid is a fixed uniform discretization of [lo, hi]; exact ties go to
    the smaller log-LR (first grid index), so with an empty posterior the
    choice is always the interval's lower edge.
    """
    lo, hi = float(interval[0]), float(interval[1])
    if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
        raise ValueError(f"interval must be finite with lo < hi, got ({lo}, {hi})")
    if not np.isfinite(kappa) or kappa < 0:
        raise ValueError(f"kappa must be finite and >= 0, got {kappa}")
    if grid_points < 2:
        raise ValueError(f"grid_points must be >= 2, got {grid_points}")
    grid = np.linspace(lo, hi, grid_points)
    mean, std = posterior.predict(grid)
    scores = mean - kappa * std
    return float(grid[int(np.argmin(scores))])
