"""Ground-truth quantiles: order statistics, brute-force loss minimisation,
closed-form inverse CDFs, and seeded samplers.

Nothing here depends on the network or training code, so these functions can
serve as independent checks on trained models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from quantpi.loss import check_alpha, pinball

KINDS = ("gaussian", "laplace")


class SuspectRangeError(ValueError):
    """The search grid does not overlap the sample values."""


@dataclass(frozen=True)
class DistributionSpec:
    kind: str
    location: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"distribution kind must be one of {KINDS}, got {self.kind!r}")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @classmethod
    def parse(cls, text: str) -> DistributionSpec:
        """Parse ``kind[:scale]`` or ``kind:location:scale``, e.g. ``laplace:0:1``."""
        parts = text.split(":")
        kind = parts[0].strip().lower()
        if len(parts) == 1:
            return cls(kind)
        if len(parts) == 2:
            return cls(kind, 0.0, float(parts[1]))
        if len(parts) == 3:
            return cls(kind, float(parts[1]), float(parts[2]))
        raise ValueError(f"cannot parse distribution {text!r}")

    def cdf(self, x: float) -> float:
        z = (x - self.location) / self.scale
        if self.kind == "laplace":
            return 0.5 * math.exp(z) if z < 0 else 1.0 - 0.5 * math.exp(-z)
        return 0.5 * math.erfc(-z / math.sqrt(2.0))


def _decimal_fraction(alpha: float) -> Fraction:
    # alpha as the decimal it prints as, so 0.9 * 10 is exactly 9 rather than a
    # binary neighbour on either side
    return Fraction(repr(float(alpha)))


def empirical_quantile(samples, alpha: float) -> float:
    """Type-1 sample quantile: the ``ceil(alpha * N)``-th order statistic."""
    alpha = check_alpha(alpha)
    xs = np.sort(np.asarray(samples, dtype=float).ravel())
    n = xs.size
    if n == 0:
        raise ValueError("empirical_quantile needs at least one sample")
    k = math.ceil(_decimal_fraction(alpha) * n)
    return float(xs[max(k, 1) - 1])


def total_pinball(samples, yhat, alpha: float):
    """Sum of pinball losses of ``samples`` at each candidate in ``yhat``."""
    s = np.asarray(samples, dtype=float).ravel()
    c = np.atleast_1d(np.asarray(yhat, dtype=float))
    out = pinball(s[None, :], c[:, None], alpha).sum(axis=1)
    return out if np.ndim(yhat) else float(out[0])


def minimize_loss_grid(samples, alpha: float, lo: float, hi: float, step: float) -> float:
    """Grid point in ``lo, lo+step, ..., <=hi`` minimising the summed pinball loss.

    Ties go to the smallest grid point.
    """
    alpha = check_alpha(alpha)
    s = np.asarray(samples, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("minimize_loss_grid needs at least one sample")
    if not lo < hi or not step > 0:
        raise ValueError(f"need lo < hi and step > 0, got lo={lo}, hi={hi}, step={step}")
    if lo > s.max() or hi < s.min():
        raise SuspectRangeError(
            f"grid [{lo}, {hi}] lies outside the sample range [{s.min()}, {s.max()}]"
        )
    n_points = int(math.floor((hi - lo) / step + 1e-9)) + 1
    grid = lo + step * np.arange(n_points)
    # chunked to bound memory for fine grids
    chunk = max(1, 2_000_000 // s.size)
    vals = np.concatenate(
        [total_pinball(s, grid[i:i + chunk], alpha) for i in range(0, n_points, chunk)]
    )
    best = vals.min()
    # values on a flat stretch can differ by rounding; treat those as ties
    tied = np.flatnonzero(vals <= best + 1e-12 * max(1.0, abs(best)))
    return float(grid[tied[0]])


def minimizer_interval(samples, alpha: float) -> tuple[float, float]:
    """Closed interval of all minimisers of the summed pinball loss."""
    alpha = check_alpha(alpha)
    xs = np.sort(np.asarray(samples, dtype=float).ravel())
    n = xs.size
    an = _decimal_fraction(alpha) * n
    k = math.ceil(an)
    if an == k and k < n:
        return float(xs[k - 1]), float(xs[k])
    return float(xs[k - 1]), float(xs[k - 1])


# Acklam's rational approximation to the standard normal inverse CDF.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    if p > 1.0 - _P_LOW:
        return -_acklam(1.0 - p)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
        ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    )


def normal_ppf(p: float) -> float:
    """Standard normal inverse CDF: rational approximation plus one Newton step."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    x = _acklam(p)
    err = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return x - err / pdf


def analytic_quantile(dist: DistributionSpec, alpha: float) -> float:
    alpha = check_alpha(alpha)
    if dist.kind == "laplace":
        if alpha <= 0.5:
            return dist.location + dist.scale * math.log(2.0 * alpha)
        return dist.location - dist.scale * math.log(2.0 * (1.0 - alpha))
    return dist.location + dist.scale * normal_ppf(alpha)


def _standard_draws(kind: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "laplace":
        # inverse CDF of a uniform on (-1/2, 1/2); open interval keeps log finite
        u = rng.random(n) - 0.5
        u = np.where(u == -0.5, np.nextafter(-0.5, 0.0), u)
        return -np.sign(u) * np.log1p(-2.0 * np.abs(u))
    # Box-Muller on pairs of uniforms
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)  # (0, 1]
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
    return z[:n]


def sample(dist: DistributionSpec, n: int, seed: int | np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. draws, deterministic per seed."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return dist.location + dist.scale * _standard_draws(dist.kind, n, rng)
