"""Error metrics and Monte-Carlo checks of the recovery theory."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import DegenerateInputError, InvalidArgumentError, RngStream, as_matrix

__all__ = [
    "MetricReport",
    "MeasurementBoundWarning",
    "mse",
    "nmse",
    "hamming_dist",
    "geodesic_dist",
    "metric_report",
    "f_statistic",
    "sign_correlation_constant",
    "mean_width_mc",
    "measurement_bound",
    "covering_number_bound",
]

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


class MeasurementBoundWarning(UserWarning):
    """Raised when ``L * N * w_max <= 1`` and the depth term is dropped."""


def _pair(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise InvalidArgumentError(f"shape mismatch: {u.shape} vs {v.shape}")
    return u, v


def mse(x_true, x_hat) -> float:
    x_true, x_hat = _pair(x_true, x_hat)
    return float(np.sum((x_true - x_hat) ** 2))


def nmse(x_true, x_hat) -> float:
    """Squared distance between the unit-normalized vectors; lies in [0, 4]."""
    x_true, x_hat = _pair(x_true, x_hat)
    nt, nh = np.linalg.norm(x_true), np.linalg.norm(x_hat)
    if nt == 0 or nh == 0:
        raise DegenerateInputError("nmse is undefined for a zero vector")
    return float(np.sum((x_true / nt - x_hat / nh) ** 2))


def hamming_dist(u, v) -> float:
    u, v = _pair(u, v)
    if u.size == 0:
        raise InvalidArgumentError("hamming distance of empty vectors")
    return float(np.mean(u != v))


def geodesic_dist(u, v) -> float:
    """Angle between ``u`` and ``v`` divided by pi.

    Uses ``2 atan2(|a - b|, |a + b|)`` on the unit vectors, which equals the
    arccos of the cosine but stays accurate near 0 and pi where arccos
    amplifies rounding.
    """
    u, v = _pair(u, v)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise DegenerateInputError("geodesic distance is undefined for a zero vector")
    a, b = u / nu, v / nv
    angle = 2.0 * math.atan2(np.linalg.norm(a - b), np.linalg.norm(a + b))
    return min(max(angle / math.pi, 0.0), 1.0)


@dataclass(frozen=True)
class MetricReport:
    mse: float
    nmse: float
    geodesic: float
    hamming: float = math.nan


def metric_report(x_true, x_hat, A=None, y=None) -> MetricReport:
    """All metrics for one estimate; ``hamming`` compares ``sign(A x_hat)`` with ``y``."""
    hamming = math.nan
    if A is not None and y is not None:
        hamming = hamming_dist(np.where(np.asarray(A) @ x_hat > 0, 1.0, -1.0), y)
    return MetricReport(mse(x_true, x_hat), nmse(x_true, x_hat), geodesic_dist(x_true, x_hat), hamming)


def f_statistic(A, y, x) -> float:
    """``(1/m) * y^T A x``.

    With unit-variance Gaussian rows and ``y = sign(A x*)`` its mean is
    ``sqrt(2/pi) * x^T x*`` for unit ``x*``.
    """
    A = as_matrix(A)
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if y.shape != (A.shape[0],) or x.shape != (A.shape[1],):
        raise InvalidArgumentError(f"dimension mismatch: A {A.shape}, y {y.shape}, x {x.shape}")
    return float(y @ (A @ x)) / A.shape[0]


def sign_correlation_constant(alpha: float = 1.0) -> float:
    """``E[psi(a) a]`` for ``psi(a) = eta * sign(a)``, ``P(eta = 1) = alpha``."""
    return (2.0 * alpha - 1.0) * SQRT_2_OVER_PI


def mean_width_mc(points, trials: int, stream: RngStream, chunk: int = 20000) -> float:
    """Monte-Carlo estimate of ``E sup_{x, x'} (x - x')^T g`` over a finite set.

    For each Gaussian draw ``g`` the supremum over pairs is
    ``max_x x^T g - min_x x^T g``.  Draws come from ``stream`` in fixed-size
    chunks, so two calls with equal streams and dimension share their samples.
    """
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if P.size == 0 or P.shape[0] < 1:
        raise InvalidArgumentError("mean width needs at least one point")
    if trials < 1:
        raise InvalidArgumentError("trials must be >= 1")
    total = 0.0
    done = 0
    while done < trials:
        take = min(chunk, trials - done)
        g = stream.generator.standard_normal((take, P.shape[1]))
        proj = P @ g.T
        total += float(np.sum(proj.max(axis=0) - proj.min(axis=0)))
        done += take
    return total / trials


def measurement_bound(s, r, d, L, N, w_max, eps, C: float = 1.0) -> int:
    """``ceil(C eps^-2 s (r^2 + d log(L N w_max)))`` with the natural log.

    ``C`` is not known in closed form; the default of 1 is for scaling
    studies only.  When ``L N w_max <= 1`` the log term is dropped and a
    :class:`MeasurementBoundWarning` is issued.
    """
    for name, value in (("s", s), ("r", r), ("L", L), ("N", N), ("w_max", w_max), ("C", C)):
        if not value > 0:
            raise InvalidArgumentError(f"{name} must be positive, got {value}")
    if d < 0:
        raise InvalidArgumentError(f"depth must be non-negative, got {d}")
    if not 0 < eps <= 1:
        raise InvalidArgumentError(f"eps must lie in (0, 1], got {eps}")
    product = L * N * w_max
    if product <= 1:
        warnings.warn(
            f"L*N*w_max = {product} <= 1; dropping the depth term", MeasurementBoundWarning, stacklevel=2
        )
        depth_term = 0.0
    else:
        depth_term = d * math.log(product)
    return math.ceil(C * s * (r * r + depth_term) / (eps * eps))


def covering_number_bound(r: float, t: float, s: int) -> float:
    """Upper bound ``(4r/t)^s`` on the size of a ``t``-cover of the radius-``r`` ball in ``R^s``."""
    if not (r > 0 and t > 0):
        raise InvalidArgumentError("r and t must be positive")
    return (4.0 * r / t) ** s
