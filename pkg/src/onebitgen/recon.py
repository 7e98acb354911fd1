"""Signal recovery from one-bit measurements.

``reconstruct_gen`` searches the range of a generator by gradient descent on
the latent code, minimizing

    loss(z) = ||G(z)||^2 - (sqrt(2 pi) / m) * y^T A G(z).

The correlation term is calibrated for a matrix with unit-variance entries
(pass ``MeasurementEnsemble.normalized``), in which case the unconstrained
minimizer over ``x`` is close to the unit-norm signal direction.

Baselines: binary iterative hard thresholding (``biht``), the closed-form
correlation maximizer over an l1/l2 body (``yp_convex``) and a projected BIHT
scheme over the generator range (``gen_pgd``).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DegenerateInputError,
    InvalidArgumentError,
    NumericError,
    RngStream,
    as_matrix,
    derive_stream,
)
from .model import MlpGenerator, backward_batch, forward_batch
from .sensing import one_bit_sign

__all__ = [
    "GenOpts",
    "ReconResult",
    "loss_gen",
    "grad_loss_gen",
    "reconstruct_gen",
    "reconstruct_gen_noise_aware",
    "biht",
    "yp_convex",
    "soft_threshold",
    "project_l1_ball",
    "project_to_range",
    "gen_pgd",
]

SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class GenOpts:
    restarts: int = 10
    steps_per_restart: int = 100
    step_size: float = 0.01
    latent_radius: float = math.inf
    project_output_unit_ball: bool = False
    alpha_known: float | None = None
    threads: int = 1

    def __post_init__(self):
        if self.restarts < 1:
            raise InvalidArgumentError("restarts must be >= 1")
        if self.steps_per_restart < 0:
            raise InvalidArgumentError("steps_per_restart must be >= 0")
        if not self.step_size > 0:
            raise InvalidArgumentError("step_size must be > 0")
        if not self.latent_radius > 0:
            raise InvalidArgumentError("latent_radius must be > 0 (use math.inf for unbounded)")
        if self.alpha_known is not None and not 0.5 < self.alpha_known <= 1:
            raise InvalidArgumentError("alpha_known must lie in (0.5, 1]")

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.latent_radius)


@dataclass
class ReconResult:
    x_hat: np.ndarray
    z_hat: np.ndarray | None
    best_loss: float
    per_restart_losses: list[float]
    iterations_used: int
    best_restart: int = 0
    abandoned: list[int] = field(default_factory=list)
    loss_traces: list[np.ndarray] = field(default_factory=list)


def _check_problem(G: MlpGenerator, A, y):
    A = as_matrix(A)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (A.shape[0],):
        raise InvalidArgumentError(f"y of shape {y.shape} does not match A with {A.shape[0]} rows")
    if G is not None and A.shape[1] != G.n:
        raise InvalidArgumentError(f"A has {A.shape[1]} columns but the generator outputs {G.n}")
    return A, y


def _correlation_weight(m: int, alpha: float = 1.0) -> float:
    return SQRT_2PI / (m * (2.0 * alpha - 1.0))


def _loss_and_grad(G, z, c, weight):
    """Loss and latent gradient given the precomputed correlation vector ``c = A^T y``."""
    out, cache = forward_batch(G, z[None, :])
    x = out[0]
    with np.errstate(over="ignore", invalid="ignore"):
        loss = float(x @ x - weight * (c @ x))
        grad = backward_batch(G, cache, (2.0 * x - weight * c)[None, :])[0]
    return loss, grad, x


def loss_gen(G: MlpGenerator, z, A, y) -> float:
    A, y = _check_problem(G, A, y)
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (G.s,):
        raise InvalidArgumentError(f"latent z must have shape ({G.s},), got {z.shape}")
    out, _ = forward_batch(G, z[None, :])
    x = out[0]
    return float(x @ x - _correlation_weight(A.shape[0]) * (y @ (A @ x)))


def grad_loss_gen(G: MlpGenerator, z, A, y) -> np.ndarray:
    A, y = _check_problem(G, A, y)
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (G.s,):
        raise InvalidArgumentError(f"latent z must have shape ({G.s},), got {z.shape}")
    _, grad, _ = _loss_and_grad(G, z, A.T @ y, _correlation_weight(A.shape[0]))
    return grad


def _project_ball(z, radius):
    if math.isfinite(radius):
        norm = np.linalg.norm(z)
        if norm > radius:
            return z * (radius / norm)
    return z


def _initial_latent(G, stream, radius):
    return _project_ball(stream.generator.standard_normal(G.s), radius)


def _descend(G, c, weight, opts: GenOpts, stream: RngStream):
    """One restart of fixed-step projected gradient descent."""
    z = _initial_latent(G, stream, opts.latent_radius)
    trace = np.empty(opts.steps_per_restart + 1)
    try:
        loss, grad, _ = _loss_and_grad(G, z, c, weight)
        trace[0] = loss
        for t in range(opts.steps_per_restart):
            z = _project_ball(z - opts.step_size * grad, opts.latent_radius)
            loss, grad, _ = _loss_and_grad(G, z, c, weight)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise NumericError(f"non-finite loss at step {t + 1}")
            trace[t + 1] = loss
    except NumericError:
        return None, math.inf, trace[:0]
    return z, loss, trace


def _run_restarts(worker, restarts: int, threads: int):
    if threads > 1 and restarts > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(worker, range(restarts)))
    return [worker(r) for r in range(restarts)]


def _reconstruct(G, A, y, opts: GenOpts, stream: RngStream, alpha: float) -> ReconResult:
    A, y = _check_problem(G, A, y)
    c = A.T @ y
    weight = _correlation_weight(A.shape[0], alpha)

    def worker(r):
        return _descend(G, c, weight, opts, derive_stream(stream, r))

    runs = _run_restarts(worker, opts.restarts, opts.threads)
    losses = [loss for _, loss, _ in runs]
    abandoned = [r for r, (z, _, _) in enumerate(runs) if z is None]
    if len(abandoned) == len(runs):
        raise NumericError("every restart diverged")
    # argmin returns the first minimum, so ties go to the lowest restart index
    best = int(np.argmin(losses))
    z_hat = runs[best][0]
    x_hat = forward_batch(G, z_hat[None, :])[0][0]
    if opts.project_output_unit_ball:
        norm = np.linalg.norm(x_hat)
        if norm > 1.0:
            x_hat = x_hat / norm
    return ReconResult(
        x_hat=x_hat,
        z_hat=z_hat,
        best_loss=losses[best],
        per_restart_losses=losses,
        iterations_used=sum(len(trace) - 1 for _, _, trace in runs if len(trace)),
        best_restart=best,
        abandoned=abandoned,
        loss_traces=[trace for _, _, trace in runs],
    )


def reconstruct_gen(G: MlpGenerator, A, y, opts: GenOpts | None = None, stream: RngStream | None = None) -> ReconResult:
    """Recover ``x = G(z_hat)`` by multi-restart latent gradient descent.

    Each restart ``r`` draws ``z0 ~ N(0, I_s)`` from ``derive_stream(stream, r)``
    (projected onto the radius-``r`` ball when bounded) and takes
    ``opts.steps_per_restart`` fixed steps.  The restart with the smallest final
    loss wins; a restart whose loss becomes non-finite is abandoned and its loss
    recorded as ``inf``.
    """
    opts = opts or GenOpts()
    stream = stream or RngStream(0)
    alpha = opts.alpha_known if opts.alpha_known is not None else 1.0
    return _reconstruct(G, A, y, opts, stream, alpha)


def reconstruct_gen_noise_aware(
    G: MlpGenerator, A, y, alpha: float, opts: GenOpts | None = None, stream: RngStream | None = None
) -> ReconResult:
    """Latent descent with the correlation term scaled by ``1 / (2 alpha - 1)``.

    ``alpha`` is the probability that a measurement sign is kept.
    """
    if not 0.5 < alpha <= 1.0:
        raise InvalidArgumentError(f"alpha must lie in (0.5, 1]; the error bound diverges as alpha -> 0.5 (got {alpha})")
    opts = opts or GenOpts()
    stream = stream or RngStream(0)
    return _reconstruct(G, A, y, opts, stream, alpha)


def _top_k(x, K):
    keep = np.argsort(-np.abs(x), kind="stable")[:K]
    out = np.zeros_like(x)
    out[keep] = x[keep]
    return out


def _unit(x):
    norm = np.linalg.norm(x)
    return x / norm if norm > 0 else x


def biht(A, y, K: int, iters: int = 100, tau: float = 1.0) -> np.ndarray:
    """Binary iterative hard thresholding.

    Starts from ``top_K(A^T y)`` scaled to unit norm and iterates
    ``x <- top_K(x + (tau / m) A^T (y - sign(A x)))``.  The final iterate is
    returned with unit l2 norm.
    """
    A, y = _check_problem(None, A, y)
    m, n = A.shape
    if not 1 <= K <= n:
        raise InvalidArgumentError(f"sparsity K={K} must satisfy 1 <= K <= n={n}")
    x = _unit(_top_k(A.T @ y, K))
    for _ in range(iters):
        x = _top_k(x + (tau / m) * (A.T @ (y - one_bit_sign(A @ x))), K)
    return _unit(x)


def soft_threshold(v, lam: float) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def _l1_l2_ratio(v, lam):
    u = soft_threshold(v, lam)
    l2 = np.linalg.norm(u)
    return np.abs(u).sum() / l2 if l2 > 0 else 0.0


def yp_convex(A, y, l1_budget: float) -> np.ndarray:
    """Maximize ``(A^T y)^T x`` over ``{||x||_2 <= 1, ||x||_1 <= l1_budget}``.

    The maximizer is a normalized soft-thresholding of ``c = A^T y``; the
    threshold is found by bisection on the l1/l2 ratio.  With a budget below 1
    the l2 constraint is inactive and the result is ``l1_budget`` times the
    signed coordinate vector of the largest ``|c_j|``.
    """
    A, y = _check_problem(None, A, y)
    if not l1_budget > 0:
        raise InvalidArgumentError("l1_budget must be > 0")
    c = A.T @ y
    if not np.any(c):
        raise DegenerateInputError("A^T y is zero; the correlation objective is flat")
    if l1_budget < 1.0:
        j = int(np.argmax(np.abs(c)))
        x = np.zeros_like(c)
        x[j] = l1_budget * np.sign(c[j])
        return x
    if _l1_l2_ratio(c, 0.0) <= l1_budget:
        return _unit(c)
    lo, hi = 0.0, float(np.max(np.abs(c)))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        u = soft_threshold(c, mid)
        if not np.any(u) or _l1_l2_ratio(c, mid) <= l1_budget:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * max(hi, 1.0):
            break
    u = _unit(soft_threshold(c, hi))
    if not np.any(u) or np.abs(u).sum() > l1_budget * (1 + 1e-9):
        u = _tied_maximizer(c, l1_budget)
    return u


def _tied_maximizer(c, l1_budget):
    # Several |c_j| tie for the maximum and the budget is below sqrt(#ties);
    # bisection then ends on the all-zero threshold.
    # Any unit vector supported on the tied set with l1 norm equal to the
    # budget is optimal; blend e_first with the flat vector to hit it.
    top = np.flatnonzero(np.abs(c) == np.max(np.abs(c)))
    first = np.zeros_like(c)
    first[top[0]] = 1.0
    flat = np.zeros_like(c)
    flat[top] = 1.0
    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        v = _unit((1 - mid) * first + mid * flat)
        if np.abs(v).sum() <= l1_budget:
            lo = mid
        else:
            hi = mid
    return np.sign(c) * _unit((1 - lo) * first + lo * flat)


def project_l1_ball(v, radius: float) -> np.ndarray:
    """Euclidean projection onto ``{x : ||x||_1 <= radius}`` by sort and threshold."""
    if not radius > 0:
        raise InvalidArgumentError("radius must be > 0")
    v = np.asarray(v, dtype=np.float64)
    mag = np.abs(v)
    if mag.sum() <= radius:
        return v.copy()
    srt = np.sort(mag)[::-1]
    csum = np.cumsum(srt)
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(srt * idx > csum - radius)[0][-1]
    theta = (csum[rho] - radius) / (rho + 1.0)
    out = np.maximum(mag - theta, 0.0)
    # rounding can leave the sum an ulp or two above the radius; raise theta until it is feasible
    while out.sum() > radius:
        theta = np.nextafter(theta, np.inf)
        out = np.maximum(mag - theta, 0.0)
    return np.sign(v) * out


def project_to_range(G: MlpGenerator, x, z_init, steps: int = 100, step_size: float = 0.01):
    """Approximate ``argmin_z ||G(z) - x||^2`` by gradient descent from ``z_init``.

    Returns ``(z, residual)``.
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.array(z_init, dtype=np.float64)
    for _ in range(steps):
        out, cache = forward_batch(G, z[None, :])
        diff = out[0] - x
        z = z - step_size * backward_batch(G, cache, (2.0 * diff)[None, :])[0]
    out = forward_batch(G, z[None, :])[0][0]
    return z, float(np.sum((out - x) ** 2))


def gen_pgd(
    G: MlpGenerator,
    A,
    y,
    opts: GenOpts | None = None,
    stream: RngStream | None = None,
    outer_iters: int = 20,
    tau: float = 1.0,
) -> ReconResult:
    """Projected BIHT over the generator range.

    Each outer step takes ``x <- x + (tau / m) A^T (y - sign(A x))`` and then
    projects back onto the range with ``opts.steps_per_restart`` inner latent
    gradient steps of size ``opts.step_size``, warm-started from the previous
    latent.  Restarts differ in their initial latent; the restart whose final
    estimate is most consistent with ``y`` (smallest Hamming distance) wins.
    """
    opts = opts or GenOpts()
    stream = stream or RngStream(0)
    A, y = _check_problem(G, A, y)
    m = A.shape[0]

    def worker(r):
        z = _initial_latent(G, derive_stream(stream, r), opts.latent_radius)
        x = forward_batch(G, z[None, :])[0][0]
        try:
            for _ in range(outer_iters):
                interim = x + (tau / m) * (A.T @ (y - one_bit_sign(A @ x)))
                z, _ = project_to_range(G, interim, z, opts.steps_per_restart, opts.step_size)
                z = _project_ball(z, opts.latent_radius)
                x = forward_batch(G, z[None, :])[0][0]
        except NumericError:
            return None, math.inf
        return z, float(np.mean(one_bit_sign(A @ x) != y))

    runs = _run_restarts(worker, opts.restarts, opts.threads)
    scores = [score for _, score in runs]
    abandoned = [r for r, (z, _) in enumerate(runs) if z is None]
    if len(abandoned) == len(runs):
        raise NumericError("every restart diverged")
    best = int(np.argmin(scores))
    z_hat = runs[best][0]
    x_hat = forward_batch(G, z_hat[None, :])[0][0]
    return ReconResult(
        x_hat=x_hat,
        z_hat=z_hat,
        best_loss=scores[best],
        per_restart_losses=scores,
        iterations_used=outer_iters * opts.restarts,
        best_restart=best,
        abandoned=abandoned,
    )
