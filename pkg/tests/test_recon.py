import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_net
from onebitgen.analysis import hamming_dist
from onebitgen.core import DegenerateInputError, InvalidArgumentError, NumericError, RngStream, derive_stream
from onebitgen.model import Activation, MlpGenerator, MlpLayer, forward
from onebitgen.recon import (
    GenOpts,
    biht,
    gen_pgd,
    grad_loss_gen,
    loss_gen,
    project_l1_ball,
    project_to_range,
    reconstruct_gen,
    reconstruct_gen_noise_aware,
    soft_threshold,
    yp_convex,
)
from onebitgen.sensing import one_bit_sign

SQRT_2PI = math.sqrt(2 * math.pi)


def identity_net(n):
    return MlpGenerator([MlpLayer(np.eye(n), np.zeros(n), Activation("identity"))])


def direction_net(u):
    """One-parameter generator ``t -> t u``."""
    return MlpGenerator([MlpLayer(np.asarray(u, float)[:, None], np.zeros(len(u)), Activation("identity"))])


def problem(seed, m=30, n=6):
    gen = np.random.default_rng(seed)
    A = gen.standard_normal((m, n))
    y = one_bit_sign(A @ gen.standard_normal(n))
    u = gen.standard_normal(n)
    return A, y, u / np.linalg.norm(u)


# ---------------------------------------------------------------- loss


def test_loss_of_zero_output_is_zero():
    G = MlpGenerator([MlpLayer(np.zeros((4, 2)), np.zeros(4), Activation("identity"))])
    A, y, _ = problem(0, n=4)
    assert loss_gen(G, np.array([0.3, -2.0]), A, y) == 0.0


def test_loss_matches_explicit_recomputation():
    gen = np.random.default_rng(1)
    G = random_net(gen, depth=2, widths=[3, 10, 6])
    A, y, _ = problem(2)
    z = gen.standard_normal(3)
    x = forward(G, z)
    m = A.shape[0]
    expected = sum(v * v for v in x) - SQRT_2PI / m * sum(y[i] * sum(A[i, j] * x[j] for j in range(6)) for i in range(m))
    assert abs(loss_gen(G, z, A, y) - expected) <= 1e-10


def test_restricted_loss_minimizer_by_grid():
    A, y, u = problem(3)
    G = direction_net(u)
    c = SQRT_2PI / A.shape[0] * (y @ A @ u)
    ts = np.linspace(-3, 3, 60001)
    vals = [loss_gen(G, np.array([t]), A, y) for t in ts[::100]]
    np.testing.assert_allclose(vals, ts[::100] ** 2 - c * ts[::100], rtol=0, atol=1e-12)
    fine = ts**2 - c * ts
    assert abs(ts[np.argmin(fine)] - c / 2) <= 1e-4
    assert abs(loss_gen(G, np.array([c / 2]), A, y) + c * c / 4) <= 1e-12


def test_loss_dimension_checks():
    G = identity_net(3)
    with pytest.raises(InvalidArgumentError):
        loss_gen(G, np.zeros(3), np.ones((4, 2)), np.ones(4))
    with pytest.raises(InvalidArgumentError):
        loss_gen(G, np.zeros(3), np.ones((4, 3)), np.ones(5))
    with pytest.raises(InvalidArgumentError):
        grad_loss_gen(G, np.zeros(2), np.ones((4, 3)), np.ones(4))


# ---------------------------------------------------------------- gradient


def test_gradient_identity_example():
    n = 5
    z = np.random.default_rng(4).standard_normal(n)
    y = one_bit_sign(z)
    np.testing.assert_allclose(grad_loss_gen(identity_net(n), z, np.eye(n), y), 2 * z - SQRT_2PI / n * y, rtol=0, atol=1e-14)


def test_gradient_matches_finite_differences():
    gen = np.random.default_rng(5)
    h = 1e-5
    for _ in range(100):
        G = random_net(gen, max_width=16)
        m = int(gen.integers(5, 40))
        A = gen.standard_normal((m, G.n))
        y = one_bit_sign(gen.standard_normal(m))
        z = gen.standard_normal(G.s)
        g = grad_loss_gen(G, z, A, y)
        for k in range(G.s):
            e = np.zeros(G.s)
            e[k] = h
            fd = (loss_gen(G, z + e, A, y) - loss_gen(G, z - e, A, y)) / (2 * h)
            assert abs(fd - g[k]) <= 1e-4 * max(abs(g[k]), 1e-1)


def test_directional_derivative_vanishes_at_restricted_optimum():
    A, y, u = problem(6)
    G = direction_net(u)
    c = SQRT_2PI / A.shape[0] * (y @ A @ u)
    assert abs(grad_loss_gen(G, np.array([c / 2]), A, y)[0]) <= 1e-6


# ---------------------------------------------------------------- latent descent


def test_identity_generator_sign_consistency():
    n = 10
    gen = np.random.default_rng(7)
    A = np.linalg.qr(gen.standard_normal((n, n)))[0]
    y = one_bit_sign(A @ gen.standard_normal(n))
    r = reconstruct_gen(identity_net(n), A, y, GenOpts(restarts=3, steps_per_restart=200, step_size=0.1), RngStream(1))
    assert np.mean(one_bit_sign(A @ r.x_hat) == y) >= 0.95


def test_zero_steps_returns_initial_point():
    G = random_net(np.random.default_rng(8), depth=2, widths=[3, 8, 5])
    A, y, _ = problem(9, n=5)
    stream = RngStream(42)
    r = reconstruct_gen(G, A, y, GenOpts(restarts=1, steps_per_restart=0), stream)
    z0 = derive_stream(stream, 0).generator.standard_normal(3)
    np.testing.assert_array_equal(r.x_hat, forward(G, z0))
    assert r.iterations_used == 0


def test_result_invariants_and_trace_monotone():
    gen = np.random.default_rng(10)
    G = random_net(gen, depth=2, widths=[4, 16, 12], kinds=["tanh", "sigmoid"])
    A = gen.standard_normal((60, 12))
    y = one_bit_sign(A @ forward(G, gen.standard_normal(4)))
    r = reconstruct_gen(G, A, y, GenOpts(restarts=4, steps_per_restart=50, step_size=0.01), RngStream(3))
    assert r.best_loss == min(r.per_restart_losses)
    assert r.best_loss == r.per_restart_losses[r.best_restart]
    assert np.all(np.isfinite(r.x_hat))
    for trace in r.loss_traces:
        assert np.all(np.diff(trace) <= 1e-12)


def test_bounded_latent_radius():
    gen = np.random.default_rng(11)
    G = random_net(gen, depth=2, widths=[5, 16, 10])
    A, y, _ = problem(12, n=10)
    for radius in (0.1, 0.5, 2.0):
        r = reconstruct_gen(G, A, y, GenOpts(restarts=3, steps_per_restart=40, step_size=0.5, latent_radius=radius), RngStream(0))
        assert np.linalg.norm(r.z_hat) <= radius + 1e-9


def test_ties_go_to_lowest_restart():
    G = MlpGenerator([MlpLayer(np.zeros((4, 2)), np.ones(4), Activation("identity"))])
    A, y, _ = problem(13, n=4)
    r = reconstruct_gen(G, A, y, GenOpts(restarts=5, steps_per_restart=3), RngStream(0))
    assert len(set(r.per_restart_losses)) == 1
    assert r.best_restart == 0


def test_parallel_restarts_match_serial():
    gen = np.random.default_rng(14)
    G = random_net(gen, depth=3, widths=[4, 16, 16, 20])
    A = gen.standard_normal((50, 20))
    y = one_bit_sign(A @ forward(G, gen.standard_normal(4)))
    serial = reconstruct_gen(G, A, y, GenOpts(restarts=8, steps_per_restart=30, step_size=0.05), RngStream(5))
    parallel = reconstruct_gen(G, A, y, GenOpts(restarts=8, steps_per_restart=30, step_size=0.05, threads=4), RngStream(5))
    np.testing.assert_array_equal(serial.x_hat, parallel.x_hat)
    assert serial.per_restart_losses == parallel.per_restart_losses


def test_diverging_restarts_are_abandoned():
    A, y, _ = problem(15, n=3)
    with pytest.raises(NumericError, match="every restart"):
        reconstruct_gen(identity_net(3), A, y, GenOpts(restarts=2, steps_per_restart=2000, step_size=10.0), RngStream(0))


def test_output_ball_projection():
    G = MlpGenerator([MlpLayer(np.eye(3) * 5, np.full(3, 5.0), Activation("identity"))])
    A, y, _ = problem(16, n=3)
    r = reconstruct_gen(G, A, y, GenOpts(restarts=1, steps_per_restart=0, project_output_unit_ball=True), RngStream(0))
    assert np.linalg.norm(r.x_hat) <= 1.0 + 1e-12


def test_gen_opts_validation():
    for bad in ({"restarts": 0}, {"steps_per_restart": -1}, {"step_size": 0.0}, {"latent_radius": 0.0}, {"alpha_known": 0.5}):
        with pytest.raises(InvalidArgumentError):
            GenOpts(**bad)


# ---------------------------------------------------------------- noise aware


def test_noise_aware_alpha_one_is_plain():
    gen = np.random.default_rng(17)
    G = random_net(gen, depth=2, widths=[3, 12, 8])
    A = gen.standard_normal((40, 8))
    y = one_bit_sign(A @ gen.standard_normal(8))
    opts = GenOpts(restarts=3, steps_per_restart=20, step_size=0.05)
    a = reconstruct_gen(G, A, y, opts, RngStream(2))
    b = reconstruct_gen_noise_aware(G, A, y, 1.0, opts, RngStream(2))
    np.testing.assert_array_equal(a.x_hat, b.x_hat)
    assert a.per_restart_losses == b.per_restart_losses


def test_noise_aware_restricted_optimum():
    A, y, u = problem(18)
    G = direction_net(u)
    alpha = 0.8
    c = SQRT_2PI / A.shape[0] * (y @ A @ u)
    r = reconstruct_gen_noise_aware(G, A, y, alpha, GenOpts(restarts=2, steps_per_restart=200, step_size=0.1), RngStream(0))
    assert abs(r.z_hat[0] - c / (2 * (2 * alpha - 1))) <= 1e-9


def test_noise_aware_rejects_alpha_half():
    A, y, _ = problem(19, n=3)
    with pytest.raises(InvalidArgumentError):
        reconstruct_gen_noise_aware(identity_net(3), A, y, 0.5)


# ---------------------------------------------------------------- BIHT


def test_biht_identity_trace():
    A = np.eye(3)
    y = one_bit_sign(A @ np.array([1.0, 0.0, 0.0]))
    x = biht(A, y, K=1, iters=1)
    np.testing.assert_array_equal(x, [1.0, 0.0, 0.0])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), K=st.integers(1, 8))
def test_biht_output_sparse_and_unit(seed, K):
    gen = np.random.default_rng(seed)
    A = gen.standard_normal((25, 8))
    y = one_bit_sign(gen.standard_normal(25))
    x = biht(A, y, K, iters=20)
    assert np.count_nonzero(x) <= K
    assert abs(np.linalg.norm(x) - 1.0) <= 1e-12


def test_biht_consistency_improves():
    gen = np.random.default_rng(20240601)
    for _ in range(10):
        A = gen.standard_normal((200, 64))
        x = np.zeros(64)
        x[gen.choice(64, 4, replace=False)] = gen.uniform(0.5, 1, 4)
        y = one_bit_sign(A @ x)
        h1 = hamming_dist(one_bit_sign(A @ biht(A, y, 4, iters=1)), y)
        h100 = hamming_dist(one_bit_sign(A @ biht(A, y, 4, iters=100)), y)
        assert h100 <= h1


def test_biht_rejects_bad_k():
    with pytest.raises(InvalidArgumentError):
        biht(np.eye(3), np.ones(3), 4)


# ---------------------------------------------------------------- YP


def test_yp_inactive_constraint():
    gen = np.random.default_rng(21)
    A = gen.standard_normal((30, 9))
    y = one_bit_sign(gen.standard_normal(30))
    c = A.T @ y
    np.testing.assert_allclose(yp_convex(A, y, 3.0), c / np.linalg.norm(c), rtol=0, atol=1e-15)


def test_yp_tight_budget_selects_largest():
    # A = I makes c = y; use a 2-column design so c = (3, 1)
    A = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([1.0, 1.0, 1.0])
    np.testing.assert_allclose(A.T @ y, [3.0, 1.0])
    x = yp_convex(A, y, 1.0)
    np.testing.assert_allclose(x, [1.0, 0.0], atol=1e-12)
    # brute force over a fine grid of the feasible set
    g = np.linspace(-1, 1, 2001)
    X1, X2 = np.meshgrid(g, g)
    feas = (X1**2 + X2**2 <= 1 + 1e-12) & (np.abs(X1) + np.abs(X2) <= 1 + 1e-12)
    best = np.max((3 * X1 + X2)[feas])
    assert 3 * x[0] + x[1] >= best - 1e-12


def test_yp_ties_respect_budget():
    A = np.eye(3)
    y = np.array([1.0, -1.0, 1.0])
    x = yp_convex(A, y, 1.2)
    assert np.abs(x).sum() <= 1.2 + 1e-9
    assert abs(np.linalg.norm(x) - 1.0) <= 1e-12
    assert abs(x @ (A.T @ y) - 1.2) <= 1e-9


def test_yp_budget_below_one():
    A = np.eye(2)
    x = yp_convex(A, np.array([1.0, -1.0]), 0.5)
    assert np.abs(x).sum() == pytest.approx(0.5)


def test_yp_degenerate():
    with pytest.raises(DegenerateInputError):
        yp_convex(np.array([[1.0], [1.0]]), np.array([1.0, -1.0]), 2.0)


def test_soft_threshold():
    np.testing.assert_array_equal(soft_threshold([3.0, -0.5, -2.0], 1.0), [2.0, -0.0, -1.0])


# ---------------------------------------------------------------- l1 projection


def test_l1_projection_examples():
    np.testing.assert_array_equal(project_l1_ball([0.5, -0.5], 2.0), [0.5, -0.5])
    np.testing.assert_allclose(project_l1_ball([3.0, 1.0], 2.0), [2.0, 0.0])
    with pytest.raises(InvalidArgumentError):
        project_l1_ball([1.0], 0.0)


@settings(max_examples=100, deadline=None)
@given(
    v=st.lists(st.floats(-50, 50), min_size=1, max_size=12),
    radius=st.floats(0.01, 20),
)
def test_l1_projection_kkt(v, radius):
    v = np.array(v)
    p = project_l1_ball(v, radius)
    assert np.abs(p).sum() <= radius
    if np.abs(v).sum() > radius:
        # optimality: the residual v - p is theta * sign(p) on the support and bounded by theta off it
        r = v - p
        nz = p != 0
        theta = np.max(np.abs(r))
        np.testing.assert_allclose(np.abs(r[nz]), theta, rtol=1e-9, atol=1e-9)
        assert np.all(np.sign(r[nz]) == np.sign(p[nz]))


# ---------------------------------------------------------------- gen_pgd


def test_range_projection_fixed_point():
    gen = np.random.default_rng(22)
    G = random_net(gen, depth=2, widths=[3, 16, 10], kinds=["tanh", "identity"])
    z0 = gen.standard_normal(3)
    z, res = project_to_range(G, forward(G, z0), z0, steps=50, step_size=0.05)
    assert np.linalg.norm(forward(G, z) - forward(G, z0)) <= 1e-3
    assert res <= 1e-6


def test_consistent_measurements_leave_signal_step_unchanged():
    gen = np.random.default_rng(23)
    A = gen.standard_normal((30, 6))
    x = gen.standard_normal(6)
    y = one_bit_sign(A @ x)
    interim = x + (1.0 / 30) * (A.T @ (y - one_bit_sign(A @ x)))
    np.testing.assert_array_equal(interim, x)


def test_gen_pgd_runs_and_scores_by_consistency():
    gen = np.random.default_rng(24)
    G = random_net(gen, depth=2, widths=[3, 16, 12], kinds=["relu", "sigmoid"])
    A = gen.standard_normal((80, 12))
    y = one_bit_sign(A @ forward(G, gen.standard_normal(3)))
    r = gen_pgd(G, A, y, GenOpts(restarts=3, steps_per_restart=10, step_size=0.1), RngStream(0), outer_iters=5)
    assert r.best_loss == min(r.per_restart_losses)
    assert r.best_loss == pytest.approx(hamming_dist(one_bit_sign(A @ r.x_hat), y))
    serial = r
    parallel = gen_pgd(G, A, y, GenOpts(restarts=3, steps_per_restart=10, step_size=0.1, threads=3), RngStream(0), outer_iters=5)
    np.testing.assert_array_equal(serial.x_hat, parallel.x_hat)
