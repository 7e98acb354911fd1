import numpy as np
import pytest

from onebitgen.core import InvalidArgumentError, NumericError, RngStream, TrainingError, derive_stream
from onebitgen.model import forward, forward_batch, lipschitz_bound, load_model, save_model
from onebitgen.train import (
    AdamState,
    TrainConfig,
    VaeArch,
    VaeModel,
    _elbo,
    adam_step,
    elbo_loss_and_grads,
    export_decoder,
    init_vae,
    load_vae,
    save_vae,
    train_vae,
    write_training_curve,
)


def tiny_vae(seed=0, hidden="tanh", output="sigmoid", n=5, s=2):
    cfg = TrainConfig(hidden_activation=hidden, output_activation=output, recon_variance=0.5)
    return init_vae(VaeArch.symmetric(n, s, (4,)), cfg, RngStream(seed))


def test_kl_zero_and_perfect_reconstruction():
    # encoder outputs mu = 0, logvar = 0 everywhere; decoder reproduces the data exactly
    arch = VaeArch((2, 4), (2, 2))
    vae = VaeModel(
        arch,
        [np.zeros((4, 2)), np.zeros(4)],
        [np.zeros((2, 2)), np.array([0.3, -0.7])],
        output_activation="identity",
    )
    batch = np.array([[0.3, -0.7], [0.3, -0.7]])
    loss, recon, kl, _ = _elbo(vae, batch, np.random.default_rng(0).standard_normal((2, 2)))
    assert recon == 0.0 and kl == 0.0 and loss == 0.0


def test_kl_closed_form():
    arch = VaeArch((1, 4), (2, 1))
    vae = VaeModel(arch, [np.zeros((4, 1)), np.array([1.0, 0.0, 0.0, 0.0])], [np.zeros((1, 2)), np.zeros(1)], output_activation="identity")
    _, _, kl, _ = _elbo(vae, np.zeros((1, 1)), np.zeros((1, 2)))
    assert kl == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("hidden,output", [("tanh", "sigmoid"), ("relu", "identity"), ("sigmoid", "sigmoid")])
def test_elbo_gradients_match_finite_differences(hidden, output):
    vae = tiny_vae(1, hidden, output)
    gen = np.random.default_rng(2)
    batch = gen.uniform(0, 1, (3, 5))
    eps = gen.standard_normal((3, 2))
    _, _, _, grads = _elbo(vae, batch, eps)
    params = vae.parameters()
    h = 1e-6
    for i, p in enumerate(params):
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[i][idx] += h
            minus[i][idx] -= h
            fd = (_elbo(vae.with_parameters(plus), batch, eps)[0] - _elbo(vae.with_parameters(minus), batch, eps)[0]) / (2 * h)
            g = grads[i][idx]
            assert abs(fd - g) <= 1e-4 * max(abs(g), 1e-3), (i, idx, fd, g)


def test_elbo_uses_stream_and_checks_dims():
    vae = tiny_vae()
    batch = np.full((2, 5), 0.5)
    a = elbo_loss_and_grads(vae, batch, RngStream(3))[0]
    b = elbo_loss_and_grads(vae, batch, RngStream(3))[0]
    c = elbo_loss_and_grads(vae, batch, RngStream(4))[0]
    assert a == b and a != c
    with pytest.raises(InvalidArgumentError):
        elbo_loss_and_grads(vae, np.zeros((2, 4)), RngStream(0))


def test_elbo_non_finite_names_batch():
    vae = tiny_vae(output="identity")
    with pytest.raises(NumericError, match="batch 7"):
        elbo_loss_and_grads(vae, np.full((1, 5), 1e300), RngStream(0), batch_index=7)


def test_adam_zero_gradient_leaves_params():
    p = [np.array([1.0, -2.0])]
    new, state = adam_step(p, [np.zeros(2)], AdamState.zeros_like(p), TrainConfig())
    np.testing.assert_array_equal(new[0], p[0])
    assert state.step == 1


def test_adam_first_step_magnitude():
    cfg = TrainConfig(learning_rate=1e-3)
    for g in (0.5, -3.0, 1e-3):
        new, _ = adam_step([np.array([0.0])], [np.array([g])], AdamState.zeros_like([np.zeros(1)]), cfg)
        expected = -cfg.learning_rate * g / (abs(g) + cfg.epsilon)
        assert new[0][0] == pytest.approx(expected, rel=1e-12)
        assert abs(abs(new[0][0]) - 1e-3) <= 1e-6


def test_adam_moves_monotonically_against_constant_gradient():
    p = [np.array([0.0])]
    state = AdamState.zeros_like(p)
    trail = []
    for _ in range(100):
        p, state = adam_step(p, [np.array([2.0])], state, TrainConfig())
        trail.append(p[0][0])
    assert np.all(np.diff(trail) < 0)


def test_adam_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        adam_step([np.zeros(2)], [np.zeros(3)], AdamState.zeros_like([np.zeros(2)]), TrainConfig())


def test_train_config_validation():
    for bad in ({"epochs": 0}, {"batch_size": 0}, {"learning_rate": -1.0}, {"betas": (1.0, 0.9)}, {"recon_variance": 0.0}):
        with pytest.raises(InvalidArgumentError):
            TrainConfig(**bad)


def test_arch_validation():
    with pytest.raises(InvalidArgumentError):
        VaeArch((5, 4), (3, 5))
    with pytest.raises(InvalidArgumentError):
        VaeArch((5, 4), (2, 6))


def small_data():
    gen = np.random.default_rng(0)
    X = np.zeros((200, 8))
    for row in X:
        row[gen.choice(8, 2, replace=False)] = gen.uniform(0.5, 1, 2)
    return X


def test_lr_zero_keeps_initialization():
    arch = VaeArch.symmetric(8, 2, (6,))
    cfg = TrainConfig(epochs=1, learning_rate=0.0, seed=5)
    vae = train_vae(small_data(), arch, cfg)
    init = init_vae(arch, cfg, derive_stream(RngStream(5), 0))
    for a, b in zip(vae.parameters(), init.parameters()):
        np.testing.assert_array_equal(a, b)


def test_training_is_deterministic_and_reduces_loss():
    arch = VaeArch.symmetric(8, 2, (6,))
    cfg = TrainConfig(epochs=5, seed=1, recon_variance=0.05, learning_rate=0.01)
    a = train_vae(small_data(), arch, cfg)
    b = train_vae(small_data(), arch, cfg)
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p, q)
    assert a.history[-1]["mean_loss"] < a.history[0]["mean_loss"]
    assert all(row["kl_term"] >= 0 for row in a.history)


def test_training_divergence_reports_epoch():
    arch = VaeArch.symmetric(8, 2, (6,))
    with pytest.raises(TrainingError) as info:
        train_vae(np.full((10, 8), 1e200), arch, TrainConfig(epochs=2, output_activation="identity"))
    assert info.value.epoch == 0


def test_training_rejects_bad_dataset():
    arch = VaeArch.symmetric(8, 2, (6,))
    with pytest.raises(InvalidArgumentError):
        train_vae(np.zeros((0, 8)), arch, TrainConfig())
    with pytest.raises(InvalidArgumentError):
        train_vae(np.full((3, 8), np.nan), arch, TrainConfig())
    with pytest.raises(InvalidArgumentError):
        train_vae(np.zeros((3, 7)), arch, TrainConfig())


def test_export_decoder_matches_decoder_path(tmp_path):
    vae = tiny_vae(3)
    G = export_decoder(vae)
    Z = np.random.default_rng(1).standard_normal((4, 2))
    # same batched code path on both sides, so equality is exact
    np.testing.assert_array_equal(forward_batch(G, Z)[0], vae.decode(Z))
    save_model(G, tmp_path / "d.json")
    H = load_model(tmp_path / "d.json")
    np.testing.assert_array_equal(forward(H, Z[0]), forward(G, Z[0]))
    assert 0 < lipschitz_bound(G) < np.inf


def test_vae_file_round_trip(tmp_path):
    vae = tiny_vae(4, "relu", "sigmoid")
    save_vae(vae, tmp_path / "v.json")
    back = load_vae(tmp_path / "v.json")
    for p, q in zip(vae.parameters(), back.parameters()):
        np.testing.assert_array_equal(p, q)
    assert back.recon_variance == vae.recon_variance


def test_training_curve_csv(tmp_path):
    history = [{"epoch": 0, "mean_loss": 2.0, "recon_term": 1.5, "kl_term": 0.5}]
    write_training_curve(history, tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines() == ["epoch,mean_loss,recon_term,kl_term", "0,2.0,1.5,0.5"]


def test_reference_run_halves_loss(reference_vae):
    h = reference_vae.history
    assert len(h) == 50
    assert h[-1]["mean_loss"] < 0.5 * h[0]["mean_loss"]
